"""Dense n-d arrays with reverse-mode autodiff and the layer kernels the
classifiers need: conv/pool/dense/relu/softmax, the two losses, Adam, and
strided (up)convolutions for the autoencoders.

Nodes preserve float32/float64 inputs, so models can train in float32
while gradient verification builds float64 graphs. Convolutions run as
im2col/GEMM, except that wide shallow layers (where the patch matrix
would dwarf the input) switch to direct numba-compiled correlation
loops. Checkpoints serialize to little-endian float32 (NTW1 format).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

DTYPE = np.float64


class Node:
    """One value in the differentiation graph.

    float32 and float64 inputs keep their precision; everything else is
    cast to float64.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        value = np.asarray(value)
        if value.dtype not in (np.float32, np.float64):
            value = value.astype(DTYPE)
        self.value = value
        self.grad = None
        self.parents: tuple[Node, ...] = ()
        self._backward = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype)
        else:
            self.grad += g

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return mul(self, other)


def _make(value: np.ndarray, parents: tuple[Node, ...], backward) -> Node:
    out = Node(value, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out.parents = parents
        out._backward = backward
    return out


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate gradients of the scalar root into every requires_grad node."""
    if root.value.size != 1:
        raise ValueError("backward requires a scalar root")
    root.grad = np.ones_like(root.value)
    for node in reversed(_topo_order(root)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# --- elementwise and shape ops -----------------------------------------------

def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)
    return _make(a.value + b.value, (a, b), bwd)


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * b.value)
        if b.requires_grad:
            b._accumulate(g * a.value)
    return _make(a.value * b.value, (a, b), bwd)


def relu(x: Node) -> Node:
    """max(0, x); subgradient 0 at exactly 0."""
    mask = x.value > 0

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * mask)
    return _make(np.maximum(x.value, 0.0), (x,), bwd)


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    old = x.shape

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(old))
    return _make(x.value.reshape(shape), (x,), bwd)


def detach(x: Node) -> Node:
    return Node(x.value.copy())


def narrow0(x: Node, start: int, stop: int) -> Node:
    """Slice along the leading (batch) axis."""
    if not 0 <= start < stop <= x.shape[0]:
        raise ValueError(f"bad slice [{start}:{stop}] for axis of {x.shape[0]}")

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.value)
            full[start:stop] = g
            x._accumulate(full)
    return _make(x.value[start:stop].copy(), (x,), bwd)


def concat0(a: Node, b: Node) -> Node:
    """Concatenate along the leading (batch) axis."""
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"trailing shapes differ: {a.shape} vs {b.shape}")
    na = a.shape[0]

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g[:na])
        if b.requires_grad:
            b._accumulate(g[na:])
    return _make(np.concatenate([a.value, b.value]), (a, b), bwd)


def softmax(x: Node) -> Node:
    """Softmax along the last axis, max-shifted for overflow safety."""
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = np.sum(g * out, axis=-1, keepdims=True)
            x._accumulate(out * (g - dot))
    return _make(out, (x,), bwd)


# --- dense / conv / pool -----------------------------------------------------

def dense(x: Node, w: Node, b: Node) -> Node:
    """x (N,I) @ w (I,O) + b (O)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense shape mismatch: {x.shape} @ {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError("bias shape must be (O,)")

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.value.T)
        if w.requires_grad:
            w._accumulate(x.value.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))
    return _make(x.value @ w.value + b.value, (x, w, b), bwd)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(N,C,H,W) -> (N*Ho*Wo, C*kh*kw) patches plus output spatial dims."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    shape = (n, c, ho, wo, kh, kw)
    strides = (xp.strides[0], xp.strides[1],
               xp.strides[2] * stride, xp.strides[3] * stride,
               xp.strides[2], xp.strides[3])
    patches = np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)
    cols = patches.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


@numba.njit(cache=True, fastmath=True)
def _im2col2_s2_kernel(xp, ho, wo):
    """Patches of a pre-padded input for the 4x4 stride-2 pad-1 conv, in
    channels-outer (C,4,4,N,Ho,Wo) layout so writes are contiguous."""
    n, c = xp.shape[0], xp.shape[1]
    cols2 = np.empty((c, 4, 4, n, ho, wo), dtype=xp.dtype)
    for ci in range(c):
        for ki in range(4):
            for kj in range(4):
                for ni in range(n):
                    for oi in range(ho):
                        xrow = xp[ni, ci, 2 * oi + ki]
                        crow = cols2[ci, ki, kj, ni, oi]
                        for oj in range(wo):
                            crow[oj] = xrow[kj + 2 * oj]
    return cols2


@numba.njit(cache=True, fastmath=True)
def _scatter2_kernel(p, b, n, c, h, wd):
    """Scatter (C,4,4,N,h,w) patch products into a (N,C,2h,2w) image,
    completing a transposed 4x4 stride-2 pad-1 correlation."""
    out = np.empty((n, c, 2 * h, 2 * wd), dtype=p.dtype)
    for ni in range(n):
        for ci in range(c):
            out[ni, ci, :, :] = b[ci]
    for ci in range(c):
        for ki in range(4):
            for kj in range(4):
                # output column 2*oj + kj - 1 must stay in range
                jlo = 1 if kj == 0 else 0
                jhi = wd - 1 if kj == 3 else wd
                for ni in range(n):
                    for oi in range(h):
                        oy = 2 * oi + ki - 1
                        if oy < 0 or oy >= 2 * h:
                            continue
                        orow = out[ni, ci, oy]
                        prow = p[ci, ki, kj, ni, oi]
                        for oj in range(jlo, jhi):
                            orow[2 * oj + kj - 1] += prow[oj]
    return out


def _tconv2(xv: np.ndarray, wv: np.ndarray, bv: np.ndarray) -> np.ndarray:
    """Transposed 4x4 stride-2 pad-1 correlation, the adjoint of the
    stride-2 conv: (N,F,h,w) with (F,C,4,4) weights -> (N,C,2h,2w)."""
    n, f, h, wd = xv.shape
    c = wv.shape[1]
    xmat = np.ascontiguousarray(xv.transpose(1, 0, 2, 3)).reshape(f, -1)
    p = (wv.reshape(f, -1).T @ xmat).reshape(c, 4, 4, n, h, wd)
    return _scatter2_kernel(p, bv, n, c, h, wd)


@numba.njit(cache=True, fastmath=True)
def _conv_fwd_s1_kernel(xp, w, b, ho, wo):
    """Stride-1 cross-correlation over a pre-padded input; the innermost
    loop is a contiguous length-wo saxpy that the compiler vectorizes."""
    n, c = xp.shape[0], xp.shape[1]
    f, kh, kw = w.shape[0], w.shape[2], w.shape[3]
    out = np.empty((n, f, ho, wo), dtype=xp.dtype)
    for ni in range(n):
        for fi in range(f):
            for oi in range(ho):
                row = out[ni, fi, oi]
                row[:] = b[fi]
                for ci in range(c):
                    for ki in range(kh):
                        xrow = xp[ni, ci, oi + ki]
                        for kj in range(kw):
                            wv = w[fi, ci, ki, kj]
                            for t in range(wo):
                                row[t] += wv * xrow[kj + t]
    return out


@numba.njit(cache=True, fastmath=True)
def _conv_dw_s1_kernel(xp, g, kh, kw):
    """Stride-1 weight gradient: contiguous length-wo dot products."""
    n, c = xp.shape[0], xp.shape[1]
    f, ho, wo = g.shape[1], g.shape[2], g.shape[3]
    dw = np.zeros((f, c, kh, kw), dtype=xp.dtype)
    for ni in range(n):
        for fi in range(f):
            for oi in range(ho):
                grow = g[ni, fi, oi]
                for ci in range(c):
                    for ki in range(kh):
                        xrow = xp[ni, ci, oi + ki]
                        for kj in range(kw):
                            acc = xp.dtype.type(0.0)
                            for t in range(wo):
                                acc += grow[t] * xrow[kj + t]
                            dw[fi, ci, ki, kj] += acc
    return dw


# Patch matrices above this element count skip im2col/GEMM in favor of the
# direct stride-1 kernels (relevant for wide, shallow layers such as a
# full-resolution output head, where the patch matrix dwarfs the input).
_DIRECT_COLS_LIMIT = 2 ** 21


def _pad2(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv_forward(xv: np.ndarray, wv: np.ndarray, bv: np.ndarray,
                  stride: int, pad: int):
    """Returns (out, cols); cols is None when the direct kernel was used.

    Stride 2 uses the channels-outer (C,kh,kw,N,Ho,Wo) patch layout,
    stride 1 the row-outer (N*Ho*Wo, C*kh*kw) one.
    """
    f, c, kh, kw = wv.shape
    n, _, h, wd = xv.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if stride == 2:
        cols2 = _im2col2_s2_kernel(_pad2(np.ascontiguousarray(xv), pad), ho, wo)
        out2 = wv.reshape(f, -1) @ cols2.reshape(c * kh * kw, -1) + bv[:, None]
        out = np.ascontiguousarray(
            out2.reshape(f, n, ho, wo).transpose(1, 0, 2, 3))
        return out, cols2
    if n * ho * wo * c * kh * kw > _DIRECT_COLS_LIMIT:
        out = _conv_fwd_s1_kernel(_pad2(np.ascontiguousarray(xv), pad),
                                  np.ascontiguousarray(wv), bv, ho, wo)
        return out, None
    cols, ho, wo = _im2col(xv, kh, kw, stride, pad)
    out = cols @ wv.reshape(f, -1).T + bv
    return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2), cols


def _conv_node(x: Node, w: Node, b: Node, stride: int, pad: int) -> Node:
    """Cross-correlation with bias; shared by conv2d and conv2d_stride2."""
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ValueError("conv expects NCHW input and FCkk weights")
    f, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, weights {c}")
    if b.shape != (f,):
        raise ValueError("bias shape must be (F,)")
    out_val, cols = _conv_forward(x.value, w.value, b.value, stride, pad)

    def bwd(g):
        g = np.ascontiguousarray(g)
        n, fo, ho, wo = g.shape
        if w.requires_grad:
            if cols is None:
                w._accumulate(_conv_dw_s1_kernel(
                    _pad2(np.ascontiguousarray(x.value), pad), g, kh, kw))
            elif cols.ndim == 6:   # channels-outer stride-2 patches
                g2 = np.ascontiguousarray(
                    g.transpose(1, 0, 2, 3)).reshape(fo, -1)
                w._accumulate((g2 @ cols.reshape(c * kh * kw, -1).T)
                              .reshape(w.value.shape))
            else:
                gmat = g.transpose(0, 2, 3, 1).reshape(-1, fo)
                w._accumulate((gmat.T @ cols).reshape(w.value.shape))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            if stride == 1:
                # dX = g cross-correlated with channel-swapped, 180-degree
                # rotated weights
                w_rot = np.ascontiguousarray(
                    w.value.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
                dx, _ = _conv_forward(g, w_rot,
                                      np.zeros(w_rot.shape[0], dtype=g.dtype),
                                      1, kh - 1 - pad)
                x._accumulate(dx)
            else:
                # adjoint of the stride-2 conv is a transposed conv with
                # the same weights
                zero_b = np.zeros(c, dtype=g.dtype)
                x._accumulate(_tconv2(g, w.value, zero_b))
    return _make(out_val, (x, w, b), bwd)


def conv2d(x: Node, w: Node, b: Node) -> Node:
    """5x5 same-padding stride-1 convolution: (N,C,H,W) -> (N,F,H,W)."""
    if w.shape[2:] != (5, 5):
        raise ValueError("conv2d uses a fixed 5x5 kernel")
    return _conv_node(x, w, b, stride=1, pad=2)


def conv2d_stride2(x: Node, w: Node, b: Node) -> Node:
    """4x4 stride-2 pad-1 convolution: exact spatial halving for even dims."""
    if w.shape[2:] != (4, 4):
        raise ValueError("conv2d_stride2 uses a fixed 4x4 kernel")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError("input spatial dims must be even")
    return _conv_node(x, w, b, stride=2, pad=1)


def upconv2d(x: Node, w: Node, b: Node) -> Node:
    """Transposed 4x4 stride-2 pad-1 convolution: exact spatial doubling.

    Implemented as the adjoint of conv2d_stride2, so the pair satisfies
    <conv_s2(x; w), y> = <x, upconv(y; w)>. Weights are (F, C, 4, 4) where
    F is the *input* channel count and C the output channel count.
    """
    if x.value.ndim != 4 or w.value.ndim != 4 or w.shape[2:] != (4, 4):
        raise ValueError("upconv2d expects NCHW input and (F,C,4,4) weights")
    f, c, kh, kw = w.shape
    if x.shape[1] != f:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, weights {f}")
    if b.shape != (c,):
        raise ValueError("bias shape must be (C,)")
    n, _, h, wdim = x.shape
    out_val = _tconv2(x.value, w.value, b.value)

    def bwd(g):
        cflat = None
        if x.requires_grad or w.requires_grad:
            cols2 = _im2col2_s2_kernel(
                _pad2(np.ascontiguousarray(g), 1), h, wdim)
            cflat = cols2.reshape(c * kh * kw, -1)
        if x.requires_grad:
            dx2 = w.value.reshape(f, -1) @ cflat
            x._accumulate(np.ascontiguousarray(
                dx2.reshape(f, n, h, wdim).transpose(1, 0, 2, 3)))
        if w.requires_grad:
            x2 = np.ascontiguousarray(
                x.value.transpose(1, 0, 2, 3)).reshape(f, -1)
            w._accumulate((x2 @ cflat.T).reshape(w.value.shape))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
    return _make(out_val, (x, w, b), bwd)


def maxpool2(x: Node) -> Node:
    """2x2 non-overlapping max; odd trailing row/column dropped; gradient
    goes to the first (row-major) maximum of each block."""
    if x.value.ndim != 4:
        raise ValueError("maxpool2 expects NCHW input")
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError("spatial dims must be >= 2")
    ho, wo = h // 2, w // 2
    xt = x.value[:, :, :ho * 2, :wo * 2]
    blocks = xt.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(n, c, ho, wo, 4)
    # row-major in-block order is (0,0),(0,1),(1,0),(1,1); argmax takes
    # the first maximum, implementing the tie-break rule
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        if not x.requires_grad:
            return
        gb = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.value)
        gx[:, :, :ho * 2, :wo * 2] = gb.reshape(n, c, ho, wo, 2, 2) \
            .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * 2, wo * 2)
        x._accumulate(gx)
    return _make(out, (x,), bwd)


# --- losses ------------------------------------------------------------------

def cross_entropy(probs: Node, labels: np.ndarray) -> Node:
    """Mean over the batch of -log probs[i, label_i]; probs clamped at 1e-12."""
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ValueError("labels must be one class index per row")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("label index out of range")
    picked = probs.value[np.arange(n), labels]
    clamped = np.maximum(picked, 1e-12)
    out = -np.mean(np.log(clamped))

    def bwd(g):
        if probs.requires_grad:
            gp = np.zeros_like(probs.value)
            live = picked >= 1e-12
            gp[np.arange(n), labels] = np.where(live, -1.0 / clamped, 0.0) / n
            probs._accumulate(g * gp)
    return _make(np.asarray(out), (probs,), bwd)


def l1_loss(a: Node, b: Node) -> Node:
    """Sum of |a - b| over all elements; subgradient 0 at exact ties."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.value - b.value
    sgn = np.sign(diff)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * sgn)
        if b.requires_grad:
            b._accumulate(-g * sgn)
    return _make(np.asarray(np.abs(diff).sum()), (a, b), bwd)


def mean_of(x: Node) -> Node:
    n = x.value.size

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.value, float(g) / n))
    return _make(np.asarray(x.value.mean()), (x,), bwd)


def scale(x: Node, factor: float) -> Node:
    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * factor)
    return _make(x.value * factor, (x,), bwd)


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Node], state: AdamState) -> None:
    """One bias-corrected Adam update from each parameter's .grad."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        m = state.m.setdefault(i, np.zeros_like(p.value))
        v = state.v.setdefault(i, np.zeros_like(p.value))
        m[:] = b1 * m + (1 - b1) * g
        v[:] = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** state.t)
        vhat = v / (1 - b2 ** state.t)
        p.value -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


# --- checkpoints (NTW1) ------------------------------------------------------
# magic b"NTW1" | uint32 LE manifest byte length | manifest text
# (lines "name shape d0,d1,... offset <float offset into data>") | raw LE
# float32 data. Loaders verify the total length.

def save_checkpoint(path: str | Path, params: dict[str, np.ndarray]) -> None:
    manifest_lines = []
    offset = 0
    blobs = []
    for name, arr in params.items():
        arr32 = np.asarray(arr, dtype="<f4")
        shape = ",".join(map(str, arr32.shape)) if arr32.ndim else "scalar"
        manifest_lines.append(f"{name} {shape} {offset}")
        blobs.append(arr32.tobytes())
        offset += arr32.size
    manifest = ("\n".join(manifest_lines) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(b"NTW1")
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != b"NTW1":
        raise ValueError("bad checkpoint magic")
    (mlen,) = struct.unpack("<I", raw[4:8])
    manifest = raw[8:8 + mlen].decode()
    data = raw[8 + mlen:]
    out: dict[str, np.ndarray] = {}
    total = 0
    for line in manifest.strip().splitlines():
        name, shape_s, offset_s = line.split(" ")
        shape = () if shape_s == "scalar" else tuple(map(int, shape_s.split(",")))
        size = int(np.prod(shape)) if shape else 1
        offset = int(offset_s)
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=offset * 4)
        out[name] = arr.reshape(shape).astype(DTYPE)
        total = max(total, offset + size)
    if len(data) != total * 4:
        raise ValueError(f"checkpoint length mismatch: {len(data)} != {total * 4}")
    return out
