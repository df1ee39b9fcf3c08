"""Semi-supervised adversarial autoencoder classifier.

Two fully convolutional autoencoders compete on pixel-wise L1
reconstruction error: the discriminator D learns to reconstruct real
images and to butcher the generator's outputs, the generator G tries to
make its outputs survive D. Trained on one ("normal") class only, the
combined reconstruction error acts as an anomaly score; a threshold
calibrated on a small labeled subset turns it into a binary classifier.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .topomap import DatasetManifest

NET_H, NET_W = 48, 64   # stride-2 friendly resize of the 63x84 topograms


@dataclass(frozen=True)
class AaeConfig:
    input_shape: tuple[int, int, int] = (1, NET_H, NET_W)
    channels: tuple[int, ...] = (16, 32, 64)
    epochs: int = 400
    batch: int = 16
    lr: float = 2e-4
    normal_class: int = 0           # right hand
    labeled_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def resize_bilinear(img: np.ndarray, out_h: int = NET_H,
                    out_w: int = NET_W) -> np.ndarray:
    """Bilinear resize to the autoencoder input grid, output in [0, 1]."""
    src = np.asarray(img, dtype=float)
    if src.dtype != float:
        src = src.astype(float)
    if img.dtype.kind in "iu":
        src = src / 255.0
    h, w = src.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return (src[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
            + src[np.ix_(y0, x1)] * (1 - fy) * fx
            + src[np.ix_(y1, x0)] * fy * (1 - fx)
            + src[np.ix_(y1, x1)] * fy * fx)


# Weight std = INIT_GAIN * sqrt(2 / fan_in). With unit gain the adversarial
# L1 objectives are chaotic: constant-magnitude gradients and the unbounded
# repulsion term in the discriminator loss make the training state oscillate
# between blow-ups and stalemates, so the anomaly score's quality at any fixed
# epoch is a seed lottery. A high-gain start instead puts the pair in a
# smoothly decaying high-amplitude regime for hundreds of epochs, where the
# discriminator's response to off-manifold inputs separates the classes
# consistently across seeds. The gain is capped by float64 resolution: the
# loss identities (lossD + lossG vs 2*real-term) must cancel to absolute
# 1e-5, and the fake-term magnitude of an untrained pair grows as gain^14.
INIT_GAIN = 4.0


class ConvAutoencoder:
    """3x strided conv encoder, 3x transposed-conv decoder, linear 5x5 head.

    No dense layers anywhere, so any even-sized input works.
    """

    def __init__(self, channels: tuple[int, ...], rng: np.random.Generator,
                 prefix: str, dtype=np.float32):
        self.prefix = prefix
        self.dtype = np.dtype(dtype)
        self.params: dict[str, T.Node] = {}
        c_in = 1
        for i, c_out in enumerate(channels):
            fan_in = c_in * 16
            wv = (rng.standard_normal((c_out, c_in, 4, 4))
                  * INIT_GAIN * np.sqrt(2.0 / fan_in))
            self.params[f"{prefix}.enc{i}.w"] = T.Node(wv.astype(self.dtype),
                                                       requires_grad=True)
            self.params[f"{prefix}.enc{i}.b"] = T.Node(
                np.zeros(c_out, dtype=self.dtype), requires_grad=True)
            c_in = c_out
        dec_out = list(channels[-2::-1]) + [channels[0] // 2]
        for i, c_out in enumerate(dec_out):
            fan_in = c_in * 16
            wv = (rng.standard_normal((c_in, c_out, 4, 4))
                  * INIT_GAIN * np.sqrt(2.0 / fan_in))
            self.params[f"{prefix}.dec{i}.w"] = T.Node(wv.astype(self.dtype),
                                                       requires_grad=True)
            self.params[f"{prefix}.dec{i}.b"] = T.Node(
                np.zeros(c_out, dtype=self.dtype), requires_grad=True)
            c_in = c_out
        wv = (rng.standard_normal((1, c_in, 5, 5))
              * INIT_GAIN * np.sqrt(2.0 / (c_in * 25)))
        self.params[f"{prefix}.head.w"] = T.Node(wv.astype(self.dtype),
                                                 requires_grad=True)
        self.params[f"{prefix}.head.b"] = T.Node(np.zeros(1, dtype=self.dtype),
                                                 requires_grad=True)
        self.n_stages = len(channels)

    def parameters(self) -> list[T.Node]:
        return list(self.params.values())

    def forward(self, x: T.Node) -> T.Node:
        p = self.prefix
        for i in range(self.n_stages):
            x = T.relu(T.conv2d_stride2(x, self.params[f"{p}.enc{i}.w"],
                                        self.params[f"{p}.enc{i}.b"]))
        for i in range(self.n_stages):
            x = T.relu(T.upconv2d(x, self.params[f"{p}.dec{i}.w"],
                                  self.params[f"{p}.dec{i}.b"]))
        return T.conv2d(x, self.params[f"{p}.head.w"], self.params[f"{p}.head.b"])


class AaeModel:
    """Training runs in float32; pass float64 for gradient-level analysis."""

    def __init__(self, cfg: AaeConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng([cfg.seed, 0xAAE])
        self.g = ConvAutoencoder(cfg.channels, rng, "g", dtype)
        self.d = ConvAutoencoder(cfg.channels, rng, "d", dtype)

    @property
    def params(self) -> dict[str, T.Node]:
        return {**self.g.params, **self.d.params}

    def save(self, path) -> None:
        T.save_checkpoint(path, {k: v.value for k, v in self.params.items()})

    def load(self, path) -> None:
        loaded = T.load_checkpoint(path)
        own = self.params
        if set(loaded) != set(own):
            raise ValueError("checkpoint does not match the model architecture")
        for k, arr in loaded.items():
            if arr.shape != own[k].value.shape:
                raise ValueError(f"shape mismatch for {k}")
            own[k].value = arr.astype(self.dtype)


def _batch_node(x: np.ndarray, dtype=np.float32) -> T.Node:
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 3:
        x = x[:, None, :, :]
    return T.Node(x)


def _mean_l1(a: T.Node, b: T.Node) -> T.Node:
    """Batch mean of the per-image L1 pixel error."""
    return T.scale(T.l1_loss(a, b), 1.0 / a.shape[0])


def loss_d(x: np.ndarray, model: AaeModel) -> T.Node:
    """||X - D(X)||_1 - ||G(X) - D(G(X))||_1, batch-mean; G(X) detached."""
    xn = _batch_node(x, model.dtype)
    gx = T.detach(model.g.forward(xn))
    term_real = _mean_l1(xn, model.d.forward(xn))
    term_fake = _mean_l1(gx, model.d.forward(gx))
    return T.add(term_real, T.scale(term_fake, -1.0))


def loss_g(x: np.ndarray, model: AaeModel) -> T.Node:
    """||X - D(X)||_1 + ||G(X) - D(G(X))||_1, batch-mean.

    The D(X) term carries no G dependence; it is evaluated detached so
    only the second term drives G's update.
    """
    xn = _batch_node(x, model.dtype)
    term_real = T.detach(_mean_l1(xn, model.d.forward(xn)))
    y = model.g.forward(xn)
    term_fake = _mean_l1(y, model.d.forward(y))
    return T.add(term_real, term_fake)


def anomaly_score(model: AaeModel, image: np.ndarray) -> float:
    """||X - D(X)||_1 + ||G(X) - D(G(X))||_1 for a single image."""
    img = np.asarray(image, dtype=T.DTYPE)
    if img.shape != tuple(model.cfg.input_shape[1:]):
        raise ValueError(f"image shape {img.shape} != {model.cfg.input_shape[1:]}")
    return float(loss_g(img[None], model).value)


def _zero_grads(params: list[T.Node]) -> None:
    for p in params:
        p.zero_grad()


def train_aae(manifest: DatasetManifest, cfg: AaeConfig,
              images: dict[str, np.ndarray] | None = None
              ) -> tuple[AaeModel, list[dict]]:
    """Alternating D/G Adam updates on normal-class training images."""
    normals = [e for e in manifest.split_entries("train")
               if e.label == cfg.normal_class]
    if len(normals) < 2:
        raise ValueError("need at least 2 normal-class training images")
    x = np.stack([
        resize_bilinear(images[e.path] if images is not None
                        else manifest.load_image(e))
        for e in normals])

    model = AaeModel(cfg)
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    state_d = T.AdamState(lr=cfg.lr)
    state_g = T.AdamState(lr=cfg.lr)
    params_d = model.d.parameters()
    params_g = model.g.parameters()
    history: list[dict] = []
    n = len(x)
    probe = x[:min(n, 64)]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        d_loss_sum = 0.0
        g_loss_sum = 0.0
        n_batches = 0
        for i in range(0, n, cfg.batch):
            batch = x[order[i:i + cfg.batch]]
            nb = len(batch)
            xn = _batch_node(batch, model.dtype)
            # one G forward serves both phases: its detached value feeds
            # the D update, the live graph feeds the G update
            y = model.g.forward(xn)
            yd = T.detach(y)

            # D step: both loss terms share one batched D forward
            _zero_grads(params_d)
            dz = model.d.forward(T.concat0(xn, yd))
            t_real = _mean_l1(xn, T.narrow0(dz, 0, nb))
            t_fake_d = _mean_l1(yd, T.narrow0(dz, nb, 2 * nb))
            ld = T.add(t_real, T.scale(t_fake_d, -1.0))
            T.backward(ld)
            T.adam_step(params_d, state_d)

            # G step: D acts as a fixed map, so its weight gradients are
            # switched off. The real-image term of the G loss is a
            # constant with no gradient; the recorded g_loss reuses the
            # D step's measurement of it rather than re-running D
            _zero_grads(params_g)
            for p in params_d:
                p.requires_grad = False
            term_fake = _mean_l1(y, model.d.forward(y))
            T.backward(term_fake)
            T.adam_step(params_g, state_g)
            for p in params_d:
                p.requires_grad = True

            d_loss_sum += float(ld.value)
            g_loss_sum += float(t_real.value) + float(term_fake.value)
            n_batches += 1
        xn = _batch_node(probe, model.dtype)
        d_real = float(_mean_l1(xn, model.d.forward(xn)).value)
        history.append({
            "epoch": epoch,
            "d_loss": d_loss_sum / n_batches,
            "g_loss": g_loss_sum / n_batches,
            "d_recon_real": d_real,
        })
    return model, history


def score_entries(model: AaeModel, manifest: DatasetManifest, entries,
                  images: dict[str, np.ndarray] | None = None,
                  batch: int = 32) -> np.ndarray:
    """Anomaly scores for a list of manifest entries, in batched forwards.

    The per-image L1 sums are independent across the batch, so this
    matches anomalyScore on each image individually.
    """
    imgs = np.stack([
        resize_bilinear(images[e.path] if images is not None
                        else manifest.load_image(e))
        for e in entries])
    scores = np.empty(len(imgs))
    for i in range(0, len(imgs), batch):
        xn = _batch_node(imgs[i:i + batch], model.dtype)
        y = model.g.forward(xn)
        dx = model.d.forward(xn)
        dy = model.d.forward(y)
        scores[i:i + batch] = (
            np.abs(xn.value - dx.value).sum(axis=(1, 2, 3), dtype=np.float64)
            + np.abs(y.value - dy.value).sum(axis=(1, 2, 3), dtype=np.float64))
    return scores


def balanced_accuracy(labels: np.ndarray, predicted: np.ndarray) -> float:
    recalls = []
    for cls in np.unique(labels):
        sel = labels == cls
        recalls.append(np.mean(predicted[sel] == cls))
    return float(np.mean(recalls))


def choose_threshold(scores: np.ndarray, labels: np.ndarray,
                     normal_class: int = 0) -> float:
    """Threshold maximizing balanced accuracy on the labeled subset.

    Candidates are midpoints between adjacent distinct scores; ties break
    toward the smaller threshold. Predictions: anomalous when score >
    threshold.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("labeled subset must contain both classes")
    uniq = np.unique(scores)
    if len(uniq) == 1:
        return float(uniq[0])
    candidates = (uniq[:-1] + uniq[1:]) / 2.0
    anomal = labels != normal_class
    best_t = candidates[0]
    best_acc = -1.0
    for t in candidates:
        pred_anomal = scores > t
        tpr = np.mean(pred_anomal[anomal]) if anomal.any() else 0.0
        tnr = np.mean(~pred_anomal[~anomal]) if (~anomal).any() else 0.0
        acc = (tpr + tnr) / 2.0
        if acc > best_acc:
            best_acc = acc
            best_t = t
    return float(best_t)


def rank_auc(scores: np.ndarray, is_positive: np.ndarray) -> float:
    """AUC by the rank (Mann-Whitney) statistic with tie correction."""
    scores = np.asarray(scores, dtype=float)
    is_positive = np.asarray(is_positive, dtype=bool)
    n_pos = int(is_positive.sum())
    n_neg = int((~is_positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average rank, 1-based
        i = j
    u = ranks[is_positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def select_labeled_subset(entries, fraction: float, seed: int) -> list:
    """Seeded per-class sample of the entries, at least one per class."""
    rng = np.random.default_rng([seed, 0x1AB])
    chosen = []
    labels = sorted({e.label for e in entries})
    for label in labels:
        cls = [e for e in entries if e.label == label]
        k = max(1, int(round(fraction * len(cls))))
        idx = rng.choice(len(cls), size=k, replace=False)
        chosen.extend(cls[i] for i in sorted(idx))
    return chosen


def evaluate_aae(model: AaeModel, threshold: float,
                 manifest: DatasetManifest, split: str = "test",
                 images: dict[str, np.ndarray] | None = None
                 ) -> tuple[float, np.ndarray, float]:
    """(accuracy, confusion 2x2 [true, predicted], AUC) on a split."""
    entries = manifest.split_entries(split)
    if not entries:
        raise ValueError(f"empty {split} split")
    scores = score_entries(model, manifest, entries, images)
    labels = np.array([e.label for e in entries])
    normal = model.cfg.normal_class
    anomal_label = [l for l in (0, 1) if l != normal][0]
    pred = np.where(scores > threshold, anomal_label, normal)
    confusion = np.zeros((2, 2), dtype=int)
    for t, p in zip(labels, pred):
        confusion[t, p] += 1
    accuracy = float(confusion.trace() / confusion.sum())
    auc = rank_auc(scores, labels == anomal_label)
    return accuracy, confusion, auc
