"""Supervised topogram classifier: four conv+pool stages, three dense layers.

Shape chain on 84x63 inputs: 1 -> 8x42x31 -> 16x21x15 -> 32x10x7 -> 64x5x3,
flatten to 960, then 128 -> 32 -> 2 with a softmax head.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .topomap import DatasetManifest, ManifestEntry


@dataclass(frozen=True)
class CnnConfig:
    input_shape: tuple[int, int, int] = (1, 63, 84)   # C, H, W
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    kernel: int = 5
    fc_sizes: tuple[int, ...] = (128, 32, 2)
    n_classes: int = 2
    epochs: int = 10
    batch: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if list(self.conv_channels) != sorted(set(self.conv_channels)):
            raise ValueError("conv channels must be strictly increasing")
        if list(self.fc_sizes) != sorted(set(self.fc_sizes), reverse=True):
            raise ValueError("fc sizes must be strictly decreasing")
        if self.fc_sizes[-1] != self.n_classes:
            raise ValueError("last fc size must equal the class count")


@dataclass
class TrainReport:
    per_epoch: list[dict] = field(default_factory=list)
    final_confusion: np.ndarray | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "per_epoch": self.per_epoch,
            "final_confusion": None if self.final_confusion is None
            else self.final_confusion.tolist(),
            "wall_time": self.wall_time,
        }


class CnnModel:
    """Trains in float32; pass float64 for gradient-level analysis."""

    def __init__(self, cfg: CnnConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        self.params: dict[str, T.Node] = {}
        c_in, h, w = cfg.input_shape
        for i, c_out in enumerate(cfg.conv_channels):
            fan_in = c_in * cfg.kernel * cfg.kernel
            wv = rng.standard_normal((c_out, c_in, cfg.kernel, cfg.kernel)) \
                * np.sqrt(2.0 / fan_in)
            self.params[f"conv{i}.w"] = T.Node(wv.astype(self.dtype),
                                               requires_grad=True)
            self.params[f"conv{i}.b"] = T.Node(np.zeros(c_out, dtype=self.dtype),
                                               requires_grad=True)
            c_in = c_out
            h, w = h // 2, w // 2
        flat = c_in * h * w
        sizes = [flat, *cfg.fc_sizes]
        for i in range(len(cfg.fc_sizes)):
            wv = rng.standard_normal((sizes[i], sizes[i + 1])) \
                * np.sqrt(2.0 / sizes[i])
            self.params[f"fc{i}.w"] = T.Node(wv.astype(self.dtype),
                                             requires_grad=True)
            self.params[f"fc{i}.b"] = T.Node(
                np.zeros(sizes[i + 1], dtype=self.dtype), requires_grad=True)
        self.flat_size = flat

    def parameters(self) -> list[T.Node]:
        return list(self.params.values())

    def forward(self, images: np.ndarray) -> T.Node:
        """images: (N, H, W) uint8 or float; returns class probabilities."""
        raw = np.asarray(images)
        x = raw.astype(self.dtype)
        if x.ndim == 2:
            x = x[None]
        if raw.dtype.kind in "iu":
            x = x / 255.0  # 8-bit intensities to [0, 1]
        node = T.Node(x[:, None, :, :])
        for i in range(len(self.cfg.conv_channels)):
            node = T.conv2d(node, self.params[f"conv{i}.w"],
                            self.params[f"conv{i}.b"])
            node = T.relu(node)
            node = T.maxpool2(node)
        node = T.reshape(node, (node.shape[0], self.flat_size))
        n_fc = len(self.cfg.fc_sizes)
        for i in range(n_fc):
            node = T.dense(node, self.params[f"fc{i}.w"], self.params[f"fc{i}.b"])
            if i < n_fc - 1:
                node = T.relu(node)
        return T.softmax(node)

    def save(self, path) -> None:
        T.save_checkpoint(path, {k: v.value for k, v in self.params.items()})

    def load(self, path) -> None:
        loaded = T.load_checkpoint(path)
        if set(loaded) != set(self.params):
            raise ValueError("checkpoint does not match the model architecture")
        for k, arr in loaded.items():
            if arr.shape != self.params[k].value.shape:
                raise ValueError(f"shape mismatch for {k}")
            self.params[k].value = arr.astype(self.dtype)


def build_cnn(cfg: CnnConfig) -> CnnModel:
    return CnnModel(cfg)


def _load_split(manifest: DatasetManifest, split: str,
                images: dict[str, np.ndarray] | None = None):
    entries = manifest.split_entries(split)
    if not entries:
        raise ValueError(f"manifest has no {split} entries")
    imgs = []
    for e in entries:
        img = images[e.path] if images is not None else manifest.load_image(e)
        imgs.append(img)
    x = np.stack(imgs)
    y = np.array([e.label for e in entries])
    return x, y


def evaluate(model: CnnModel, x: np.ndarray, y: np.ndarray,
             batch: int = 256) -> tuple[float, np.ndarray]:
    """Accuracy and a 2x2 confusion matrix (rows true, cols predicted)."""
    if len(x) == 0:
        raise ValueError("empty evaluation split")
    k = model.cfg.n_classes
    confusion = np.zeros((k, k), dtype=int)
    for i in range(0, len(x), batch):
        probs = model.forward(x[i:i + batch]).value
        pred = probs.argmax(axis=1)
        for t, p in zip(y[i:i + batch], pred):
            confusion[t, p] += 1
    accuracy = confusion.trace() / confusion.sum()
    return float(accuracy), confusion


def evaluate_manifest(model: CnnModel, manifest: DatasetManifest,
                      split: str = "test") -> tuple[float, np.ndarray]:
    x, y = _load_split(manifest, split)
    return evaluate(model, x, y)


def train_cnn(model: CnnModel, manifest: DatasetManifest,
              cfg: CnnConfig | None = None,
              images: dict[str, np.ndarray] | None = None) -> TrainReport:
    """Adam/cross-entropy training over seeded-shuffled minibatches.

    `images` optionally maps manifest paths to preloaded 84x63 arrays,
    bypassing disk reads.
    """
    cfg = cfg or model.cfg
    x_train, y_train = _load_split(manifest, "train", images)
    x_test, y_test = _load_split(manifest, "test", images)
    if x_train.shape[1:] != tuple(cfg.input_shape[1:]):
        raise ValueError(
            f"image size {x_train.shape[1:]} != {cfg.input_shape[1:]}")
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    state = T.AdamState(lr=cfg.lr)
    params = model.parameters()
    report = TrainReport()
    start = time.time()
    n = len(x_train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        correct = 0
        for i in range(0, n, cfg.batch):
            idx = order[i:i + cfg.batch]
            for p in params:
                p.zero_grad()
            probs = model.forward(x_train[idx])
            loss = T.cross_entropy(probs, y_train[idx])
            T.backward(loss)
            T.adam_step(params, state)
            losses.append(float(loss.value) * len(idx))
            correct += int((probs.value.argmax(axis=1) == y_train[idx]).sum())
        test_acc, confusion = evaluate(model, x_test, y_test)
        report.per_epoch.append({
            "train_loss": sum(losses) / n,
            "train_acc": correct / n,
            "test_acc": test_acc,
        })
        report.final_confusion = confusion
    report.wall_time = time.time() - start
    return report
