"""Topogram image synthesis and dataset assembly.

Per-channel mu-band power over sliding windows is baseline-corrected,
interpolated over the head disc with inverse-distance weighting, rendered
to grayscale images (840x630 plus an 84x63 net-input copy), and split
80/20 with trial-level stratification.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .montage import Montage, builtin_montage_32
from .synthgen import EegTrial

FULL_W, FULL_H = 840, 630
NET_W, NET_H = 84, 63


@dataclass(frozen=True)
class WindowPlan:
    windows: tuple[tuple[float, float], ...] = (
        (5.5, 7.0), (6.0, 7.5), (6.5, 8.0), (7.0, 8.5))
    excluded: tuple[tuple[float, float], ...] = ((5.0, 5.5), (8.5, 10.0))
    baseline_interval: tuple[float, float] = (1.0, 4.5)

    def __post_init__(self):
        for a, b in self.windows:
            if abs((b - a) - 1.5) > 1e-9:
                raise ValueError("every window must be 1.5 s long")
            for lo, hi in self.excluded:
                if a < hi and lo < b:
                    raise ValueError("window intersects an excluded interval")
        b0, b1 = self.baseline_interval
        if not (0.0 < b0 < b1 < 5.0):
            raise ValueError("baseline interval must lie inside (0, 5)")


class BaselineMode(enum.Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


def slice_windows(plan: WindowPlan, trial_len: float) -> list[tuple[float, float]]:
    """The plan's analysis windows, validated against the trial length."""
    if trial_len < 8.5:
        raise ValueError(f"trial too short for the window plan: {trial_len} s")
    return list(plan.windows)


def baseline_correct(power: np.ndarray, baseline: np.ndarray,
                     mode: BaselineMode) -> np.ndarray:
    power = np.asarray(power, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    if power.shape != baseline.shape:
        raise ValueError("power and baseline shapes differ")
    if mode is BaselineMode.ABSOLUTE:
        return power - baseline
    if np.any(baseline <= 0):
        raise ValueError("relative baseline requires strictly positive values")
    return power / baseline


def idw_interpolate(points: np.ndarray, values: np.ndarray,
                    queries: np.ndarray, power: float = 2.0) -> np.ndarray:
    """Inverse-distance-weighted interpolation; exact at the data points."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    queries = np.asarray(queries, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    d2 = np.sum((queries[:, None, :] - points[None, :, :]) ** 2, axis=2)
    out = np.empty(len(queries))
    at_node = d2 < 1e-18
    hit = at_node.any(axis=1)
    with np.errstate(divide="ignore"):
        w = 1.0 / d2 ** (power / 2.0)
    w[at_node] = 0.0  # filled exactly below
    out[:] = (w @ values) / w.sum(axis=1)
    if hit.any():
        out[hit] = values[at_node[hit].argmax(axis=1)]
    return out


class ScalpGrid:
    """Precomputed pixel grid and IDW weights for one (montage, size) pair."""

    def __init__(self, montage: Montage, width: int, height: int,
                 power: float = 2.0):
        if width <= 0 or height <= 0:
            raise ValueError("width and height must be positive")
        self.montage = montage
        self.width = width
        self.height = height
        self.radius = Montage.head_radius_px(width, height)
        cx, cy = width / 2.0, height / 2.0
        xs = np.arange(width) + 0.5
        ys = np.arange(height) + 0.5
        px, py = np.meshgrid(xs, ys)         # (H, W)
        # montage y is "toward the nose": render nose-up (small image row)
        gx = (px - cx) / self.radius
        gy = (cy - py) / self.radius
        self.inside = (gx**2 + gy**2) <= 1.0
        pts = np.array([e.pos2d for e in montage.electrodes])
        q = np.stack([gx[self.inside], gy[self.inside]], axis=1)
        d2 = np.sum((q[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        self._node_hits = d2 < 1e-18
        with np.errstate(divide="ignore"):
            w = 1.0 / d2 ** (power / 2.0)
        w[self._node_hits] = 0.0
        self._weights = w / w.sum(axis=1, keepdims=True)

    def interpolate(self, values: np.ndarray) -> np.ndarray:
        """Scalar field (H, W); pixels outside the head disc are NaN."""
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.montage),):
            raise ValueError("one value per montage channel required")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        flat = self._weights @ values
        if self._node_hits.any():
            rows, cols = np.nonzero(self._node_hits)
            flat[rows] = values[cols]
        field = np.full((self.height, self.width), np.nan)
        field[self.inside] = flat
        return field

    def interpolate_many(self, value_rows: np.ndarray) -> np.ndarray:
        """Batched interpolation: (n, channels) -> (n, H, W) with NaN outside."""
        value_rows = np.asarray(value_rows, dtype=float)
        flat = value_rows @ self._weights.T
        if self._node_hits.any():
            rows, cols = np.nonzero(self._node_hits)
            flat[:, rows] = value_rows[:, cols]
        fields = np.full((len(value_rows), self.height, self.width), np.nan)
        fields[:, self.inside] = flat
        return fields


_grid_cache: dict[tuple, ScalpGrid] = {}


def scalp_grid(montage: Montage, width: int, height: int) -> ScalpGrid:
    key = (id(montage), width, height)
    if key not in _grid_cache:
        _grid_cache[key] = ScalpGrid(montage, width, height)
    return _grid_cache[key]


def interpolate_scalp(values: np.ndarray, montage: Montage,
                      width: int, height: int) -> np.ndarray:
    """IDW (power 2) scalar field over the head disc; NaN outside the disc."""
    return scalp_grid(montage, width, height).interpolate(values)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (unlike numpy's banker's rounding)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class TopogramImage:
    pixels: np.ndarray          # uint8 (H, W); 0 outside the head disc
    subject_id: int
    trial_id: int
    window_index: int
    baseline_mode: BaselineMode
    label: int


def render_field(field: np.ndarray) -> np.ndarray:
    """Min-max normalize in-disc values to 0..255 uint8; NaN (outside) -> 0."""
    field = np.asarray(field, dtype=float)
    inside = np.isfinite(field)
    vals = field[inside]
    if vals.size == 0:
        raise ValueError("field has no in-disc pixels")
    lo, hi = vals.min(), vals.max()
    if hi <= lo:
        raise ValueError("constant field: min-max normalization is degenerate")
    out = np.zeros(field.shape, dtype=np.uint8)
    out[inside] = round_half_away((vals - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return out


def render_topogram(field: np.ndarray, meta: dict | None = None) -> TopogramImage:
    """Render a full-resolution (630x840) field to an 8-bit topogram."""
    if field.shape != (FULL_H, FULL_W):
        raise ValueError(f"expected {FULL_H}x{FULL_W} field, got {field.shape}")
    meta = meta or {}
    return TopogramImage(
        pixels=render_field(field),
        subject_id=meta.get("subject", -1),
        trial_id=meta.get("trial", -1),
        window_index=meta.get("window", -1),
        baseline_mode=meta.get("baseline", BaselineMode.ABSOLUTE),
        label=meta.get("label", -1),
    )


def downsample(pixels: np.ndarray) -> np.ndarray:
    """840x630 -> 84x63 by non-overlapping 10x10 block mean."""
    if pixels.shape != (FULL_H, FULL_W):
        raise ValueError(f"expected {FULL_H}x{FULL_W} image, got {pixels.shape}")
    blocks = pixels.astype(float).reshape(NET_H, 10, NET_W, 10)
    means = blocks.mean(axis=(1, 3))
    return round_half_away(means).astype(np.uint8)


# --- PGM I/O -----------------------------------------------------------------

def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255), the canonical bit-exact image format."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: {path}")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = map(int, line.split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError("only maxval 255 PGM supported")
        data = fh.read(w * h)
    if len(data) != w * h:
        raise ValueError("truncated PGM data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


# --- dataset assembly --------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str               # 84x63 net-input image, relative to manifest dir
    full_path: str          # 840x630 image
    label: int
    split: str              # "train" | "test"
    subject: int
    trial: int
    window: int
    baseline: str           # "absolute" | "relative"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    root: Path = field(default_factory=Path)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def to_jsonl(self) -> str:
        lines = []
        for e in self.entries:
            lines.append(json.dumps({
                "path": e.path, "full_path": e.full_path, "label": e.label,
                "split": e.split, "subject": e.subject, "trial": e.trial,
                "window": e.window, "baseline": e.baseline,
            }, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path, seed: int = 0) -> "DatasetManifest":
        entries = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            entries.append(ManifestEntry(
                path=d["path"], full_path=d.get("full_path", d["path"]),
                label=d["label"], split=d["split"], subject=d["subject"],
                trial=d["trial"], window=d["window"], baseline=d["baseline"]))
        return cls(entries, seed, root=Path(path).parent)

    def load_image(self, entry: ManifestEntry) -> np.ndarray:
        return read_pgm(self.root / entry.path)


def split_sizes(n: int, train_fraction: float = 0.8) -> tuple[int, int]:
    """(train, test) sizes: train = round(0.8*N), remainder to test."""
    train = int(np.floor(train_fraction * n + 0.5))
    return train, n - train


def assign_trial_splits(trials: list[EegTrial], seed: int) -> dict[tuple[int, int], str]:
    """Seeded 80/20 split at trial granularity, stratified by label.

    All images of one trial share a split so no trial leaks across it.
    """
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x5EED])
    assignment: dict[tuple[int, int], str] = {}
    for label in sorted({t.label for t in trials}):
        keys = sorted((t.subject_id, t.trial_id) for t in trials if t.label == label)
        order = rng.permutation(len(keys))
        n_train, _ = split_sizes(len(keys))
        for rank, idx in enumerate(order):
            assignment[keys[idx]] = "train" if rank < n_train else "test"
    return assignment


def build_dataset(trials: list[EegTrial], out_dir: str | Path,
                  plan: WindowPlan | None = None,
                  spec: dsp.BandPowerSpec | None = None,
                  montage: Montage | None = None,
                  seed: int = 0,
                  store_fullres: bool = True) -> DatasetManifest:
    """Render every (trial, window, baseline-mode) topogram and write the
    manifest. Deterministic: same inputs and seed give byte-identical output.
    """
    if not trials:
        raise ValueError("trial list is empty")
    plan = plan or WindowPlan()
    spec = spec or dsp.BandPowerSpec()
    montage = montage or builtin_montage_32()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "full").mkdir(exist_ok=True)
    (out_dir / "net").mkdir(exist_ok=True)

    assignment = assign_trial_splits(trials, seed)
    if len({t.label for t in trials}) < 2:
        raise ValueError("dataset needs both classes")

    grid = scalp_grid(montage, FULL_W, FULL_H)
    entries: list[ManifestEntry] = []
    for trial in sorted(trials, key=lambda t: (t.subject_id, t.trial_id)):
        windows = slice_windows(plan, trial.samples.shape[1] / trial.fs)
        base_power = dsp.band_power_per_channel(
            trial.samples, trial.fs, spec, plan.baseline_interval)
        win_powers = [dsp.band_power_per_channel(trial.samples, trial.fs, spec, w)
                      for w in windows]
        for wi, power in enumerate(win_powers):
            for mode in (BaselineMode.ABSOLUTE, BaselineMode.RELATIVE):
                corrected = baseline_correct(power, base_power, mode)
                field_full = grid.interpolate(corrected)
                pixels = render_field(field_full)
                small = downsample(pixels)
                stem = (f"s{trial.subject_id:03d}_t{trial.trial_id:03d}"
                        f"_w{wi}_{mode.value}")
                full_rel = f"full/{stem}.pgm"
                net_rel = f"net/{stem}.pgm"
                if store_fullres:
                    write_pgm(out_dir / full_rel, pixels)
                write_pgm(out_dir / net_rel, small)
                entries.append(ManifestEntry(
                    path=net_rel, full_path=full_rel, label=trial.label,
                    split=assignment[(trial.subject_id, trial.trial_id)],
                    subject=trial.subject_id, trial=trial.trial_id,
                    window=wi, baseline=mode.value))
    manifest = DatasetManifest(entries, seed, root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
