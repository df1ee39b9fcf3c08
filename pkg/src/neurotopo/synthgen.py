"""Synthetic labeled EEG trials with lateralized mu-band desynchronization.

Stands in for real motor-task recordings: 1/f background, a 10 Hz mu
oscillation concentrated over the motor strip, 50 Hz line noise, and a
contralateral amplitude drop during the movement period.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .montage import Montage, builtin_montage_32

LEFT_HAND = 1
RIGHT_HAND = 0


@dataclass(frozen=True)
class TrialTimeline:
    fixation_start: float = 0.0
    arrow_at: float = 2.0
    movement_start: float = 3.5
    trial_len: float = 10.0
    analysis_movement_window: tuple[float, float] = (5.5, 8.5)

    def __post_init__(self):
        if not (0.0 <= self.fixation_start < self.arrow_at
                < self.movement_start < self.trial_len):
            raise ValueError("timeline phases must be strictly ordered")


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 1
    trials_per_hand: int = 20
    mu_freq: float = 10.0          # Hz
    mu_amp: float = 10.0           # microvolts
    erd_depth: float = 0.5         # fraction of mu amplitude suppressed
    noise_amp: float = 2.0         # microvolts, 1/f background scale
    line_noise_amp: float = 1.0    # microvolts, 50 Hz
    seed: int = 0
    fs: float = 1000.0
    timeline: TrialTimeline = field(default_factory=TrialTimeline)

    def __post_init__(self):
        if not 0.0 < self.erd_depth <= 1.0:
            raise ValueError("erd_depth must be in (0, 1]")
        for name in ("mu_amp", "noise_amp", "line_noise_amp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_subjects < 1 or self.trials_per_hand < 1:
            raise ValueError("n_subjects and trials_per_hand must be >= 1")


@dataclass
class EegTrial:
    subject_id: int
    trial_id: int
    label: int                 # 1 = left hand, 0 = right hand
    fs: float
    samples: np.ndarray        # (n_channels, n_samples) microvolts
    channel_names: list[str]

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trial samples must be finite")
        if self.samples.shape[0] != len(self.channel_names):
            raise ValueError("row count must equal channel count")


def _spatial_gain(montage: Montage, centers: list[str], sigma: float) -> np.ndarray:
    """Per-channel gain in [0,1] from Gaussian bumps at the named electrodes."""
    pos = np.array([e.pos2d for e in montage.electrodes])
    gain = np.zeros(len(montage))
    for name in centers:
        c = np.array(montage.find(name).pos2d)
        d2 = np.sum((pos - c) ** 2, axis=1)
        gain = np.maximum(gain, np.exp(-d2 / (2 * sigma**2)))
    return gain


def _pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-variance noise with a -10 dB/decade power slope (1/f)."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, d=1.0)
    shaping = np.ones_like(f)
    shaping[1:] = 1.0 / np.sqrt(f[1:] / f[1])
    shaped = np.fft.irfft(spec * shaping, n)
    return shaped / shaped.std()


def _erd_envelope(t: np.ndarray, start: float, end: float, ramp: float) -> np.ndarray:
    """0 outside (start,end), 1 inside, cosine ramps of the given width."""
    env = np.zeros_like(t)
    env[(t >= start + ramp) & (t <= end - ramp)] = 1.0
    up = (t > start) & (t < start + ramp)
    env[up] = 0.5 * (1 - np.cos(np.pi * (t[up] - start) / ramp))
    down = (t > end - ramp) & (t < end)
    env[down] = 0.5 * (1 - np.cos(np.pi * (end - t[down]) / ramp))
    return env


def generate_trial(cfg: SynthConfig, subject_id: int, trial_id: int,
                   label: int, montage: Montage | None = None) -> EegTrial:
    """One deterministic synthetic trial for (seed, subject, trial, label)."""
    if label not in (LEFT_HAND, RIGHT_HAND):
        raise ValueError("label must be 0 (right hand) or 1 (left hand)")
    montage = montage or builtin_montage_32()
    tl = cfg.timeline
    n = int(round(tl.trial_len * cfg.fs))
    t = np.arange(n) / cfg.fs
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, cfg.seed >> 32 & 0xFFFFFFFF,
                                 subject_id, trial_id, label])

    n_ch = len(montage)
    samples = np.empty((n_ch, n))

    # mu oscillation: common rhythm, spatial gain peaking over the motor strip
    mu_gain = _spatial_gain(montage, ["C3", "Cz", "C4"], sigma=0.35)
    mu_gain = 0.2 + 0.8 * mu_gain
    mu_phase = rng.uniform(0, 2 * np.pi)
    mu = np.sin(2 * np.pi * cfg.mu_freq * t + mu_phase)

    # contralateral suppression during movement, cosine-ramped
    target = "C4" if label == LEFT_HAND else "C3"
    erd_weight = _spatial_gain(montage, [target], sigma=0.25)
    movement_end = tl.trial_len - 1.5
    env = _erd_envelope(t, tl.movement_start, movement_end, ramp=0.25)
    # per-channel amplitude: gain * (1 - erd_depth * weight * envelope)
    mu_amp = cfg.mu_amp * mu_gain[:, None] * (
        1.0 - cfg.erd_depth * erd_weight[:, None] * env[None, :])

    line = cfg.line_noise_amp * np.sin(2 * np.pi * 50.0 * t + rng.uniform(0, 2 * np.pi))

    for ch in range(n_ch):
        samples[ch] = (mu_amp[ch] * mu
                       + cfg.noise_amp * _pink_noise(rng, n)
                       + line)

    return EegTrial(subject_id, trial_id, label, cfg.fs, samples, montage.names)


def generate_cohort(cfg: SynthConfig, montage: Montage | None = None) -> list[EegTrial]:
    """All trials for the cohort, ordered by (subject, hand, trial index).

    Left-hand trials come first within each subject; trial ids run
    0..2*trials_per_hand-1 so (subject, trial) is unique.
    """
    montage = montage or builtin_montage_32()
    trials = []
    for subject in range(cfg.n_subjects):
        trial_id = 0
        for label in (LEFT_HAND, RIGHT_HAND):
            for _ in range(cfg.trials_per_hand):
                trials.append(generate_trial(cfg, subject, trial_id, label, montage))
                trial_id += 1
    return trials


def sample_bound(cfg: SynthConfig) -> float:
    """Documented amplitude bound for any generated sample."""
    return cfg.mu_amp + 6 * cfg.noise_amp + cfg.line_noise_amp + 5 * cfg.noise_amp


# --- trial file format -------------------------------------------------------
# header: fs=1000,channels=<comma list>,label=<0|1>,subject=<n>,trial=<n>
# body:   one CSV row per sample, one column per channel, shortest
#         round-trip decimal floats (bit-exact reload)

def trial_to_text(trial: EegTrial) -> str:
    fs = int(trial.fs) if float(trial.fs).is_integer() else trial.fs
    buf = io.StringIO()
    buf.write(f"fs={fs},channels={','.join(trial.channel_names)},"
              f"label={trial.label},subject={trial.subject_id},trial={trial.trial_id}\n")
    for row in trial.samples.T:
        buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()


def save_trial(trial: EegTrial, path: str | Path) -> None:
    Path(path).write_text(trial_to_text(trial))


def load_trial(path: str | Path) -> EegTrial:
    with open(path) as fh:
        header = fh.readline().strip()
        fields = {}
        # channels value itself contains commas; parse key=... segments
        parts = header.split(",")
        key = None
        for part in parts:
            if "=" in part:
                key, val = part.split("=", 1)
                fields[key] = val
            else:
                fields[key] += "," + part
        channels = fields["channels"].split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return EegTrial(
        subject_id=int(fields["subject"]),
        trial_id=int(fields["trial"]),
        label=int(fields["label"]),
        fs=float(fields["fs"]),
        samples=data.T.copy(),
        channel_names=channels,
    )


def trial_filename(trial: EegTrial) -> str:
    return f"trial_s{trial.subject_id:03d}_t{trial.trial_id:03d}.csv"
