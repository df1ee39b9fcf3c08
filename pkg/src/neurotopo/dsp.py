"""Filtering and mu-band power extraction.

Filters are designed as stable biquad cascades (Butterworth band-pass via
the bilinear transform with prewarping, plus a narrow 50 Hz notch) and
applied with zero-phase forward-backward filtering. Band power comes from
complex Morlet wavelets calibrated so a sinusoid at the band center reads
its RMS power A^2/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .synthgen import EegTrial


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections, scipy layout (b0,b1,b2,a0,a1,a2 per row)."""
    sos: np.ndarray
    description: str = ""

    def __post_init__(self):
        sos = np.asarray(self.sos, dtype=float)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise ValueError("sos must be an (n, 6) array")
        object.__setattr__(self, "sos", sos)
        for row in sos:
            poles = np.roots(row[3:])
            if np.any(np.abs(poles) >= 1.0):
                raise ValueError("unstable section: pole on or outside unit circle")

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def magnitude(self, freq_hz: float, fs: float) -> float:
        """Single-pass magnitude response at one frequency."""
        _, h = signal.sosfreqz(self.sos, worN=[freq_hz], fs=fs)
        return float(np.abs(h[0]))

    def settle_len(self) -> int:
        """Samples for the impulse response to decay below 1e-9 of its peak."""
        key = self.sos.tobytes()
        cached = _settle_cache.get(key)
        if cached is not None:
            return cached
        n = 256
        while n < 1_000_000:
            x = np.zeros(n)
            x[0] = 1.0
            h = signal.sosfilt(self.sos, x)
            peak = np.max(np.abs(h))
            tail = np.abs(h[n // 2:]).max()
            if tail < 1e-9 * peak:
                idx = np.nonzero(np.abs(h) >= 1e-9 * peak)[0]
                result = int(idx[-1]) + 1
                break
            n *= 2
        else:
            result = n
        _settle_cache[key] = result
        return result


_settle_cache: dict[bytes, int] = {}


def design_butterworth_bandpass(fs: float, lo: float, hi: float,
                                order: int = 5) -> BiquadCascade:
    """Butterworth band-pass, bilinear transform with prewarping, as SOS."""
    if not (0 < lo < hi < fs / 2):
        raise ValueError(f"band edges must satisfy 0 < lo < hi < fs/2, got {lo}, {hi}")
    if order < 1:
        raise ValueError("order must be >= 1")
    sos = signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return BiquadCascade(sos, f"butterworth order {order} band {lo}-{hi} Hz")


def design_notch(fs: float, f0: float = 50.0, q: float = 35.0) -> BiquadCascade:
    """Second-order IIR notch at f0 with quality factor q."""
    if not (0 < f0 < fs / 2):
        raise ValueError(f"notch frequency must be in (0, fs/2), got {f0}")
    b, a = signal.iirnotch(f0, q, fs=fs)
    return BiquadCascade(np.hstack([b, a])[None, :], f"notch {f0} Hz Q={q}")


def filtfilt(filt: BiquadCascade, x: np.ndarray) -> np.ndarray:
    """Zero-phase application: filter, reverse, filter again, reverse.

    Edges are handled by odd reflection padding of 3x the filter's
    impulse-response settle length (capped by the input length).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("filtfilt expects a 1-D sample vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("filtfilt input must be finite")
    min_len = 3 * 2 * filt.n_sections  # 2 state variables per section
    if x.size < max(min_len, 3):
        raise ValueError(f"input too short: {x.size} < {max(min_len, 3)}")
    padlen = min(3 * filt.settle_len(), x.size - 1)
    return signal.sosfiltfilt(filt.sos, x, padtype="odd", padlen=padlen)


@dataclass(frozen=True)
class BandPowerSpec:
    lo_hz: float = 9.0
    hi_hz: float = 11.0
    wavelet_cycles: int = 7
    freq_step_hz: float = 0.5

    def __post_init__(self):
        if not 0 < self.lo_hz < self.hi_hz:
            raise ValueError("need 0 < lo_hz < hi_hz")

    def frequencies(self) -> np.ndarray:
        n = int(round((self.hi_hz - self.lo_hz) / self.freq_step_hz))
        return self.lo_hz + self.freq_step_hz * np.arange(n + 1)


def _morlet_kernel(fs: float, freq: float, cycles: int) -> np.ndarray:
    """Complex Morlet wavelet; envelope sum sqrt(2) so a unit sinusoid at
    the center frequency yields |coefficient|^2 = 0.5."""
    sigma_t = cycles / (2 * np.pi * freq)
    half = int(np.ceil(4 * sigma_t * fs))
    t = np.arange(-half, half + 1) / fs
    envelope = np.exp(-(t**2) / (2 * sigma_t**2))
    envelope *= np.sqrt(2.0) / envelope.sum()
    return envelope * np.exp(2j * np.pi * freq * t)


class _BandOperator:
    """Morlet filter bank for one (fs, spec) pair, with band-center gain
    calibration so an in-band sinusoid reads ~A^2/2 after frequency
    averaging (individual wavelets leak across the band)."""

    def __init__(self, fs: float, spec: BandPowerSpec):
        self.fs = fs
        self.spec = spec
        self.freqs = spec.frequencies()
        self.kernels = [_morlet_kernel(fs, f, spec.wavelet_cycles) for f in self.freqs]
        self.gain = self._center_gain()

    def _center_gain(self) -> float:
        fc = 0.5 * (self.spec.lo_hz + self.spec.hi_hz)
        dur = max(4.0, 4 * self.spec.wavelet_cycles / self.spec.lo_hz)
        t = np.arange(int(dur * self.fs)) / self.fs
        x = np.sin(2 * np.pi * fc * t)
        lo = int(0.25 * len(t))
        hi = int(0.75 * len(t))
        raw = np.mean([np.abs(np.convolve(x, k, mode="same")[lo:hi]) ** 2
                       for k in self.kernels])
        return raw / 0.5

    def power(self, x: np.ndarray) -> np.ndarray:
        """Per-sample band power, frequency-averaged and gain-corrected."""
        acc = np.zeros(len(x))
        for k in self.kernels:
            acc += np.abs(signal.fftconvolve(x, k, mode="same")) ** 2
        return acc / (len(self.kernels) * self.gain)


_operator_cache: dict[tuple, _BandOperator] = {}


def _band_operator(fs: float, spec: BandPowerSpec) -> _BandOperator:
    key = (fs, spec.lo_hz, spec.hi_hz, spec.wavelet_cycles, spec.freq_step_hz)
    if key not in _operator_cache:
        _operator_cache[key] = _BandOperator(fs, spec)
    return _operator_cache[key]


def morlet_band_power(x: np.ndarray, fs: float, spec: BandPowerSpec,
                      window: tuple[float, float]) -> float:
    """Mean band power (uV^2) of x over the window, Morlet filter bank."""
    x = np.asarray(x, dtype=float)
    t0, t1 = window
    if spec.hi_hz >= fs / 2:
        raise ValueError("band must lie below the Nyquist frequency")
    if not (0 <= t0 < t1 <= x.size / fs):
        raise ValueError(f"window {window} outside signal duration")
    if t1 - t0 < spec.wavelet_cycles / spec.lo_hz:
        raise ValueError("window shorter than the wavelet support")
    op = _band_operator(fs, spec)
    i0 = int(round(t0 * fs))
    i1 = int(round(t1 * fs))
    return float(np.mean(op.power(x)[i0:i1]))


def band_power_per_channel(samples: np.ndarray, fs: float, spec: BandPowerSpec,
                           window: tuple[float, float]) -> np.ndarray:
    return np.array([morlet_band_power(row, fs, spec, window) for row in samples])


def preprocess_trial(trial: EegTrial,
                     notch: BiquadCascade | None = None,
                     bandpass: BiquadCascade | None = None) -> EegTrial:
    """50 Hz notch then 1-100 Hz order-5 Butterworth, zero-phase, per channel."""
    notch = notch or design_notch(trial.fs)
    bandpass = bandpass or design_butterworth_bandpass(trial.fs, 1.0, 100.0, 5)
    out = np.empty_like(trial.samples)
    for ch in range(trial.samples.shape[0]):
        out[ch] = filtfilt(bandpass, filtfilt(notch, trial.samples[ch]))
    return replace_samples(trial, out)


def replace_samples(trial: EegTrial, samples: np.ndarray) -> EegTrial:
    return EegTrial(trial.subject_id, trial.trial_id, trial.label,
                    trial.fs, samples, trial.channel_names)


def dump_filter_coefficients(filters: dict[str, BiquadCascade]) -> str:
    """CSV dump (12 significant digits) for cross-implementation comparison."""
    lines = ["filter,section,b0,b1,b2,a0,a1,a2"]
    for name, filt in filters.items():
        for i, row in enumerate(filt.sos):
            coeffs = ",".join(f"{c:.12g}" for c in row)
            lines.append(f"{name},{i},{coeffs}")
    return "\n".join(lines) + "\n"
