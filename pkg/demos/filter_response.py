"""Measure the preprocessing chain's magnitude response empirically.

Drives long sinusoids at key frequencies through one forward pass of the
band-pass + notch cascade and reports tail-RMS gain, the same oracle the
test suite uses.

Usage: python3 demos/filter_response.py
"""
import numpy as np
from scipy import signal

from neurotopo import dsp

FS = 1000.0
sos = np.vstack([dsp.design_butterworth_bandpass(FS, 1.0, 100.0, 5).sos,
                 dsp.design_notch(FS).sos])

print(f"{'freq (Hz)':>10}  {'gain':>8}  {'gain (dB)':>10}")
for freq in (0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 49.0, 50.0, 51.0, 100.0, 150.0):
    t = np.arange(int(60 * FS)) / FS
    x = np.sin(2 * np.pi * freq * t)
    y = signal.sosfilt(sos, x)
    tail = slice(len(t) // 2, None)
    gain = np.sqrt(np.mean(y[tail] ** 2) / np.mean(x[tail] ** 2))
    db = 20 * np.log10(max(gain, 1e-12))
    print(f"{freq:10.1f}  {gain:8.4f}  {db:10.2f}")
