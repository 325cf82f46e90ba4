"""Reference implementations used as ground truth by the test suite.

Written for clarity: plain loops, direct sums, closed forms. O(n^2) is
fine here; keep inputs small (<= 1e4 samples).
"""

from __future__ import annotations

import cmath
import math
from fractions import Fraction

import numpy as np


def oracle_crc(data: bytes, poly: int = 0x1021, init: int = 0xFFFF) -> int:
    """Bit-serial CRC-16, MSB first, no reflection, no final xor."""
    crc = init
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ poly) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def oracle_dft(x) -> np.ndarray:
    """X[k] = sum_n x[n] exp(-2j pi k n / N), by direct summation."""
    x = [complex(v) for v in np.asarray(x).ravel()]
    n = len(x)
    out = np.empty(n, dtype=complex)
    for k in range(n):
        acc = 0j
        for m, v in enumerate(x):
            acc += v * cmath.exp(-2j * math.pi * k * m / n)
        out[k] = acc
    return out


def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def oracle_hann_periodogram(x, rate: float):
    """One-sided |DFT|^2 of the Hann-tapered series (unnormalized) and its bin frequencies."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    w = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / n) for i in range(n)])
    spec = np.abs(_dft_matrix(n) @ (w * x)) ** 2
    half = n // 2 + 1
    return np.arange(half) * rate / n, spec[:half]


def oracle_welch(x, rate: float, seg_seconds: float = 2.0, overlap: float = 0.5):
    """Averaged one-sided periodogram (density) built from a direct-sum DFT.

    Periodic Hann taper, mean removed per segment.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    nseg = min(n, int(round(seg_seconds * rate)))
    step = nseg - int(nseg * overlap)
    w = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / nseg) for i in range(nseg)])
    f_mat = _dft_matrix(nseg)
    acc = np.zeros(nseg)
    count = 0
    for start in range(0, n - nseg + 1, step):
        seg = x[start:start + nseg]
        seg = seg - seg.mean()
        spec = f_mat @ (w * seg)
        acc += np.abs(spec) ** 2
        count += 1
    p = acc / count / (rate * np.sum(w**2))
    half = nseg // 2 + 1
    p = p[:half].copy()
    if nseg % 2 == 0:
        p[1:-1] *= 2
    else:
        p[1:] *= 2
    freqs = np.arange(half) * rate / nseg
    return freqs, p


def oracle_rms(x) -> float:
    x = [float(v) for v in np.asarray(x).ravel()]
    mean = math.fsum(x) / len(x)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in x) / len(x))


def oracle_butter_bandpass_zero_phase(f, low_hz, high_hz, order, rate, zero_phase_edges=True):
    """Closed-form forward-backward magnitude |H|^2 of a bilinear Butterworth bandpass.

    With W = tan(pi f / fs), the prototype variable is
    v = (W^2 - W0^2) / (W * B) and |H|^2 = 1 / (1 + v^(2N)). When
    ``zero_phase_edges`` the band is widened so |H|^2 is 1/sqrt(2)
    (-3 dB) at ``low_hz`` and ``high_hz``.
    """
    wl = math.tan(math.pi * low_hz / rate)
    wh = math.tan(math.pi * high_hz / rate)
    k = (math.sqrt(2) - 1) ** (1 / (2 * order)) if zero_phase_edges else 1.0
    bw = (wh - wl) / k
    w0sq = wl * wh
    out = []
    for fi in np.atleast_1d(f):
        w = math.tan(math.pi * fi / rate)
        if w == 0:
            out.append(0.0)
            continue
        v = (w * w - w0sq) / (w * bw)
        h2 = 1.0 / (1.0 + v ** (2 * order))
        out.append(h2)
    return np.array(out)


def oracle_notch_power(f, mains_hz, q, rate):
    """Single-pass |H|^2 of the second-order notch, by evaluating H on the unit circle."""
    w0 = 2 * math.pi * mains_hz / rate
    bw = w0 / q
    beta = 1.0 / (1.0 + math.tan(bw / 2))
    out = []
    for fi in np.atleast_1d(f):
        z1 = cmath.exp(-2j * math.pi * fi / rate)
        num = beta * (1 - 2 * math.cos(w0) * z1 + z1 * z1)
        den = 1 - 2 * beta * math.cos(w0) * z1 + (2 * beta - 1) * z1 * z1
        out.append(abs(num / den) ** 2)
    return np.array(out)


def oracle_sos_impulse(sos, n: int) -> np.ndarray:
    """Impulse response of a biquad cascade by running the difference equations."""
    x = [1.0] + [0.0] * (n - 1)
    for b0, b1, b2, a0, a1, a2 in np.asarray(sos, dtype=float):
        y = []
        x1 = x2 = y1 = y2 = 0.0
        for v in x:
            out = (b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0
            x2, x1 = x1, v
            y2, y1 = y1, out
            y.append(out)
        x = y
    return np.array(x)


def oracle_zero_phase_kernel(sos, taps: int) -> np.ndarray:
    """Autocorrelation of the truncated impulse response, lags ``-taps+1 .. taps-1``."""
    h = oracle_sos_impulse(sos, taps)
    return np.array([np.dot(h[: taps - abs(m)], h[abs(m):]) for m in range(-taps + 1, taps)])


def oracle_zero_phase_interior(x, sos, lo: int, hi: int, taps: int, kernel=None) -> np.ndarray:
    """Forward-backward output on samples ``[lo, hi)`` as a direct sum.

    y[n] = sum_m r[m] x[n - m] with r the autocorrelation of the (truncated)
    impulse response; valid away from the record edges.
    """
    r = oracle_zero_phase_kernel(sos, taps) if kernel is None else kernel
    x = np.asarray(x, dtype=float)
    m = np.arange(-taps + 1, taps)
    out = []
    for n in range(lo, hi):
        i = n - m
        ok = (i >= 0) & (i < len(x))
        out.append(float(np.dot(r[ok], x[i[ok]])))
    return np.array(out)


def oracle_rc(x, cutoff_hz: float, rate: float) -> np.ndarray:
    """y[n] = a*y[n-1] + (1-a)*x[n], a = exp(-2 pi fc / fs), from rest."""
    a = math.exp(-2 * math.pi * cutoff_hz / rate)
    y, out = 0.0, []
    for v in np.asarray(x, dtype=float).ravel():
        y = a * y + (1 - a) * v
        out.append(y)
    return np.array(out)


def oracle_convert(v: float, gain: int, vref: float) -> int:
    """Exact rational rounding (half to even) and clamp to 24 bits."""
    code = round(Fraction(v) * gain * (2**23 - 1) / Fraction(vref))
    return max(-(2**23), min(2**23 - 1, code))


def oracle_impedance(z_ohms: float, current: float) -> tuple[float, float]:
    """Excitation voltage by Ohm's law and the impedance recovered from it."""
    v = z_ohms * current
    return v, v / current
