"""Host-side processing: bandpass, mains notch, Welch PSD, RMS, CMRR, detectors.

All filters run forward-backward (zero phase) through ``sosfiltfilt`` with
an odd extension of ``min(n - 1, rate)`` samples at each end.

The PSD is an averaged periodogram: Hann taper, 2 s segments (or the whole
series when shorter), 50 % overlap, mean detrend, one-sided density in
V^2/Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigurationError, DomainError

PSD_SEGMENT_SECONDS = 2.0
PSD_OVERLAP = 0.5
PSD_WINDOW = "hann"


@dataclass(frozen=True)
class BandpassSpec:
    """Maximally flat bandpass; ``order`` is the lowpass prototype order."""

    low_hz: float = 1.0
    high_hz: float = 40.0
    order: int = 4

    def check(self, rate: float):
        if not 0 < self.low_hz < self.high_hz < rate / 2:
            raise ConfigurationError(
                f"bandpass edges {self.low_hz}-{self.high_hz} Hz invalid for {rate} SPS"
            )
        if self.order < 1:
            raise ConfigurationError("order must be >= 1")


def _padlen(n: int, rate: float) -> int:
    return max(0, min(n - 1, int(rate)))


def zero_phase(sos: np.ndarray, x, rate: float) -> np.ndarray:
    """Forward-backward filtering along the last axis."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 0:
        return x.copy()
    return signal.sosfiltfilt(sos, x, axis=-1, padtype="odd", padlen=_padlen(x.shape[-1], rate))


def bandpass_design(spec: BandpassSpec, rate: float) -> np.ndarray:
    """Second-order sections whose forward-backward response is -3 dB at the requested edges.

    A single Butterworth pass is -3 dB at its design edges, so running it
    twice would put the combined -3 dB points inside the band. The design
    edges are widened in the prewarped domain: the centre frequency is kept
    and the bandwidth scaled so that the prototype variable reaches
    ``(sqrt(2) - 1) ** (1 / (2 * order))`` at the requested edges.
    """
    spec.check(rate)
    k = (math.sqrt(2.0) - 1.0) ** (1.0 / (2 * spec.order))
    wl = math.tan(math.pi * spec.low_hz / rate)
    wh = math.tan(math.pi * spec.high_hz / rate)
    bw = (wh - wl) / k
    centre_sq = wl * wh
    wh2 = (bw + math.sqrt(bw * bw + 4 * centre_sq)) / 2
    wl2 = centre_sq / wh2
    lo = rate / math.pi * math.atan(wl2)
    hi = rate / math.pi * math.atan(wh2)
    if not 0 < lo < hi < rate / 2:
        raise ConfigurationError(f"bandpass {spec.low_hz}-{spec.high_hz} Hz too wide for {rate} SPS")
    return signal.butter(spec.order, [lo, hi], btype="bandpass", fs=rate, output="sos")


def bandpass_response(spec: BandpassSpec, freqs, rate: float) -> np.ndarray:
    """Magnitude of the zero-phase bandpass at ``freqs`` Hz."""
    sos = bandpass_design(spec, rate)
    _, h = signal.sosfreqz(sos, worN=np.atleast_1d(np.asarray(freqs, dtype=float)), fs=rate)
    return np.abs(h) ** 2


def bandpass(series, spec: BandpassSpec | None = None, rate: float = 250) -> np.ndarray:
    spec = spec or BandpassSpec()
    return zero_phase(bandpass_design(spec, rate), series, rate)


def notch_design(mains_hz: float, q: float, rate: float) -> np.ndarray:
    if not 0 < mains_hz < rate / 2:
        raise ConfigurationError(f"notch at {mains_hz} Hz is not below Nyquist for {rate} SPS")
    b, a = signal.iirnotch(mains_hz, q, fs=rate)
    return signal.tf2sos(b, a)


def notch(series, mains_hz: float = 50.0, q: float = 30.0, rate: float = 250) -> np.ndarray:
    return zero_phase(notch_design(mains_hz, q, rate), series, rate)


def notch_response(mains_hz: float, q: float, freqs, rate: float) -> np.ndarray:
    _, h = signal.sosfreqz(notch_design(mains_hz, q, rate), worN=np.atleast_1d(freqs), fs=rate)
    return np.abs(h) ** 2


# --- spectra -------------------------------------------------------------------


@dataclass(frozen=True)
class Psd:
    freqs: np.ndarray
    power: np.ndarray
    nperseg: int
    noverlap: int
    window: str = PSD_WINDOW

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if len(self.freqs) > 1 else 0.0


def psd(series, rate: float) -> Psd:
    x = np.asarray(series, dtype=float)
    n = x.shape[-1]
    if n < 2:
        raise DomainError("PSD needs at least two samples")
    nperseg = min(n, int(round(PSD_SEGMENT_SECONDS * rate)))
    noverlap = int(nperseg * PSD_OVERLAP)
    freqs, power = signal.welch(
        x,
        fs=rate,
        window=PSD_WINDOW,
        nperseg=nperseg,
        noverlap=noverlap,
        detrend="constant",
        scaling="density",
        axis=-1,
    )
    return Psd(freqs, power, nperseg, noverlap)


def band_power(p: Psd, lo_hz: float, hi_hz: float):
    """Integrated power (V^2) over bins with ``lo_hz <= f <= hi_hz``."""
    if hi_hz > p.freqs[-1] + 1e-9:
        raise DomainError(f"band edge {hi_hz} Hz above the highest PSD bin {p.freqs[-1]} Hz")
    mask = (p.freqs >= lo_hz) & (p.freqs <= hi_hz)
    if lo_hz >= hi_hz or not mask.any():
        raise DomainError(f"band [{lo_hz}, {hi_hz}] Hz holds no PSD bins")
    return p.power[..., mask].sum(axis=-1) * p.df


def rms(series) -> float:
    """Root mean square about the mean."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise DomainError("rms of an empty series")
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def tone_amplitude(series, rate: float, hz: float) -> float:
    """Least-squares amplitude of a sinusoid at ``hz`` (lock-in style)."""
    x = np.asarray(series, dtype=float)
    t = np.arange(x.shape[-1]) / rate
    basis = np.column_stack([np.sin(2 * np.pi * hz * t), np.cos(2 * np.pi * hz * t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return float(math.hypot(coef[0], coef[1]))


# --- CMRR ----------------------------------------------------------------------


@dataclass(frozen=True)
class CmrrEstimate:
    db: float
    residual_amplitude: float
    floor_limited: bool


def _as_volts(frames, cfg):
    from .ads1299 import FrameBlock, decode, frames_to_volts

    if isinstance(frames, FrameBlock):
        return decode(frames.codes, cfg.gain, cfg.vref).T
    if isinstance(frames, np.ndarray):
        return np.atleast_2d(frames)
    return frames_to_volts(list(frames), cfg.gain, cfg.vref)


def cmrr_estimate(frames, cfg, cm_amplitude: float, cm_hz: float, floor_amplitude: float | None = None) -> CmrrEstimate:
    """Rejection of a known common-mode tone, in dB.

    ``frames`` may be SampleFrames, a FrameBlock or decoded volts
    ``(channels, n)``. The residual amplitude is ``sqrt(2 * P)`` with ``P``
    the channel-averaged PSD power within 1 Hz of ``cm_hz``. Residuals under
    ``floor_amplitude`` (default half an LSB) are clamped to it and flagged.
    """
    from .ads1299 import lsb

    if not cm_amplitude > 0:
        raise DomainError("common-mode amplitude must be positive")
    volts = _as_volts(frames, cfg)
    p = psd(volts, cfg.rate)
    power = float(np.mean(band_power(p, cm_hz - 1.0, cm_hz + 1.0)))
    residual = math.sqrt(2.0 * power)
    floor = floor_amplitude if floor_amplitude is not None else lsb(cfg.gain, cfg.vref) / 2
    limited = residual < floor
    return CmrrEstimate(20.0 * math.log10(cm_amplitude / max(residual, floor)), residual, limited)


# --- detectors -----------------------------------------------------------------


@dataclass(frozen=True)
class AlphaWindow:
    start: float
    end: float
    ratio: float
    detected: bool


def _intervals(mask: np.ndarray, rate: float, merge_gap: float, min_duration: float) -> list[tuple[float, float]]:
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts, ends = np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]
    merged: list[list[int]] = []
    for s, e in zip(starts, ends):
        if merged and (s - merged[-1][1]) / rate < merge_gap:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s / rate, e / rate) for s, e in merged if (e - s) / rate >= min_duration]


def detect_alpha(volts, rate: float, montage, windows=None, ratio_threshold: float = 2.0, window_s: float = 2.0) -> list[AlphaWindow]:
    """Per-window alpha decision on the occipital channels.

    ratio = sum of 8-14 Hz power / sum of power in 4-30 Hz outside 8-14 Hz.
    ``windows`` defaults to consecutive ``window_s`` windows.
    """
    if not montage.occipital_set:
        raise ConfigurationError("montage has no occipital channels")
    x = np.atleast_2d(np.asarray(volts, dtype=float))[montage.indices(montage.occipital_set)]
    total = x.shape[-1] / rate
    if windows is None:
        n_win = int(total // window_s + 1e-9)
        windows = [(k * window_s, (k + 1) * window_s) for k in range(n_win)]
    out = []
    for start, end in windows:
        if end - start < 2.0 - 1e-9:
            raise DomainError("alpha windows must span at least 2 s")
        i0, i1 = int(round(start * rate)), int(round(end * rate))
        p = psd(x[:, i0:i1], rate)
        alpha_mask = (p.freqs >= 8.0) & (p.freqs <= 14.0)
        rest_mask = (p.freqs >= 4.0) & (p.freqs <= 30.0) & ~alpha_mask
        alpha = p.power[:, alpha_mask].sum()
        rest = p.power[:, rest_mask].sum()
        if rest > 0:
            ratio = alpha / rest
        else:
            ratio = math.inf if alpha > 0 else 0.0
        out.append(AlphaWindow(start, end, float(ratio), bool(ratio > ratio_threshold)))
    return out


def detect_chew(
    volts,
    rate: float,
    k: float = 5.0,
    band: tuple[float, float] = (30.0, 100.0),
    window_s: float = 0.25,
    merge_gap: float = 0.5,
    min_duration: float = 0.2,
    min_rms: float = 1e-8,
) -> list[tuple[float, float]]:
    """EMG bursts: moving RMS of the 30-100 Hz band above ``k`` x its median."""
    x = np.atleast_2d(np.asarray(volts, dtype=float))
    if x.shape[-1] == 0:
        return []
    hi = min(band[1], 0.45 * rate)
    sos = signal.butter(4, [band[0], hi], btype="bandpass", fs=rate, output="sos")
    emg = zero_phase(sos, x, rate)
    power = np.mean(emg**2, axis=0)
    win = max(1, int(round(window_s * rate)))
    moving = np.sqrt(np.convolve(power, np.ones(win) / win, mode="same"))
    threshold = max(k * float(np.median(moving)), min_rms)
    return _intervals(moving > threshold, rate, merge_gap, min_duration)


def detect_blink(
    volts,
    rate: float,
    montage,
    threshold: float = 40e-6,
    band: tuple[float, float] = (0.3, 5.0),
    merge_gap: float = 0.3,
    min_duration: float = 0.05,
) -> list[tuple[float, float]]:
    """Low-frequency deflections on the frontal mean beyond ``threshold`` volts."""
    if not montage.frontal_set:
        raise ConfigurationError("montage has no frontal channels")
    x = np.atleast_2d(np.asarray(volts, dtype=float))[montage.indices(montage.frontal_set)]
    if x.shape[-1] == 0:
        return []
    sos = signal.butter(4, list(band), btype="bandpass", fs=rate, output="sos")
    eog = zero_phase(sos, x.mean(axis=0), rate)
    return _intervals(np.abs(eog) > threshold, rate, merge_gap, min_duration)
