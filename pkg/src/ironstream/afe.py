"""Analog front end: input RC low-pass, bias-drive common-mode loop."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigurationError


class AliasingWarning(UserWarning):
    """The sampling rate does not exceed twice the RC cutoff."""


class CapacitorRuleWarning(UserWarning):
    """Common-mode input capacitors are too large relative to the differential one."""


@dataclass(frozen=True)
class RcFilterSpec:
    cutoff_hz: float = 1000.0

    def __post_init__(self):
        if not self.cutoff_hz > 0:
            raise ConfigurationError("cutoff_hz must be positive")


@dataclass(frozen=True)
class BiasLoopSpec:
    """Bias-drive loop modeled as flat common-mode rejection.

    ``sensed_channels`` holds channel labels (or indices); ``None`` senses
    every channel.
    """

    enabled: bool = True
    sensed_channels: frozenset | None = None
    loop_rejection_db: float = 110.0
    bias_ref: str = "internal"

    def __post_init__(self):
        if self.sensed_channels is not None:
            object.__setattr__(self, "sensed_channels", frozenset(self.sensed_channels))
        if self.loop_rejection_db < 0:
            raise ConfigurationError("loop_rejection_db must be >= 0")
        if self.enabled and self.sensed_channels is not None and not self.sensed_channels:
            raise ConfigurationError("bias loop enabled with no sensed channels")
        if self.bias_ref != "internal":
            raise ConfigurationError("only the internal bias reference is modeled")

    @property
    def residual_fraction(self) -> float:
        return 10.0 ** (-self.loop_rejection_db / 20.0)


def rc_response(spec: RcFilterSpec, f) -> float:
    """Analog first-order low-pass magnitude at ``f`` Hz."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    out = 1.0 / np.sqrt(1.0 + (f / spec.cutoff_hz) ** 2)
    return float(out) if out.ndim == 0 else out


def rc_coefficients(spec: RcFilterSpec, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Impulse-invariant single pole, normalized to unit DC gain.

    y[n] = a*y[n-1] + (1-a)*x[n] with a = exp(-2*pi*fc/fs). The digital
    response tracks ``rc_response`` while fs >> fc; near or past Nyquist the
    pole collapses toward zero and the stage becomes a pass-through.
    """
    if not rate > 0:
        raise ConfigurationError("rate must be positive")
    a = math.exp(-2.0 * math.pi * spec.cutoff_hz / rate)
    return np.array([1.0 - a]), np.array([1.0, -a])


class RcStage:
    """Per-channel RC filter that carries its state across blocks."""

    def __init__(self, spec: RcFilterSpec, rate: float, n_channels: int):
        self.spec = spec
        self.rate = rate
        self.b, self.a = rc_coefficients(spec, rate)
        self.state = np.zeros((n_channels, 1))
        self.aliasing = rate <= 2 * spec.cutoff_hz

    def process(self, block: np.ndarray) -> np.ndarray:
        block = np.atleast_2d(np.asarray(block, dtype=float))
        out, self.state = signal.lfilter(self.b, self.a, block, axis=-1, zi=self.state)
        return out


def apply_afe(channels, spec: RcFilterSpec, rate: float) -> np.ndarray:
    """Filter each channel (rows) through the input RC stage from rest."""
    x = np.asarray(channels, dtype=float)
    if not rate > 0:
        raise ConfigurationError("rate must be positive")
    stage = RcStage(spec, rate, 1 if x.ndim == 1 else x.shape[0])
    if stage.aliasing:
        warnings.warn(
            f"{rate} SPS does not exceed twice the {spec.cutoff_hz} Hz RC cutoff",
            AliasingWarning,
            stacklevel=2,
        )
    out = stage.process(x)
    return out[0] if x.ndim == 1 else out


def sensed_indices(spec: BiasLoopSpec, n_channels: int, labels) -> list[int]:
    if spec.sensed_channels is None:
        return list(range(n_channels))
    lookup = {label: i for i, label in enumerate(labels or ())}
    idx = []
    for item in spec.sensed_channels:
        if isinstance(item, (int, np.integer)):
            i = int(item)
        elif item in lookup:
            i = lookup[item]
        else:
            raise ConfigurationError(f"bias sense channel {item!r} not in montage")
        if not 0 <= i < n_channels:
            raise ConfigurationError(f"bias sense index {i} out of range")
        idx.append(i)
    return sorted(set(idx))


def bias_feedback(channels, spec: BiasLoopSpec, labels=None) -> tuple[np.ndarray, np.ndarray]:
    """Drive the sensed common mode down by ``loop_rejection_db``.

    Returns ``(corrected, residual_common_mode)``. The same correction is
    subtracted from every channel, so channel differences are untouched.
    """
    x = np.atleast_2d(np.asarray(channels, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("channels must be non-empty")
    sensed = sensed_indices(spec, x.shape[0], labels)
    if not sensed:
        raise ConfigurationError("bias loop has no sensed channels")
    cm = x[sensed].mean(axis=0)
    if not spec.enabled:
        return x.copy(), cm
    correction = (1.0 - spec.residual_fraction) * cm
    return x - correction, cm - correction


def check_input_capacitors(differential_farads: float, common_mode_farads: float, min_ratio: float = 10.0) -> bool:
    """Common-mode caps should be 10-20x smaller than the differential cap.

    Returns True when the rule holds; warns otherwise. Signal path unaffected.
    """
    if differential_farads <= 0 or common_mode_farads <= 0:
        raise ConfigurationError("capacitances must be positive")
    ok = differential_farads / common_mode_farads >= min_ratio * (1 - 1e-9)
    if not ok:
        warnings.warn(
            f"common-mode capacitor {common_mode_farads:g} F is not {min_ratio:g}x smaller "
            f"than differential {differential_farads:g} F",
            CapacitorRuleWarning,
            stacklevel=2,
        )
    return ok
