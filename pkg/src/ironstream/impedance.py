"""Electrode-skin impedance from the lead-off excitation, plus contact grading."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import subject
from .ads1299 import (
    Acquisition,
    AcquisitionConfig,
    FrameBlock,
    LeadOffFreq,
    decode,
    excitation_pattern,
)
from .afe import BiasLoopSpec, RcFilterSpec, rc_coefficients
from .errors import DomainError, ProtocolMisuseError


class Quality(str, Enum):
    GOOD = "good"
    ACCEPTABLE = "acceptable"
    POOR = "poor"
    OPEN = "open"


@dataclass(frozen=True)
class QualityThresholds:
    """Upper bounds (ohms, exclusive) of the good / acceptable / poor grades."""

    good: float = 10e3
    acceptable: float = 50e3
    poor: float = 1e6


@dataclass(frozen=True)
class ImpedanceReport:
    channel: str
    ohms: float
    method: str
    quality: Quality
    excitation_current: float

    def as_dict(self) -> dict:
        return {
            "channel": self.channel,
            "ohms": self.ohms,
            "method": self.method,
            "quality": self.quality.value,
            "excitation_current": self.excitation_current,
        }


def classify(ohms: float, thresholds: QualityThresholds | None = None) -> Quality:
    th = thresholds or QualityThresholds()
    if ohms < 0:
        raise DomainError("impedance must be non-negative")
    if ohms < th.good:
        return Quality.GOOD
    if ohms < th.acceptable:
        return Quality.ACCEPTABLE
    if ohms < th.poor:
        return Quality.POOR
    return Quality.OPEN


def square_wave_gain(rc: RcFilterSpec, rate: float) -> float:
    """Correlation gain of the RC stage for the fs/4 +,+,-,- excitation.

    Steady-state output over one period, correlated with the reference,
    per unit input amplitude. 1.0 when the pole is negligible.
    """
    (b0,), (_, a1) = rc_coefficients(rc, rate)
    pole = -a1
    pattern = np.array([1.0, 1.0, -1.0, -1.0])
    y = 0.0
    outs = []
    for _ in range(500):  # pole < 1: settles to the periodic steady state
        outs = []
        for x in pattern:
            y = pole * y + b0 * x
            outs.append(y)
    return float(np.dot(outs, pattern) / 4.0)


def _frames_as_codes(frames):
    if isinstance(frames, FrameBlock):
        return frames.codes, frames.index
    codes = np.array([f.codes for f in frames], dtype=np.int64)
    index = np.array([f.index for f in frames], dtype=np.int64)
    return codes, index


def estimate_impedance(
    frames,
    cfg: AcquisitionConfig,
    channel: int,
    label: str | None = None,
    *,
    current: float | None = None,
    series_resistance: float = 0.0,
    rc: RcFilterSpec | None = None,
    thresholds: QualityThresholds | None = None,
) -> ImpedanceReport:
    """Impedance of one channel's electrode from frames acquired with lead-off on.

    DC mode: mean decoded voltage over the current. fs/4 mode: correlation
    with the in-phase +,+,-,- reference over the largest whole number of
    excitation cycles, corrected for the RC stage's gain on that pattern.
    ``series_resistance`` (electrode-path resistances near zero in practice)
    is subtracted from the result.
    """
    if channel not in cfg.lead_off_channels:
        raise ProtocolMisuseError(f"lead-off excitation was not enabled on channel {channel}")
    i_exc = cfg.lead_off_current if current is None else current
    if i_exc == 0:
        raise DomainError("excitation current is zero")
    codes, index = _frames_as_codes(frames)
    if len(index) < cfg.rate:
        raise DomainError("impedance estimation needs at least 1 s of frames")
    v = decode(codes[:, channel], cfg.gain, cfg.vref)
    if cfg.lead_off_freq is LeadOffFreq.DC:
        amplitude = float(np.mean(v))
        method = "dc"
    else:
        n = (len(v) // 4) * 4
        ref = excitation_pattern(int(index[0]), n, LeadOffFreq.FS_OVER_4)
        amplitude = float(np.dot(v[:n], ref) / n) / square_wave_gain(rc or RcFilterSpec(), cfg.rate)
        method = "synchronous"
    ohms = max(0.0, amplitude / i_exc - series_resistance)
    return ImpedanceReport(
        label if label is not None else str(channel),
        ohms,
        method,
        classify(ohms, thresholds),
        i_exc,
    )


def measure(
    montage: subject.Montage,
    cfg: AcquisitionConfig,
    scenario: subject.SignalScenario | None = None,
    seconds: float = 1.0,
    rc: RcFilterSpec | None = None,
    thresholds: QualityThresholds | None = None,
) -> list[ImpedanceReport]:
    """Dedicated lead-off run on every channel, one report per channel.

    The bias loop is held off during the run: its mean-subtraction would
    remove part of each channel's excitation offset.
    """
    scenario = scenario or subject.builtin_scenario("rest", duration=max(seconds, 1.0))
    cfg = replace(cfg, lead_off_channels=frozenset(range(cfg.n_channels)))
    acq = Acquisition(scenario, montage, cfg, BiasLoopSpec(enabled=False), rc)
    block = acq.read_block(int(math.ceil(seconds * cfg.rate)))
    return [
        estimate_impedance(block, cfg, ch, label, rc=rc, thresholds=thresholds)
        for ch, label in enumerate(montage.labels)
    ]
