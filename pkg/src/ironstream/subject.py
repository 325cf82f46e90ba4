"""Synthetic subject: scripted scalp potentials, artifacts and electrode contacts.

Everything here is a pure function of its arguments. Random content is drawn
from PCG64 generators seeded through ``numpy.random.SeedSequence`` with keys
``(seed, stream_tag, ...)`` so that any block of samples can be regenerated
without producing the samples before it. Background noise is drawn in
one-second blocks keyed by ``(seed, NOISE, channel, block)``; each chewing
burst is drawn whole, keyed by ``(seed, CHEW, event_index, channel)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import yaml
from scipy import signal

from .errors import ConfigurationError

SUPPORTED_RATES = (250, 500, 1000)

DRY_IMPEDANCE = 200_000.0
GEL_IMPEDANCE = 5_000.0

# White-noise density at the electrode that reads ~0.45 uV RMS after the
# default chain (8 channels, bias loop on, 1-40 Hz zero-phase bandpass, 10 s).
# Derivation: demos/05_noise_calibration.py.
DEFAULT_NOISE_DENSITY = 7.5e-8

# SeedSequence stream tags.
_NOISE = 1
_CHEW = 2


class ElectrodeKind(str, Enum):
    DRY = "dry"
    GEL = "gel"
    SHORTED = "shorted"


class EventKind(str, Enum):
    EYES_CLOSED = "eyes_closed"
    CHEWING = "chewing"
    BLINKING = "blinking"


_DEFAULT_CONTACT = {
    ElectrodeKind.DRY: DRY_IMPEDANCE,
    ElectrodeKind.GEL: GEL_IMPEDANCE,
    ElectrodeKind.SHORTED: 0.0,
}


@dataclass(frozen=True)
class ElectrodeModel:
    """One electrode and its skin contact.

    ``contact_impedance`` defaults from ``kind``: 200 kOhm dry, 5 kOhm gel,
    exactly 0 for a shorted input.
    """

    label: str
    kind: ElectrodeKind = ElectrodeKind.GEL
    contact_impedance: float | None = None
    half_cell_offset: float = 0.0

    def __post_init__(self):
        kind = ElectrodeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        z = self.contact_impedance
        if z is None:
            z = _DEFAULT_CONTACT[kind]
        z = float(z)
        if kind is ElectrodeKind.SHORTED:
            if z != 0.0:
                raise ConfigurationError(f"{self.label}: shorted electrode must have zero impedance")
        elif not z > 0:
            raise ConfigurationError(f"{self.label}: contact impedance must be positive")
        object.__setattr__(self, "contact_impedance", z)


@dataclass(frozen=True)
class Event:
    start: float
    end: float
    kind: EventKind

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))


@dataclass(frozen=True)
class SignalScenario:
    """Timeline of subject events plus the parameters that drive synthesis.

    Amplitudes are in volts at the electrode. ``chew_amplitude`` is the RMS
    of the EMG burst, ``blink_amplitude`` the peak of the biphasic pulse on
    frontal channels (other channels get ``blink_spread`` times that).
    ``common_mode_tones`` holds extra ``(hz, amplitude)`` pairs injected like
    mains, used to probe common-mode rejection away from 50/60 Hz.
    """

    duration: float
    events: tuple[Event, ...] = ()
    mains_hz: int = 50
    mains_amplitude: float = 0.0
    background_noise_density: float = DEFAULT_NOISE_DENSITY
    alpha_amplitude: float = 20e-6
    alpha_hz: float = 10.0
    seed: int = 0
    chew_amplitude: float = 200e-6
    chew_band: tuple[float, float] = (30.0, 100.0)
    blink_amplitude: float = 100e-6
    blink_width: float = 0.5
    blink_interval: float = 1.0
    blink_spread: float = 0.1
    common_mode_tones: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        events = tuple(e if isinstance(e, Event) else Event(*e) for e in self.events)
        object.__setattr__(self, "events", events)
        object.__setattr__(
            self, "common_mode_tones", tuple((float(f), float(a)) for f, a in self.common_mode_tones)
        )
        if self.duration < 0:
            raise ConfigurationError("duration must be non-negative")
        if self.mains_hz not in (50, 60):
            raise ConfigurationError(f"mains_hz must be 50 or 60, got {self.mains_hz}")
        if not 8.0 <= self.alpha_hz <= 14.0:
            raise ConfigurationError(f"alpha_hz must lie in [8, 14], got {self.alpha_hz}")
        if self.background_noise_density < 0:
            raise ConfigurationError("background_noise_density must be non-negative")
        if self.seed < 0:
            raise ConfigurationError("seed must be an unsigned integer")
        for e in events:
            if not 0 <= e.start < e.end <= self.duration:
                raise ConfigurationError(f"event {e} outside [0, {self.duration}]")
        for kind in EventKind:
            spans = sorted((e.start, e.end) for e in events if e.kind is kind)
            for (_, end0), (start1, _) in zip(spans, spans[1:]):
                if start1 < end0:
                    raise ConfigurationError(f"overlapping {kind.value} events")

    def windows(self, kind) -> list[tuple[float, float]]:
        kind = EventKind(kind)
        return [(e.start, e.end) for e in self.events if e.kind is kind]


@dataclass(frozen=True)
class Montage:
    """Channel electrodes plus a dedicated reference and bias electrode."""

    channels: tuple[ElectrodeModel, ...]
    reference: ElectrodeModel = field(default_factory=lambda: ElectrodeModel("A1"))
    bias: ElectrodeModel = field(default_factory=lambda: ElectrodeModel("A2"))
    occipital_set: frozenset[str] = frozenset()
    frontal_set: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "occipital_set", frozenset(self.occipital_set))
        object.__setattr__(self, "frontal_set", frozenset(self.frontal_set))
        labels = self.labels
        if len(set(labels)) != len(labels):
            raise ConfigurationError("channel labels must be unique")
        for name, subset in (("occipital", self.occipital_set), ("frontal", self.frontal_set)):
            unknown = subset - set(labels)
            if unknown:
                raise ConfigurationError(f"unknown {name} labels: {sorted(unknown)}")

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.channels]

    def indices(self, labels) -> list[int]:
        lookup = {label: i for i, label in enumerate(self.labels)}
        try:
            return sorted(lookup[label] for label in labels)
        except KeyError as exc:
            raise ConfigurationError(f"unknown channel label {exc.args[0]!r}") from None

    def with_kind(self, kind, contact_impedance=None) -> Montage:
        """Same layout, every channel electrode replaced by ``kind``."""
        chans = tuple(
            ElectrodeModel(e.label, kind, contact_impedance, e.half_cell_offset) for e in self.channels
        )
        return replace(self, channels=chans)


# 10-20 positions, ordered so that any 8/16/24 prefix has occipital and frontal sites.
STANDARD_LABELS = (
    "Fp1", "Fp2", "C3", "C4", "P3", "P4", "O1", "O2",
    "F7", "F8", "F3", "F4", "T7", "T8", "P7", "P8",
    "Fz", "Cz", "Pz", "Oz", "FC1", "FC2", "CP1", "CP2",
)
_OCCIPITAL = {"O1", "O2", "Oz"}
_FRONTAL = {"Fp1", "Fp2"}


def default_montage(n_channels: int = 8, kind=ElectrodeKind.GEL, contact_impedance=None) -> Montage:
    if not 1 <= n_channels <= len(STANDARD_LABELS):
        raise ConfigurationError(f"n_channels must be in [1, {len(STANDARD_LABELS)}]")
    labels = STANDARD_LABELS[:n_channels]
    chans = tuple(ElectrodeModel(label, kind, contact_impedance) for label in labels)
    # Ear-clip reference and bias electrodes are always Ag/AgCl with gel.
    return Montage(
        channels=chans,
        reference=ElectrodeModel("A1", ElectrodeKind.GEL),
        bias=ElectrodeModel("A2", ElectrodeKind.GEL),
        occipital_set=frozenset(_OCCIPITAL.intersection(labels)),
        frontal_set=frozenset(_FRONTAL.intersection(labels)),
    )


def n_samples(duration: float, rate: int) -> int:
    """Sample count for ``duration`` seconds; rejects fractional counts."""
    exact = duration * rate
    n = round(exact)
    if abs(exact - n) > 1e-9 * max(1.0, exact):
        raise ConfigurationError(f"duration {duration} s is not a whole number of samples at {rate} SPS")
    return int(n)


def _span(start: float, end: float, rate: int) -> tuple[int, int]:
    # Sample indices i with start <= i/rate < end.
    return math.ceil(start * rate - 1e-9), math.ceil(end * rate - 1e-9)


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def _noise(scenario, n_ch, rate, start, count):
    out = np.zeros((n_ch, count))
    sigma = scenario.background_noise_density * math.sqrt(rate / 2.0)
    if sigma == 0.0 or count == 0:
        return out
    first, last = start // rate, (start + count - 1) // rate
    for ch in range(n_ch):
        blocks = [_rng(scenario.seed, _NOISE, ch, b).standard_normal(rate) for b in range(first, last + 1)]
        stream = np.concatenate(blocks)
        offset = start - first * rate
        out[ch] = sigma * stream[offset:offset + count]
    return out


def _chew_burst(scenario, event_index, ch, n, rate):
    lo, hi = scenario.chew_band
    hi = min(hi, 0.45 * rate)
    sos = signal.butter(4, [lo, hi], btype="bandpass", fs=rate, output="sos")
    pad = rate // 2
    raw = _rng(scenario.seed, _CHEW, event_index, ch).standard_normal(n + pad)
    burst = signal.sosfilt(sos, raw)[pad:]
    return scenario.chew_amplitude * burst / np.sqrt(np.mean(burst**2))


def synthesize_block(scenario: SignalScenario, montage: Montage, rate: int, start: int, count: int) -> np.ndarray:
    """Samples ``[start, start + count)`` of the scenario, shape ``(n_channels, count)``.

    Any partition of a sample range into blocks reproduces the single-call
    result bit for bit. Samples past ``scenario.duration`` carry background
    noise and common-mode content only.
    """
    if rate not in SUPPORTED_RATES:
        raise ConfigurationError(f"rate must be one of {SUPPORTED_RATES}, got {rate}")
    if start < 0 or count < 0:
        raise ValueError("start and count must be non-negative")
    labels = montage.labels
    occipital = montage.indices(montage.occipital_set)
    frontal = montage.indices(montage.frontal_set)
    n_ch = len(labels)
    idx = np.arange(start, start + count)
    t = idx / rate

    out = _noise(scenario, n_ch, rate, start, count)

    common = np.zeros(count)
    if scenario.mains_amplitude:
        common += scenario.mains_amplitude * np.sin(2 * np.pi * scenario.mains_hz * t)
    for hz, amp in scenario.common_mode_tones:
        common += amp * np.sin(2 * np.pi * hz * t)
    out += common

    stop = start + count
    for j, ev in enumerate(scenario.events):
        i0, i1 = _span(ev.start, ev.end, rate)
        lo, hi = max(i0, start), min(i1, stop)
        if lo >= hi:
            continue
        sl = slice(lo - start, hi - start)
        if ev.kind is EventKind.EYES_CLOSED:
            if occipital:
                wave = scenario.alpha_amplitude * np.sin(2 * np.pi * scenario.alpha_hz * (t[sl] - ev.start))
                out[occipital, sl] += wave
        elif ev.kind is EventKind.CHEWING:
            for ch in range(n_ch):
                burst = _chew_burst(scenario, j, ch, i1 - i0, rate)
                out[ch, sl] += burst[lo - i0:hi - i0]
        else:
            gains = np.full(n_ch, scenario.blink_spread)
            gains[frontal] = 1.0
            pulse = np.zeros(hi - lo)
            tt = t[sl]
            k = 0
            while True:
                t0 = ev.start + k * scenario.blink_interval
                if t0 + scenario.blink_width > ev.end + 1e-12:
                    break
                inside = (tt >= t0) & (tt < t0 + scenario.blink_width)
                pulse[inside] += np.sin(2 * np.pi * (tt[inside] - t0) / scenario.blink_width)
                k += 1
            out[:, sl] += scenario.blink_amplitude * gains[:, None] * pulse
    return out


def synthesize(scenario: SignalScenario, montage: Montage, rate: int) -> np.ndarray:
    """Whole-scenario referential potentials in volts, shape ``(n_channels, duration * rate)``."""
    if rate not in SUPPORTED_RATES:
        raise ConfigurationError(f"rate must be one of {SUPPORTED_RATES}, got {rate}")
    return synthesize_block(scenario, montage, rate, 0, n_samples(scenario.duration, rate))


def electrode_divider(source, electrode: ElectrodeModel, input_impedance: float):
    """Voltage reaching the amplifier through the contact impedance."""
    if not input_impedance > 0:
        raise ConfigurationError("input_impedance must be positive")
    z = electrode.contact_impedance
    return source * (input_impedance / (input_impedance + z)) + electrode.half_cell_offset


# --- built-in scenarios ----------------------------------------------------


def builtin_scenario(name: str, seed: int = 0, **overrides) -> SignalScenario:
    """Named scenarios used by the CLI, demos and acceptance suite.

    ``rest``: 10 s, no events. ``eyes_closed``: 10 s, eyes closed 2-8 s.
    ``device_check``: 15 s reproducing the eyes closed / chewing / blinking
    sequence. ``shorted``: 10 s, no events, 20 mV of 50 Hz mains.
    """
    table = {
        "rest": dict(duration=10.0),
        "eyes_closed": dict(duration=10.0, events=(Event(2.0, 8.0, EventKind.EYES_CLOSED),)),
        "device_check": dict(
            duration=15.0,
            events=(
                Event(1.0, 5.0, EventKind.EYES_CLOSED),
                Event(7.0, 9.0, EventKind.CHEWING),
                Event(11.0, 14.0, EventKind.BLINKING),
            ),
        ),
        "shorted": dict(duration=10.0, mains_amplitude=20e-3),
    }
    if name not in table:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(table)}")
    params = {**table[name], "seed": seed, **overrides}
    return SignalScenario(**params)


BUILTIN_SCENARIOS = ("rest", "eyes_closed", "device_check", "shorted")


# --- file loading ----------------------------------------------------------


def scenario_from_dict(doc: dict) -> SignalScenario:
    doc = dict(doc)
    events = tuple(Event(float(e["start"]), float(e["end"]), e["kind"]) for e in doc.pop("events", []) or [])
    if "chew_band" in doc:
        doc["chew_band"] = tuple(doc["chew_band"])
    if "common_mode_tones" in doc:
        doc["common_mode_tones"] = tuple(tuple(x) for x in doc["common_mode_tones"])
    known = set(SignalScenario.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
    return SignalScenario(events=events, **doc)


def _electrode_from_dict(doc) -> ElectrodeModel:
    if isinstance(doc, str):
        return ElectrodeModel(doc)
    return ElectrodeModel(
        doc["label"],
        doc.get("kind", "gel"),
        doc.get("contact_impedance"),
        float(doc.get("half_cell_offset", 0.0)),
    )


def montage_from_dict(doc: dict) -> Montage:
    try:
        chans = tuple(_electrode_from_dict(c) for c in doc["channels"])
    except KeyError as exc:
        raise ConfigurationError(f"montage missing key {exc.args[0]!r}") from None
    kwargs = {}
    if "reference" in doc:
        kwargs["reference"] = _electrode_from_dict(doc["reference"])
    if "bias" in doc:
        kwargs["bias"] = _electrode_from_dict(doc["bias"])
    return Montage(
        channels=chans,
        occipital_set=frozenset(doc.get("occipital", ())),
        frontal_set=frozenset(doc.get("frontal", ())),
        **kwargs,
    )


def _load_yaml(path) -> dict:
    with open(Path(path)) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a key/value document")
    return doc


def load_scenario(path) -> SignalScenario:
    return scenario_from_dict(_load_yaml(path))


def load_montage(path) -> Montage:
    return montage_from_dict(_load_yaml(path))
