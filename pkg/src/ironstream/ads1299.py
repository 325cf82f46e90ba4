"""ADS1299-style converter: register file, 24-bit codec and acquisition datapath.

Datapath order, per block of samples::

    synthesize_block -> electrode_divider -> inject_lead_off
        -> RC low-pass -> bias loop -> input mux -> PGA/convert
        -> lead-off comparators -> frame assembly

Daisy-chained devices share one clock; channel ``k`` lives on device
``k // 8``. The frame status word is the master (device 0) word; every
device's word is kept on ``SampleFrame.device_status``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from . import subject
from .afe import BiasLoopSpec, RcFilterSpec, RcStage, bias_feedback, sensed_indices
from .errors import AddressingError, CodecError, ConfigurationError

log = logging.getLogger(__name__)

CODE_MAX = 2**23 - 1
CODE_MIN = -(2**23)
FULL_SCALE_COUNTS = 2**23 - 1
MAX_DATA_RATE = 16_000  # SPS ceiling of the part; emulation runs 250-1000 only
CHANNELS_PER_DEVICE = 8
DEFAULT_INPUT_IMPEDANCE = 1e9  # ohms, ">1000 MOhm"
DEFAULT_LOFF_THRESHOLD = 1.2e-3  # volts; 24 nA through 50 kOhm
STATUS_PREFIX = 0xC

GAINS = (1, 2, 4, 6, 8, 12, 24)
RATES = (250, 500, 1000)
LEAD_OFF_CURRENTS = (6e-9, 24e-9, 6e-6, 24e-6)


class LeadOffFreq(str, Enum):
    DC = "dc"
    FS_OVER_4 = "fs_over_4"


# name: (address, reset value, writable mask). Bits outside the mask read
# back their reset value.
REGISTER_MAP = {
    "ID": (0x00, 0x3E, 0x00),
    "CONFIG1": (0x01, 0x96, 0x67),
    "CONFIG2": (0x02, 0xC0, 0x17),
    "CONFIG3": (0x03, 0x60, 0x9E),
    "LOFF": (0x04, 0x00, 0xEF),
    **{f"CH{i}SET": (0x04 + i, 0x61, 0xFF) for i in range(1, 9)},
    "BIAS_SENSP": (0x0D, 0x00, 0xFF),
    "BIAS_SENSN": (0x0E, 0x00, 0xFF),
    "LOFF_SENSP": (0x0F, 0x00, 0xFF),
    "LOFF_SENSN": (0x10, 0x00, 0xFF),
    "LOFF_FLIP": (0x11, 0x00, 0xFF),
    "LOFF_STATP": (0x12, 0x00, 0x00),
    "LOFF_STATN": (0x13, 0x00, 0x00),
    "GPIO": (0x14, 0x0F, 0xFF),
    "MISC1": (0x15, 0x00, 0x20),
    "MISC2": (0x16, 0x00, 0x00),
    "CONFIG4": (0x17, 0x00, 0x0A),
}
ADDRESS = {name: spec[0] for name, spec in REGISTER_MAP.items()}
_BY_ADDR = {spec[0]: (name, spec[1], spec[2]) for name, spec in REGISTER_MAP.items()}
READ_ONLY = frozenset({"ID", "LOFF_STATP", "LOFF_STATN"})

_DR_CODE = {250: 0b110, 500: 0b101, 1000: 0b100}
_GAIN_CODE = {g: i for i, g in enumerate(GAINS)}
_ILEAD_CODE = {c: i for i, c in enumerate(LEAD_OFF_CURRENTS)}
_FLEAD_CODE = {LeadOffFreq.DC: 0b00, LeadOffFreq.FS_OVER_4: 0b11}

MUX_NORMAL = 0b000
MUX_SHORTED = 0b001
MUX_TEST = 0b101

CONFIG3_PD_BIAS_N = 0x04
CONFIG4_PD_LOFF_COMP_N = 0x02


class RegisterFile:
    """Register map of one device."""

    def __init__(self):
        self._regs = bytearray(len(_BY_ADDR))
        for addr, (_, reset, _) in _BY_ADDR.items():
            self._regs[addr] = reset
        self.ignored_writes: list[tuple[int, int]] = []

    def read(self, addr: int) -> int:
        if addr not in _BY_ADDR:
            raise AddressingError(f"address 0x{addr:02X} is not in the register map")
        return self._regs[addr]

    def write(self, addr: int, value: int) -> RegisterFile:
        if addr not in _BY_ADDR:
            raise AddressingError(f"address 0x{addr:02X} is not in the register map")
        if not 0 <= value <= 0xFF:
            raise ValueError("register value must be a byte")
        name, reset, mask = _BY_ADDR[addr]
        if name in READ_ONLY:
            log.info("ignored write of 0x%02X to read-only %s", value, name)
            self.ignored_writes.append((addr, value))
            return self
        self._regs[addr] = (value & mask) | (reset & ~mask & 0xFF)
        return self

    def _force(self, name: str, value: int):
        # Chip-side update of a read-only register.
        self._regs[ADDRESS[name]] = value & 0xFF

    def __getitem__(self, name: str) -> int:
        return self._regs[ADDRESS[name]]

    def __setitem__(self, name: str, value: int):
        self.write(ADDRESS[name], value)

    def snapshot(self) -> bytes:
        return bytes(self._regs)

    # decoded fields

    @property
    def data_rate(self) -> int:
        dr = self["CONFIG1"] & 0x07
        if dr == 0b111:
            raise ConfigurationError("CONFIG1 data-rate code 0b111 is reserved")
        return MAX_DATA_RATE >> dr

    def gain(self, ch: int) -> int:
        code = (self[f"CH{ch + 1}SET"] >> 4) & 0x07
        if code >= len(GAINS):
            raise ConfigurationError(f"CH{ch + 1}SET gain code {code:03b} is reserved")
        return GAINS[code]

    def mux(self, ch: int) -> int:
        return self[f"CH{ch + 1}SET"] & 0x07

    def powered_down(self, ch: int) -> bool:
        return bool(self[f"CH{ch + 1}SET"] & 0x80)

    @property
    def lead_off_current(self) -> float:
        return LEAD_OFF_CURRENTS[(self["LOFF"] >> 2) & 0x03]

    @property
    def lead_off_freq(self) -> LeadOffFreq:
        code = self["LOFF"] & 0x03
        for freq, c in _FLEAD_CODE.items():
            if c == code:
                return freq
        raise ConfigurationError(f"FLEAD_OFF code {code:02b} (low-frequency AC) is not modeled")

    @property
    def bias_enabled(self) -> bool:
        return bool(self["CONFIG3"] & CONFIG3_PD_BIAS_N)

    @property
    def comparators_enabled(self) -> bool:
        return bool(self["CONFIG4"] & CONFIG4_PD_LOFF_COMP_N)


def write_register(rf: RegisterFile, addr: int, value: int) -> RegisterFile:
    return rf.write(addr, value)


def read_register(rf: RegisterFile, addr: int) -> int:
    return rf.read(addr)


def _mask_bits(mask: int) -> list[int]:
    return [i for i in range(CHANNELS_PER_DEVICE) if mask >> i & 1]


# --- codec -------------------------------------------------------------------


def lsb(gain: float, vref: float) -> float:
    """Volts per code step."""
    return vref / (gain * FULL_SCALE_COUNTS)


def _rounded_scale(v, gain: float, vref: float) -> np.ndarray:
    """round(v * gain * (2^23 - 1) / vref), half to even, before clamping.

    Float arithmetic decides all but near-ties; those are redone with exact
    rationals so the result matches the formula bit for bit.
    """
    v = np.asarray(v, dtype=float)
    scaled = v * (gain * FULL_SCALE_COUNTS / vref)
    out = np.rint(scaled)
    near = np.abs(np.abs(scaled - np.floor(scaled)) - 0.5) < 1e-6
    if np.any(near):
        k = Fraction(gain) * FULL_SCALE_COUNTS / Fraction(vref)
        flat = out.reshape(-1)
        for i in np.flatnonzero(near.reshape(-1)):
            flat[i] = round(Fraction(float(v.reshape(-1)[i])) * k)
        out = flat.reshape(out.shape)
    return out


def convert(v, gain: float, vref: float):
    """Input volts to 24-bit signed code(s), clamped at the rails."""
    _check_pga(gain, vref)
    codes = np.clip(_rounded_scale(v, gain, vref), CODE_MIN, CODE_MAX).astype(np.int64)
    return int(codes) if codes.ndim == 0 else codes


def saturated(v, gain: float, vref: float):
    """True where ``convert`` clamps."""
    scaled = _rounded_scale(v, gain, vref)
    return (scaled > CODE_MAX) | (scaled < CODE_MIN)


def decode(code, gain: float, vref: float):
    """24-bit code(s) back to volts at the PGA input."""
    _check_pga(gain, vref)
    c = np.asarray(code)
    if np.any(c > CODE_MAX) or np.any(c < CODE_MIN):
        raise CodecError("code outside the 24-bit two's-complement range")
    out = c * (vref / (gain * FULL_SCALE_COUNTS))
    return float(out) if out.ndim == 0 else out


def to_microvolts(code, gain, vref: float):
    """Codes to microvolts; ``gain`` may be per channel (broadcast on the last axis)."""
    c = np.asarray(code, dtype=np.int64)
    if np.any(c > CODE_MAX) or np.any(c < CODE_MIN):
        raise CodecError("code outside the 24-bit two's-complement range")
    return c * (vref * 1e6) / (np.asarray(gain, dtype=float) * FULL_SCALE_COUNTS)


def _check_pga(gain, vref):
    if not gain > 0 or not vref > 0:
        raise ConfigurationError("gain and vref must be positive")


# --- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class AcquisitionConfig:
    """Operating point of the converter chain.

    ``lead_off_channels`` are channel indices whose lead-off excitation and
    comparators are enabled (LOFF_SENSP bits).
    """

    rate: int = 250
    gain: int = 24
    vref: float = 4.5
    devices: int = 1
    lead_off_current: float = 24e-9
    lead_off_freq: LeadOffFreq = LeadOffFreq.DC
    lead_off_channels: frozenset[int] = frozenset()
    lead_off_threshold: float = DEFAULT_LOFF_THRESHOLD
    input_impedance: float = DEFAULT_INPUT_IMPEDANCE

    def __post_init__(self):
        object.__setattr__(self, "lead_off_freq", LeadOffFreq(self.lead_off_freq))
        object.__setattr__(self, "lead_off_channels", frozenset(int(c) for c in self.lead_off_channels))
        for problem in self.problems():
            raise ConfigurationError(problem)

    def problems(self) -> list[str]:
        out = []
        if self.rate not in RATES:
            out.append(f"rate {self.rate} not in {{250, 500, 1000}}")
        if self.gain not in GAINS:
            out.append(f"gain {self.gain} not in {set(GAINS)}")
        if not self.vref > 0:
            out.append("vref must be positive")
        if self.devices not in (1, 2, 3):
            out.append(f"devices {self.devices} not in 1..3")
        if self.lead_off_current not in LEAD_OFF_CURRENTS:
            out.append(f"lead_off_current {self.lead_off_current} not in {LEAD_OFF_CURRENTS}")
        if any(not 0 <= c < 8 * self.devices for c in self.lead_off_channels):
            out.append("lead_off_channels outside the channel range")
        if not self.lead_off_threshold > 0:
            out.append("lead_off_threshold must be positive")
        if not self.input_impedance > 0:
            out.append("input_impedance must be positive")
        return out

    @property
    def n_channels(self) -> int:
        return CHANNELS_PER_DEVICE * self.devices


@dataclass(frozen=True)
class SampleFrame:
    """One conversion instant across all daisy-chained channels."""

    status: int
    codes: tuple[int, ...]
    index: int
    t: float
    device_status: tuple[int, ...] = field(default=(), compare=False)


def status_word(statp: int, statn: int, gpio: int = 0) -> int:
    return (STATUS_PREFIX << 20) | ((statp & 0xFF) << 12) | ((statn & 0xFF) << 4) | (gpio & 0x0F)


def status_fields(word: int) -> tuple[int, int, int, int]:
    """``(prefix, statp, statn, gpio)`` of a 24-bit status word."""
    return (word >> 20) & 0xF, (word >> 12) & 0xFF, (word >> 4) & 0xFF, word & 0x0F


def lead_off_comparator(rf: RegisterFile, amplitudes, threshold: float = DEFAULT_LOFF_THRESHOLD) -> RegisterFile:
    """Latch LOFF_STATP from per-channel excitation amplitudes (8 values).

    A bit is set when the channel is enabled in LOFF_SENSP and its amplitude
    exceeds ``threshold``. LOFF_STATN stays clear; N-side excitation is not
    modeled.
    """
    if not threshold > 0:
        raise ConfigurationError("threshold must be positive")
    amps = np.abs(np.asarray(amplitudes, dtype=float))
    sens = rf["LOFF_SENSP"]
    bits = 0
    for ch in range(min(len(amps), CHANNELS_PER_DEVICE)):
        if sens >> ch & 1 and amps[ch] > threshold:
            bits |= 1 << ch
    rf._force("LOFF_STATP", bits)
    rf._force("LOFF_STATN", 0)
    return rf


def excitation_pattern(start_index: int, n: int, freq: LeadOffFreq) -> np.ndarray:
    """Unit excitation waveform: 1 for DC; +1,+1,-1,-1 at fs/4 keyed to the absolute sample index."""
    if LeadOffFreq(freq) is LeadOffFreq.DC:
        return np.ones(n)
    idx = np.arange(start_index, start_index + n)
    return np.where(idx % 4 < 2, 1.0, -1.0)


def inject_lead_off(series, electrodes, cfg: AcquisitionConfig, mask, start_index: int = 0) -> np.ndarray:
    """Superpose the I*Z excitation voltage on the masked channels.

    ``series`` has one row per entry of ``electrodes``. Each enabled row
    gains ``I * contact_impedance`` times the unit excitation pattern.
    """
    x = np.array(np.atleast_2d(series), dtype=float)
    mask = sorted(set(mask))
    if not mask:
        return x
    if mask[0] < 0 or mask[-1] >= x.shape[0]:
        raise ConfigurationError("lead-off mask refers to a missing channel")
    pattern = excitation_pattern(start_index, x.shape[1], cfg.lead_off_freq)
    for ch in mask:
        x[ch] += cfg.lead_off_current * electrodes[ch].contact_impedance * pattern
    return x


# --- acquisition ---------------------------------------------------------------


@dataclass
class FrameBlock:
    """Contiguous run of frames held as arrays."""

    start_index: int
    rate: int
    codes: np.ndarray  # (n, channels) int64
    status: np.ndarray  # (n,) master status words
    device_status: np.ndarray  # (n, devices)

    def __len__(self):
        return self.codes.shape[0]

    @property
    def index(self) -> np.ndarray:
        return np.arange(self.start_index, self.start_index + len(self))

    @property
    def t(self) -> np.ndarray:
        return self.index / self.rate

    def frames(self) -> list[SampleFrame]:
        out = []
        for k in range(len(self)):
            i = self.start_index + k
            out.append(
                SampleFrame(
                    int(self.status[k]),
                    tuple(int(c) for c in self.codes[k]),
                    i,
                    i / self.rate,
                    tuple(int(s) for s in self.device_status[k]),
                )
            )
        return out


class Acquisition:
    """Single-owner acquisition state machine.

    Configuration is written into the per-device register files at
    construction; the datapath reads gains, mux, power-down, lead-off and
    bias-sense settings back from the registers on every block, so register
    writes between reads take effect. The sample rate is fixed for the life
    of the object.
    """

    def __init__(
        self,
        scenario: subject.SignalScenario,
        montage: subject.Montage,
        cfg: AcquisitionConfig | None = None,
        bias: BiasLoopSpec | None = None,
        rc: RcFilterSpec | None = None,
    ):
        self.cfg = cfg or AcquisitionConfig()
        self.bias = bias or BiasLoopSpec()
        self.rc = rc or RcFilterSpec()
        if len(montage.channels) != self.cfg.n_channels:
            raise ConfigurationError(
                f"montage has {len(montage.channels)} channels but {self.cfg.devices} device(s) "
                f"provide {self.cfg.n_channels}"
            )
        self.scenario = scenario
        self.montage = montage
        self.registers = [RegisterFile() for _ in range(self.cfg.devices)]
        self._program()
        n = self.cfg.n_channels
        self._rc_stage = RcStage(self.rc, self.cfg.rate, n)
        self._zin = np.array([e.contact_impedance for e in montage.channels])
        self._offsets = np.array([e.half_cell_offset for e in montage.channels])
        self.next_index = 0
        self.saturation_counts = np.zeros(n, dtype=np.int64)
        self.saturation_log: list[tuple[int, int]] = []  # first few (frame index, channel)
        self.warnings: list[str] = []
        if self._rc_stage.aliasing:
            self.warnings.append(
                f"{self.cfg.rate} SPS does not exceed twice the {self.rc.cutoff_hz:g} Hz RC cutoff"
            )

    @property
    def rate(self) -> int:
        return self.cfg.rate

    def _program(self):
        cfg = self.cfg
        sensed = self._bias_sensed()
        for d, rf in enumerate(self.registers):
            rf["CONFIG1"] = (rf["CONFIG1"] & ~0x07) | _DR_CODE[cfg.rate] | (0x40 if d == 0 and cfg.devices > 1 else 0)
            chans = range(d * CHANNELS_PER_DEVICE, (d + 1) * CHANNELS_PER_DEVICE)
            for k, _ in enumerate(chans):
                rf[f"CH{k + 1}SET"] = (_GAIN_CODE[cfg.gain] << 4) | MUX_NORMAL
            rf["LOFF"] = (_ILEAD_CODE[cfg.lead_off_current] << 2) | _FLEAD_CODE[cfg.lead_off_freq]
            rf["LOFF_SENSP"] = sum(1 << k for k, ch in enumerate(chans) if ch in cfg.lead_off_channels)
            rf["BIAS_SENSP"] = sum(1 << k for k, ch in enumerate(chans) if ch in sensed)
            config3 = rf["CONFIG3"] | 0x80 | 0x08  # internal reference buffer, BIASREF internal
            if self.bias.enabled:
                config3 |= CONFIG3_PD_BIAS_N
            rf["CONFIG3"] = config3
            if cfg.lead_off_channels:
                rf["CONFIG4"] = rf["CONFIG4"] | CONFIG4_PD_LOFF_COMP_N

    def _bias_sensed(self) -> set[int]:
        labels = self.montage.labels
        return set(sensed_indices(self.bias, len(labels), labels))

    def _device(self, ch: int) -> tuple[RegisterFile, int]:
        return self.registers[ch // CHANNELS_PER_DEVICE], ch % CHANNELS_PER_DEVICE

    def gains(self) -> np.ndarray:
        return np.array([rf.gain(k) for rf, k in map(self._device, range(self.cfg.n_channels))])

    def read_block(self, n_frames: int) -> FrameBlock:
        if n_frames < 0:
            raise ValueError("n_frames must be non-negative")
        cfg = self.cfg
        n_ch = cfg.n_channels
        start = self.next_index
        for rf in self.registers:
            if rf.data_rate != cfg.rate:
                raise ConfigurationError("CONFIG1 data rate no longer matches the acquisition rate")

        x = subject.synthesize_block(self.scenario, self.montage, cfg.rate, start, n_frames)
        x = x * (cfg.input_impedance / (cfg.input_impedance + self._zin))[:, None] + self._offsets[:, None]

        # Lead-off excitation, per device settings.
        for d, rf in enumerate(self.registers):
            sens = _mask_bits(rf["LOFF_SENSP"])
            if not sens:
                continue
            pattern = excitation_pattern(start, n_frames, rf.lead_off_freq)
            for k in sens:
                ch = d * CHANNELS_PER_DEVICE + k
                x[ch] += rf.lead_off_current * self._zin[ch] * pattern

        x = self._rc_stage.process(x) if n_frames else x

        sensed = [d * CHANNELS_PER_DEVICE + k for d, rf in enumerate(self.registers) for k in _mask_bits(rf["BIAS_SENSP"])]
        loop_on = self.bias.enabled and all(rf.bias_enabled for rf in self.registers)
        if loop_on and sensed and n_frames:
            spec = BiasLoopSpec(True, frozenset(sensed), self.bias.loop_rejection_db)
            x, _ = bias_feedback(x, spec)

        gains = np.empty(n_ch)
        for ch in range(n_ch):
            rf, k = self._device(ch)
            gains[ch] = rf.gain(k)
            mux = rf.mux(k)
            if rf.powered_down(k) or mux == MUX_SHORTED:
                x[ch] = 0.0
            elif mux == MUX_TEST:
                x[ch] = self._test_signal(rf, start, n_frames)
            elif mux != MUX_NORMAL:
                raise ConfigurationError(f"channel {ch}: input mux code {mux:03b} is not modeled")

        scaled = np.rint(x * (gains * FULL_SCALE_COUNTS / cfg.vref)[:, None])
        sat = (scaled > CODE_MAX) | (scaled < CODE_MIN)
        codes = np.clip(scaled, CODE_MIN, CODE_MAX).astype(np.int64).T  # (n, ch)
        if sat.any():
            self.saturation_counts += sat.sum(axis=1)
            for ch, k in zip(*np.nonzero(sat)):
                if len(self.saturation_log) >= 1000:
                    break
                self.saturation_log.append((start + int(k), int(ch)))

        volts = codes * (cfg.vref / (gains * FULL_SCALE_COUNTS))
        dev_status = np.empty((n_frames, cfg.devices), dtype=np.int64)
        for d, rf in enumerate(self.registers):
            sens = rf["LOFF_SENSP"] if rf.comparators_enabled else 0
            statp = np.zeros(n_frames, dtype=np.int64)
            for k in _mask_bits(sens):
                above = np.abs(volts[:, d * CHANNELS_PER_DEVICE + k]) > cfg.lead_off_threshold
                statp |= above.astype(np.int64) << k
            dev_status[:, d] = (STATUS_PREFIX << 20) | (statp << 12)
            if n_frames:
                rf._force("LOFF_STATP", int(statp[-1]))
                rf._force("LOFF_STATN", 0)
        self.next_index += n_frames
        return FrameBlock(start, cfg.rate, codes, dev_status[:, 0].copy(), dev_status)

    def _test_signal(self, rf: RegisterFile, start: int, n: int) -> np.ndarray:
        # Internal test square wave: fCLK/2^21 or fCLK/2^20, +-1 or +-2 x VREF/2.4 mV.
        cfg2 = rf["CONFIG2"]
        hz = 2.048e6 / (2**20 if cfg2 & 0x01 else 2**21)
        amp = (2.0 if cfg2 & 0x04 else 1.0) * self.cfg.vref / 2400.0
        t = np.arange(start, start + n) / self.cfg.rate
        return np.where((t * hz) % 1.0 < 0.5, amp, -amp)

    def read(self, n_frames: int) -> list[SampleFrame]:
        return self.read_block(n_frames).frames()


def acquire(
    scenario: subject.SignalScenario,
    montage: subject.Montage,
    cfg: AcquisitionConfig | None = None,
    n_frames: int | None = None,
    bias: BiasLoopSpec | None = None,
    rc: RcFilterSpec | None = None,
) -> list[SampleFrame]:
    """Run the full chain from rest; ``n_frames`` defaults to the scenario length."""
    acq = Acquisition(scenario, montage, cfg, bias, rc)
    if n_frames is None:
        n_frames = subject.n_samples(scenario.duration, acq.rate)
    return acq.read(n_frames)


def frames_to_volts(frames, gain: float, vref: float) -> np.ndarray:
    """Decode a frame sequence to volts, shape ``(channels, n_frames)``."""
    if not frames:
        return np.zeros((0, 0))
    codes = np.array([f.codes for f in frames], dtype=np.int64)
    return decode(codes, gain, vref).T
