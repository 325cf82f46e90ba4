"""Sensor board: register-mapped MEMS peripherals behind a byte-level I2C bus.

Every peripheral shares one register layout:

    0x0F WHO_AM_I   read-only identity byte
    0x20 CTRL       bit 0 ONESHOT (self-clearing: latches a conversion at
                    the bus clock), bits 7:1 read/write
    0x28..          DATA, read-only, big-endian 16-bit words

Raw word to physical unit conversions are listed in ``DEVICES`` and in
docs/register_map.md.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError

REG_WHO_AM_I = 0x0F
REG_CTRL = 0x20
REG_DATA = 0x28
CTRL_ONESHOT = 0x01


@dataclass(frozen=True)
class Channel:
    quantity: str
    scale: float  # physical units per LSB
    signed: bool


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    address: int
    who_am_i: int
    channels: tuple[Channel, ...]


DEVICES = (
    DeviceSpec("co2", 0x61, 0xC2, (Channel("co2", 1.0, False),)),
    DeviceSpec("temp_rh", 0x44, 0x5A, (Channel("temp", 1 / 128, True), Channel("rh", 100 / 65535, False))),
    DeviceSpec("sound", 0x4A, 0x50, (Channel("sound", 0.01, False),)),
    DeviceSpec("spo2", 0x57, 0x15, (Channel("spo2", 0.01, False),)),
    DeviceSpec("pulse", 0x58, 0x16, (Channel("pulse", 0.1, False),)),
    DeviceSpec(
        "accel", 0x19, 0x33, tuple(Channel(f"accel_{a}", 1 / 16384, True) for a in "xyz")
    ),
    DeviceSpec(
        "gyro", 0x69, 0xD3, tuple(Channel(f"gyro_{a}", 1 / 131, True) for a in "xyz")
    ),
)

QUANTITIES = tuple(ch.quantity for dev in DEVICES for ch in dev.channels)

# SensorFrame validity bits.
VALID = {"co2": 0, "temp": 1, "rh": 2, "sound": 3, "spo2": 4, "pulse": 5, "accel": 6, "gyro": 7}
_DEVICE_BITS = {
    "co2": ("co2",),
    "temp_rh": ("temp", "rh"),
    "sound": ("sound",),
    "spo2": ("spo2",),
    "pulse": ("pulse",),
    "accel": ("accel",),
    "gyro": ("gyro",),
}


def encode_raw(value: float, ch: Channel) -> int:
    """Physical value to the 16-bit register word (saturating)."""
    raw = int(round(value / ch.scale))
    lo, hi = (-32768, 32767) if ch.signed else (0, 65535)
    return min(max(raw, lo), hi)


def decode_raw(word: int, ch: Channel) -> float:
    if ch.signed and word >= 0x8000:
        word -= 0x10000
    return word * ch.scale


# --- ground truth --------------------------------------------------------------


@dataclass(frozen=True)
class QuantityProfile:
    """Piecewise-linear ground truth with optional Gaussian sensor noise.

    ``points`` are ``(t, value)`` pairs; values hold flat outside them.
    """

    points: tuple[tuple[float, float], ...]
    noise: float = 0.0

    def value(self, t: float) -> float:
        ts = [p[0] for p in self.points]
        vs = [p[1] for p in self.points]
        return float(np.interp(t, ts, vs))


DEFAULT_PROFILE = {
    "co2": 400.0,
    "temp": 25.0,
    "rh": 40.0,
    "sound": 45.0,
    "spo2": 98.0,
    "pulse": 70.0,
    "accel_x": 0.0,
    "accel_y": 0.0,
    "accel_z": 1.0,
    "gyro_x": 0.0,
    "gyro_y": 0.0,
    "gyro_z": 0.0,
}


@dataclass(frozen=True)
class SensorProfile:
    quantities: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        merged = {}
        for name in QUANTITIES:
            spec = self.quantities.get(name, DEFAULT_PROFILE[name])
            merged[name] = _as_quantity(name, spec)
        unknown = set(self.quantities) - set(QUANTITIES)
        if unknown:
            raise ConfigurationError(f"unknown sensor quantities: {sorted(unknown)}")
        object.__setattr__(self, "quantities", merged)


def _as_quantity(name, spec) -> QuantityProfile:
    if isinstance(spec, QuantityProfile):
        return spec
    if isinstance(spec, (int, float)):
        return QuantityProfile(((0.0, float(spec)),))
    if isinstance(spec, dict):
        if "value" in spec:
            points = ((0.0, float(spec["value"])),)
        elif "points" in spec:
            points = tuple((float(t), float(v)) for t, v in spec["points"])
        elif "drift" in spec:
            d = spec["drift"]
            points = ((float(d["t0"]), float(d["from"])), (float(d["t1"]), float(d["to"])))
        else:
            raise ConfigurationError(f"{name}: expected value, points or drift")
        return QuantityProfile(points, float(spec.get("noise", 0.0)))
    raise ConfigurationError(f"{name}: unsupported profile entry {spec!r}")


_LIMITS = {"rh": (0.0, 100.0), "spo2": (0.0, 100.0), "co2": (0.0, math.inf), "pulse": (0.0, math.inf), "sound": (0.0, math.inf)}


def sensor_scenario(profile: SensorProfile, t: float) -> dict[str, float]:
    """Ground-truth physical values at time ``t``.

    Noise for quantity ``q`` is drawn from a generator keyed on
    ``(seed, index of q, round(t * 1e6))`` so it depends only on the inputs.
    """
    out = {}
    t_key = int(round(t * 1e6))
    for k, name in enumerate(QUANTITIES):
        q = profile.quantities[name]
        v = q.value(t)
        if q.noise:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([profile.seed, k, t_key])))
            v += q.noise * rng.standard_normal()
        lo, hi = _LIMITS.get(name, (-math.inf, math.inf))
        out[name] = min(max(v, lo), hi)
    return out


def load_profile(path) -> SensorProfile:
    with open(Path(path)) as fh:
        doc = yaml.safe_load(fh) or {}
    doc = dict(doc)
    seed = int(doc.pop("seed", 0))
    return SensorProfile(doc.get("quantities", doc), seed)


# --- bus -----------------------------------------------------------------------


class Peripheral:
    """One register-mapped sensor."""

    def __init__(self, spec: DeviceSpec, truth):
        self.spec = spec
        self._truth = truth  # callable t -> dict of physical values
        self.regs = bytearray(256)
        self.regs[REG_WHO_AM_I] = spec.who_am_i

    def read(self, reg: int) -> int:
        return self.regs[reg & 0xFF]

    def write(self, reg: int, value: int, now: float):
        if reg == REG_CTRL:
            self.regs[REG_CTRL] = value & 0xFE
            if value & CTRL_ONESHOT:
                self._latch(now)
        # All other registers are read-only; writes are dropped.

    def _latch(self, now: float):
        values = self._truth(now)
        for k, ch in enumerate(self.spec.channels):
            word = encode_raw(values[ch.quantity], ch) & 0xFFFF
            self.regs[REG_DATA + 2 * k] = word >> 8
            self.regs[REG_DATA + 2 * k + 1] = word & 0xFF


@dataclass(frozen=True)
class I2cResult:
    ack: bool
    data: bytes = b""


NACK = I2cResult(False)


class I2cBus:
    """7-bit addressed bus with a shared clock used to time conversions."""

    def __init__(self):
        self.devices: dict[int, Peripheral] = {}
        self.now = 0.0

    def attach(self, address: int, device: Peripheral):
        if not 0x08 <= address <= 0x77:
            raise ConfigurationError(f"address 0x{address:02X} outside 0x08-0x77")
        if address in self.devices:
            raise ConfigurationError(f"address 0x{address:02X} already in use")
        self.devices[address] = device

    def detach(self, address: int):
        self.devices.pop(address, None)


def i2c_transaction(bus: I2cBus, addr: int, op: str, reg: int, data: bytes | None = None, length: int = 1) -> I2cResult:
    """Register write or auto-incrementing register read; absent devices NACK."""
    dev = bus.devices.get(addr)
    if dev is None:
        return NACK
    if op == "write_reg":
        for k, b in enumerate(data or b""):
            dev.write(reg + k, b, bus.now)
        return I2cResult(True)
    if op == "read_reg":
        return I2cResult(True, bytes(dev.read(reg + k) for k in range(length)))
    raise ValueError(f"unknown I2C operation {op!r}")


def build_board(profile: SensorProfile | None = None, omit=()) -> I2cBus:
    """Bus populated with the seven board sensors, minus any named in ``omit``."""
    profile = profile or SensorProfile()
    bus = I2cBus()
    for spec in DEVICES:
        if spec.name in omit:
            continue
        bus.attach(spec.address, Peripheral(spec, lambda t, p=profile: sensor_scenario(p, t)))
    return bus


@dataclass(frozen=True)
class SensorFrame:
    t: float
    co2: float = 0.0
    temp: float = 0.0
    rh: float = 0.0
    sound: float = 0.0
    spo2: float = 0.0
    pulse: float = 0.0
    accel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro: tuple[float, float, float] = (0.0, 0.0, 0.0)
    validity: int = 0

    def valid(self, name: str) -> bool:
        return bool(self.validity >> VALID[name] & 1)


def poll_sensors(bus: I2cBus, t: float) -> SensorFrame:
    """Trigger and read every board sensor at time ``t``.

    Per device: write CTRL with ONESHOT, then read ``2 * channels`` bytes
    from DATA. A NACK at either step leaves that device's fields zero and
    its validity bits clear.
    """
    bus.now = t
    values: dict[str, float] = {}
    validity = 0
    for spec in DEVICES:
        if not i2c_transaction(bus, spec.address, "write_reg", REG_CTRL, bytes([CTRL_ONESHOT])).ack:
            continue
        res = i2c_transaction(bus, spec.address, "read_reg", REG_DATA, length=2 * len(spec.channels))
        if not res.ack:
            continue
        for k, ch in enumerate(spec.channels):
            values[ch.quantity] = decode_raw((res.data[2 * k] << 8) | res.data[2 * k + 1], ch)
        for bit in _DEVICE_BITS[spec.name]:
            validity |= 1 << VALID[bit]
    get = values.get
    return SensorFrame(
        t=t,
        co2=get("co2", 0.0),
        temp=get("temp", 0.0),
        rh=get("rh", 0.0),
        sound=get("sound", 0.0),
        spo2=get("spo2", 0.0),
        pulse=get("pulse", 0.0),
        accel=(get("accel_x", 0.0), get("accel_y", 0.0), get("accel_z", 0.0)),
        gyro=(get("gyro_x", 0.0), get("gyro_y", 0.0), get("gyro_z", 0.0)),
        validity=validity,
    )


def poll_schedule(duration: float, rate_hz: float = 1.0) -> list[float]:
    """Poll instants ``k / rate_hz`` in ``[0, duration)``."""
    if not rate_hz > 0:
        raise ConfigurationError("poll rate must be positive")
    n = int(math.ceil(duration * rate_hz - 1e-9))
    return [k / rate_hz for k in range(max(n, 0))]


def merge_records(eeg_frames, sensor_frames) -> list:
    """Interleave EEG and sensor records by time; EEG first on ties."""
    tagged = [(f.t, 0, i, f) for i, f in enumerate(eeg_frames)]
    tagged += [(f.t, 1, i, f) for i, f in enumerate(sensor_frames)]
    tagged.sort(key=lambda x: x[:3])
    return [x[3] for x in tagged]
