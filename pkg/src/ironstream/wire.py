"""Binary streaming protocol and session files.

Packet layout (all multi-byte header fields little-endian)::

    offset size field
    0      4    magic         b"IBCI"
    4      1    version       0x01
    5      1    ptype         PacketType
    6      4    seq           uint32
    10     8    timestamp_us  uint64
    18     2    payload_len   uint16, <= 4096
    20     n    payload
    20+n   2    crc16         CRC-16/CCITT-FALSE over bytes [0, 20+n)

Session file: 16-byte header (b"IBCISESS", version byte, three zero bytes,
first four bytes of the SHA-256 of the canonical JSON config) followed by
encoded packets verbatim.
"""

from __future__ import annotations

import binascii
import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import IronstreamError

MAGIC = b"IBCI"
VERSION = 0x01
HEADER = struct.Struct("<4sBBIQH")
HEADER_SIZE = HEADER.size  # 20
CRC_SIZE = 2
MAX_PAYLOAD = 4096
DEFAULT_PORT = 9350

SESSION_MAGIC = b"IBCISESS"
SESSION_VERSION = 0x01
SESSION_HEADER = struct.Struct("<8sB3s4s")


class PacketType(IntEnum):
    DATA = 0x01
    SENSOR = 0x02
    COMMAND = 0x03
    ACK = 0x04
    ERROR = 0x05
    META = 0x06


class Opcode(IntEnum):
    START = 0x01
    STOP = 0x02
    SET_RATE = 0x03
    SET_GAIN = 0x04
    IMPEDANCE_MODE = 0x05
    SENSORS_ON = 0x06
    SENSORS_OFF = 0x07


class ErrorCode(IntEnum):
    BAD_COMMAND = 0x01
    BAD_ARGUMENT = 0x02
    OVERFLOW = 0x03


class ProtocolError(IronstreamError, ValueError):
    """Base class for decode failures."""


class BadMagic(ProtocolError):
    """Not our protocol."""


class BadVersion(ProtocolError):
    pass


class BadLength(ProtocolError):
    pass


class CorruptPacket(ProtocolError):
    """CRC mismatch."""


class BadType(ProtocolError):
    pass


class PayloadError(ProtocolError):
    """Payload does not match its type's layout."""


class IncompleteFrame(ProtocolError):
    """More bytes are needed; retry once ``needed`` bytes are buffered."""

    def __init__(self, needed: int):
        super().__init__(f"incomplete packet: {needed} bytes needed")
        self.needed = needed


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no xorout)."""
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class Packet:
    ptype: PacketType
    seq: int
    timestamp_us: int
    payload: bytes = b""


def encode(packet: Packet) -> bytes:
    if len(packet.payload) > MAX_PAYLOAD:
        raise BadLength(f"payload of {len(packet.payload)} bytes exceeds {MAX_PAYLOAD}")
    if not 0 <= packet.seq < 2**32 or not 0 <= packet.timestamp_us < 2**64:
        raise ValueError("seq or timestamp out of range")
    body = HEADER.pack(MAGIC, VERSION, PacketType(packet.ptype), packet.seq, packet.timestamp_us, len(packet.payload))
    body += packet.payload
    return body + struct.pack("<H", crc16(body))


def decode_one(buf) -> tuple[Packet, int]:
    """Decode the packet at the start of ``buf``; returns it and its encoded size.

    Checks run in order magic, version, length, CRC, type.
    """
    buf = memoryview(buf)
    n = len(buf)
    head = bytes(buf[:4])
    if head != MAGIC[: len(head)]:
        raise BadMagic(f"bad magic {head!r}")
    if n < HEADER_SIZE:
        if n >= 5 and buf[4] != VERSION:
            raise BadVersion(f"unsupported version {buf[4]}")
        raise IncompleteFrame(HEADER_SIZE + CRC_SIZE - n)
    _, version, ptype, seq, ts, length = HEADER.unpack_from(buf)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if length > MAX_PAYLOAD:
        raise BadLength(f"payload length {length} exceeds {MAX_PAYLOAD}")
    total = HEADER_SIZE + length + CRC_SIZE
    if n < total:
        raise IncompleteFrame(total - n)
    body = bytes(buf[: HEADER_SIZE + length])
    (crc,) = struct.unpack_from("<H", buf, HEADER_SIZE + length)
    if crc != crc16(body):
        raise CorruptPacket("CRC mismatch")
    try:
        ptype = PacketType(ptype)
    except ValueError:
        raise BadType(f"unknown packet type 0x{ptype:02X}") from None
    return Packet(ptype, seq, ts, body[HEADER_SIZE:]), total


def decode(buf) -> Packet:
    return decode_one(buf)[0]


class StreamDecoder:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Packet]:
        self._buf += data
        out = []
        while self._buf:
            try:
                packet, used = decode_one(self._buf)
            except IncompleteFrame:
                break
            out.append(packet)
            del self._buf[:used]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# --- payloads ------------------------------------------------------------------


def data_payload_size(channel_count: int, frames: int) -> int:
    return 2 + frames * 3 * (channel_count + 1)


def max_frames_per_packet(channel_count: int) -> int:
    return min(255, (MAX_PAYLOAD - 2) // (3 * (channel_count + 1)))


def encode_data(status, codes) -> bytes:
    """Frames as ``status`` (n,) and ``codes`` (n, channels) to a DATA payload."""
    codes = np.asarray(codes, dtype=np.int64)
    status = np.asarray(status, dtype=np.int64)
    if codes.ndim != 2:
        raise PayloadError("codes must be (frames, channels)")
    n, ch = codes.shape
    if not 1 <= ch <= 255 or n > 255 or data_payload_size(ch, n) > MAX_PAYLOAD:
        raise PayloadError(f"{n} frames x {ch} channels do not fit one packet")
    words = np.concatenate([status[:, None], codes], axis=1) & 0xFFFFFF
    raw = np.empty((n, ch + 1, 3), dtype=np.uint8)
    raw[..., 0] = words >> 16
    raw[..., 1] = (words >> 8) & 0xFF
    raw[..., 2] = words & 0xFF
    return bytes([ch, n]) + raw.tobytes()


def decode_data(payload: bytes) -> tuple[np.ndarray, np.ndarray]:
    """DATA payload to ``(status (n,), codes (n, channels))``."""
    if len(payload) < 2:
        raise PayloadError("data payload shorter than its 2-byte prefix")
    ch, n = payload[0], payload[1]
    if len(payload) != data_payload_size(ch, n):
        raise PayloadError("data payload length does not match its frame count")
    raw = np.frombuffer(payload, dtype=np.uint8, offset=2).reshape(n, ch + 1, 3).astype(np.int64)
    words = (raw[..., 0] << 16) | (raw[..., 1] << 8) | raw[..., 2]
    codes = np.where(words[:, 1:] >= 0x800000, words[:, 1:] - 0x1000000, words[:, 1:])
    return words[:, 0], codes


SENSOR_PAYLOAD = struct.Struct("<H12d")


def encode_sensor(frame) -> bytes:
    return SENSOR_PAYLOAD.pack(
        frame.validity, frame.co2, frame.temp, frame.rh, frame.sound, frame.spo2, frame.pulse, *frame.accel, *frame.gyro
    )


def decode_sensor(payload: bytes, t: float):
    from .sensors import SensorFrame

    if len(payload) != SENSOR_PAYLOAD.size:
        raise PayloadError("sensor payload has the wrong size")
    v = SENSOR_PAYLOAD.unpack(payload)
    return SensorFrame(t, *v[1:7], accel=tuple(v[7:10]), gyro=tuple(v[10:13]), validity=v[0])


COMMAND_PAYLOAD = struct.Struct("<BI")


def encode_command(opcode: Opcode, arg: int = 0) -> bytes:
    return COMMAND_PAYLOAD.pack(Opcode(opcode), arg)


def decode_command(payload: bytes) -> tuple[Opcode, int]:
    if len(payload) != COMMAND_PAYLOAD.size:
        raise PayloadError("command payload has the wrong size")
    op, arg = COMMAND_PAYLOAD.unpack(payload)
    try:
        return Opcode(op), arg
    except ValueError:
        raise PayloadError(f"unknown opcode 0x{op:02X}") from None


def encode_error(code: ErrorCode, message: str) -> bytes:
    return bytes([ErrorCode(code)]) + message.encode()[: MAX_PAYLOAD - 1]


def decode_error(payload: bytes) -> tuple[int, str]:
    if not payload:
        raise PayloadError("empty error payload")
    return payload[0], payload[1:].decode(errors="replace")


def encode_meta(doc: dict) -> bytes:
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    if len(raw) > MAX_PAYLOAD:
        raise PayloadError("meta document too large")
    return raw


def decode_meta(payload: bytes) -> dict:
    try:
        return json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadError(f"bad meta payload: {exc}") from None


def frame_timestamp_us(index: int, rate: int, origin_us: int = 0) -> int:
    return origin_us + (index * 1_000_000) // rate


def data_packets(block, seq0: int = 0, frames_per_packet: int = 1, origin_us: int = 0) -> list[Packet]:
    """Split a FrameBlock into DATA packets; timestamp is the first frame's."""
    n_ch = block.codes.shape[1]
    per = max(1, min(frames_per_packet, max_frames_per_packet(n_ch)))
    out = []
    for k, lo in enumerate(range(0, len(block), per)):
        hi = min(lo + per, len(block))
        ts = frame_timestamp_us(block.start_index + lo, block.rate, origin_us)
        out.append(Packet(PacketType.DATA, seq0 + k, ts, encode_data(block.status[lo:hi], block.codes[lo:hi])))
    return out


# --- sequence checks -------------------------------------------------------------


@dataclass
class SequenceReport:
    gaps: list[tuple[int, int]] = field(default_factory=list)
    duplicates: list[int] = field(default_factory=list)
    late: list[int] = field(default_factory=list)


def sequence_report(packets, first: int = 0, end: int | None = None) -> SequenceReport:
    """Gaps, duplicates and late arrivals in one stream's sequence numbers.

    ``first`` is the expected first seq; ``end`` (exclusive), when known,
    exposes trailing drops. A repeated seq is a duplicate, never a gap.
    """
    rep = SequenceReport()
    seen = set()
    expected = first
    for p in packets:
        s = p if isinstance(p, int) else p.seq
        if s in seen:
            rep.duplicates.append(s)
            continue
        seen.add(s)
        if s == expected:
            expected += 1
        elif s > expected:
            rep.gaps.append((expected, s - expected))
            expected = s + 1
        else:
            rep.late.append(s)
    if end is not None and end > expected:
        rep.gaps.append((expected, end - expected))
    return rep


def detect_gaps(packets, first: int = 0, end: int | None = None) -> list[tuple[int, int]]:
    return sequence_report(packets, first, end).gaps


# --- sessions ------------------------------------------------------------------


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).digest()[:4]


def session_header(config: dict) -> bytes:
    return SESSION_HEADER.pack(SESSION_MAGIC, SESSION_VERSION, b"\0\0\0", config_digest(config))


class SessionWriter:
    """Append encoded packets to a session file."""

    def __init__(self, path, config: dict):
        self.path = Path(path)
        self._fh = open(self.path, "wb")
        self._fh.write(session_header(config))
        self.count = 0

    def write(self, packet: Packet | bytes):
        self._fh.write(packet if isinstance(packet, (bytes, bytearray)) else encode(packet))
        self.count += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def record(packets, path, config: dict) -> int:
    with SessionWriter(path, config) as w:
        for p in packets:
            w.write(p)
        return w.count


@dataclass
class Replay:
    digest: bytes
    packets: list[Packet]
    raw: list[bytes]
    truncated: bool = False
    trailing_bytes: int = 0
    notice: str = ""


def replay(path) -> Replay:
    """Read a session file back; a torn tail is reported, not raised."""
    data = Path(path).read_bytes()
    if len(data) < SESSION_HEADER.size:
        raise ProtocolError("file shorter than the session header")
    magic, version, _, digest = SESSION_HEADER.unpack_from(data)
    if magic != SESSION_MAGIC:
        raise BadMagic("not a session file")
    if version != SESSION_VERSION:
        raise BadVersion(f"unsupported session version {version}")
    out = Replay(digest, [], [])
    pos = SESSION_HEADER.size
    view = memoryview(data)
    while pos < len(data):
        try:
            packet, used = decode_one(view[pos:])
        except IncompleteFrame:
            out.truncated = True
            out.trailing_bytes = len(data) - pos
            out.notice = f"truncated tail: {out.trailing_bytes} bytes after packet {len(out.packets)}"
            break
        out.packets.append(packet)
        out.raw.append(bytes(view[pos:pos + used]))
        pos += used
    return out


def session_meta(packets) -> dict:
    for p in packets:
        if p.ptype is PacketType.META:
            return decode_meta(p.payload)
    raise ProtocolError("session carries no meta packet")


def session_frames(packets, rate: int | None = None):
    """Rebuild SampleFrames from DATA packets; rate from the meta packet if not given."""
    from .ads1299 import SampleFrame

    packets = list(packets)
    if rate is None:
        rate = int(session_meta(packets)["rate"])
    frames = []
    for p in packets:
        if p.ptype is not PacketType.DATA:
            continue
        status, codes = decode_data(p.payload)
        first = (p.timestamp_us * rate) // 1_000_000
        if (first * 1_000_000) // rate != p.timestamp_us:
            first = round(p.timestamp_us * rate / 1_000_000)
        for k in range(len(status)):
            i = first + k
            frames.append(SampleFrame(int(status[k]), tuple(int(c) for c in codes[k]), i, i / rate))
    return frames


def export_columns(packets, out_path) -> int:
    """Write DATA frames as text columns ``t_seconds`` and one ``<label>_uV`` per channel.

    Uses the session's meta packet for rate, gain, vref and labels.
    Returns the number of rows written.
    """
    from .ads1299 import to_microvolts

    packets = list(packets)
    meta = session_meta(packets)
    rate, vref = int(meta["rate"]), float(meta["vref"])
    gains = np.asarray(meta.get("gains") or [meta["gain"]] * len(meta["labels"]), dtype=float)
    rows = []
    for p in packets:
        if p.ptype is not PacketType.DATA:
            continue
        _, codes = decode_data(p.payload)
        t = p.timestamp_us / 1e6 + np.arange(len(codes)) / rate
        uv = to_microvolts(codes, gains, vref)
        rows.append(np.column_stack([t, uv]))
    table = np.vstack(rows) if rows else np.zeros((0, 1 + len(gains)))
    header = "\t".join(["t_seconds"] + [f"{label}_uV" for label in meta["labels"]])
    write_columns(out_path, header.split("\t"), table)
    return table.shape[0]


def write_columns(path, names, table) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(names) + "\n")
        for row in np.atleast_2d(table) if len(table) else []:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def read_columns(path) -> tuple[list[str], np.ndarray]:
    """Inverse of ``write_columns``: header names and a float table."""
    with open(path) as fh:
        names = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    if any(len(r) != len(names) for r in rows):
        raise ProtocolError(f"{path}: ragged columns")
    table = np.array(rows, dtype=float) if rows else np.zeros((0, len(names)))
    return names, table
