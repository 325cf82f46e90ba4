"""TCP streaming server and client.

One producer thread owns the acquisition. Each client has a bounded send
queue (``client_buffer`` packets, default 256) drained by its own writer
thread. When a queue is full the producer drops that client's backlog,
queues an ERROR (OVERFLOW) packet and disconnects it. Paced streams do this
at once. Unpaced (``fast``) streams have no real-time budget, so the
producer first waits up to ``stall_timeout`` seconds for the client to make
room; a client that makes no progress in that time is dropped.

Commands from any client go through one control queue that only the
producer reads, so they apply between acquisition blocks, last writer
wins. The sender gets an ACK echoing opcode and argument; configuration
changes are announced to every client with a META packet.

Each client numbers its own packets from 0, separately for DATA, SENSOR
and control (ACK/META/ERROR) packets.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import replace

from . import ads1299, sensors, subject
from .afe import BiasLoopSpec
from .wire import (
    DEFAULT_PORT,
    ErrorCode,
    Opcode,
    Packet,
    PacketType,
    ProtocolError,
    StreamDecoder,
    data_packets,
    decode_command,
    encode,
    encode_command,
    encode_error,
    encode_meta,
    encode_sensor,
)

log = logging.getLogger(__name__)

_CLOSE = object()


class _Client:
    def __init__(self, sock: socket.socket, addr, buffer: int):
        self.sock = sock
        self.addr = addr
        self.queue: queue.Queue = queue.Queue(maxsize=buffer)
        self.seq = {PacketType.DATA: 0, PacketType.SENSOR: 0, "ctl": 0}
        self.alive = True
        self.overflowed = False

    def next_seq(self, ptype: PacketType) -> int:
        key = ptype if ptype in (PacketType.DATA, PacketType.SENSOR) else "ctl"
        s = self.seq[key]
        self.seq[key] = s + 1
        return s


class StreamServer:
    """Serve one shared acquisition to any number of TCP clients."""

    def __init__(
        self,
        scenario: subject.SignalScenario,
        montage: subject.Montage,
        cfg: ads1299.AcquisitionConfig | None = None,
        bias: BiasLoopSpec | None = None,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        fast: bool = False,
        frames_per_packet: int = 1,
        client_buffer: int = 256,
        sensor_profile: sensors.SensorProfile | None = None,
        sensor_rate: float = 1.0,
        autostart: bool = False,
        max_frames: int | None = None,
        send_timeout: float = 1.0,
        stall_timeout: float = 1.0,
        send_buffer: int | None = None,
    ):
        self.scenario = scenario
        self.montage = montage
        self.cfg = cfg or ads1299.AcquisitionConfig()
        self.bias = bias
        self.host, self.port = host, port
        self.fast = fast
        self.frames_per_packet = frames_per_packet
        self.client_buffer = client_buffer
        self.sensor_rate = sensor_rate
        self.bus = sensors.build_board(sensor_profile)
        self.sensors_on = False
        self.running = autostart
        self.max_frames = max_frames
        self.send_timeout = send_timeout
        self.stall_timeout = stall_timeout
        self.send_buffer = send_buffer
        self.frames_sent = 0
        self._acq = ads1299.Acquisition(scenario, montage, self.cfg, bias)
        self._next_poll = 0
        self._control: queue.Queue = queue.Queue()
        self._clients: list[_Client] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener: socket.socket | None = None
        self.disconnected: list[tuple] = []

    # lifecycle

    def start(self) -> StreamServer:
        self._listener = socket.create_server((self.host, self.port), reuse_port=False)
        self._listener.settimeout(0.1)
        self.host, self.port = self._listener.getsockname()[:2]
        for target in (self._accept_loop, self._produce_loop):
            th = threading.Thread(target=target, daemon=True)
            th.start()
            self._threads.append(th)
        return self

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    def stop(self):
        self._stop.set()
        for th in self._threads:
            th.join(timeout=5)
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            self._drop(c, None)
        if self._listener:
            self._listener.close()

    def serve_forever(self):
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        finally:
            self.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    @property
    def clients(self) -> int:
        with self._lock:
            return sum(c.alive for c in self._clients)

    # clients

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            sock.settimeout(self.send_timeout)
            if self.send_buffer:
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, self.send_buffer)
            client = _Client(sock, addr, self.client_buffer)
            with self._lock:
                self._clients.append(client)
            self._control.put((client, "join", 0))
            for target in (self._writer, self._reader):
                threading.Thread(target=target, args=(client,), daemon=True).start()

    def _writer(self, c: _Client):
        try:
            while c.alive or not c.queue.empty():
                item = c.queue.get()
                if item is _CLOSE:
                    break
                ptype, ts, payload = item
                c.sock.sendall(encode(Packet(ptype, c.next_seq(ptype), ts, payload)))
        except OSError as exc:
            log.info("client %s write failed: %s", c.addr, exc)
        finally:
            self._close(c)

    def _reader(self, c: _Client):
        dec = StreamDecoder()
        while c.alive:
            try:
                data = c.sock.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            try:
                packets = dec.feed(data)
            except ProtocolError as exc:
                self._enqueue(c, PacketType.ERROR, 0, encode_error(ErrorCode.BAD_COMMAND, str(exc)))
                dec = StreamDecoder()
                continue
            for p in packets:
                if p.ptype is not PacketType.COMMAND:
                    continue
                try:
                    op, arg = decode_command(p.payload)
                except ProtocolError as exc:
                    self._enqueue(c, PacketType.ERROR, 0, encode_error(ErrorCode.BAD_COMMAND, str(exc)))
                    continue
                self._control.put((c, op, arg))
        c.alive = False
        self._enqueue_close(c)

    def _close(self, c: _Client):
        c.alive = False
        try:
            c.sock.close()
        except OSError:
            pass
        with self._lock:
            if c in self._clients:
                self._clients.remove(c)

    def _enqueue(self, c: _Client, ptype, ts, payload) -> bool:
        if not c.alive:
            return False
        try:
            if self.fast:
                c.queue.put((ptype, ts, payload), timeout=self.stall_timeout)
            else:
                c.queue.put_nowait((ptype, ts, payload))
            return True
        except queue.Full:
            self._overflow(c)
            return False

    def _enqueue_close(self, c: _Client):
        try:
            c.queue.put_nowait(_CLOSE)
        except queue.Full:
            pass

    def _overflow(self, c: _Client):
        log.warning("client %s overflowed its %d-packet buffer; disconnecting", c.addr, self.client_buffer)
        c.overflowed = True
        self._drop(c, encode_error(ErrorCode.OVERFLOW, "send buffer overflow"))

    def _drop(self, c: _Client, error_payload: bytes | None):
        c.alive = False
        self.disconnected.append(c.addr)
        while True:
            try:
                c.queue.get_nowait()
            except queue.Empty:
                break
        for item in ((PacketType.ERROR, 0, error_payload), _CLOSE):
            if item is _CLOSE or error_payload is not None:
                try:
                    c.queue.put_nowait(item)
                except queue.Full:
                    pass
        try:
            c.sock.shutdown(socket.SHUT_RD)
        except OSError:
            pass

    def _broadcast(self, ptype, ts, payload):
        with self._lock:
            clients = [c for c in self._clients if c.alive]
        for c in clients:
            self._enqueue(c, ptype, ts, payload)

    # producer

    def meta(self) -> dict:
        return {
            "rate": self.cfg.rate,
            "gain": self.cfg.gain,
            "gains": [int(g) for g in self._acq.gains()],
            "vref": self.cfg.vref,
            "devices": self.cfg.devices,
            "labels": self.montage.labels,
            "lead_off": bool(self.cfg.lead_off_channels),
            "sensors": self.sensors_on,
            "running": self.running,
            "frames_per_packet": self.frames_per_packet,
        }

    def _now_us(self) -> int:
        return (self._acq.next_index * 1_000_000) // self._acq.rate

    def _reconfigure(self, cfg: ads1299.AcquisitionConfig):
        elapsed_us = (self._acq.next_index * 1_000_000) // self._acq.rate
        acq = ads1299.Acquisition(self.scenario, self.montage, cfg, self.bias)
        acq.next_index = -(-elapsed_us * cfg.rate // 1_000_000)
        self.cfg, self._acq = cfg, acq

    def _apply(self, client: _Client, op, arg: int):
        if op == "join":
            self._enqueue(client, PacketType.META, self._now_us(), encode_meta(self.meta()))
            return
        cfg = self.cfg
        try:
            if op is Opcode.START:
                self.running = True
            elif op is Opcode.STOP:
                self.running = False
            elif op is Opcode.SET_RATE:
                self._reconfigure(replace(cfg, rate=arg))
            elif op is Opcode.SET_GAIN:
                self._reconfigure(replace(cfg, gain=arg))
            elif op is Opcode.IMPEDANCE_MODE:
                chans = frozenset(range(cfg.n_channels)) if arg else frozenset()
                self._reconfigure(replace(cfg, lead_off_channels=chans))
            elif op is Opcode.SENSORS_ON:
                self.sensors_on = True
            elif op is Opcode.SENSORS_OFF:
                self.sensors_on = False
        except ValueError as exc:
            self._enqueue(client, PacketType.ERROR, self._now_us(), encode_error(ErrorCode.BAD_ARGUMENT, str(exc)))
            return
        self._enqueue(client, PacketType.ACK, self._now_us(), encode_command(op, arg))
        if op is not Opcode.START and op is not Opcode.STOP:
            self._broadcast(PacketType.META, self._now_us(), encode_meta(self.meta()))

    def _produce_loop(self):
        wall0 = None
        stream0 = 0.0
        while not self._stop.is_set():
            try:
                timeout = 0.0 if self.running else 0.05
                while True:
                    client, op, arg = self._control.get(timeout=timeout)
                    self._apply(client, op, arg)
                    wall0 = None
                    timeout = 0.0
            except queue.Empty:
                pass
            if not self.running:
                continue
            if self.max_frames is not None and self.frames_sent >= self.max_frames:
                self.running = False
                continue
            rate = self._acq.rate
            per = self.frames_per_packet
            chunk = per * -(-(rate // 20) // per)  # ~50 ms, whole packets
            if self.max_frames is not None:
                chunk = min(chunk, self.max_frames - self.frames_sent)
            if not self.fast:
                if wall0 is None:
                    wall0, stream0 = time.monotonic(), self._acq.next_index / rate
                lag = (self._acq.next_index / rate - stream0) - (time.monotonic() - wall0)
                if lag > 0:
                    time.sleep(lag)
            block = self._acq.read_block(chunk)
            t_end = (block.start_index + len(block)) / rate
            for p in data_packets(block, 0, self.frames_per_packet):
                self._broadcast(p.ptype, p.timestamp_us, p.payload)
            self.frames_sent += len(block)
            if self.sensors_on:
                while self._next_poll / self.sensor_rate < t_end:
                    t = self._next_poll / self.sensor_rate
                    self._next_poll += 1
                    if t < block.start_index / rate:
                        continue
                    frame = sensors.poll_sensors(self.bus, t)
                    self._broadcast(PacketType.SENSOR, int(round(t * 1e6)), encode_sensor(frame))


class StreamClient:
    """Blocking client for scripts and tests."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT, timeout: float = 5.0, rcvbuf: int | None = None):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        if rcvbuf:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
        self.sock.settimeout(timeout)
        self.sock.connect((host, port))
        self._decoder = StreamDecoder()
        self._pending: list[Packet] = []
        self.raw = bytearray()
        self._seq = 0

    def command(self, op: Opcode, arg: int = 0):
        self.sock.sendall(encode(Packet(PacketType.COMMAND, self._seq, 0, encode_command(op, arg))))
        self._seq += 1

    def read(self, n: int | None = None, until=None, timeout: float = 5.0) -> list[Packet]:
        """Read packets until ``n`` arrive, ``until(packet)`` is true, the peer closes, or timeout."""
        out: list[Packet] = []
        deadline = time.monotonic() + timeout
        while True:
            while self._pending:
                p = self._pending.pop(0)
                out.append(p)
                if (n is not None and len(out) >= n) or (until is not None and until(p)):
                    return out
            if time.monotonic() > deadline:
                return out
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                return out
            if not data:
                return out
            self.raw += data
            self._pending.extend(self._decoder.feed(data))

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
