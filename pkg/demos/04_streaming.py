"""
Streaming, recording and replay
===============================

Two TCP clients share one server. One drives it; both receive the same
bytes. The recording is replayed and exported as text columns.
"""

import tempfile
from pathlib import Path

from ironstream import subject, wire
from ironstream.server import StreamClient, StreamServer
from ironstream.wire import Opcode, PacketType

scenario = subject.builtin_scenario("device_check", seed=1)
montage = subject.default_montage(8)
n = 1000

with StreamServer(scenario, montage, port=0, fast=True, max_frames=n, frames_per_packet=10) as srv:
    print("serving on", srv.address)
    watcher = StreamClient(*srv.address)
    with StreamClient(*srv.address) as ctl:
        ctl.command(Opcode.SENSORS_ON)
        ctl.command(Opcode.START)
        last = lambda p: p.ptype is PacketType.DATA and p.seq == n // 10 - 1
        packets = ctl.read(until=last, timeout=20)
        seen = watcher.read(until=last, timeout=20)
    watcher.close()

kinds = {t.name: sum(p.ptype is t for p in packets) for t in PacketType}
print("packet counts:", {k: v for k, v in kinds.items() if v})
data = [p for p in packets if p.ptype is PacketType.DATA]
print("gaps:", wire.detect_gaps(data, end=n // 10))
print("watcher saw the same data:", [p for p in seen if p.ptype is PacketType.DATA] == data)

# %%
out = Path(tempfile.mkdtemp())
wire.record(packets, out / "session.ibs", {"scenario": "device_check"})
rep = wire.replay(out / "session.ibs")
rows = wire.export_columns(rep.packets, out / "session.tsv")
print(f"replayed {len(rep.packets)} packets, exported {rows} rows to {out / 'session.tsv'}")
names, table = wire.read_columns(out / "session.tsv")
print(names[:3], table[1, :3])
