"""End-to-end acceptance criteria, one test each at the stated tolerance.

Every test records a PASS/FAIL line; ``conftest`` repeats them in the
terminal summary so they land in the run log.
"""

import math
import random
import time

import numpy as np

import test_conformance
from ironstream import dsp, subject, wire
from ironstream.ads1299 import (
    CODE_MAX,
    CODE_MIN,
    FULL_SCALE_COUNTS,
    Acquisition,
    AcquisitionConfig,
    convert,
    decode,
    lsb,
    saturated,
)
from ironstream.afe import BiasLoopSpec
from ironstream.cli import main as cli_main
from ironstream.impedance import Quality, classify, measure
from ironstream.pipeline import session_volts, simulate_packets
from ironstream.power import budget
from ironstream.server import StreamClient, StreamServer
from ironstream.wire import Opcode, PacketType, ProtocolError, decode_one
from test_wire import random_buffers

RESULTS: dict[int, tuple[bool, str]] = {}


def report(number, ok, detail):
    RESULTS[number] = (bool(ok), detail)
    print(f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def chain_volts(scenario, montage, cfg=None, bias=None):
    sim = simulate_packets(scenario, montage, cfg or AcquisitionConfig(), bias, sensors_on=False)
    return session_volts(sim.packets)[0]


def occipital_alpha(volts, montage, rate, lo_s, hi_s):
    x = dsp.bandpass(volts, rate=rate)[montage.indices(montage.occipital_set), int(lo_s * rate):int(hi_s * rate)]
    return float(np.mean(dsp.band_power(dsp.psd(x, rate), 8, 14)))


def test_1_alpha_reproduction():
    t0 = time.perf_counter()
    montage = subject.default_montage(8)
    closed = subject.builtin_scenario("eyes_closed")
    ev = closed.events[0]
    v_closed = chain_volts(closed, montage)
    v_open = chain_volts(subject.builtin_scenario("rest"), montage)
    ratio = occipital_alpha(v_closed, montage, 250, ev.start, ev.end) / occipital_alpha(v_open, montage, 250, ev.start, ev.end)
    windows = dsp.detect_alpha(dsp.bandpass(v_closed, rate=250), 250, montage)
    inside = [w for w in windows if w.start >= ev.start and w.end <= ev.end]
    hit = sum(w.detected for w in inside) / len(inside)
    elapsed = time.perf_counter() - t0
    report(1, ratio >= 10 and hit >= 0.8 and elapsed < 10,
           f"alpha power ratio {ratio:.1f}x (>=10), in-event windows detected {hit:.0%} (>=80%), {elapsed:.2f} s (<10)")


def test_2_noise_floor():
    montage = subject.default_montage(8, kind="shorted")
    values = []
    for seed in range(20):
        v = chain_volts(subject.builtin_scenario("shorted", seed=seed), montage)
        values.append(dsp.rms(dsp.bandpass(v, rate=250)) * 1e6)
    lo, hi = min(values), max(values)
    report(2, 0.3 <= lo and hi <= 0.7, f"post-bandpass RMS {lo:.3f}-{hi:.3f} uV over 20 seeds (in [0.3, 0.7])")


def test_3_mains_residual():
    montage = subject.default_montage(8, kind="shorted")
    sc = subject.builtin_scenario("shorted", seed=1)
    v = chain_volts(sc, montage)
    residual = max(dsp.tone_amplitude(ch, 250, sc.mains_hz) / math.sqrt(2) for ch in v) * 1e6
    report(3, residual <= 0.1, f"worst-channel 50 Hz residual {residual:.4f} uV RMS (<=0.1) for {sc.mains_amplitude * 1e3:g} mV mains")


def test_4_cmrr():
    probes = (10.0, 30.0, 50.0)
    sc = subject.builtin_scenario("shorted", mains_amplitude=0.0, common_mode_tones=tuple((hz, 1.0) for hz in probes))
    cfg = AcquisitionConfig()
    v = chain_volts(sc, subject.default_montage(8, kind="shorted"), cfg, BiasLoopSpec(loop_rejection_db=110))
    dbs = {hz: dsp.cmrr_estimate(v, cfg, 1.0, hz).db for hz in probes}
    ok = all(abs(db - 110) <= 3 for db in dbs.values())
    report(4, ok, "CMRR " + ", ".join(f"{hz:g} Hz {db:.1f} dB" for hz, db in dbs.items()) + " (110 +/- 3)")


def test_5_impedance():
    montage = subject.default_montage(8).with_kind("gel", 6000)
    errs = {}
    for freq in ("dc", "fs_over_4"):
        reps = measure(montage, AcquisitionConfig(lead_off_freq=freq), subject.builtin_scenario("rest", seed=4), seconds=1.0)
        errs[freq] = max(abs(r.ohms / 6000 - 1) for r in reps)
    classes = classify(5e3), classify(200e3)
    ok = all(e <= 0.05 for e in errs.values()) and classes == (Quality.GOOD, Quality.POOR)
    report(5, ok, f"6 kOhm worst error dc {errs['dc']:.2%}, sync {errs['fs_over_4']:.2%} (<=5%); 5 kOhm {classes[0].value}, 200 kOhm {classes[1].value}")


def _stream_record_replay(devices, rate, tmp_path):
    n = rate  # one second
    montage = subject.default_montage(8 * devices)
    sc = subject.builtin_scenario("rest", seed=devices * 1000 + rate)
    cfg = AcquisitionConfig(rate=rate, devices=devices)
    with StreamServer(sc, montage, cfg, port=0, fast=True, max_frames=n, frames_per_packet=5) as srv:
        with StreamClient(*srv.address) as c:
            c.command(Opcode.START)
            packets = c.read(until=lambda p: p.ptype is PacketType.DATA and p.seq == n // 5 - 1, timeout=30)
    path = tmp_path / f"d{devices}_r{rate}.ibs"
    wire.record(packets, path, {"devices": devices, "rate": rate})
    rep = wire.replay(path)
    if rep.packets != packets or rep.truncated:
        return "replay differs"
    frames = wire.session_frames(rep.packets)
    direct = Acquisition(sc, montage, cfg).read_block(n)
    codes = np.array([f.codes for f in frames])
    if len(frames) != n or codes.shape[1] != 8 * devices or not np.array_equal(codes, direct.codes):
        return "frames differ"
    if [f.index for f in frames] != list(range(n)):
        return "frame indices differ"
    data = [p for p in rep.packets if p.ptype is PacketType.DATA]
    if [p.timestamp_us for p in data] != [wire.frame_timestamp_us(5 * k, rate) for k in range(len(data))]:
        return "timestamps differ"
    out = tmp_path / f"d{devices}_r{rate}.tsv"
    if wire.export_columns(rep.packets, out) != n:
        return "export row count"
    names, table = wire.read_columns(out)
    back = np.rint(table[:, 1:] * 1e-6 * cfg.gain * FULL_SCALE_COUNTS / cfg.vref).astype(np.int64)
    if not np.array_equal(back, direct.codes):
        return "export values differ"
    if not np.allclose(table[:, 0], np.arange(n) / rate, rtol=0, atol=1e-9):
        return "export time column"
    return None


def test_6_channel_rate_envelope(tmp_path):
    failures = {}
    for devices in (1, 2, 3):
        for rate in (250, 500, 1000):
            problem = _stream_record_replay(devices, rate, tmp_path)
            if problem:
                failures[(devices, rate)] = problem
    report(6, not failures, f"9 device x rate combinations lossless; failures: {failures or 'none'}")


def test_7_codec_exactness():
    rng = np.random.default_rng(7)
    worst = 0.0
    for gain in (1, 2, 4, 6, 8, 12, 24):
        fs = 4.5 / gain
        v = rng.uniform(-fs, fs, 1_000_000 // 7 + 1)
        worst = max(worst, float(np.max(np.abs(decode(convert(v, gain, 4.5), gain, 4.5) - v)) / lsb(gain, 4.5)))
    examples = [
        convert(0.0, 24, 4.5) == 0,
        convert(4.5 / 24, 24, 4.5) == CODE_MAX,
        convert(-4.5 / 24 - 1e-6, 24, 4.5) == CODE_MIN and bool(saturated(-4.5 / 24 - 1e-6, 24, 4.5)),
        decode(CODE_MAX, 24, 4.5) == 0.1875,
        abs(lsb(24, 4.5) - 22.352e-9) <= 0.001e-9,
    ]
    ok = worst <= 1.0 and all(examples)
    report(7, ok, f"1e6 round trips worst {worst:.3f} LSB (<=1); {sum(examples)}/{len(examples)} exact vectors")


def _gap_patterns(count, seed=8):
    rng = random.Random(seed)
    for k in range(count):
        n = rng.randint(1, 400)
        kind = k % 5
        if kind == 0:
            dropped = {s for s in range(n) if rng.random() < rng.random()}
        elif kind == 1:
            start = rng.randrange(n)
            dropped = set(range(start, min(n, start + rng.randint(1, n))))
        elif kind == 2:
            dropped = {s for s in range(n) if s % rng.randint(2, 5) == 0}
        elif kind == 3:
            dropped = {0, n - 1} | set(rng.sample(range(n), rng.randint(0, n)))
        else:
            dropped = set(range(n)) if k % 10 == 4 else set()
        kept = [s for s in range(n) if s not in dropped]
        dups = [rng.choice(kept) for _ in range(rng.randint(0, 3))] if kept else []
        yield n, sorted(kept + dups), dropped


def test_8_protocol_robustness():
    crashes = 0
    for buf in random_buffers(1_000_000, seed=8):
        try:
            _, used = decode_one(buf)
            crashes += used > len(buf)
        except ProtocolError:
            pass
        except Exception:
            crashes += 1
    wrong_gaps = 0
    for n, seqs, dropped in _gap_patterns(1000):
        gaps = wire.detect_gaps(seqs, end=n)
        missing = {s for start, count in gaps for s in range(start, start + count)}
        wrong_gaps += missing != dropped

    sc = subject.builtin_scenario("rest", seed=8)
    with StreamServer(sc, subject.default_montage(8), port=0, fast=True, max_frames=1000) as srv:
        clients = [StreamClient(*srv.address) for _ in range(3)]
        deadline = time.monotonic() + 5
        while srv.clients < 3 and time.monotonic() < deadline:
            time.sleep(0.01)
        with StreamClient(*srv.address) as ctl:
            ctl.command(Opcode.START)
            for c in clients:
                c.read(until=lambda p: p.ptype is PacketType.DATA and p.seq == 999, timeout=20)
        identical = clients[0].raw == clients[1].raw == clients[2].raw
        for c in clients:
            c.close()

    total = 20_000
    with StreamServer(sc, subject.default_montage(8), port=0, fast=True, max_frames=total, client_buffer=16, send_buffer=8192) as srv:
        stalled = StreamClient(*srv.address, rcvbuf=4096)
        good = StreamClient(*srv.address)
        deadline = time.monotonic() + 5
        while srv.clients < 2 and time.monotonic() < deadline:
            time.sleep(0.01)
        good.command(Opcode.START)
        got = [p.seq for p in good.read(until=lambda p: p.ptype is PacketType.DATA and p.seq == total - 1, timeout=60) if p.ptype is PacketType.DATA]
        isolated = got == list(range(total)) and len(srv.disconnected) == 1
        stalled.close()
        good.close()

    ok = crashes == 0 and wrong_gaps == 0 and identical and isolated
    report(8, ok, f"1e6 fuzz buffers {crashes} crashes; 1000 drop patterns {wrong_gaps} wrong; 3 clients identical {identical}; stalled client isolated {isolated}")


def test_9_battery(capsys):
    hours = budget(1200, 133.33).hours
    code = cli_main(["budget", "--capacity", "1200", "--draw", "133.33"])
    printed = "9.00 h" in capsys.readouterr().out
    report(9, abs(hours - 9.0) <= 0.01 and code == 0 and printed, f"1200 mAh / 133.33 mA = {hours:.4f} h (9.0 +/- 0.01)")


def test_10_oracle_equivalence():
    counts, failed = {}, []
    for name, check in test_conformance.CHECKS.items():
        try:
            counts[name] = check()
        except AssertionError:
            failed.append(name)
    ok = not failed and all(n >= 1000 for n in counts.values())
    report(10, ok, f"{len(counts)} oracle checks x >= {min(counts.values(), default=0)} cases; failed: {failed or 'none'}")
