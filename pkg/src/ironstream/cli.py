"""Command-line entry point: ``ironstream <command> [options]``.

Exit codes:

    0  success
    2  validation error (bad flags, config, or argument domain)
    3  runtime error (missing file, I/O, protocol or network failure)

Settings resolve as built-in defaults, then the YAML file named by
``--config`` or the IRONSTREAM_CONFIG environment variable, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from . import ads1299, impedance, pipeline, power, sensors, subject, wire
from .afe import BiasLoopSpec
from .errors import ConfigurationError, DomainError, IronstreamError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
CONFIG_ENV = "IRONSTREAM_CONFIG"
SESSION_NAME = "session.ibs"

log = logging.getLogger("ironstream")


class ValidationFailed(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    """Everything one command needs, cross-checked by ``problems``."""

    scenario: str = "eyes_closed"  # built-in name or YAML path
    montage: str | None = None  # YAML path; default montage otherwise
    electrode: str = "gel"  # electrode kind for the default montage
    rate: int = 250
    gain: int = 24
    devices: int = 1
    vref: float = 4.5
    lead_off: dict = field(default_factory=lambda: {"current": 24e-9, "freq": "dc"})
    bias: dict = field(default_factory=lambda: {"enabled": True, "loop_rejection_db": 110.0})
    sensor_profile: str | None = None
    sensor_rate: float = 1.0
    host: str = "127.0.0.1"
    port: int = wire.DEFAULT_PORT
    out: str = "."
    seed: int = 0
    duration: float | None = None
    frames_per_packet: int = 1

    def problems(self) -> list[str]:
        out = []
        if self.rate not in ads1299.RATES:
            out.append(f"rate {self.rate} not in {{250, 500, 1000}}")
        if self.gain not in ads1299.GAINS:
            out.append(f"gain {self.gain} not in {{{', '.join(map(str, ads1299.GAINS))}}}")
        if self.devices not in (1, 2, 3):
            out.append(f"devices {self.devices} not in {{1, 2, 3}}")
        if not self.vref > 0:
            out.append("vref must be positive")
        if not 0 <= self.port <= 65535:
            out.append(f"port {self.port} outside 0-65535")
        if self.seed < 0:
            out.append("seed must be non-negative")
        if self.duration is not None and not self.duration > 0:
            out.append("duration must be positive")
        if not 1 <= self.frames_per_packet <= 255:
            out.append("frames_per_packet must be in 1-255")
        if not self.sensor_rate > 0:
            out.append("sensor_rate must be positive")
        for what, build in (
            ("scenario", self.build_scenario),
            ("montage", self.build_montage),
            ("acquisition", self.build_acquisition),
            ("bias", self.build_bias),
            ("sensor profile", self.build_sensor_profile),
        ):
            try:
                build()
            except (ConfigurationError, ValueError, TypeError, KeyError, OSError) as exc:
                msg = f"{what}: {exc}"
                if not any(msg.endswith(p) or p in msg for p in out):
                    out.append(msg)
        if self.devices in (1, 2, 3) and self.montage is not None:
            try:
                m = self.build_montage()
                if len(m.channels) != 8 * self.devices:
                    out.append(f"montage has {len(m.channels)} channels but {self.devices} device(s) provide {8 * self.devices}")
            except (ConfigurationError, ValueError, KeyError, OSError):
                pass
        return out

    def validate(self) -> RunConfig:
        problems = self.problems()
        if problems:
            raise ValidationFailed(problems)
        return self

    def build_scenario(self) -> subject.SignalScenario:
        if self.scenario in subject.BUILTIN_SCENARIOS:
            return subject.builtin_scenario(self.scenario, seed=self.seed)
        path = Path(self.scenario)
        if not path.exists():
            raise ConfigurationError(f"{self.scenario!r} is neither a built-in scenario {list(subject.BUILTIN_SCENARIOS)} nor a file")
        return replace(subject.load_scenario(path), seed=self.seed)

    def build_montage(self) -> subject.Montage:
        if self.montage is not None:
            return subject.load_montage(self.montage)
        n = 8 * self.devices if self.devices in (1, 2, 3) else 8
        return subject.default_montage(n, self.electrode)

    def build_acquisition(self, **overrides) -> ads1299.AcquisitionConfig:
        lo = dict(self.lead_off or {})
        params = dict(
            rate=self.rate,
            gain=self.gain,
            vref=self.vref,
            devices=self.devices,
            lead_off_current=float(lo.pop("current", 24e-9)),
            lead_off_freq=lo.pop("freq", "dc"),
        )
        if "threshold" in lo:
            params["lead_off_threshold"] = float(lo.pop("threshold"))
        if lo:
            raise ConfigurationError(f"unknown lead_off keys {sorted(lo)}")
        params.update(overrides)
        return ads1299.AcquisitionConfig(**params)

    def build_bias(self) -> BiasLoopSpec:
        b = dict(self.bias or {})
        return BiasLoopSpec(
            enabled=bool(b.pop("enabled", True)),
            sensed_channels=b.pop("sensed_channels", None),
            loop_rejection_db=float(b.pop("loop_rejection_db", 110.0)),
            **b,
        )

    def build_sensor_profile(self) -> sensors.SensorProfile:
        if self.sensor_profile is None:
            return sensors.SensorProfile(seed=self.seed)
        return replace(sensors.load_profile(self.sensor_profile), seed=self.seed)


def load_run_config(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ValidationFailed([f"{path}: expected a key/value document"])
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationFailed([f"{path}: unknown key {k!r}" for k in unknown])
    return doc


_FLAG_FIELDS = ("scenario", "montage", "electrode", "rate", "gain", "devices", "seed", "port", "host", "out", "duration", "sensor_profile")


def resolve_config(args) -> RunConfig:
    doc: dict = {}
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).exists():
            raise ValidationFailed([f"config file {path} not found"])
        doc = load_run_config(path)
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    return RunConfig(**doc).validate()


# --- commands -------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    scenario = cfg.build_scenario()
    montage = cfg.build_montage()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sim = pipeline.simulate_packets(
            scenario,
            montage,
            cfg.build_acquisition(),
            cfg.build_bias(),
            duration=cfg.duration,
            sensor_profile=cfg.build_sensor_profile(),
            sensor_rate=cfg.sensor_rate,
            frames_per_packet=cfg.frames_per_packet,
        )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / SESSION_NAME
    wire.record(sim.packets, path, sim.meta)
    print(f"session     {path}")
    print(f"frames      {sim.frames}")
    print(f"sensor      {sim.sensor_records}")
    print(f"packets     {len(sim.packets)}")
    for label, count in zip(montage.labels, sim.saturation_counts):
        if count:
            print(f"warning: {label} saturated on {int(count)} frame(s)")
    return EXIT_OK


def cmd_serve(cfg: RunConfig, args) -> int:
    from .server import StreamServer

    duration = cfg.duration
    srv = StreamServer(
        cfg.build_scenario(),
        cfg.build_montage(),
        cfg.build_acquisition(),
        cfg.build_bias(),
        host=cfg.host,
        port=cfg.port,
        fast=args.fast,
        frames_per_packet=cfg.frames_per_packet,
        sensor_profile=cfg.build_sensor_profile(),
        sensor_rate=cfg.sensor_rate,
        autostart=args.autostart,
        max_frames=None if duration is None else int(round(duration * cfg.rate)),
    )
    srv.start()
    print(f"serving on {srv.address[0]}:{srv.address[1]}", flush=True)
    try:
        while True:
            time.sleep(0.2)
            if srv.max_frames is not None and srv.frames_sent >= srv.max_frames and args.exit_when_done:
                break
    except KeyboardInterrupt:
        pass
    finally:
        srv.stop()
    return EXIT_OK


def cmd_record(cfg: RunConfig, args) -> int:
    from .server import StreamClient

    seconds = cfg.duration or 10.0
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / SESSION_NAME
    with StreamClient(cfg.host, cfg.port) as client:
        first = client.read(n=1, timeout=5.0)
        if not first or first[0].ptype is not wire.PacketType.META:
            raise wire.ProtocolError("server did not announce its configuration")
        meta = wire.decode_meta(first[0].payload)
        if not args.no_start:
            client.command(wire.Opcode.SENSORS_ON)
            client.command(wire.Opcode.START)
        need = int(round(seconds * int(meta["rate"])))
        got = 0
        packets = list(first)

        def done(p):
            nonlocal got
            if p.ptype is wire.PacketType.DATA:
                got += len(wire.decode_data(p.payload)[0])
            return got >= need

        packets += client.read(until=done, timeout=seconds * 4 + 10)
        if not args.no_start:
            client.command(wire.Opcode.STOP)
    kept = [p for p in packets if p.ptype in (wire.PacketType.META, wire.PacketType.DATA, wire.PacketType.SENSOR, wire.PacketType.ERROR)]
    wire.record(kept, path, meta)
    report = wire.sequence_report([p for p in kept if p.ptype is wire.PacketType.DATA])
    print(f"session     {path}")
    print(f"frames      {got}")
    print(f"packets     {len(kept)}")
    print(f"gaps        {len(report.gaps)}")
    return EXIT_OK if got >= need else EXIT_RUNTIME


def cmd_analyze(cfg: RunConfig, args) -> int:
    kinds = [k.strip() for k in args.report.split(",") if k.strip()] if args.report else list(pipeline.REPORT_KINDS)
    unknown = [k for k in kinds if k not in pipeline.REPORT_KINDS]
    if unknown:
        raise ValidationFailed([f"unknown report kind {k!r}; choose from {list(pipeline.REPORT_KINDS)}" for k in unknown])
    session = Path(args.session)
    if not session.exists():
        raise FileNotFoundError(f"session file {session} not found")
    rep = wire.replay(session)
    if rep.truncated:
        print(f"warning: {rep.notice}")
    out = Path(cfg.out)
    report = pipeline.analyze(rep.packets, kinds, out)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    _print_report(report)
    print(f"report      {out / 'report.json'}")
    return EXIT_OK


def _print_report(report: dict):
    if "noise" in report:
        n = report["noise"]
        print(f"noise: overall {n['overall_rms_uV']:.3f} uV RMS (1-40 Hz)")
        print(f"  {'channel':<8}{'rms_uV':>10}{'mains_uV':>10}")
        for r in n["rows"]:
            print(f"  {r['channel']:<8}{r['rms_uV']:>10.3f}{r['mains_residual_uV']:>10.4f}")
    if "cmrr" in report:
        for r in report["cmrr"]["rows"]:
            flag = " (floor limited)" if r["floor_limited"] else ""
            print(f"cmrr: {r['hz']:g} Hz  {r['cmrr_db']:.1f} dB{flag}")
    if "bandpower" in report:
        bands = list(report["bandpower"]["bands"])
        print("band power (uV^2): " + "  ".join(f"{b:>8}" for b in bands))
        for r in report["bandpower"]["rows"]:
            print(f"  {r['channel']:<8}" + "  ".join(f"{r[b + '_uV2']:>8.3f}" for b in bands))
    if "detection" in report:
        d = report["detection"]
        if "alpha" in d:
            occ = ",".join(d["alpha"]["occipital"])
            for r in d["alpha"]["rows"]:
                ratio = "inf" if r["ratio"] is None else f"{r['ratio']:.2f}"
                print(f"alpha [{occ}] {r['start']:5.1f}-{r['end']:5.1f} s  ratio {ratio:>8}  {'yes' if r['detected'] else 'no'}")
        for kind in ("chewing", "blinking"):
            for lo, hi in d.get(kind, []):
                print(f"{kind} {lo:.2f}-{hi:.2f} s")


def cmd_impedance(cfg: RunConfig, args) -> int:
    montage = cfg.build_montage()
    acq_cfg = cfg.build_acquisition(**({"lead_off_freq": args.lead_off_freq} if args.lead_off_freq else {}))
    scenario = subject.builtin_scenario("rest", seed=cfg.seed, duration=max(args.seconds, 1.0))
    reports = impedance.measure(montage, acq_cfg, scenario, seconds=args.seconds)
    print(f"{'channel':<8}{'ohms':>12}  {'method':<12}{'quality':<10}")
    for r in reports:
        print(f"{r.channel:<8}{r.ohms:>12.0f}  {r.method:<12}{r.quality.value:<10}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "impedance.json").write_text(json.dumps([r.as_dict() for r in reports], indent=2))
    return EXIT_OK


def cmd_budget(cfg: RunConfig, args) -> int:
    b = power.budget(args.capacity, args.draw)
    print(b.table())
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, *, network=False, run=True):
    p.add_argument("--config", help=f"YAML run config (default: ${CONFIG_ENV})")
    p.add_argument("--out", help="output directory")
    if run:
        p.add_argument("--scenario", help=f"built-in name {list(subject.BUILTIN_SCENARIOS)} or YAML path")
        p.add_argument("--montage", help="montage YAML path")
        p.add_argument("--electrode", choices=["gel", "dry", "shorted"], help="electrode kind for the default montage")
        p.add_argument("--rate", type=int, help="samples per second (250, 500, 1000)")
        p.add_argument("--gain", type=int, help="PGA gain")
        p.add_argument("--devices", type=int, help="daisy-chained converters (1-3)")
        p.add_argument("--seed", type=int)
        p.add_argument("--duration", type=float, help="seconds")
        p.add_argument("--sensor-profile", dest="sensor_profile")
    if network:
        p.add_argument("--host")
        p.add_argument("--port", type=int)
    p.add_argument("--fast", action="store_true", help="no real-time pacing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ironstream", description="EEG acquisition emulator and streaming toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the chain offline and write a session file")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="stream the chain over TCP")
    _common(p, network=True)
    p.add_argument("--autostart", action="store_true", help="stream without waiting for START")
    p.add_argument("--exit-when-done", action="store_true", help="exit after --duration seconds of frames")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("record", help="record a live stream to a session file")
    _common(p, network=True, run=False)
    p.add_argument("--duration", type=float, help="seconds of frames to record")
    p.add_argument("--no-start", action="store_true", help="do not send START/STOP")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("analyze", help="noise, CMRR, band-power and detection reports")
    p.add_argument("session")
    p.add_argument("--report", help=f"comma list of {list(pipeline.REPORT_KINDS)} (default all)")
    _common(p, run=False)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("impedance", help="lead-off impedance table")
    _common(p)
    p.add_argument("--lead-off-freq", choices=[f.value for f in ads1299.LeadOffFreq])
    p.add_argument("--seconds", type=float, default=1.0)
    p.set_defaults(func=cmd_impedance)

    p = sub.add_parser("budget", help="battery runtime from capacity and draw")
    p.add_argument("--capacity", type=float, required=True, help="mAh")
    p.add_argument("--draw", type=float, help="mA (default: sum of component draws)")
    p.set_defaults(func=cmd_budget, config=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args) if args.command != "budget" else RunConfig()
        return args.func(cfg, args)
    except ValidationFailed as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except wire.ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IronstreamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
