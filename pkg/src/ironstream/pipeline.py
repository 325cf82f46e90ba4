"""Offline runs of the full chain and the analysis reports built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, sensors, subject, wire
from .ads1299 import Acquisition, AcquisitionConfig, to_microvolts
from .afe import BiasLoopSpec

REPORT_KINDS = ("noise", "cmrr", "bandpower", "detection")
BANDS = {
    "delta": (1.0, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 14.0),
    "beta": (14.0, 30.0),
    "gamma": (30.0, 40.0),
}


def scenario_to_dict(sc: subject.SignalScenario) -> dict:
    return {
        "duration": sc.duration,
        "events": [{"start": e.start, "end": e.end, "kind": e.kind.value} for e in sc.events],
        "mains_hz": sc.mains_hz,
        "mains_amplitude": sc.mains_amplitude,
        "background_noise_density": sc.background_noise_density,
        "alpha_amplitude": sc.alpha_amplitude,
        "alpha_hz": sc.alpha_hz,
        "seed": sc.seed,
        "chew_amplitude": sc.chew_amplitude,
        "chew_band": list(sc.chew_band),
        "blink_amplitude": sc.blink_amplitude,
        "blink_width": sc.blink_width,
        "blink_interval": sc.blink_interval,
        "blink_spread": sc.blink_spread,
        "common_mode_tones": [list(t) for t in sc.common_mode_tones],
    }


def _electrode_dict(e: subject.ElectrodeModel) -> dict:
    return {
        "label": e.label,
        "kind": e.kind.value,
        "contact_impedance": e.contact_impedance,
        "half_cell_offset": e.half_cell_offset,
    }


def montage_to_dict(m: subject.Montage) -> dict:
    return {
        "channels": [_electrode_dict(e) for e in m.channels],
        "reference": _electrode_dict(m.reference),
        "bias": _electrode_dict(m.bias),
        "occipital": sorted(m.occipital_set),
        "frontal": sorted(m.frontal_set),
    }


def session_metadata(scenario, montage, cfg: AcquisitionConfig, bias: BiasLoopSpec, frames_per_packet=1, sensors_on=True) -> dict:
    return {
        "rate": cfg.rate,
        "gain": cfg.gain,
        "gains": [cfg.gain] * cfg.n_channels,
        "vref": cfg.vref,
        "devices": cfg.devices,
        "labels": montage.labels,
        "lead_off": bool(cfg.lead_off_channels),
        "sensors": sensors_on,
        "frames_per_packet": frames_per_packet,
        "montage": montage_to_dict(montage),
        "scenario": scenario_to_dict(scenario),
        "bias": {"enabled": bias.enabled, "loop_rejection_db": bias.loop_rejection_db},
    }


@dataclass
class Simulation:
    packets: list[wire.Packet]
    meta: dict
    frames: int
    sensor_records: int
    saturation_counts: np.ndarray
    warnings: list[str] = field(default_factory=list)


def simulate_packets(
    scenario: subject.SignalScenario,
    montage: subject.Montage,
    cfg: AcquisitionConfig | None = None,
    bias: BiasLoopSpec | None = None,
    duration: float | None = None,
    sensor_profile: sensors.SensorProfile | None = None,
    sensor_rate: float = 1.0,
    sensors_on: bool = True,
    frames_per_packet: int = 1,
) -> Simulation:
    """Run the chain as fast as possible and packetize it like the server.

    Packet order: META, then DATA and SENSOR packets by timestamp with DATA
    first on ties. Each packet type numbers from 0.
    """
    cfg = cfg or AcquisitionConfig()
    bias = bias or BiasLoopSpec()
    duration = scenario.duration if duration is None else duration
    acq = Acquisition(scenario, montage, cfg, bias)
    n = subject.n_samples(duration, cfg.rate)
    data: list[wire.Packet] = []
    for lo in range(0, n, cfg.rate):
        block = acq.read_block(min(cfg.rate, n - lo))
        data += wire.data_packets(block, len(data), frames_per_packet)
    sensor: list[wire.Packet] = []
    if sensors_on:
        bus = sensors.build_board(sensor_profile)
        for k, t in enumerate(sensors.poll_schedule(duration, sensor_rate)):
            frame = sensors.poll_sensors(bus, t)
            sensor.append(wire.Packet(wire.PacketType.SENSOR, k, int(round(t * 1e6)), wire.encode_sensor(frame)))
    meta = session_metadata(scenario, montage, cfg, bias, frames_per_packet, sensors_on)
    merged = sorted(
        [(p.timestamp_us, 0, p.seq, p) for p in data] + [(p.timestamp_us, 1, p.seq, p) for p in sensor],
        key=lambda x: x[:3],
    )
    packets = [wire.Packet(wire.PacketType.META, 0, 0, wire.encode_meta(meta))] + [x[3] for x in merged]
    return Simulation(packets, meta, n, len(sensor), acq.saturation_counts.copy(), list(acq.warnings))


# --- analysis ------------------------------------------------------------------


def montage_from_meta(meta: dict) -> subject.Montage:
    if "montage" in meta:
        return subject.montage_from_dict(meta["montage"])
    labels = meta["labels"]
    return subject.Montage(
        channels=tuple(subject.ElectrodeModel(label) for label in labels),
        occipital_set=frozenset({"O1", "O2", "Oz"}.intersection(labels)),
        frontal_set=frozenset({"Fp1", "Fp2"}.intersection(labels)),
    )


def session_volts(packets) -> tuple[np.ndarray, dict]:
    """DATA packets decoded to volts ``(channels, n)`` using the meta packet."""
    packets = list(packets)
    meta = wire.session_meta(packets)
    gains = np.asarray(meta.get("gains") or [meta["gain"]] * len(meta["labels"]), dtype=float)
    blocks = [wire.decode_data(p.payload)[1] for p in packets if p.ptype is wire.PacketType.DATA]
    codes = np.vstack(blocks) if blocks else np.zeros((0, len(gains)), dtype=np.int64)
    return (to_microvolts(codes, gains, float(meta["vref"])) * 1e-6).T, meta


def _config_from_meta(meta) -> AcquisitionConfig:
    return AcquisitionConfig(rate=int(meta["rate"]), gain=int(meta["gain"]), vref=float(meta["vref"]), devices=int(meta.get("devices", 1)))


def analyze(packets, kinds=REPORT_KINDS, out_dir=None) -> dict:
    """Build the requested reports; with ``out_dir`` also write plot data.

    Files: ``report.json`` is left to the caller; ``traces.tsv`` (bandpassed
    microvolts per channel), ``psd.tsv`` (uV^2/Hz per channel) and, for the
    detection report, ``alpha_windows.tsv``.
    """
    unknown = set(kinds) - set(REPORT_KINDS)
    if unknown:
        raise ValueError(f"unknown report kind(s) {sorted(unknown)}; choose from {list(REPORT_KINDS)}")
    volts, meta = session_volts(packets)
    rate = int(meta["rate"])
    labels = list(meta["labels"])
    montage = montage_from_meta(meta)
    scenario = meta.get("scenario", {})
    filtered = dsp.bandpass(volts, rate=rate)
    spectrum = dsp.psd(filtered, rate)
    report: dict = {"rate": rate, "frames": int(volts.shape[1]), "channels": labels}

    if "noise" in kinds:
        mains_hz = float(scenario.get("mains_hz", 50))
        rows = []
        for ch, label in enumerate(labels):
            rows.append({
                "channel": label,
                "rms_uV": dsp.rms(filtered[ch]) * 1e6,
                "mains_residual_uV": dsp.tone_amplitude(volts[ch], rate, mains_hz) / math.sqrt(2) * 1e6,
            })
        report["noise"] = {"overall_rms_uV": dsp.rms(filtered) * 1e6, "mains_hz": mains_hz, "rows": rows}

    if "cmrr" in kinds:
        tones = []
        if scenario.get("mains_amplitude"):
            tones.append((float(scenario["mains_hz"]), float(scenario["mains_amplitude"])))
        tones += [tuple(t) for t in scenario.get("common_mode_tones", [])]
        cfg = _config_from_meta(meta)
        rows = []
        for hz, amp in tones:
            est = dsp.cmrr_estimate(volts, cfg, amp, hz)
            rows.append({"hz": hz, "cm_amplitude": amp, "cmrr_db": est.db, "residual_amplitude": est.residual_amplitude, "floor_limited": est.floor_limited})
        report["cmrr"] = {"rows": rows}

    if "bandpower" in kinds:
        rows = []
        for ch, label in enumerate(labels):
            row = {"channel": label}
            for name, (lo, hi) in BANDS.items():
                row[f"{name}_uV2"] = float(dsp.band_power(spectrum, lo, hi)[ch]) * 1e12
            rows.append(row)
        report["bandpower"] = {"bands": BANDS, "rows": rows}

    if "detection" in kinds:
        det: dict = {"events": scenario.get("events", [])}
        if montage.occipital_set and volts.shape[1] >= 2 * rate:
            windows = dsp.detect_alpha(filtered, rate, montage)
            det["alpha"] = {
                "occipital": sorted(montage.occipital_set),
                "rows": [{"start": w.start, "end": w.end, "ratio": w.ratio if math.isfinite(w.ratio) else None, "detected": w.detected} for w in windows],
            }
        det["chewing"] = [list(iv) for iv in dsp.detect_chew(volts, rate)]
        if montage.frontal_set:
            det["blinking"] = [list(iv) for iv in dsp.detect_blink(volts, rate, montage)]
        report["detection"] = det

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        t = np.arange(volts.shape[1]) / rate
        wire.write_columns(out / "traces.tsv", ["t_seconds"] + [f"{c}_uV" for c in labels], np.column_stack([t, filtered.T * 1e6]))
        wire.write_columns(out / "psd.tsv", ["freq_hz"] + [f"{c}_uV2_per_hz" for c in labels], np.column_stack([spectrum.freqs, spectrum.power.T * 1e12]))
        if "detection" in report and "alpha" in report["detection"]:
            rows = report["detection"]["alpha"]["rows"]
            table = np.array([[r["start"], r["end"], math.inf if r["ratio"] is None else r["ratio"], float(r["detected"])] for r in rows]).reshape(-1, 4)
            wire.write_columns(out / "alpha_windows.tsv", ["start_s", "end_s", "ratio", "detected"], table)
    return report
