"""Main code paths against the plain reference implementations in ``conformance``.

Each ``check_*`` runs ``n`` seeded random cases and returns the number of
cases checked; the acceptance suite reuses them.
"""

import math
import warnings

import numpy as np
import pytest

import conformance as oc
from ironstream import dsp, wire
from ironstream.ads1299 import GAINS, AcquisitionConfig, FrameBlock, convert, status_word
from ironstream.afe import AliasingWarning, RcFilterSpec, apply_afe
from ironstream.impedance import estimate_impedance

N_CASES = 1000



def check_bandpass_design(n=N_CASES, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        rate = float(rng.choice([250, 500, 1000]))
        lo = rng.uniform(0.5, 10)
        hi = rng.uniform(lo + 5, 0.3 * rate)
        order = int(rng.integers(1, 7))
        f = rng.uniform(0.01, rate / 2 - 0.01, 16)
        spec = dsp.BandpassSpec(lo, hi, order)
        got = dsp.bandpass_response(spec, f, rate)
        want = oc.oracle_butter_bandpass_zero_phase(f, lo, hi, order, rate)
        np.testing.assert_allclose(got, want, atol=1e-9)
        edges = dsp.bandpass_response(spec, [lo, hi], rate)
        np.testing.assert_allclose(edges, 1 / math.sqrt(2), atol=1e-9)
    return n


def _decay_taps(sos, floor=1e-15):
    poles = np.concatenate([np.roots(s[3:]) for s in sos])
    radius = float(np.max(np.abs(poles)))
    return int(math.log(floor) / math.log(radius)) + 64


def check_zero_phase_interior(n=N_CASES, seed=2, designs=10, points=3):
    rng = np.random.default_rng(seed)
    per = -(-n // designs)
    for _ in range(designs):
        rate = float(rng.choice([250, 500]))
        spec = dsp.BandpassSpec(rng.uniform(1, 6), rng.uniform(20, 45), int(rng.integers(2, 5)))
        sos = dsp.bandpass_design(spec, rate)
        taps = _decay_taps(sos)
        kernel = oc.oracle_zero_phase_kernel(sos, taps)
        length = 2 * taps + 64
        for _ in range(per):
            x = rng.standard_normal(length)
            got = dsp.bandpass(x, spec, rate)
            idx = rng.integers(taps, length - taps, points)
            want = [oc.oracle_zero_phase_interior(x, sos, i, i + 1, taps, kernel)[0] for i in idx]
            np.testing.assert_allclose(got[idx], want, atol=1e-9)
    return designs * per


def check_notch(n=N_CASES, seed=3):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        rate = float(rng.choice([250, 500, 1000]))
        mains = float(rng.choice([50.0, 60.0])) if rng.random() < 0.5 else rng.uniform(5, rate / 2 - 5)
        q = rng.uniform(5, 60)
        f = rng.uniform(0, rate / 2, 16)
        got = dsp.notch_response(mains, q, f, rate)
        np.testing.assert_allclose(got, oc.oracle_notch_power(f, mains, q, rate), atol=1e-9)
    return n


def check_welch(n=N_CASES, seed=4):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        rate = int(rng.choice([16, 25, 32, 50]))
        x = rng.standard_normal(int(rng.integers(rate // 2, 6 * rate)))
        p = dsp.psd(x, rate)
        freqs, want = oc.oracle_welch(x, rate)
        np.testing.assert_allclose(p.freqs, freqs, atol=1e-12)
        np.testing.assert_allclose(p.power, want, rtol=1e-9, atol=1e-12)
    return n


def check_parseval(n=N_CASES, seed=5):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        x = rng.standard_normal(int(rng.integers(2, 64)))
        spec = oc.oracle_dft(x)
        assert math.isclose(np.sum(np.abs(spec) ** 2) / len(x), math.fsum(x * x), rel_tol=1e-9)
    return n


def check_rms(n=N_CASES, seed=6):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        x = rng.normal(rng.uniform(-1e-3, 1e-3), rng.uniform(1e-7, 1e-3), int(rng.integers(1, 2000)))
        assert math.isclose(dsp.rms(x), oc.oracle_rms(x), rel_tol=1e-9, abs_tol=1e-15)
    return n


def check_crc(n=N_CASES, seed=7):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        data = rng.bytes(int(rng.integers(0, 300)))
        assert wire.crc16(data) == oc.oracle_crc(data)
    return n


def check_rc(n=N_CASES, seed=8):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        rate = float(rng.choice([250, 500, 1000, 16_000]))
        cutoff = rng.uniform(1, 2000)
        x = rng.standard_normal(int(rng.integers(1, 200)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AliasingWarning)
            got = np.ravel(apply_afe(x, RcFilterSpec(cutoff), rate))
        np.testing.assert_allclose(got, oc.oracle_rc(x, cutoff, rate), atol=1e-12)
    return n


def check_convert(n=N_CASES, seed=9):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        gain = int(rng.choice(GAINS))
        vref = float(rng.choice([2.4, 4.0, 4.5]))
        lsb = vref / (gain * (2**23 - 1))
        if rng.random() < 0.3:
            v = (int(rng.integers(-(2**23), 2**23)) + 0.5) * lsb
        else:
            v = rng.uniform(-1.2, 1.2) * vref / gain
        assert convert(v, gain, vref) == oc.oracle_convert(v, gain, vref)
    return n


def check_impedance(n=N_CASES, seed=10):
    rng = np.random.default_rng(seed)
    for k in range(n):
        freq = "dc" if k % 2 == 0 else "fs_over_4"
        current = float(rng.choice([6e-9, 24e-9]))
        cfg = AcquisitionConfig(lead_off_freq=freq, lead_off_current=current, lead_off_channels={0})
        z = rng.uniform(100, 2e5)
        start = int(rng.integers(0, 1000))
        v, z_want = oc.oracle_impedance(z, current)
        idx = np.arange(start, start + cfg.rate)
        pattern = np.ones(cfg.rate) if freq == "dc" else np.where(idx % 4 < 2, 1.0, -1.0)
        codes = convert((v * pattern).reshape(-1, 1), cfg.gain, cfg.vref)
        status = np.full(cfg.rate, status_word(0, 0))
        block = FrameBlock(start, cfg.rate, codes, status, status[:, None])
        rep = estimate_impedance(block, cfg, 0, rc=RcFilterSpec(1e12))
        # one LSB of the excitation voltage is the quantization limit
        assert abs(rep.ohms - z_want) <= cfg.vref / (cfg.gain * (2**23 - 1)) / current
    return n


CHECKS = {
    "bandpass_design": check_bandpass_design,
    "zero_phase_interior": check_zero_phase_interior,
    "notch": check_notch,
    "welch": check_welch,
    "parseval": check_parseval,
    "rms": check_rms,
    "crc": check_crc,
    "rc": check_rc,
    "convert": check_convert,
    "impedance": check_impedance,
}


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_against_oracle(name):
    assert CHECKS[name]() >= N_CASES


class TestOracleExamples:
    def test_dft_ten_hertz_bin(self):
        rate, n = 100, 100
        x = np.sin(2 * np.pi * 10 * np.arange(n) / rate)
        mag = np.abs(oc.oracle_dft(x))
        assert int(np.argmax(mag[: n // 2])) == 10
        assert mag[10] == pytest.approx(n / 2, rel=1e-9)

    def test_crc_check_value(self):
        assert oc.oracle_crc(b"123456789") == 0x29B1 == wire.crc16(b"123456789")

    def test_ohms_law(self):
        v, z = oc.oracle_impedance(6000, 24e-9)
        assert v == pytest.approx(144e-6) and z == pytest.approx(6000)

    def test_bandpass_oracle_edges(self):
        h = oc.oracle_butter_bandpass_zero_phase([1.0, 40.0], 1.0, 40.0, 4, 250)
        np.testing.assert_allclose(h, 1 / math.sqrt(2), rtol=1e-12)

    def test_rc_oracle_step(self):
        y = oc.oracle_rc(np.ones(2000), 10, 1000)
        assert y[-1] == pytest.approx(1.0, abs=1e-12)

    def test_convert_oracle_rails(self):
        assert oc.oracle_convert(10.0, 1, 4.5) == 2**23 - 1
        assert oc.oracle_convert(-10.0, 1, 4.5) == -(2**23)
