import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conformance import oracle_dft, oracle_hann_periodogram
from ironstream import subject
from ironstream.errors import ConfigurationError
from ironstream.subject import (
    ElectrodeKind,
    ElectrodeModel,
    Event,
    EventKind,
    Montage,
    SignalScenario,
    builtin_scenario,
    default_montage,
    electrode_divider,
    synthesize,
    synthesize_block,
)


def silent(duration=2.0, **kw):
    return SignalScenario(duration, background_noise_density=0.0, **kw)


class TestElectrodeModel:
    def test_kind_defaults(self):
        assert ElectrodeModel("Fp1", "dry").contact_impedance == 200_000.0
        assert ElectrodeModel("Fp1", "gel").contact_impedance == 5_000.0
        assert ElectrodeModel("Fp1", "shorted").contact_impedance == 0.0

    def test_override(self):
        assert ElectrodeModel("Fp1", "gel", 6_000).contact_impedance == 6_000.0

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_non_shorted_needs_positive_impedance(self, z):
        with pytest.raises(ConfigurationError):
            ElectrodeModel("Fp1", "gel", z)

    def test_shorted_must_be_zero(self):
        with pytest.raises(ConfigurationError):
            ElectrodeModel("Fp1", "shorted", 10.0)


class TestScenario:
    def test_overlapping_events_rejected(self):
        with pytest.raises(ConfigurationError):
            SignalScenario(10, events=(Event(1, 4, "chewing"), Event(3, 5, "chewing")))

    def test_overlap_allowed_across_kinds(self):
        SignalScenario(10, events=(Event(1, 4, "chewing"), Event(3, 5, "blinking")))

    @pytest.mark.parametrize("start,end", [(-1, 2), (2, 2), (3, 11)])
    def test_event_bounds(self, start, end):
        with pytest.raises(ConfigurationError):
            SignalScenario(10, events=(Event(start, end, "blinking"),))

    @pytest.mark.parametrize("hz", [7.9, 14.1])
    def test_alpha_range(self, hz):
        with pytest.raises(ConfigurationError):
            SignalScenario(10, alpha_hz=hz)

    def test_mains_menu(self):
        with pytest.raises(ConfigurationError):
            SignalScenario(10, mains_hz=55)

    def test_builtin_device_check_timeline(self):
        sc = builtin_scenario("device_check")
        assert [e.kind for e in sc.events] == [EventKind.EYES_CLOSED, EventKind.CHEWING, EventKind.BLINKING]

    def test_unknown_builtin(self):
        with pytest.raises(ConfigurationError):
            builtin_scenario("sleeping")


class TestMontage:
    def test_labels_unique(self):
        with pytest.raises(ConfigurationError):
            Montage((ElectrodeModel("O1"), ElectrodeModel("O1")))

    def test_reference_is_single_electrode(self, montage8):
        assert isinstance(montage8.reference, ElectrodeModel)
        assert montage8.reference.label not in montage8.labels

    @pytest.mark.parametrize("n", [8, 16, 24])
    def test_default_has_regions(self, n):
        m = default_montage(n)
        assert len(m.channels) == n and m.occipital_set and m.frontal_set

    def test_unknown_region_label(self):
        with pytest.raises(ConfigurationError):
            Montage((ElectrodeModel("O1"),), occipital_set={"O9"})


class TestSynthesize:
    def test_silence_is_zero(self, montage8):
        assert not np.any(synthesize(silent(), montage8, 250))

    def test_alpha_on_occipital_only(self, montage8):
        sc = silent(4.0, events=(Event(1.0, 3.0, "eyes_closed"),), alpha_amplitude=20e-6, alpha_hz=10)
        x = synthesize(sc, montage8, 250)
        occ = montage8.indices(montage8.occipital_set)
        front = montage8.indices(montage8.frontal_set)
        seg = x[occ[0], 250:750]
        t = np.arange(500) / 250
        amp = np.linalg.lstsq(np.column_stack([np.sin(20 * np.pi * t), np.cos(20 * np.pi * t)]), seg, rcond=None)[0]
        assert math.hypot(*amp) == pytest.approx(20e-6, rel=1e-9)
        assert not np.any(x[front])
        assert not np.any(x[occ[0], :250])

    def test_seeded_determinism(self, montage8):
        sc = builtin_scenario("device_check", seed=7)
        assert np.array_equal(synthesize(sc, montage8, 250), synthesize(sc, montage8, 250))

    def test_seeds_differ(self, montage8):
        a = synthesize(builtin_scenario("rest", seed=1), montage8, 250)
        b = synthesize(builtin_scenario("rest", seed=2), montage8, 250)
        assert not np.array_equal(a, b)

    def test_unsupported_rate(self, montage8):
        with pytest.raises(ConfigurationError):
            synthesize(silent(), montage8, 300)

    @given(st.lists(st.integers(1, 700), min_size=1, max_size=6), st.sampled_from([250, 500]))
    def test_blocks_are_bit_exact(self, cuts, rate):
        m = default_montage(8)
        sc = builtin_scenario("device_check", seed=3)
        total = sum(cuts)
        whole = synthesize_block(sc, m, rate, 100, total)
        parts, pos = [], 100
        for c in cuts:
            parts.append(synthesize_block(sc, m, rate, pos, c))
            pos += c
        assert np.array_equal(np.concatenate(parts, axis=1), whole)

    def test_mains_common_mode_exact(self, montage8):
        sc = silent(1.0, mains_amplitude=10e-3, mains_hz=60)
        x = synthesize(sc, montage8, 500)
        assert np.array_equal(x, np.broadcast_to(x[0], x.shape))

    @given(st.floats(8, 14), st.floats(1e-6, 100e-6))
    def test_alpha_energy_placement(self, hz, amp):
        # Periodogram by direct-sum DFT over a 2 s eyes-closed window.
        m = default_montage(8)
        sc = silent(2.0, events=(Event(0.0, 2.0, "eyes_closed"),), alpha_hz=hz, alpha_amplitude=amp)
        x = synthesize(sc, m, 250)[m.indices(m.occipital_set)[0]][:500]
        f, spec = oracle_hann_periodogram(x, 250)
        near = (f >= hz - 1) & (f <= hz + 1)
        assert spec[near].sum() >= 0.99 * spec.sum()

    def test_hann_periodogram_oracle_matches_direct_dft(self):
        x = np.random.default_rng(0).standard_normal(64)
        w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(64) / 64)
        _, spec = oracle_hann_periodogram(x, 250)
        assert np.allclose(spec, np.abs(oracle_dft(w * x)[:33]) ** 2)


class TestDivider:
    def test_gel_attenuation(self):
        v = electrode_divider(100e-6, ElectrodeModel("C3", "gel"), 1e9)
        assert v == pytest.approx(99.9995e-6, rel=1e-9)

    def test_shorted_passthrough(self):
        assert electrode_divider(1.23, ElectrodeModel("C3", "shorted"), 1e9) == 1.23

    def test_equal_impedances_halve(self):
        assert electrode_divider(2.0, ElectrodeModel("C3", "gel", 1e9), 1e9) == pytest.approx(1.0)

    @given(st.floats(1, 1e8), st.floats(1, 1e8))
    def test_monotone_in_contact_impedance(self, z1, z2):
        lo, hi = sorted([z1, z2])
        a = abs(electrode_divider(1e-4, ElectrodeModel("C3", "gel", lo), 1e9))
        b = abs(electrode_divider(1e-4, ElectrodeModel("C3", "gel", hi), 1e9))
        assert b <= a


class TestLoading:
    def test_yaml_round_trip(self, tmp_path):
        (tmp_path / "s.yaml").write_text(
            "duration: 6\nseed: 4\nevents:\n  - {start: 1, end: 3, kind: eyes_closed}\n"
        )
        (tmp_path / "m.yaml").write_text(
            "channels: [Fp1, O1, {label: O2, kind: dry}]\noccipital: [O1, O2]\nfrontal: [Fp1]\n"
        )
        sc = subject.load_scenario(tmp_path / "s.yaml")
        m = subject.load_montage(tmp_path / "m.yaml")
        assert sc.events[0].kind is EventKind.EYES_CLOSED and sc.seed == 4
        assert m.channels[2].kind is ElectrodeKind.DRY and m.occipital_set == {"O1", "O2"}

    def test_unknown_scenario_key(self):
        with pytest.raises(ConfigurationError):
            subject.scenario_from_dict({"duration": 1, "sampling": 3})
