import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hubbardkit.circuit import ModePermutation, build_echo_circuit, build_trotter_circuit
from hubbardkit.mitigation import (
    ConfusionSet,
    MitigationError,
    apply_rem,
    build_confusion,
    decay_recovery,
    echo_factors,
    postselect,
    rem_z_expectations,
    report_csv,
)
from hubbardkit.model import UP, FockState, HubbardParams, mode_index, neel_state
from hubbardkit.shots import ShotTable
from hubbardkit.statevector import (
    NoiseModel,
    StateVector,
    sample,
    sample_probabilities,
    sample_steps,
    step_distributions,
    trotter_occupations,
)


def all_state(width: int, bit: int) -> StateVector:
    psi = np.zeros(1 << width, dtype=complex)
    psi[(1 << width) - 1 if bit else 0] = 1
    return StateVector(width, psi)


class TestConfusion:
    def test_noiseless_is_identity(self):
        cs = build_confusion(sample(all_state(4, 0), 100), sample(all_state(4, 1), 100))
        np.testing.assert_array_equal(cs.matrices, np.tile(np.eye(2), (4, 1, 1)))

    def test_recovers_injected_rate(self):
        n = 16384
        noise = NoiseModel(p10=0.02, p01=0.05)
        cs = build_confusion(sample(all_state(6, 0), n, noise, seed=1), sample(all_state(6, 1), n, noise, seed=2))
        assert np.all(np.abs(cs.p10 - 0.02) < 3 * math.sqrt(0.02 * 0.98 / n))
        assert np.all(np.abs(cs.p01 - 0.05) < 3 * math.sqrt(0.05 * 0.95 / n))

    def test_published_rate_range_invertible(self):
        cs = ConfusionSet.from_rates(np.linspace(0.0006, 0.097, 8), np.linspace(0.097, 0.0006, 8))
        assert cs.is_invertible()
        assert np.all(cs.marginal([0, 3, 7]).sum(axis=0) == pytest.approx(1))

    def test_validation(self):
        with pytest.raises(ValueError):
            build_confusion(ShotTable(2, {}), ShotTable(2, {3: 5}))
        with pytest.raises(ValueError):
            build_confusion(ShotTable(2, {0: 5}), ShotTable(3, {7: 5}))
        with pytest.raises(ValueError):
            ConfusionSet(np.array([[[0.9, 0.2], [0.2, 0.8]]]))

    def test_marginal_ordering(self):
        cs = ConfusionSet.from_rates([0.1, 0.3], [0.0, 0.0])
        a = cs.marginal([0, 1])
        # outcome index bit 0 is qubit 0: prepared |00>, read qubit 0 as 1 only
        assert a[0b01, 0] == pytest.approx(0.1 * 0.7)
        assert a[0b10, 0] == pytest.approx(0.9 * 0.3)


class TestRem:
    def test_identity_confusion(self):
        shots = ShotTable(3, {0b000: 30, 0b101: 50, 0b011: 20})
        r = apply_rem(shots, [0, 2], ConfusionSet.from_rates(0.0, 0.0, 3))
        assert r.estimate.value == pytest.approx(r.raw.value)
        assert r.clipped_mass == 0

    def test_symmetric_flip_exact_counts(self):
        p, n = 0.1, 10000
        shots = ShotTable(1, {0: int(n * (1 - p)), 1: int(n * p)})
        r = apply_rem(shots, [0], ConfusionSet.from_rates(p, p))
        assert r.raw.value == pytest.approx(1 - 2 * p)
        assert r.estimate.value == pytest.approx(1.0)

    def test_symmetric_flip_sampled(self):
        p, n = 0.08, 20000
        psi = np.array([math.sqrt(0.8), math.sqrt(0.2)], dtype=complex)
        shots = sample(StateVector(1, psi), n, NoiseModel(p10=p, p01=p), seed=3)
        r = apply_rem(shots, [0], ConfusionSet.from_rates(p, p))
        assert abs(r.raw.value - (1 - 2 * p) * 0.6) < 3 * r.raw.std_err
        assert abs(r.estimate.value - 0.6) < 3 * r.estimate.std_err

    @given(st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
    def test_two_qubit_channel_inverted(self, a0, b0, a1, b1):
        cs = ConfusionSet.from_rates([a0, a1], [b0, b1])
        true = np.array([0.4, 0.1, 0.2, 0.3])
        noisy = cs.marginal([0, 1]) @ true
        scale = 10**9
        shots = ShotTable(2, {k: int(round(v * scale)) for k, v in enumerate(noisy)})
        r = apply_rem(shots, [0, 1], cs)
        zz = np.array([1, -1, -1, 1])
        assert r.estimate.value == pytest.approx(zz @ true, abs=1e-6)

    def test_singular_confusion(self):
        with pytest.raises(MitigationError):
            apply_rem(ShotTable(1, {0: 3}), [0], ConfusionSet.from_rates(0.5, 0.5))

    def test_support_checks(self):
        shots = ShotTable(2, {0: 1})
        cs = ConfusionSet.from_rates(0.01, 0.01, 2)
        for bad in ([], [0, 0], [2]):
            with pytest.raises(MitigationError):
                apply_rem(shots, bad, cs)

    def test_clipping(self):
        shots = ShotTable(1, {0: 100})
        r = apply_rem(shots, [0], ConfusionSet.from_rates(0.1, 0.1))
        assert r.clipped_mass == pytest.approx(0.125)
        assert r.estimate.value == pytest.approx(1.0)

    def test_noisy_pipeline_improves(self):
        p = HubbardParams(L=4, U=2.0)
        s = neel_state(4)
        c = build_trotter_circuit(p, 0.2, 10, s)
        ref = trotter_occupations(p, 0.2, 10, s)
        noise = NoiseModel(p10=0.03, p01=0.06, seed=1)
        cs = ConfusionSet.from_rates(0.03, 0.06, 8)
        raw_err, rem_err = [], []
        for step, table in enumerate(sample_steps(c, 8000, noise=noise, seed=9)):
            perm = c.perm_after(step).canonical()
            zs, _ = rem_z_expectations(table, cs)
            raw = np.array([apply_rem(table, [q], cs).raw.value for q in range(8)])
            canon = np.empty(8), np.empty(8)
            for q, m in enumerate(perm):
                canon[0][m] = (1 - raw[q]) / 2
                canon[1][m] = (1 - zs[q].value) / 2
            raw_err.append(np.sqrt(np.mean((canon[0] - ref[step]) ** 2)))
            rem_err.append(np.sqrt(np.mean((canon[1] - ref[step]) ** 2)))
        assert np.mean(rem_err) < np.mean(raw_err)


class TestDecayRecovery:
    def test_no_confidence_is_identity(self):
        raw = np.array([0.9, 0.5, 0.3])
        out, _ = decay_recovery(raw, [0.8, 0.0, 0.6], [1.0, 1.0, 1.0], c=0.0)
        np.testing.assert_array_equal(out, raw)

    def test_worked_value(self):
        out, fac = decay_recovery([0.4], [0.8], [1.0], c=0.5)
        assert out[0] == pytest.approx(0.4 / 0.9)
        assert fac.d[0] == pytest.approx(0.8)

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=9), st.floats(0, 1))
    def test_unit_damping_is_identity(self, raw, c):
        n = len(raw)
        out, _ = decay_recovery(raw, np.ones(n), np.ones(n), c)
        np.testing.assert_allclose(out, raw)

    def test_odd_interpolation(self):
        fac = echo_factors({0: 1.0, 2: 0.8, 4: 0.6}, np.ones(6), 5)
        np.testing.assert_allclose(fac.d, [1.0, 0.9, 0.8, 0.7, 0.6, 0.6])
        assert list(fac.interpolated) == [False, True, False, True, False, True]

    def test_ideal_sign_divides_out(self):
        fac = echo_factors([-0.7, 0, -0.5], [-1.0, -1.0, -1.0], 2)
        np.testing.assert_allclose(fac.d, [0.7, 0.6, 0.5])

    def test_vanishing_ideal_skipped(self, caplog):
        with caplog.at_level(logging.WARNING):
            out, fac = decay_recovery([0.3, 0.2, 0.1], [0.5, 0, 0.5], [1.0, 0.0, 1.0])
        assert out[1] == 0.2 and not fac.valid[1]
        assert "skipped at step 1" in caplog.text

    def test_validation(self):
        with pytest.raises(ValueError):
            decay_recovery([0.1], [1.0], [1.0], c=1.5)
        with pytest.raises(ValueError):
            echo_factors({0: 1.0}, np.ones(3), 2)

    def test_echo_ideal_equals_initial(self):
        s = neel_state(3)
        c = build_echo_circuit(HubbardParams(L=3, U=4.0), 0.2, 4, s)
        dist = step_distributions(c)[-1]
        assert dist[s.index] == pytest.approx(1.0)


class TestPostselect:
    def test_neel_kept(self):
        s = neel_state(4)
        res = postselect(ShotTable(8, {s.index: 10}), s.n_up, s.n_down)
        assert res.discard_rate == 0 and res.k_counts == {0: 10}

    def test_extra_up_particle(self):
        L = 30
        s = neel_state(L)
        assert (s.n_up, s.n_down) == (15, 15)
        empty_up = next(i for i in range(L) if not s.occupation(i, UP))
        bad = s.index | (1 << mode_index(empty_up, UP, L))
        res = postselect(ShotTable(2 * L, {s.index: 3, bad: 1}), 15, 15)
        assert res.k_counts == {0: 3, 1: 1}
        assert res.discard_rate == pytest.approx(0.25)
        assert res.kept.counts == {s.index: 3}

    def test_noiseless_run_discards_nothing(self):
        s = neel_state(3)
        c = build_trotter_circuit(HubbardParams(L=3, U=4.0), 0.2, 6, s)
        for step, table in enumerate(sample_steps(c, 2000, seed=1)):
            assert postselect(table, s.n_up, s.n_down, c.perm_after(step)).discard_rate == 0

    def test_mode_perm_matters(self):
        # qubits 0,1 hold (0, up), (0, down) after a swap of site 0's labels
        perm = ModePermutation.identity(2).swap(0, 1)
        table = ShotTable(4, {0b0010: 1})
        assert postselect(table, 0, 1, perm).discard_rate == 0
        assert postselect(table, 0, 1).discard_rate == 1

    @given(st.dictionaries(st.integers(0, 255), st.integers(1, 20), min_size=1))
    def test_never_adds_bitstrings(self, counts):
        table = ShotTable(8, counts)
        res = postselect(table, 2, 2)
        assert len(res.kept) <= len(table)
        assert res.kept.total + round(res.discard_rate * table.total) == table.total
        assert res.cdf()[-1][1] == pytest.approx(1.0)

    def test_discards_grow_with_depth(self):
        s = neel_state(3)
        noise = NoiseModel(p_dep2q=0.02, seed=4)
        rates = []
        for n in (2, 4, 6, 8, 10):
            c = build_trotter_circuit(HubbardParams(L=3, U=4.0), 0.2, n, s)
            p = step_distributions(c, noise=noise, n_trajectories=150)[-1]
            table = sample_probabilities(p, 4000, 6, seed=n)
            rates.append(postselect(table, s.n_up, s.n_down, c.mode_perm).discard_rate)
        assert np.polyfit(np.arange(5), rates, 1)[0] > 0
        assert rates[-1] > rates[0]

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            postselect(ShotTable(4, {0: 1}), 1, 1, ModePermutation.identity(3))


def test_report_csv():
    text = report_csv([{"step": 0, "raw": 0.5, "rem": 0.52, "decay_recovered": 0.55, "postselect_discard_rate": 0.0, "clipped_mass": 0.0}, {"step": 1, "raw": 0.4}])
    lines = text.splitlines()
    assert lines[0] == "step,raw,rem,decay_recovered,postselect_discard_rate,clipped_mass"
    assert lines[1] == "0,0.5,0.52,0.55,0,0"
    assert lines[2] == "1,0.4,,,,"
