import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from hubbardkit.circuit import Circuit, Gate, ModePermutation, build_echo_circuit, build_trotter_circuit, gate_matrix
from hubbardkit.model import DOWN, UP, FockState, HubbardParams, SizeError, mode_index, neel_state
from hubbardkit.shots import ShotTable
from hubbardkit.statevector import (
    Estimate,
    NoiseModel,
    StateVector,
    apply_gate,
    exact_evolve,
    exact_occupations,
    occupation_values,
    occupations,
    run,
    sample,
    sample_steps,
    sector_basis,
    sector_dimension,
    step_distributions,
    trotter_error_scan,
    trotter_occupations,
    z_estimate,
)


def dense_gate(m: np.ndarray, qubits, n: int) -> np.ndarray:
    """Embed a gate matrix in an n-qubit register by explicit index arithmetic."""
    dim = 1 << n
    out = np.zeros((dim, dim), dtype=complex)
    k = len(qubits)
    for col in range(dim):
        sub = 0
        for pos, q in enumerate(qubits):
            sub |= ((col >> q) & 1) << (k - 1 - pos)
        for row_sub in range(1 << k):
            row = col
            for pos, q in enumerate(qubits):
                bit = (row_sub >> (k - 1 - pos)) & 1
                row = (row & ~(1 << q)) | (bit << q)
            out[row, col] += m[row_sub, sub]
    return out


def random_state(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return v / np.linalg.norm(v)


gate_strategy = st.one_of(
    st.builds(lambda q, t: Gate("RZ", (q,), t), st.integers(0, 3), st.floats(-3, 3)),
    st.builds(lambda q: Gate("X", (q,)), st.integers(0, 3)),
    st.builds(lambda q, t: Gate("RZZ", (q, q + 1), t), st.integers(0, 2), st.floats(-3, 3)),
    st.builds(lambda q, t: Gate("RXXplusYY", (q, q + 1), t), st.integers(0, 2), st.floats(-3, 3)),
    st.builds(lambda q: Gate("FSWAP", (q, q + 1)), st.integers(0, 2)),
)


class TestKernels:
    @given(gate_strategy, st.integers(0, 1000))
    def test_matches_dense_embedding(self, g, seed):
        n = 4
        psi = random_state(n, seed)
        got = psi[None, :].copy()
        apply_gate(got, g, n)
        want = dense_gate(gate_matrix(g), g.qubits, n) @ psi
        np.testing.assert_allclose(got[0], want, atol=1e-12)

    def test_fswap_on_doubly_occupied(self):
        s = FockState((1, 1, 0, 0))
        c = Circuit(4, ((Gate("FSWAP", (0, 1)),),), ModePermutation.identity(2).swap(0, 1))
        out = run(c, s)
        assert out.amplitudes[s.index] == pytest.approx(-1)
        assert out.norm == pytest.approx(1)


class TestRun:
    def test_empty_circuit(self):
        s = neel_state(2)
        c = Circuit(4, (), ModePermutation.identity(2))
        out = run(c, s)
        assert out.amplitudes[s.index] == 1 and out.norm == pytest.approx(1)

    def test_echo_returns_input(self):
        s = neel_state(3)
        out = run(build_echo_circuit(HubbardParams(L=3, U=3.0), 0.2, 6, s))
        assert out.fidelity(StateVector(6, np.eye(64)[s.index])) > 1 - 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_norm_and_number_conserved(self, seed):
        rng = np.random.default_rng(seed)
        L = 3
        s = FockState(tuple(int(b) for b in rng.integers(0, 2, 2 * L)))
        p = HubbardParams(L=L, U=float(rng.uniform(0, 6)), mu=float(rng.uniform(-1, 1)))
        occ = trotter_occupations(p, 0.2, 8, s)
        ups = [mode_index(i, UP, L) for i in range(L)]
        dns = [mode_index(i, DOWN, L) for i in range(L)]
        np.testing.assert_allclose(occ[:, ups].sum(axis=1), s.n_up, atol=1e-10)
        np.testing.assert_allclose(occ[:, dns].sum(axis=1), s.n_down, atol=1e-10)
        circ = build_trotter_circuit(p, 0.2, 8, s)
        assert abs(run(circ).norm - 1) < 1e-9

    def test_neel_occupations(self):
        s = neel_state(3)
        occ = occupation_values(run(Circuit(6, (), ModePermutation.identity(3)), s))
        np.testing.assert_array_equal(occ, s.bits)

    def test_size_cap(self):
        c = build_trotter_circuit(HubbardParams(L=3), 0.1, 1)
        with pytest.raises(SizeError):
            run(c, cap=4)


class TestExactEvolution:
    def test_time_zero(self):
        s = neel_state(3)
        out = exact_evolve(HubbardParams(L=3, U=2.0), s, 0.0)
        assert abs(out.full()[s.index]) == pytest.approx(1)

    @pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 2.2])
    def test_two_site_rabi(self, t):
        s = FockState.from_sites(2, [(0, UP)])
        occ = exact_occupations(HubbardParams(L=2), s, [t])[0]
        assert occ[mode_index(1, UP, 2)] == pytest.approx(math.sin(t) ** 2, abs=1e-12)
        assert occ[mode_index(0, UP, 2)] == pytest.approx(math.cos(t) ** 2, abs=1e-12)

    @pytest.mark.parametrize("L", [3, 4])
    def test_sector_matches_full_space(self, L):
        p = HubbardParams(L=L, U=3.0, mu=0.2)
        s = neel_state(L)
        times = [0.0, 0.5, 1.7]
        full = exact_evolve(p, s, times, sector=False)
        sec = exact_evolve(p, s, times, sector=True)
        for a, b in zip(full, sec):
            np.testing.assert_allclose(b.full(), a.full(), atol=1e-10)

    def test_against_matrix_exponential(self):
        p = HubbardParams(L=2, U=2.5, mu=0.4)
        s = neel_state(2)
        from hubbardkit.model import build_hamiltonian

        h = build_hamiltonian(p).to_matrix(include_constant=True)
        want = sla.expm(-1.3j * h)[:, s.index]
        got = exact_evolve(p, s, 1.3).full()
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_sector_dimension(self):
        assert len(sector_basis(5, 2, 3)) == sector_dimension(5, 2, 3) == 100
        b = sector_basis(4, 2, 2)
        assert np.all(np.diff(b) > 0)

    def test_size_errors(self):
        with pytest.raises(SizeError):
            exact_evolve(HubbardParams(L=9), neel_state(9), 0.1, sector=False)
        with pytest.raises(SizeError):
            exact_evolve(HubbardParams(L=15), neel_state(15), 0.1)
        with pytest.raises(ValueError):
            exact_evolve(HubbardParams(L=3), neel_state(2), 0.1)


class TestSampling:
    def test_basis_state_noiseless(self):
        s = neel_state(2)
        shots = sample(StateVector(4, np.eye(16)[s.index].astype(complex)), 500)
        assert shots.counts == {s.index: 500}

    def test_readout_flips_are_bernoulli(self):
        n = 40000
        shots = sample(StateVector(4, np.eye(16)[0].astype(complex)), n, NoiseModel(p10=0.5), seed=3)
        bits, counts = shots.bit_matrix()
        freq = (bits * counts[:, None]).sum(axis=0) / n
        assert np.all(np.abs(freq - 0.5) < 3 * math.sqrt(0.25 / n))

    def test_asymmetric_readout(self):
        n = 40000
        psi = np.zeros(4, dtype=complex)
        psi[0b10] = 1
        shots = sample(StateVector(2, psi), n, NoiseModel(p10=0.1, p01=0.3), seed=1)
        bits, counts = shots.bit_matrix()
        freq = (bits * counts[:, None]).sum(axis=0) / n
        assert abs(freq[0] - 0.1) < 3 * math.sqrt(0.09 / n)
        assert abs(freq[1] - 0.7) < 3 * math.sqrt(0.21 / n)

    def test_seeded(self):
        sv = StateVector(4, random_state(4, 0))
        assert sample(sv, 1000, seed=7) == sample(sv, 1000, seed=7)
        assert sample(sv, 1000, seed=7) != sample(sv, 1000, seed=8)
        with pytest.raises(ValueError):
            sample(sv, 0)

    @pytest.mark.parametrize("n", [1000, 16000])
    def test_convergence(self, n):
        s = neel_state(2)
        sv = run(build_trotter_circuit(HubbardParams(L=2, U=1.0), 0.3, 3, s))
        exact = occupation_values(sv)
        est = occupations(sample(sv, n, seed=n))
        for e, v in zip(est, exact):
            assert abs(e.value - v) <= 3 * math.sqrt(v * (1 - v) / n) + 1e-12
            assert e.std_err == pytest.approx(math.sqrt(e.value * (1 - e.value) / n))

    def test_step_sampling(self):
        s = neel_state(2)
        c = build_trotter_circuit(HubbardParams(L=2, U=1.0), 0.2, 3, s)
        tables = sample_steps(c, 200, seed=4)
        assert len(tables) == 4 and all(t.total == 200 for t in tables)
        assert tables[0].counts == {s.index: 200}
        assert sample_steps(c, 200, seed=4) == tables


class TestEstimates:
    def test_half_half_standard_error(self):
        shots = ShotTable(1, {0: 10000, 1: 10000})
        z = z_estimate(shots, [0])
        assert z.value == 0
        assert z.std_err == pytest.approx(math.sqrt(1 / 20000))
        assert z.std_err == pytest.approx(7.07e-3, abs=1e-5)

    @given(st.integers(0, 500), st.integers(1, 500))
    def test_binomial_variance(self, n0, n1):
        z = z_estimate(ShotTable(1, {0: n0, 1: n1}), [0])
        n = n0 + n1
        assert z.value == pytest.approx((n0 - n1) / n)
        assert z.std_err**2 == pytest.approx((1 - z.value**2) / n, abs=1e-15)

    def test_parity(self):
        shots = ShotTable(3, {0b011: 3, 0b001: 1})
        assert z_estimate(shots, [0, 1]).value == pytest.approx(0.5)

    def test_permuted_readout(self):
        perm = ModePermutation.identity(2).swap(0, 1)
        sv = StateVector(4, np.eye(16)[0b0001].astype(complex))
        assert list(occupation_values(sv)) == [1, 0, 0, 0]
        assert list(occupation_values(sv, perm)) == [0, 1, 0, 0]

    def test_rejects_unknown_source(self):
        with pytest.raises(TypeError):
            occupations([1, 0])


class TestNoise:
    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseModel(p_dep2q=1.2)
        with pytest.raises(ValueError):
            NoiseModel(p10=(0.1, -0.1))
        with pytest.raises(ValueError):
            NoiseModel(p10=(0.1, 0.1)).readout_rates(3)
        assert NoiseModel().is_noiseless

    def test_trajectories_deterministic(self):
        c = build_trotter_circuit(HubbardParams(L=2, U=2.0), 0.2, 4, neel_state(2))
        noise = NoiseModel(p_dep2q=0.2, seed=5)
        a = run(c, noise=noise, trajectory=3).amplitudes
        b = run(c, noise=noise, trajectory=3).amplitudes
        np.testing.assert_array_equal(a, b)
        assert abs(run(c, noise=noise).norm - 1) < 1e-9

    def test_noise_breaks_conservation(self):
        s = neel_state(2)
        c = build_trotter_circuit(HubbardParams(L=2, U=2.0), 0.2, 4, s)
        dist = step_distributions(c, noise=NoiseModel(p_dep2q=0.3, seed=1), n_trajectories=40)[-1]
        idx = np.arange(16)
        wrong = np.bitwise_count(idx).astype(np.int64) != 2
        assert dist[wrong].sum() > 0.05
        clean = step_distributions(c)[-1]
        assert clean[wrong].sum() < 1e-20


class TestTrotterError:
    def test_decreases_with_step(self):
        p = HubbardParams(L=4, U=2.0)
        rows = trotter_error_scan(p, [0.2, 0.1, 0.05], None, neel_state(4), total_time=1.0)
        final = {r.dt: r.rmse for r in rows if r.time == pytest.approx(1.0)}
        assert final[0.2] > final[0.1] > final[0.05]
        assert final[0.1] / final[0.05] > 3

    def test_even_step_slope(self):
        p = HubbardParams(L=4, U=2.0)
        dts = [0.05, 0.1, 0.2]
        rows = trotter_error_scan(p, dts, None, neel_state(4), total_time=1.2)
        err = [max(r.rmse for r in rows if r.dt == dt) for dt in dts]
        slope = np.polyfit(np.log(dts), np.log(err), 1)[0]
        assert 1.8 <= slope <= 2.2

    def test_requires_one_horizon(self):
        with pytest.raises(ValueError):
            trotter_error_scan(HubbardParams(L=2), [0.1], 3, neel_state(2), total_time=1.0)
