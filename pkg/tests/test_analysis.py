import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hubbardkit.analysis import (
    TracerField,
    VelocityFit,
    VelocityRow,
    ballistic_window,
    charge_tracer,
    detect_wavefront,
    front_velocity,
    gaussian_smooth,
    rmse,
    rmse_series,
    spin_correlator,
    spin_tracer,
    theil_sen,
    velocity_csv,
)
from hubbardkit.model import UP, FockState, HubbardParams, mode_index, neel_state
from hubbardkit.statevector import (
    exact_evolve,
    exact_occupations,
    sample,
    trotter_error_scan,
    trotter_occupations,
)


class TestRmse:
    def test_identical(self):
        a = np.random.default_rng(0).random(8)
        assert rmse(a, a) == 0

    @given(st.floats(-1, 1))
    def test_uniform_offset(self, delta):
        a = np.linspace(0, 1, 12)
        assert rmse(a, a + delta) == pytest.approx(abs(delta), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros(4), np.zeros(5))
        with pytest.raises(ValueError):
            rmse_series(np.zeros((2, 4)), np.zeros((3, 4)))

    def test_matches_error_scan(self):
        p, s = HubbardParams(L=4, U=2.0), neel_state(4)
        rows = trotter_error_scan(p, [0.2], 6, s)
        trot = trotter_occupations(p, 0.2, 6, s)
        exact = exact_occupations(p, s, 0.2 * np.arange(7))
        np.testing.assert_allclose([r.rmse for r in rows], rmse_series(trot, exact), atol=1e-14)


class TestTracers:
    def test_charge_starts_at_zero(self):
        occ = np.random.default_rng(1).random((5, 8))
        f = charge_tracer(occ, 1)
        assert f.values.shape == (4, 5)
        np.testing.assert_array_equal(f.values[:, 0], 0)

    def test_single_particle_hop(self):
        s = FockState.from_sites(2, [(0, UP)])
        times = np.linspace(0, 2, 9)
        occ = exact_occupations(HubbardParams(L=2), s, times)
        f = charge_tracer(occ, 1, times)
        np.testing.assert_allclose(f.values[1], occ[:, mode_index(1, UP, 2)], atol=1e-14)

    def test_vacancy_quench_conserves_charge(self):
        times = np.linspace(0, 2, 6)
        occ = exact_occupations(HubbardParams(L=9, U=4.0), neel_state(9, 4), times)
        f = charge_tracer(occ, 4, times)
        np.testing.assert_allclose(f.values.sum(axis=0), 0, atol=1e-10)

    def test_spin_zero_for_fock_states(self):
        s = neel_state(5, 2)
        f = spin_tracer([exact_evolve(HubbardParams(L=5, U=2.0), s, 0.0)], 2)
        np.testing.assert_allclose(f.values, 0, atol=1e-15)

    @pytest.mark.parametrize("t", [0.3, 1.0])
    def test_on_site_is_variance(self, t):
        s = neel_state(5, 2)
        sv = exact_evolve(HubbardParams(L=5, U=2.0), s, t)
        for c in range(5):
            assert spin_correlator(sv, c)[c] >= -1e-14

    def test_spin_support_spreads(self):
        times = np.linspace(0, 1.5, 16)
        states = exact_evolve(HubbardParams(L=9, U=8.0), neel_state(9, 4), list(times))
        v = np.abs(spin_tracer(states, 4, times).values)
        reach = [max((abs(i - 4) for i in range(9) if v[i, k] > 1e-3), default=0) for k in range(16)]
        assert all(b >= a for a, b in zip(reach, reach[1:]))
        assert reach[-1] > reach[1]

    def test_shots_converge_to_state(self):
        sv = exact_evolve(HubbardParams(L=4, U=2.0), neel_state(4, 1), 0.8, sector=False)
        exact = spin_correlator(sv, 1)
        est = spin_correlator(sample(sv, 50000, seed=3), 1)
        np.testing.assert_allclose(est, exact, atol=0.03)

    def test_rejects_unknown_source(self):
        with pytest.raises(TypeError):
            spin_correlator(np.zeros(16), 0)

    def test_exports(self):
        f = TracerField(np.array([[0.0, 0.5], [0.0, -0.25]]), "charge", 0, np.array([0.0, 0.1]))
        assert f.to_csv().splitlines() == ["site,0,0.1", "0,0,0.5", "1,0,-0.25"]
        assert f.to_grid() == "0 0 0\n0 1 0\n\n0.1 0 0.5\n0.1 1 -0.25\n"


def triangle(L: int, center: int, w: float) -> np.ndarray:
    d = np.abs(np.arange(L) - center)
    return np.clip(1 - d / w, 0, None)


class TestWavefront:
    @pytest.mark.parametrize("w", [6.0, 8.0, 10.0])
    def test_triangular_pulse(self, w):
        L, c, p = 41, 20, 0.3
        col = triangle(L, c, w)
        field = TracerField(col[:, None], "spin", c)
        tr = detect_wavefront(field, sigma=1.0, p=p)
        analytic = w * (1 - p)
        assert abs(tr.distance[0] - analytic) < 0.5
        assert tr.left[0] == pytest.approx(2 * c - tr.right[0])

    def test_constant_field_has_zero_velocity(self):
        col = triangle(21, 10, 5.0)
        field = TracerField(np.tile(col[:, None], (1, 12)), "spin", 10)
        fit = theil_sen(detect_wavefront(field).distance, np.arange(12.0), n_boot=50)
        assert fit.slope == 0

    @given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
    def test_mirrored_field(self, half):
        col = np.array(half[::-1] + [0.4] + half)
        tr = detect_wavefront(TracerField(col[:, None], "spin", 5))
        if tr.valid[0]:
            assert tr.right[0] - 5 == pytest.approx(5 - tr.left[0], abs=1e-12)

    @given(st.lists(st.floats(0, 1), min_size=7, max_size=7), st.integers(8, 12))
    def test_translation_covariance(self, bump, c):
        L = 25
        col = np.zeros(L)
        col[c - 3 : c + 4] = bump
        shifted = np.roll(col, 1)
        a = detect_wavefront(TracerField(col[:, None], "spin", c), sigma=0.0)
        b = detect_wavefront(TracerField(shifted[:, None], "spin", c + 1), sigma=0.0)
        assert a.valid[0] == b.valid[0]
        if a.valid[0]:
            assert b.left[0] == pytest.approx(a.left[0] + 1)
            assert b.right[0] == pytest.approx(a.right[0] + 1)

    def test_zero_width_smoothing(self):
        x = np.random.default_rng(2).random(15)
        np.testing.assert_array_equal(gaussian_smooth(x, 0.0), x)
        np.testing.assert_allclose(gaussian_smooth(x, 0.05), x, atol=1e-12)
        col = triangle(21, 10, 6.0)
        f = TracerField(col[:, None], "spin", 10)
        raw = detect_wavefront(f, sigma=0.0).distance[0]
        assert detect_wavefront(f, sigma=0.05).distance[0] == pytest.approx(raw, abs=1e-9)

    def test_smoothing_preserves_mass(self):
        x = np.zeros(21)
        x[10] = 1.0
        assert gaussian_smooth(x, 1.0).sum() == pytest.approx(1.0)

    def test_all_zero_column_invalid(self):
        vals = np.zeros((9, 3))
        vals[:, 1] = triangle(9, 4, 3.0)
        tr = detect_wavefront(TracerField(vals, "spin", 4))
        assert list(tr.valid) == [False, True, False]
        assert np.isnan(tr.distance[0])

    def test_validation(self):
        f = TracerField(np.ones((5, 2)), "spin", 2)
        with pytest.raises(ValueError):
            detect_wavefront(f, p=1.5)
        with pytest.raises(ValueError):
            detect_wavefront(TracerField(np.ones((5, 2)), "spin", 7))

    def test_ballistic_window(self):
        L = 11
        times = np.arange(20.0)
        right = 5 + 0.4 * times
        left = 5 - 0.4 * times
        from hubbardkit.analysis import WavefrontTrace

        tr = WavefrontTrace(times, left, right, 0.4 * times, np.ones(20, bool), 5)
        mask = ballistic_window(tr, L)
        assert not mask[:2].any()
        assert mask[2:10].all()
        assert not mask[10:].any()

    def test_synthetic_front_velocity(self):
        L, c = 31, 15
        times = np.linspace(0, 8, 33)
        vals = np.column_stack([np.exp(-0.5 * ((np.arange(L) - c) ** 2 - (1.5 * t) ** 2).clip(0) / 2.0) for t in times])
        field = TracerField(vals, "spin", c, times)
        fit, _, window = front_velocity(field, times, n_boot=100)
        assert window.sum() >= 5
        assert fit.slope == pytest.approx(1.5, rel=0.15)


class TestTheilSen:
    def test_exact_line(self):
        for zero in (False, True):
            assert theil_sen([2, 4, 6], [1, 2, 3], zero, n_boot=20).slope == pytest.approx(2)

    def test_outlier(self):
        t = np.arange(1.0, 10.0)
        x = 3 * t + 1
        x[4] = 100
        fit = theil_sen(x, t, n_boot=50)
        assert fit.slope == pytest.approx(3)
        assert fit.intercept == pytest.approx(1)

    def test_zero_intercept_median(self):
        assert theil_sen([2.0, 4.2, 5.7], [1, 2, 3], True, n_boot=20).slope == pytest.approx(2.0)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            theil_sen([1.0, np.nan], [1.0, 2.0])
        with pytest.raises(ValueError):
            theil_sen([1.0], [1.0, 2.0])

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=15))
    def test_slope_matches_scipy(self, xs):
        from scipy.stats import theilslopes

        t = np.arange(len(xs), dtype=float)
        fit = theil_sen(xs, t, n_boot=2)
        assert fit.slope == pytest.approx(theilslopes(xs, t).slope, abs=1e-12)

    def test_bootstrap_deterministic(self):
        rng = np.random.default_rng(0)
        t = np.arange(12.0)
        x = 0.7 * t + rng.normal(0, 0.2, 12)
        a, b = theil_sen(x, t, seed=4), theil_sen(x, t, seed=4)
        assert a == b and 0 < a.std_err < 0.2


def test_velocity_csv():
    row = VelocityRow(4.0, VelocityFit(2.0, 0.0, 0.1, 10), VelocityFit(0.5, 0.2, 0.05, 10))
    assert row.ratio == 4.0
    lines = velocity_csv([row]).splitlines()
    assert lines == ["U,v_charge,v_spin,ratio,ci_charge,ci_spin", "4,2,0.5,4,0.1,0.05"]
