"""Geometry checks: exact sphere pairs, chord-vs-arc law, kernel PSD, 1-NN flips.

Oracles: the analytic chord formula d_E = 2*rho*sin(m/(2*rho)) and its Taylor
expansion (gap = m^3/24 + O(m^5) at rho=1), an independent normal-equations
OLS for the log-log slope, and hand-built point configurations whose 1-NN
structure is forced by construction.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gki.errors import DataError
from gki.kernels import KernelConfig, kernel_eval
from gki.theory import (
    BoundReport,
    nn_perturbation_demo,
    sample_sphere_pairs,
    verify_psd,
    verify_theorem1,
)


def chord_ref(m, rho=1.0):
    return 2.0 * rho * np.sin(m / (2.0 * rho))


def ols_slope_ref(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    return float((xc @ (y - y.mean())) / (xc @ xc))


class TestSpherePairs:
    def test_invariants_hold(self):
        s = sample_sphere_pairs(0, 2.0, 5, [0.01, 0.3, 1.0, 3.0])
        assert np.abs(np.linalg.norm(s.xs, axis=1) - 2.0).max() <= 1e-12
        assert np.abs(np.linalg.norm(s.ys, axis=1) - 2.0).max() <= 1e-12
        cos = np.clip((s.xs * s.ys).sum(axis=1) / 4.0, -1.0, 1.0)
        assert np.abs(2.0 * np.arccos(cos) - s.ms).max() <= 1e-12

    def test_quarter_circle_orthogonal(self):
        s = sample_sphere_pairs(7, 1.0, 3, [np.pi / 2])
        assert abs(float(s.xs[0] @ s.ys[0])) <= 1e-12

    def test_chord_matches_analytic_formula(self):
        s = sample_sphere_pairs(1, 1.0, 4, [0.1])
        d_e = float(np.linalg.norm(s.xs[0] - s.ys[0]))
        assert d_e == pytest.approx(chord_ref(0.1), abs=1e-12)
        assert d_e == pytest.approx(0.0999583, abs=1e-7)

    @settings(max_examples=40, deadline=None)
    @given(m=st.floats(1e-3, 3.1), seed=st.integers(0, 500))
    def test_chord_formula_any_separation(self, m, seed):
        s = sample_sphere_pairs(seed, 1.0, 4, [m])
        d_e = float(np.linalg.norm(s.xs[0] - s.ys[0]))
        assert d_e == pytest.approx(chord_ref(m), abs=1e-12)

    def test_general_radius(self):
        rho = 3.7
        s = sample_sphere_pairs(5, rho, 6, [0.02, 1.0, 9.0])
        d_e = np.linalg.norm(s.xs - s.ys, axis=1)
        assert np.abs(d_e - chord_ref(s.ms, rho)).max() <= 1e-12

    def test_deterministic_under_seed(self):
        a = sample_sphere_pairs(3, 1.0, 5, [0.1, 0.5])
        b = sample_sphere_pairs(3, 1.0, 5, [0.1, 0.5])
        c = sample_sphere_pairs(4, 1.0, 5, [0.1, 0.5])
        assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ys, b.ys)
        assert not np.array_equal(a.xs, c.xs)

    def test_m_out_of_range(self):
        for bad in ([0.0], [-0.1], [np.pi], [4.0]):
            with pytest.raises(DataError, match="m must lie"):
                sample_sphere_pairs(0, 1.0, 3, bad)
        # pi*rho scales with the radius: m=4 is fine on the rho=2 sphere
        sample_sphere_pairs(0, 2.0, 3, [4.0])

    def test_bad_geometry_args(self):
        with pytest.raises(DataError, match="dim"):
            sample_sphere_pairs(0, 1.0, 1, [0.1])
        with pytest.raises(DataError, match="radius"):
            sample_sphere_pairs(0, 0.0, 3, [0.1])


class TestVerifyTheorem1:
    def test_chord_never_exceeds_arc(self):
        ms = np.logspace(-3, np.log10(3.0), 40)
        rep = verify_theorem1(sample_sphere_pairs(3, 1.0, 6, ms))
        assert rep.chord_ok and rep.gap_ok
        assert (rep.d_e <= rep.ms + 1e-12).all()
        assert (rep.gap >= -1e-12).all()
        assert np.array_equal(rep.d_s, rep.ms)  # the sphere is its own osculator

    def test_spot_value_cubic_coefficient(self):
        rep = verify_theorem1(sample_sphere_pairs(11, 1.0, 5, [0.1]))
        gap = float(rep.gap[0])
        assert gap == pytest.approx(1e-3 / 24.0, abs=1e-7)
        assert gap == pytest.approx(4.166e-5, abs=1e-7)

    def test_slope_on_reference_grid(self):
        ms = [0.001, 0.003, 0.01, 0.03, 0.1]
        rep = verify_theorem1(sample_sphere_pairs(2, 1.0, 4, ms))
        assert rep.slope == pytest.approx(3.0, abs=0.2)
        assert rep.slope_ok and rep.passed
        oracle = ols_slope_ref(np.log(rep.ms), np.log(rep.gap))
        assert rep.slope == pytest.approx(oracle, abs=1e-9)

    def test_slope_stable_across_seeds(self):
        ms = np.logspace(-3, -1, 9)
        for seed in range(10):
            rep = verify_theorem1(sample_sphere_pairs(seed, 1.0, 5, ms))
            assert 2.8 <= rep.slope <= 3.2, f"seed {seed}: slope {rep.slope}"

    def test_subfloor_gap_excluded_and_recorded(self):
        # at m=1e-5 the gap is ~4e-17, beneath the 64-bit noise floor
        ms = [1e-5, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
        rep = verify_theorem1(sample_sphere_pairs(9, 1.0, 4, ms))
        assert rep.excluded_ms == [1e-5]
        assert rep.n_fit == 5
        assert rep.slope_ok

    def test_fit_restricted_to_window(self):
        # pairs above the window must not drag the slope down
        ms = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 1.0, 2.5]
        rep = verify_theorem1(sample_sphere_pairs(4, 1.0, 4, ms))
        assert rep.n_fit == 5
        window = [m for m in ms if m <= 1e-1]
        sub = verify_theorem1(sample_sphere_pairs(4, 1.0, 4, ms))
        assert rep.slope == sub.slope
        assert len(window) == rep.n_fit

    def test_too_few_fit_pairs_fails_cleanly(self):
        rep = verify_theorem1(sample_sphere_pairs(0, 1.0, 3, [0.5, 1.0]))
        assert rep.n_fit == 0
        assert np.isnan(rep.slope)
        assert not rep.slope_ok and not rep.passed

    def test_fitted_constant_brackets_gap(self):
        ms = np.logspace(-3, -1, 12)
        rep = verify_theorem1(sample_sphere_pairs(8, 1.0, 5, ms))
        # 1/24 is the analytic cubic coefficient at rho=1
        assert rep.fitted_c == pytest.approx(1.0 / 24.0, rel=5e-3)
        assert (rep.gap <= rep.fitted_c * rep.ms**3 + 1e-12).all()

    def test_csv_shape_and_round_trip(self):
        rep = verify_theorem1(sample_sphere_pairs(1, 1.0, 4, [0.01, 0.1]))
        text = rep.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == BoundReport.CSV_HEADER == "m,d_E,d_S,gap"
        assert len(lines) == 3
        row = [float(v) for v in lines[2].split(",")]
        assert row == [rep.ms[1], rep.d_e[1], rep.d_s[1], rep.gap[1]]

    def test_summary_json(self):
        rep = verify_theorem1(sample_sphere_pairs(1, 1.0, 4, np.logspace(-3, -1, 6)))
        blob = json.loads(rep.summary_json())
        assert blob["passed"] is True
        assert blob["n_fit"] == 6
        assert blob["slope"] == rep.slope


class TestVerifyPsd:
    def test_single_point_euclidean_eigenvalue_one(self):
        rep = verify_psd(np.array([[0.3, -1.2]]), "euclidean")
        assert rep.min_eigenvalue == 1.0
        assert rep.passed

    def test_single_point_spherical_just_under_one(self):
        # the arccos clamp keeps k(x,x) marginally below exp(0)
        rep = verify_psd(np.array([[1.0, 0.0]]), "spherical")
        assert 0.998 < rep.min_eigenvalue < 1.0
        assert rep.passed

    def test_euclidean_random_points(self):
        for seed in range(6):
            rng = np.random.default_rng(seed)
            for n in (8, 32, 64):
                rep = verify_psd(rng.normal(size=(n, 5)), "euclidean")
                assert rep.passed, f"seed {seed} n {n}: min eig {rep.min_eigenvalue}"

    def test_spherical_random_unit_points(self):
        for seed in range(6):
            rng = np.random.default_rng(100 + seed)
            for n in (8, 32, 64):
                pts = rng.normal(size=(n, 5))
                pts /= np.linalg.norm(pts, axis=1, keepdims=True)
                rep = verify_psd(pts, "spherical")
                assert rep.passed, f"seed {seed} n {n}: min eig {rep.min_eigenvalue}"

    def test_gram_agrees_with_kernel_eval(self):
        pts = np.random.default_rng(0).normal(size=(4, 3))
        rep = verify_psd(pts, "euclidean")
        gram = np.array([[kernel_eval(a, b, "euclidean") for b in pts] for a in pts])
        assert rep.min_eigenvalue == pytest.approx(
            float(np.linalg.eigvalsh(gram).min()), abs=1e-12)

    def test_spherical_requires_unit_points(self):
        with pytest.raises(DataError, match="sphere"):
            verify_psd(np.array([[2.0, 0.0], [0.0, 2.0]]), "spherical")

    def test_point_budget(self):
        pts = np.random.default_rng(1).normal(size=(65, 3))
        with pytest.raises(DataError, match="at most 64"):
            verify_psd(pts, "euclidean")

    def test_empty_points(self):
        with pytest.raises(DataError, match="nonempty"):
            verify_psd(np.empty((0, 3)), "euclidean")


class TestNnPerturbationDemo:
    def test_two_points_forced_neighbor(self):
        pts = np.array([[1.0, 0.0], [3.0, 0.5]])
        lms = np.array([[0.5, 0.5], [-1.0, 2.0]])
        rep = nn_perturbation_demo(pts, lms)
        assert rep.nn_euclidean == [1, 0]
        assert rep.nn_spherical == [1, 0]
        assert rep.flip_fraction == 0.0

    def test_colinear_ray_flips(self):
        # all points share one direction: spherical feature rows coincide,
        # so spherical 1-NN degenerates to the lowest-index tie while the
        # euclidean map still separates by norm
        direction = np.array([1.0, 0.5, -0.2])
        direction /= np.linalg.norm(direction)
        pts = np.outer([1.0, 2.0, 4.0, 8.0, 16.0], direction)
        lms = np.random.default_rng(0).normal(size=(3, 3))
        rep = nn_perturbation_demo(pts, lms)
        assert rep.nn_spherical == [1, 0, 0, 0, 0]
        assert rep.flip_fraction > 0.0
        assert rep.flips == [i for i in range(5)
                             if rep.nn_euclidean[i] != rep.nn_spherical[i]]

    def test_unit_sphere_tight_pairs_no_flips(self):
        # two tight pairs 90 degrees apart: both maps are monotone in the
        # angle, and the within-pair angle is far below the between-pair
        # angle, so each point keeps its twin under either metric
        a = 0.05
        pts = np.array([
            [1.0, 0.0, 0.0],
            [np.cos(a), np.sin(a), 0.0],
            [0.0, 0.0, 1.0],
            [0.0, np.sin(a), np.cos(a)],
        ])
        lms = np.array([[0.6, 0.8, 0.0], [0.0, -0.6, 0.8], [1.0, 0.0, 0.0]])
        rep = nn_perturbation_demo(pts, lms)
        assert rep.nn_euclidean == [1, 0, 3, 2]
        assert rep.nn_spherical == [1, 0, 3, 2]
        assert rep.flip_fraction == 0.0

    def test_input_guards(self):
        lms = np.zeros((2, 3)) + 0.5
        with pytest.raises(DataError, match=">= 2 points"):
            nn_perturbation_demo(np.ones((1, 3)), lms)
        with pytest.raises(DataError, match="landmarks"):
            nn_perturbation_demo(np.ones((3, 4)), lms)

    def test_flip_fraction_counts(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(12, 4)) + 2.0
        lms = rng.normal(size=(4, 4))
        rep = nn_perturbation_demo(pts, lms)
        disagreements = sum(a != b for a, b in zip(rep.nn_euclidean, rep.nn_spherical))
        assert rep.flip_fraction == disagreements / 12
        assert len(rep.nn_euclidean) == len(rep.nn_spherical) == 12
