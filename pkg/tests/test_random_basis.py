import numpy as np
import numpy.testing as npt
import pytest

from randbasis.basis import GAUSSIAN, RANDOM_BOX, SIGMOID, BasisElement, ParameterBox, tabulate, tabulate_pool
from randbasis.grid import GridFunction, make_grid, norm_sq, target_function, target_value
from randbasis.random_basis import (
    MC_ALPHA,
    MC_OMEGA,
    IncrementalFit,
    estimate_variance,
    fit_linear,
    fit_with_reinit,
    grow_pool,
    mc_direct_eval,
    mc_direct_weights,
    mc_expected_value,
    mc_variance_study,
    run_random_basis,
    sample_mc,
    sample_pool,
    variance_slope,
)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 400)


@pytest.fixture(scope="module")
def f(grid):
    return target_function(grid)


def lstsq_error(pool, f):
    """Reference optimum via numpy's SVD least squares on the quadrature-weighted system."""
    A = tabulate_pool(pool, f.grid).T * np.sqrt(f.grid.cell_weight)
    y = f.values * np.sqrt(f.grid.cell_weight)
    c, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.sum((A @ c - y) ** 2)) / norm_sq(f)


class TestPool:
    def test_grow_from_empty(self, rng):
        assert len(grow_pool((), RANDOM_BOX, rng)) == 1

    def test_hundred_in_box(self, rng):
        pool = sample_pool(100, RANDOM_BOX, rng)
        assert len(pool) == 100
        assert all(RANDOM_BOX.contains(e.w, e.b) for e in pool)

    def test_reproducible(self):
        assert sample_pool(10, RANDOM_BOX, np.random.default_rng(4)) == sample_pool(
            10, RANDOM_BOX, np.random.default_rng(4)
        )

    def test_grow_does_not_mutate(self, rng):
        pool = sample_pool(3, RANDOM_BOX, rng)
        grown = grow_pool(pool, RANDOM_BOX, rng)
        assert len(pool) == 3 and grown[:3] == pool


class TestFitLinear:
    def test_exact_single(self, grid):
        e = BasisElement(GAUSSIAN, 10.0, -4.0)
        f = 2.0 * tabulate(e, grid)
        m = fit_linear([e], f)
        npt.assert_allclose(m.coefficients, [2.0], rtol=1e-12)
        assert m.bar_e <= 1e-24
        assert m.discarded_count == 0

    def test_duplicate_discarded(self, grid, f):
        e = BasisElement(GAUSSIAN, 30.0, -10.0)
        G = tabulate_pool([e, e], grid)
        assert np.linalg.matrix_rank(G @ G.T) == 1
        single = fit_linear([e], f)
        for thr in (10.0, 1e6, 1e12):
            m = fit_linear([e, e], f, cond_threshold=thr)
            assert m.discarded_count == 1
            assert list(m.retained) == [True, False]
            assert m.bar_e == pytest.approx(single.bar_e, rel=1e-12)
            npt.assert_allclose(m.approximant.values, single.approximant.values, rtol=1e-12, atol=1e-15)

    def test_all_discarded(self, grid, f):
        # s >= 200 on [0, 1]: the gaussian underflows to zero everywhere
        m = fit_linear([BasisElement(GAUSSIAN, 200.0, 200.0)], f)
        assert m.discarded_count == 1
        assert m.bar_e == pytest.approx(1.0)
        npt.assert_array_equal(m.coefficients, [0.0])
        assert "discarded" in m.note

    def test_empty_pool(self, f):
        with pytest.raises(ValueError):
            fit_linear([], f)

    def test_matches_lstsq(self, f):
        pool = sample_pool(40, RANDOM_BOX, np.random.default_rng(7))
        m = fit_linear(pool, f)
        kept = [e for e, r in zip(pool, m.retained) if r]
        assert m.bar_e == pytest.approx(lstsq_error(kept, f), rel=1e-7, abs=1e-13)
        assert m.bar_e == pytest.approx(lstsq_error(pool, f), rel=1e-6, abs=1e-12)

    def test_orthogonality_and_condition(self, f):
        pool = sample_pool(100, RANDOM_BOX, np.random.default_rng(3))
        m = fit_linear(pool, f)
        assert m.orthogonality <= 1e-8
        assert 1.0 <= m.gram_condition
        assert len(m.coefficients) == len(pool)
        assert np.all(m.coefficients[~m.retained] == 0.0)

    def test_perturbation_does_not_improve(self, f, grid):
        pool = sample_pool(25, RANDOM_BOX, np.random.default_rng(21))
        m = fit_linear(pool, f)
        table = tabulate_pool(pool, grid)
        base = norm_sq(m.approximant - f)
        for i in np.flatnonzero(m.retained):
            for delta in (1e-4, -1e-4):
                c = m.coefficients.copy()
                c[i] += delta
                assert norm_sq(GridFunction(grid, c @ table) - f) >= base * (1 - 1e-12)

    def test_low_threshold_discards(self, f):
        pool = sample_pool(60, RANDOM_BOX, np.random.default_rng(2))
        loose = fit_linear(pool, f, cond_threshold=1e12)
        strict = fit_linear(pool, f, cond_threshold=10.0)
        assert strict.discarded_count >= loose.discarded_count
        assert strict.gram_condition <= 10.0 * 10  # estimate vs exact 2-norm differ by a modest factor
        assert strict.bar_e >= loose.bar_e - 1e-12
        assert strict.bar_e <= 1.0

    def test_ridge_is_opt_in(self, f):
        pool = sample_pool(20, RANDOM_BOX, np.random.default_rng(6))
        plain = fit_linear(pool, f)
        ridged = fit_linear(pool, f, ridge=1e-3)
        assert ridged.bar_e >= plain.bar_e

    def test_sigmoid_pool(self, f):
        pool = sample_pool(10, RANDOM_BOX, np.random.default_rng(1), kind=SIGMOID)
        m = fit_linear(pool, f)
        assert m.bar_e == pytest.approx(lstsq_error([e for e, r in zip(pool, m.retained) if r], f), rel=1e-6)

    def test_bad_threshold(self, f):
        with pytest.raises(ValueError):
            IncrementalFit(f, cond_threshold=0.5)


class TestRunRandomBasis:
    def test_single(self, f):
        run = run_random_basis(RANDOM_BOX, f, 1, rng=np.random.default_rng(0))
        assert run.bar_e.shape == (1,)
        assert run.bar_e[0] <= 1.0

    def test_target_in_span(self, grid):
        first3 = sample_pool(3, RANDOM_BOX, np.random.default_rng(106))
        # make sure the three are numerically alive on the grid
        assert all(norm_sq(tabulate(e, grid)) > 1e-6 for e in first3)
        f = GridFunction(grid, np.array([0.7, -0.3, 1.1]) @ tabulate_pool(first3, grid))
        run = run_random_basis(RANDOM_BOX, f, 8, rng=np.random.default_rng(106))
        assert run.pool[:3] == first3
        assert np.all(run.bar_e[2:] <= 1e-10)

    def test_monotone(self, f):
        for seed in range(5):
            run = run_random_basis(RANDOM_BOX, f, 100, rng=np.random.default_rng(seed))
            assert np.all(np.diff(run.bar_e) <= 0.0)
            assert run.bar_e[0] <= 1.0

    def test_prefix_fits_agree(self, f):
        run = run_random_basis(RANDOM_BOX, f, 30, rng=np.random.default_rng(5), keep_models=True)
        for k in (1, 10, 30):
            m = fit_linear(run.pool[:k], f)
            assert m.bar_e == pytest.approx(run.bar_e[k - 1], rel=1e-8, abs=1e-12)
            npt.assert_array_equal(m.retained, run.models[k - 1].retained)

    def test_models_orthogonal(self, f):
        run = run_random_basis(RANDOM_BOX, f, 50, rng=np.random.default_rng(8), keep_models=True)
        assert max(m.orthogonality for m in run.models) <= 1e-8

    def test_invalid(self, f):
        with pytest.raises(ValueError):
            run_random_basis(RANDOM_BOX, f, 0)


class TestReinit:
    def test_loose_threshold(self, f):
        r = fit_with_reinit(RANDOM_BOX, f, 10, 1.0, 5, rng=np.random.default_rng(0))
        assert r.met and r.reinit_count == 0 and len(r.history) == 1

    def test_zero_threshold(self, f):
        r = fit_with_reinit(RANDOM_BOX, f, 5, 0.0, 4, rng=np.random.default_rng(0))
        assert not r.met
        assert r.reinit_count == 4
        assert len(r.history) == 5
        assert r.model.bar_e == pytest.approx(min(r.history))

    def test_stops_at_first_success(self, f):
        r0 = fit_with_reinit(RANDOM_BOX, f, 20, 0.0, 6, rng=np.random.default_rng(1))
        thr = sorted(r0.history)[2]
        r = fit_with_reinit(RANDOM_BOX, f, 20, thr, 6, rng=np.random.default_rng(1))
        first = next(i for i, v in enumerate(r0.history) if v <= thr)
        assert r.met and r.reinit_count == first
        assert r.history == r0.history[: first + 1]

    def test_negative_threshold(self, f):
        with pytest.raises(ValueError):
            fit_with_reinit(RANDOM_BOX, f, 5, -1.0, 1)


def sample_target(y):
    return target_value(y[:, 0])


class TestMonteCarlo:
    def test_zero_target(self, grid):
        s = sample_mc(50, lambda y: np.zeros(len(y)), np.random.default_rng(0))
        assert np.all(s.weights == 0.0)
        npt.assert_array_equal(mc_direct_weights(s, grid).values, 0.0)

    def test_derived_fields(self):
        s = sample_mc(200, sample_target, np.random.default_rng(2), alpha=3.0, Omega=7.0)
        assert np.all((s.y >= 0) & (s.y <= 1))
        assert np.all((s.w >= 0) & (s.w <= 7.0))
        assert np.all(np.abs(s.u) <= 14.0)
        npt.assert_allclose(s.b, -3.0 * (s.w[:, 0] * s.y[:, 0] + s.u))
        npt.assert_allclose(s.weights, 3.0 * s.w[:, 0] * target_value(s.y[:, 0]))

    def test_two_dimensional_draws(self):
        s = sample_mc(500, lambda y: np.ones(len(y)), np.random.default_rng(2), Omega=5.0, d=2)
        assert np.all(s.w[:, 0] >= 0) and np.any(s.w[:, 1] < 0)
        assert np.all(np.abs(s.u) <= 20.0)
        npt.assert_allclose(s.weights, MC_ALPHA * s.w[:, 0] * s.w[:, 1] / 2.0)

    def test_estimator_formula(self):
        s = sample_mc(30, sample_target, np.random.default_rng(3))
        x = np.array([[0.3]])
        manual = 4.0 / 30 * sum(
            c * np.exp(-((s.alpha * wk * 0.3 + bk) ** 2)) for c, wk, bk in zip(s.weights, s.w[:, 0], s.b)
        )
        assert mc_direct_eval(s, x)[0] == pytest.approx(manual, rel=1e-12)

    def test_head(self):
        s = sample_mc(10, sample_target, np.random.default_rng(3))
        h = s.head(4)
        assert h.n == 4
        npt.assert_array_equal(h.b, s.b[:4])

    def test_expected_value_brute_force(self):
        ref = mc_expected_value(0.5, sample_target)
        vals = mc_direct_eval(sample_mc(400_000, sample_target, np.random.default_rng(0)), [[0.5]])
        # one big sample: the estimator itself; standard error from the per-sample terms
        s = sample_mc(400_000, sample_target, np.random.default_rng(1))
        terms = 4.0 * s.weights * np.exp(-((s.alpha * s.w[:, 0] * 0.5 + s.b) ** 2))
        se = terms.std() / np.sqrt(terms.size)
        assert abs(terms.mean() - ref) <= 4 * se
        assert abs(vals[0] - ref) <= 4 * se * 1.5

    def test_expected_value_independent_of_x(self):
        vals = [mc_expected_value(x, sample_target) for x in (0.1, 0.5, 0.9)]
        npt.assert_allclose(vals, vals[0], rtol=1e-3)

    def test_mean_stable_under_doubling(self):
        study = mc_variance_study(sample_target, np.random.default_rng(4), ns=(256, 512, 1024), sets=200)
        means = {n: v.mean() for n, v in study.items()}
        for a, b in ((256, 512), (512, 1024)):
            se = np.sqrt(study[a].var(ddof=1) / 200 + study[b].var(ddof=1) / 200)
            assert abs(means[a] - means[b]) <= 2 * se * 1.5

    def test_means_consistent_with_reference(self):
        ref = mc_expected_value(0.5, sample_target)
        study = mc_variance_study(sample_target, np.random.default_rng(6), ns=(64, 256, 1024), sets=200)
        for v in study.values():
            assert abs(v.mean() - ref) <= 3 * v.std(ddof=1) / np.sqrt(v.size)

    def test_variance_slope(self):
        study = mc_variance_study(sample_target, np.random.default_rng(0))
        ns = sorted(study)
        slope = variance_slope(ns, [study[n].var(ddof=1) for n in ns])
        assert -1.4 <= slope <= -0.6

    def test_coverage_at_512(self):
        ref = mc_expected_value(0.5, sample_target)
        vals = mc_variance_study(sample_target, np.random.default_rng(1), ns=(512,))[512]
        est = estimate_variance(vals, ref, 2 * vals.std(ddof=1), n=512, x=0.5)
        assert est.empirical_coverage >= 1 - est.gamma - 0.1
        assert 0 <= est.empirical_coverage <= 1
        assert est.gamma == pytest.approx(0.25)


class TestVarianceEstimate:
    def test_degenerate(self):
        est = estimate_variance(np.full(40, 0.3), 0.25, 0.06)
        assert est.empirical_var == 0.0
        assert est.empirical_coverage == 1.0
        assert est.gamma == 0.0

    def test_infinite_epsilon(self, rng):
        est = estimate_variance(rng.normal(size=50), 0.0, np.inf)
        assert est.empirical_coverage == 1.0
        assert est.gamma == 0.0

    def test_large_epsilon_limit(self, rng):
        v = rng.normal(size=100)
        est = estimate_variance(v, 0.0, 1e6)
        assert est.gamma < 1e-10

    def test_too_few_runs(self):
        with pytest.raises(ValueError):
            estimate_variance(np.zeros(29), 0.0, 1.0)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            estimate_variance(np.zeros(30), 0.0, 0.0)

    def test_normal_sample(self, rng):
        v = rng.normal(1.0, 0.1, size=4000)
        est = estimate_variance(v, 1.0, 0.2, n=10)
        assert est.empirical_var == pytest.approx(0.01, rel=0.1)
        assert est.sigma_sq == pytest.approx(10 * est.empirical_var)
        # two sigma: true coverage 0.954, Chebyshev promises 0.75
        assert est.empirical_coverage == pytest.approx(0.954, abs=0.02)
        assert est.empirical_coverage >= 1 - est.gamma

    def test_slope_of_exact_law(self):
        ns = np.array([10.0, 100.0, 1000.0])
        assert variance_slope(ns, 3.0 / ns) == pytest.approx(-1.0)


def test_defaults_exposed():
    assert (MC_ALPHA, MC_OMEGA) == (1.0, 20.0)
    box = ParameterBox.uniform((0, 1), (0, 1))
    assert box.d == 1
