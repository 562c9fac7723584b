"""End-to-end tests of run_test, run_composite, and confidence regions."""

import numpy as np
import pytest

from threshtest import (
    DesignMatrix,
    LinearHypothesis,
    McConfig,
    SubsetHypothesis,
    build_reduction,
    confidence_region,
    cr_grid,
    cr_member,
    run_composite,
    run_test,
)
from threshtest.inference import CalibrationCache
from threshtest.statistics import StatisticSpec
from threshtest.exceptions import NotApplicable, Untestable, UnsupportedDimension


MC = McConfig(m_draws=400, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(99)


@pytest.fixture
def dataset(rng):
    n = 25
    x_cov = rng.standard_normal((n, 4))
    x = DesignMatrix(np.hstack([np.ones((n, 1)), x_cov]), intercept_column=0)
    hyp = SubsetHypothesis(1, np.zeros(4)).expand(5)
    return x, hyp


class TestRunTest:
    def test_null_fit_gives_p_one(self, rng):
        x = DesignMatrix(rng.standard_normal((10, 3)))
        hyp = LinearHypothesis(np.eye(3), rng.standard_normal(3))
        red = build_reduction(x, hyp)
        res = run_test(red.x_fit_c, x, hyp, StatisticSpec("affine_lasso"), mc=MC,
                       cache=CalibrationCache(directory=False))
        assert res.observed.value == pytest.approx(0.0, abs=1e-9)
        assert not res.reject
        assert res.p_value == pytest.approx(1.0)

    def test_strong_signal_rejects(self, dataset, rng):
        x, hyp = dataset
        beta = np.array([0.0, 5.0, -5.0, 5.0, 0.0])
        y = x.values @ beta + rng.standard_normal(x.n)
        res = run_test(y, x, hyp, StatisticSpec("sqrt_affine_lasso"), mc=MC,
                       cache=CalibrationCache(directory=False))
        assert res.reject
        assert res.p_value <= 0.05

    def test_threshold_p_duality(self, dataset, rng):
        x, hyp = dataset
        cache = CalibrationCache(directory=False)
        for _ in range(5):
            y = rng.standard_normal(x.n)
            res = run_test(y, x, hyp, StatisticSpec("sqrt_affine_lasso"),
                           mc=MC, cache=cache)
            assert res.reject == (res.observed.value > res.lambda_alpha)
            assert res.reject == (res.p_value <= res.alpha)

    def test_scale_invariant_decision(self, dataset, rng):
        x, hyp = dataset
        cache = CalibrationCache(directory=False)
        y = rng.standard_normal(x.n)
        res1 = run_test(y, x, hyp, StatisticSpec("sqrt_affine_lasso"),
                        mc=MC, cache=cache)
        res2 = run_test(7.5 * y, x, hyp, StatisticSpec("sqrt_affine_lasso"),
                        mc=MC, cache=cache)
        assert res1.observed.value == pytest.approx(res2.observed.value, rel=1e-10)
        assert res1.p_value == res2.p_value
        assert res1.reject == res2.reject

    def test_fisher_route_matches_exact_f(self, rng):
        from scipy import stats as sp_stats

        n, p = 30, 4
        x = DesignMatrix(rng.standard_normal((n, p)))
        hyp = LinearHypothesis(rng.standard_normal((2, p)), np.zeros(2))
        y = rng.standard_normal(n)
        res = run_test(y, x, hyp, StatisticSpec("fisher_weighted"), alpha=0.05)
        from threshtest import fisher_F
        f, df1, df2 = fisher_F(x, hyp, y)
        assert res.p_value == pytest.approx(float(sp_stats.f.sf(f, df1, df2)))
        assert res.statistic_id.endswith("|exact_f")

    def test_glm_degenerate_no_reject(self):
        x = DesignMatrix(np.hstack([np.arange(8, dtype=float).reshape(8, 1)]))
        hyp = LinearHypothesis(np.eye(1), np.zeros(1))
        y = np.ones(8)  # all-ones bernoulli sample: xi_hat = 0
        res = run_test(y, x, hyp,
                       StatisticSpec("glm_score_sup", glm_family="bernoulli"),
                       mc=MC, cache=CalibrationCache(directory=False))
        assert res.observed.degenerate
        assert not res.reject
        assert res.p_value == 1.0
        assert res.degenerate_note

    def test_untestable_propagates(self, rng):
        x = DesignMatrix(rng.standard_normal((4, 6)))
        hyp = SubsetHypothesis(5, np.zeros(1)).expand(6)
        with pytest.raises(Untestable):
            run_test(rng.standard_normal(4), x, hyp,
                     StatisticSpec("sqrt_affine_lasso"), mc=MC)

    def test_cache_reuse(self, dataset, rng):
        x, hyp = dataset
        cache = CalibrationCache(directory=False)
        y = rng.standard_normal(x.n)
        res1 = run_test(y, x, hyp, StatisticSpec("sqrt_affine_lasso"),
                        mc=MC, cache=cache)
        assert len(cache._memory) == 1
        run_test(rng.standard_normal(x.n), x, hyp,
                 StatisticSpec("sqrt_affine_lasso"), mc=MC, cache=cache)
        assert len(cache._memory) == 1  # second call reused the entry
        assert res1.m_draws == MC.m_draws

    def test_directory_cache_roundtrip(self, dataset, rng, tmp_path):
        x, hyp = dataset
        y = rng.standard_normal(x.n)
        spec = StatisticSpec("sqrt_affine_lasso")
        res1 = run_test(y, x, hyp, spec, mc=MC,
                        cache=CalibrationCache(directory=str(tmp_path)))
        # a fresh cache instance reads the persisted calibration
        res2 = run_test(y, x, hyp, spec, mc=MC,
                        cache=CalibrationCache(directory=str(tmp_path)))
        assert res1.lambda_alpha == res2.lambda_alpha
        assert res1.p_value == res2.p_value
        assert list(tmp_path.glob("cal_*.txt"))


class TestComposite:
    def test_null_behaviour(self, dataset, rng):
        x, hyp = dataset
        y = rng.standard_normal(x.n)
        res = run_composite(y, x, hyp, mc=MC)
        assert res.statistic_id.startswith("composite(")
        assert res.reject == (res.observed.value > res.lambda_alpha)
        assert res.reject == (res.p_value <= res.alpha)

    def test_strong_signal_rejects(self, dataset, rng):
        x, hyp = dataset
        beta = np.array([0.0, 4.0, 4.0, -4.0, 4.0])
        y = x.values @ beta + rng.standard_normal(x.n)
        res = run_composite(y, x, hyp, mc=MC)
        assert res.reject

    def test_equal_stats_reduce_to_single(self, dataset, rng):
        x, hyp = dataset
        spec = StatisticSpec("sqrt_affine_lasso")
        cache = CalibrationCache(directory=False)
        for _ in range(3):
            y = rng.standard_normal(x.n)
            comp = run_composite(y, x, hyp, stat1=spec, stat2=spec, mc=MC)
            single = run_test(y, x, hyp, spec, mc=MC, cache=cache)
            assert comp.reject == single.reject

    def test_mixed_null_models_rejected(self, dataset, rng):
        x, hyp = dataset
        with pytest.raises(NotApplicable):
            run_composite(rng.standard_normal(x.n), x, hyp,
                          stat1=StatisticSpec("sqrt_affine_lasso"),
                          stat2=StatisticSpec("glm_score_sup",
                                              glm_family="gaussian"),
                          mc=MC)


class TestConfidenceRegion:
    def _fixture(self, rng, n=30, p=3):
        x = DesignMatrix(rng.standard_normal((n, p)))
        a = np.array([[1.0, -1.0, 0.5]])
        beta = rng.standard_normal(p)
        y = x.values @ beta + rng.standard_normal(n)
        return x, a, beta, y

    def test_ls_fit_always_member(self, rng):
        x, a, beta, y = self._fixture(rng)
        beta_ls = np.linalg.lstsq(x.values, y, rcond=None)[0]
        region = confidence_region(y, x, a, mc=MC)
        assert region.member(a @ beta_ls)

    def test_far_c_excluded(self, rng):
        x, a, beta, y = self._fixture(rng)
        region = confidence_region(y, x, a, mc=MC)
        assert not region.member(np.array([1e6]))

    def test_grid_interval_contiguous(self, rng):
        x, a, beta, y = self._fixture(rng)
        region = confidence_region(y, x, a, mc=MC)
        grid = np.linspace(-10, 10, 81)
        mask, endpoints = cr_grid(y, x, a, StatisticSpec("sqrt_affine_lasso"),
                                  region.lambda_alpha, grid)
        members = np.flatnonzero(mask)
        assert members.size > 0
        assert np.array_equal(members, np.arange(members[0], members[-1] + 1))
        assert endpoints == (grid[members[0]], grid[members[-1]])

    def test_duality_with_member(self, rng):
        x, a, beta, y = self._fixture(rng)
        region = confidence_region(y, x, a, mc=MC)
        for c in np.linspace(-5, 5, 21):
            assert region.member(np.array([c])) == cr_member(
                np.array([c]), y, x, a, StatisticSpec("sqrt_affine_lasso"),
                region.lambda_alpha)

    def test_empty_grid(self, rng):
        x, a, beta, y = self._fixture(rng)
        mask, endpoints = cr_grid(y, x, a, StatisticSpec("sqrt_affine_lasso"),
                                  1.0, np.array([]))
        assert mask.size == 0 and endpoints is None

    def test_non_pivotal_statistic_rejected(self, rng):
        x, a, beta, y = self._fixture(rng)
        with pytest.raises(NotApplicable):
            confidence_region(y, x, a, stat=StatisticSpec("affine_lasso"), mc=MC)

    def test_r3_grid_unsupported(self, rng):
        x = DesignMatrix(rng.standard_normal((10, 4)))
        a = np.eye(4)[:3]
        with pytest.raises(UnsupportedDimension):
            cr_grid(rng.standard_normal(10), x, a,
                    StatisticSpec("sqrt_affine_lasso"), 1.0,
                    np.zeros((5, 3)))

    def test_two_dimensional_grid(self, rng):
        x = DesignMatrix(rng.standard_normal((25, 3)))
        a = np.eye(3)[:2]
        beta = np.array([0.5, -0.5, 1.0])
        y = x.values @ beta + rng.standard_normal(25)
        region = confidence_region(y, x, a, mc=MC)
        beta_ls = np.linalg.lstsq(x.values, y, rcond=None)[0]
        pts = np.stack([np.array(beta_ls[:2]), np.array([50.0, 50.0])])
        mask = cr_grid(y, x, a, StatisticSpec("sqrt_affine_lasso"),
                       region.lambda_alpha, pts)
        assert mask[0] and not mask[1]
