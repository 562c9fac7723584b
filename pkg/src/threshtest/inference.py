"""User-facing test execution and confidence regions.

``run_test`` wires hypothesis reduction, calibration (cached), statistic
evaluation and the rejection rule together; ``run_composite`` does the
same for the max-of-ratios composite test. Confidence regions invert the
square-root (scale-pivotal) tests, so one calibration serves every
candidate c.
"""

import hashlib
import os
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats as sp_stats

from .calibration import (
    CalibrationResult,
    calibrate,
    calibrate_composite,
    gaussian_pivotal_null,
    glm_plugin_null,
    p_value as mc_p_value,
)
from .core import DesignMatrix, LinearHypothesis, SubsetHypothesis, build_reduction
from .exceptions import NotApplicable, UnsupportedDimension
from .statistics import (
    GLM_FAMILIES,
    SQRT_FAMILIES,
    StatisticSpec,
    StatValue,
    _fisher_batch,
    build_evaluator,
)

__all__ = [
    "McConfig",
    "TestResult",
    "ConfidenceRegion",
    "CalibrationCache",
    "run_test",
    "run_composite",
    "cr_member",
    "cr_grid",
    "confidence_region",
]


@dataclass(frozen=True)
class McConfig:
    """Monte-Carlo settings shared by all calibrated tests."""

    m_draws: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class TestResult:
    observed: StatValue
    lambda_alpha: float
    p_value: float
    reject: bool
    alpha: float
    statistic_id: str
    m_draws: int = 0
    seed: int = 0
    degenerate_note: Optional[str] = None

    def to_record(self):
        """Flat key-value record for serialization."""
        return {
            "statistic": self.statistic_id,
            "observed": self.observed.value,
            "lambda_alpha": self.lambda_alpha,
            "p_value": self.p_value,
            "reject": int(self.reject),
            "alpha": self.alpha,
            "M": self.m_draws,
            "seed": self.seed,
            "degenerate_note": self.degenerate_note or "",
        }


def _digest(*parts):
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part, dtype=float).tobytes())
        else:
            h.update(repr(part).encode())
        h.update(b"|")
    return h.hexdigest()


class CalibrationCache:
    """Read-mostly calibration cache, optionally backed by a directory.

    The directory defaults to THRESHTEST_CACHE_DIR when set; pass
    ``directory=False`` for a memory-only cache. Entries are installed
    once and never mutated.
    """

    def __init__(self, directory=None):
        if directory is None:
            directory = os.environ.get("THRESHTEST_CACHE_DIR") or None
        elif directory is False:
            directory = None
        self.directory = directory
        self._memory = {}

    def get_or_compute(self, key, compute):
        if key in self._memory:
            return self._memory[key]
        if self.directory is not None:
            path = os.path.join(self.directory, f"cal_{key}.txt")
            if os.path.exists(path):
                cal = CalibrationResult.load(path)
                self._memory[key] = cal
                return cal
        cal = compute()
        self._memory[key] = cal
        if self.directory is not None:
            os.makedirs(self.directory, exist_ok=True)
            cal.save(os.path.join(self.directory, f"cal_{key}.txt"))
        return cal


_default_cache = None


def _get_default_cache():
    global _default_cache
    if _default_cache is None:
        _default_cache = CalibrationCache()
    return _default_cache


def _coerce_inputs(y, x, hyp):
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    if isinstance(hyp, SubsetHypothesis):
        hyp = hyp.expand(x.p)
    y = np.asarray(y, dtype=float)
    return y, x, hyp


def _fisher_exact_test(y, x, hyp, stat, alpha):
    """Exact-F calibration of the Fisher-weighted thresholding test.

    With Fisher weighting the thresholding test is identical to Fisher's
    F-test, whose null distribution is known exactly, so no Monte-Carlo
    step is needed.
    """
    lam0, rss, df2 = _fisher_batch(x, hyp, y[:, None])
    df1 = hyp.r
    s2 = rss[0] / df2
    f_val = lam0[0] ** 2 / (s2 * df1) if s2 > 0 else np.inf
    p = float(sp_stats.f.sf(f_val, df1, df2))
    f_crit = float(sp_stats.f.ppf(1.0 - alpha, df1, df2))
    lam_alpha = float(np.sqrt(f_crit * s2 * df1))
    return TestResult(
        observed=StatValue(float(lam0[0])),
        lambda_alpha=lam_alpha,
        p_value=p,
        reject=bool(lam0[0] > lam_alpha),
        alpha=alpha,
        statistic_id=stat.fingerprint() + "|exact_f",
    )


def _null_model_for(stat, y, x, hyp, red):
    if stat.family in GLM_FAMILIES:
        return glm_plugin_null(x, stat.glm_family, y)
    return gaussian_pivotal_null(x, hyp, red)


def run_test(y, x, hyp, stat, alpha=0.05, mc=McConfig(), cache=None):
    """Run one thresholding test and return a populated TestResult.

    Degenerate observed statistics give a conservative no-reject with an
    explanatory note rather than an error. `stat` may be a StatisticSpec
    or a bare family name.
    """
    if isinstance(stat, str):
        stat = StatisticSpec(stat)
    y, x, hyp = _coerce_inputs(y, x, hyp)
    if stat.family == "fisher_weighted":
        return _fisher_exact_test(y, x, hyp, stat, alpha)
    red = None
    if stat.family not in GLM_FAMILIES:
        red = build_reduction(x, hyp)  # gaussian null model needs the reduction
    evaluator = build_evaluator(stat, x, hyp=hyp, red=red)
    model = _null_model_for(stat, y, x, hyp, red)
    if cache is None:
        cache = _get_default_cache()
    key = _digest(x.values, hyp.a_matrix, hyp.c_vector, evaluator.statistic_id,
                  mc.m_draws, alpha, mc.seed, model.kind, model.null_mean)
    cal = cache.get_or_compute(
        key, lambda: calibrate(evaluator, model, mc.m_draws, alpha, mc.seed))
    observed = evaluator.evaluate(y)
    if observed.degenerate:
        return TestResult(
            observed=observed,
            lambda_alpha=cal.lambda_alpha,
            p_value=1.0,
            reject=False,
            alpha=alpha,
            statistic_id=cal.statistic_id,
            m_draws=mc.m_draws,
            seed=mc.seed,
            degenerate_note="statistic denominator vanished; conservative no-reject",
        )
    p = mc_p_value(observed, cal)
    return TestResult(
        observed=observed,
        lambda_alpha=cal.lambda_alpha,
        p_value=p,
        reject=bool(observed.value > cal.lambda_alpha),
        alpha=alpha,
        statistic_id=cal.statistic_id,
        m_draws=mc.m_draws,
        seed=mc.seed,
    )


def _default_composite_pair(hyp):
    one_block = (tuple(range(hyp.r)),)
    return (
        StatisticSpec("sqrt_affine_lasso"),
        StatisticSpec("sqrt_affine_group_lasso", row_partition=one_block),
    )


def run_composite(y, x, hyp, stat1=None, stat2=None, alpha=0.05, mc=McConfig()):
    """Composite test rejecting when max of threshold-normalized statistics
    exceeds its own calibrated quantile.

    Defaults to the sqrt affine lasso (sup norm) paired with the sqrt
    affine group lasso over a single block.
    """
    y, x, hyp = _coerce_inputs(y, x, hyp)
    if stat1 is None or stat2 is None:
        d1, d2 = _default_composite_pair(hyp)
        stat1 = stat1 or d1
        stat2 = stat2 or d2
    red = build_reduction(x, hyp)
    ev1 = build_evaluator(stat1, x, hyp=hyp, red=red)
    ev2 = build_evaluator(stat2, x, hyp=hyp, red=red)
    if stat1.family in GLM_FAMILIES or stat2.family in GLM_FAMILIES:
        if stat1.family not in GLM_FAMILIES or stat2.family not in GLM_FAMILIES:
            raise NotApplicable("cannot mix gaussian and glm null models")
        model = glm_plugin_null(x, stat1.glm_family, y)
    else:
        model = gaussian_pivotal_null(x, hyp, red)
    comp = calibrate_composite(ev1, ev2, model, mc.m_draws, alpha, mc.seed)
    o1 = ev1.evaluate(y)
    o2 = ev2.evaluate(y)
    if o1.degenerate or o2.degenerate:
        return TestResult(
            observed=StatValue(0.0, degenerate=True),
            lambda_alpha=comp.kappa_alpha,
            p_value=1.0,
            reject=False,
            alpha=alpha,
            statistic_id=f"composite({comp.cal_1.statistic_id},{comp.cal_2.statistic_id})",
            m_draws=mc.m_draws,
            seed=mc.seed,
            degenerate_note="component statistic degenerate; conservative no-reject",
        )
    observed = max(o1.value / comp.cal_1.lambda_alpha,
                   o2.value / comp.cal_2.lambda_alpha)
    count = comp.m_draws - int(
        np.searchsorted(comp.sorted_composite_stats, observed, side="left"))
    return TestResult(
        observed=StatValue(observed),
        lambda_alpha=comp.kappa_alpha,
        p_value=(1 + count) / (comp.m_draws + 1),
        reject=bool(observed > comp.kappa_alpha),
        alpha=alpha,
        statistic_id=f"composite({comp.cal_1.statistic_id},{comp.cal_2.statistic_id})",
        m_draws=mc.m_draws,
        seed=mc.seed,
    )


def _require_pivotal(stat):
    if stat.family not in SQRT_FAMILIES:
        raise NotApplicable(
            "confidence regions need a statistic pivotal in (beta, sigma); "
            "use a square-root variant"
        )


def _lambda_cr(c, y, x, a_matrix, stat):
    hyp = LinearHypothesis(a_matrix, np.atleast_1d(np.asarray(c, dtype=float)),
                           stat.row_partition)
    red = build_reduction(x, hyp)
    ev = build_evaluator(stat, x, hyp=hyp, red=red)
    val = ev.evaluate(y)
    # r = 0 means y sits exactly in the null fit space: lambda_0 = 0
    return 0.0 if val.degenerate else val.value


def cr_member(c, y, x, a_matrix, stat, lambda_alpha):
    """Membership of c in the test-inversion region: lambda_CR(c; y) <= lambda_alpha."""
    _require_pivotal(stat)
    y, x, _ = _coerce_inputs(y, x, LinearHypothesis(
        a_matrix, np.atleast_1d(np.asarray(c, dtype=float))))
    return _lambda_cr(c, y, x, a_matrix, stat) <= lambda_alpha


def cr_grid(y, x, a_matrix, stat, lambda_alpha, grid):
    """Membership mask over a lattice of c candidates (R in {1, 2}).

    For R = 1 also returns the endpoints of the contiguous membership
    interval (None when empty).
    """
    _require_pivotal(stat)
    a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    r = a.shape[0]
    if r > 2:
        raise UnsupportedDimension(f"grids support R <= 2, got R = {r}")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        return (np.zeros(0, dtype=bool), None) if r == 1 else np.zeros(0, dtype=bool)
    if r == 1:
        points = grid.reshape(-1, 1)
    else:
        if grid.ndim != 2 or grid.shape[1] != 2:
            raise UnsupportedDimension("R = 2 grids must be (G, 2) arrays of points")
        points = grid
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    mask = np.array([
        _lambda_cr(pt, y, x, a, stat) <= lambda_alpha for pt in points
    ])
    if r == 1:
        members = np.flatnonzero(mask)
        endpoints = None
        if members.size:
            endpoints = (float(points[members[0], 0]), float(points[members[-1], 0]))
        return mask, endpoints
    return mask


@dataclass(frozen=True)
class ConfidenceRegion:
    """Test-inversion region {c : lambda_CR(c; y) <= lambda_alpha}."""

    hypothesis_matrix: np.ndarray
    lambda_alpha: float
    evaluator: Callable[[np.ndarray], float]

    def member(self, c):
        return self.evaluator(c) <= self.lambda_alpha


def confidence_region(y, x, a_matrix, stat=None, alpha=0.05, mc=McConfig()):
    """Build a (1 - alpha) confidence region for A beta by test inversion.

    Defaults to the square-root affine lasso statistic; its pivotality
    in (beta, sigma) means the single calibration at c = 0 is valid for
    every candidate c.
    """
    if stat is None:
        stat = StatisticSpec("sqrt_affine_lasso")
    _require_pivotal(stat)
    a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    hyp0 = LinearHypothesis(a, np.zeros(a.shape[0]), stat.row_partition)
    red0 = build_reduction(x, hyp0)
    ev0 = build_evaluator(stat, x, hyp=hyp0, red=red0)
    model = gaussian_pivotal_null(x, hyp0, red0)
    cal = calibrate(ev0, model, mc.m_draws, alpha, mc.seed)
    return ConfidenceRegion(
        hypothesis_matrix=a,
        lambda_alpha=cal.lambda_alpha,
        evaluator=lambda c: _lambda_cr(c, y, x, a, stat),
    )
