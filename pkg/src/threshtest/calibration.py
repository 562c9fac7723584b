"""Monte-Carlo calibration of null-thresholding statistics.

The null statistic is simulated M times, and the test-threshold is the
k-th order statistic with k = ceil((M+1)(1-alpha)), a conservative
finite-M reading of the generalized inverse quantile. Replicate m of a
run seeded with s draws from the substream keyed (s, batch, m), so
results do not depend on worker count or evaluation order.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DesignMatrix, GlmFamily, LinearHypothesis, ReducedProblem
from .exceptions import (
    DimensionMismatch,
    InsufficientDraws,
    StatisticMismatch,
)
from .statistics import Evaluator, StatisticSpec, StatValue, build_evaluator

__all__ = [
    "NullModel",
    "CalibrationResult",
    "CompositeCalibration",
    "gaussian_pivotal_null",
    "glm_plugin_null",
    "substream",
    "simulate_null",
    "calibrate",
    "calibrate_many",
    "calibrate_composite",
    "p_value",
    "order_stat_index",
]


def substream(seed, *key):
    """Independent generator for one replicate, keyed by (seed, *key)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class NullModel:
    """How to draw Y0 =d Y under H0.

    ``gaussian_pivotal`` draws X beta_c + standard normal noise, which is
    enough for statistics pivotal in (beta, sigma). ``glm_plugin`` draws
    i.i.d. family responses at the plug-in null mean h(beta0_hat) = ybar.
    """

    kind: str
    design: DesignMatrix
    hyp: Optional[LinearHypothesis] = None
    reduced: Optional[ReducedProblem] = None
    family: Optional[GlmFamily] = None
    null_mean: Optional[float] = None
    beta0_hat: Optional[float] = None


def gaussian_pivotal_null(design, hyp, reduced):
    return NullModel(kind="gaussian_pivotal", design=design, hyp=hyp, reduced=reduced)


def glm_plugin_null(design, family, y_observed):
    """Plug-in null model with mean ybar (bernoulli clipped off {0, 1})."""
    y_observed = np.asarray(y_observed, dtype=float)
    n = design.n
    if y_observed.shape[0] != n:
        raise DimensionMismatch("response length does not match design")
    mean = float(np.mean(y_observed))
    if family.tag == "bernoulli":
        mean = min(max(mean, 1.0 / (2 * n)), 1.0 - 1.0 / (2 * n))
    if family.tag == "gaussian":
        beta0_hat = mean
    elif family.tag == "poisson" and mean <= 0.0:
        beta0_hat = -math.inf
    else:
        beta0_hat = float(family.canonical_link(mean))
    return NullModel(kind="glm_plugin", design=design, family=family,
                     null_mean=mean, beta0_hat=beta0_hat)


def simulate_null(model, rng):
    """One draw of Y0 under the null model."""
    n = model.design.n
    if model.kind == "gaussian_pivotal":
        return model.reduced.x_fit_c + rng.standard_normal(n)
    tag = model.family.tag
    if tag == "bernoulli":
        return rng.binomial(1, model.null_mean, size=n).astype(float)
    if tag == "poisson":
        return rng.poisson(model.null_mean, size=n).astype(float)
    # gaussian plug-in: unit variance; the gaussian score statistic is
    # location/scale invariant so the choice is immaterial
    return model.null_mean + rng.standard_normal(n)


def _simulate_batch(model, seed, m_draws, batch):
    n = model.design.n
    out = np.empty((n, m_draws))
    for m in range(m_draws):
        out[:, m] = simulate_null(model, substream(seed, batch, m))
    return out


@dataclass(frozen=True)
class CalibrationResult:
    """Sorted null draws plus the calibrated test-threshold."""

    sorted_null_stats: np.ndarray
    lambda_alpha: float
    alpha: float
    m_draws: int
    seed: int
    statistic_id: str

    def save(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# statistic_id={self.statistic_id}\n")
            fh.write(f"# m_draws={self.m_draws}\n")
            fh.write(f"# alpha={self.alpha!r}\n")
            fh.write(f"# seed={self.seed}\n")
            fh.write(f"# lambda_alpha={float(self.lambda_alpha)!r}\n")
            for v in self.sorted_null_stats:
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def load(cls, path):
        meta = {}
        draws = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key] = val
                else:
                    draws.append(float(line))
        return cls(
            sorted_null_stats=np.asarray(draws),
            lambda_alpha=float(meta["lambda_alpha"]),
            alpha=float(meta["alpha"]),
            m_draws=int(meta["m_draws"]),
            seed=int(meta["seed"]),
            statistic_id=meta["statistic_id"],
        )


@dataclass(frozen=True)
class CompositeCalibration:
    """Component calibrations plus the composite threshold kappa_alpha."""

    cal_1: CalibrationResult
    cal_2: CalibrationResult
    kappa_alpha: float
    alpha: float
    m_draws: int
    seed: int
    sorted_composite_stats: Optional[np.ndarray] = None


def order_stat_index(m_draws, alpha):
    """1-based order-statistic index k = ceil((M+1)(1-alpha))."""
    if not 0.0 < alpha < 1.0:
        raise InsufficientDraws(f"alpha must be in (0,1), got {alpha}")
    if m_draws < math.ceil(1.0 / alpha) - 1:
        raise InsufficientDraws(
            f"M = {m_draws} < ceil(1/alpha) - 1 = {math.ceil(1.0 / alpha) - 1}"
        )
    # small nudge guards against 0.95 * 100 = 95.000000000000003-type float noise
    k = math.ceil((m_draws + 1) * (1.0 - alpha) - 1e-9)
    k = min(max(k, 1), m_draws)
    return k


def _resolve_evaluator(stat, model):
    if isinstance(stat, Evaluator):
        return stat
    return build_evaluator(stat, model.design, hyp=model.hyp, red=model.reduced)


def calibrate(stat, model, m_draws, alpha, seed):
    """Simulate M null draws of the statistic and take the upper alpha quantile."""
    return calibrate_many([stat], model, m_draws, alpha, seed)[0]


def calibrate_many(stats, model, m_draws, alpha, seed, batch=0):
    """Calibrate several statistics on one shared batch of null draws."""
    k = order_stat_index(m_draws, alpha)
    evaluators = [_resolve_evaluator(s, model) for s in stats]
    y0 = _simulate_batch(model, seed, m_draws, batch)
    results = []
    for ev in evaluators:
        vals, degen = ev.evaluate_batch(y0)
        vals = np.where(degen, np.inf, vals)  # degenerate draws sort last
        vals = np.sort(vals)
        results.append(CalibrationResult(
            sorted_null_stats=vals,
            lambda_alpha=float(vals[k - 1]),
            alpha=alpha,
            m_draws=m_draws,
            seed=seed,
            statistic_id=ev.statistic_id,
        ))
    return results


def p_value(observed, cal, statistic_id=None):
    """Monte-Carlo p-value (1 + #{draws >= observed}) / (M + 1)."""
    if statistic_id is not None and statistic_id != cal.statistic_id:
        raise StatisticMismatch(
            f"observed statistic {statistic_id!r} vs calibration {cal.statistic_id!r}"
        )
    if isinstance(observed, StatValue):
        observed = observed.value
    count = cal.m_draws - int(np.searchsorted(cal.sorted_null_stats, observed, side="left"))
    return (1 + count) / (cal.m_draws + 1)


def calibrate_composite(stat1, stat2, model, m_draws, alpha, seed):
    """Two-batch calibration of the composite max-of-ratios statistic.

    Batch 1 (shared draws) calibrates the component thresholds; an
    independent batch 2 calibrates kappa_alpha for the composite value
    max(lambda_0^(1)/lambda_alpha^(1), lambda_0^(2)/lambda_alpha^(2)).
    """
    k = order_stat_index(m_draws, alpha)
    cal1, cal2 = calibrate_many([stat1, stat2], model, m_draws, alpha, seed, batch=0)
    ev1 = _resolve_evaluator(stat1, model)
    ev2 = _resolve_evaluator(stat2, model)
    y0 = _simulate_batch(model, seed, m_draws, batch=1)
    v1, d1 = ev1.evaluate_batch(y0)
    v2, d2 = ev2.evaluate_batch(y0)
    comp = np.maximum(
        np.where(d1, np.inf, v1) / cal1.lambda_alpha,
        np.where(d2, np.inf, v2) / cal2.lambda_alpha,
    )
    comp = np.sort(comp)
    return CompositeCalibration(
        cal_1=cal1,
        cal_2=cal2,
        kappa_alpha=float(comp[k - 1]),
        alpha=alpha,
        m_draws=m_draws,
        seed=seed,
        sorted_composite_stats=comp,
    )
