"""Power and level simulation harness plus F-test / likelihood-ratio baselines.

Provides a self-contained experiment design at desk scale: AR(1)
gaussian designs, sparse/dense alternatives with random signs and
positions, canonical-link response generation, and per-cell rejection
rates with Monte-Carlo standard errors. Replicate substreams are keyed
by (seed, s, theta, rep), so a theta = 0 power row is bit-identical to
the level estimate of the same configuration and results do not depend
on thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats as sp_stats

from .calibration import (
    NullModel,
    calibrate_composite,
    calibrate_many,
    gaussian_pivotal_null,
    substream,
)
from .core import DesignMatrix, LinearHypothesis, SubsetHypothesis, build_reduction, glm_family
from .exceptions import InvalidSpec, NotApplicable, OverflowGuard, RankDeficient
from .inference import TestResult
from .statistics import (
    GLM_FAMILIES,
    StatValue,
    StatisticSpec,
    _fisher_batch,
    build_evaluator,
)

__all__ = [
    "AlternativeSpec",
    "DesignSpec",
    "ExperimentConfig",
    "PowerRow",
    "gen_design",
    "gen_beta",
    "gen_response",
    "estimate_power",
    "estimate_level",
    "baseline_f_test",
    "baseline_lrt",
    "fit_glm_irls",
]


@dataclass(frozen=True)
class AlternativeSpec:
    """H1 with exactly s nonzero coefficients of magnitude theta, random signs."""

    s: int
    theta: float

    def __post_init__(self):
        if self.s < 0 or self.theta < 0:
            raise InvalidSpec("need s >= 0 and theta >= 0")


@dataclass(frozen=True)
class DesignSpec:
    """Gaussian design rows with AR(1) covariance rho^|i-j| (identity: rho = 0)."""

    kind: str = "ar1"
    rho: float = 0.5
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in ("ar1", "identity"):
            raise InvalidSpec(f"unknown design kind {self.kind!r}")
        if not -1.0 < self.rho < 1.0:
            raise InvalidSpec("rho must be in (-1, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    p: int
    family: str = "gaussian"
    beta0: float = -2.0
    alpha: float = 0.05
    m_calib: int = 2000
    n_reps: int = 1000
    theta_grid: Sequence[float] = (0.0,)
    s_values: Sequence[int] = (1,)
    design_spec: DesignSpec = field(default_factory=DesignSpec)
    statistics: Sequence[Union[StatisticSpec, str]] = ()
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("gaussian", "bernoulli", "poisson"):
            raise InvalidSpec(f"unknown family {self.family!r}")
        for s in self.s_values:
            if not 0 <= s <= self.p:
                raise InvalidSpec(f"s = {s} outside [0, {self.p}]")
        for entry in self.statistics:
            if isinstance(entry, str) and entry not in ("composite", "fisher", "lrt"):
                raise InvalidSpec(f"unknown statistic tag {entry!r}")
            if isinstance(entry, str) and entry in ("fisher", "lrt") and self.p >= self.n:
                raise InvalidSpec(f"{entry} baseline requires P < N")


@dataclass(frozen=True)
class PowerRow:
    statistic_id: str
    family: str
    s: int
    theta: float
    power_estimate: float
    mc_standard_error: float
    n_reps: int
    status: str = "ok"

    HEADER = ("statistic_id", "family", "s", "theta", "power_estimate",
              "mc_standard_error", "n_reps", "status")

    def as_csv_row(self):
        return (self.statistic_id, self.family, str(self.s), repr(float(self.theta)),
                repr(float(self.power_estimate)), repr(float(self.mc_standard_error)),
                str(self.n_reps), self.status)


def gen_design(n, p, design_spec=DesignSpec(), rng=None, intercept=False):
    """Rows i.i.d. N(0, Sigma); optionally standardized columns and an
    all-ones intercept column prepended."""
    if n < 1 or p < 1:
        raise InvalidSpec("need n, p >= 1")
    if rng is None:
        rng = np.random.default_rng()
    z = rng.standard_normal((n, p))
    if design_spec.kind == "ar1" and design_spec.rho != 0.0 and p > 1:
        idx = np.arange(p)
        sigma = design_spec.rho ** np.abs(idx[:, None] - idx[None, :])
        z = z @ np.linalg.cholesky(sigma).T
    if design_spec.standardize:
        z = z - np.mean(z, axis=0)
        sd = np.std(z, axis=0)
        sd[sd == 0.0] = 1.0
        z = z / sd
    if intercept:
        return DesignMatrix(np.hstack([np.ones((n, 1)), z]), intercept_column=0)
    return DesignMatrix(z)


def gen_beta(alt, p, rng):
    """Coefficient vector with s entries of +-theta at random positions."""
    if alt.s > p:
        raise InvalidSpec(f"s = {alt.s} > p = {p}")
    beta = np.zeros(p)
    if alt.s > 0:
        positions = rng.permutation(p)[:alt.s]
        signs = rng.choice([-1.0, 1.0], size=alt.s)
        beta[positions] = signs * alt.theta
    return beta


_POISSON_ETA_MAX = 30.0


def gen_response(x, beta0, beta, family, rng):
    """Responses through the canonical link (gaussian noise sd = 1)."""
    if isinstance(x, DesignMatrix):
        x = x.tested_values()
    x = np.asarray(x, dtype=float)
    if isinstance(family, str):
        family = glm_family(family)
    eta = beta0 + x @ np.asarray(beta, dtype=float)
    if family.tag == "gaussian":
        return eta + rng.standard_normal(x.shape[0])
    if family.tag == "bernoulli":
        return rng.binomial(1, 1.0 / (1.0 + np.exp(-eta))).astype(float)
    if np.any(eta > _POISSON_ETA_MAX):
        raise OverflowGuard("poisson linear predictor exceeds the exp(30) guard")
    return rng.poisson(np.exp(eta)).astype(float)


def _theta_key(theta):
    # stable integer key so substreams are identical across configs that
    # share (s, theta, rep)
    return int(np.float64(theta).view(np.uint64))


def _glm_true_null(design, family_tag, beta0):
    """Plug-in null model at the configured intercept (harness-side oracle)."""
    fam = glm_family(family_tag)
    mean = float(fam.canonical_inverse_link(beta0))
    n = design.n
    if family_tag == "bernoulli":
        mean = min(max(mean, 1.0 / (2 * n)), 1.0 - 1.0 / (2 * n))
    return NullModel(kind="glm_plugin", design=design, family=fam,
                     null_mean=mean, beta0_hat=beta0)


class _Harness:
    """Holds the per-config design, calibrations, and batched evaluators."""

    def __init__(self, cfg):
        self.cfg = cfg
        rng = substream(cfg.seed, 0)
        self.x_cov = gen_design(cfg.n, cfg.p, cfg.design_spec, rng, intercept=False)
        self.family = glm_family(cfg.family)
        if cfg.family == "gaussian":
            self.x_full = DesignMatrix(
                np.hstack([np.ones((cfg.n, 1)), self.x_cov.values]),
                intercept_column=0)
            self.hyp = SubsetHypothesis(1, np.zeros(cfg.p)).expand(cfg.p + 1)
            self.red = build_reduction(self.x_full, self.hyp)
        else:
            self.x_full = None
            self.hyp = None
            self.red = None
        self._prepare_statistics()

    def _null_model(self):
        if self.cfg.family == "gaussian":
            return gaussian_pivotal_null(self.x_full, self.hyp, self.red)
        return _glm_true_null(self.x_cov, self.cfg.family, self.cfg.beta0)

    def _prepare_statistics(self):
        cfg = self.cfg
        self.entries = []
        model = self._null_model()
        mc_specs, mc_idx = [], []
        for i, entry in enumerate(cfg.statistics):
            if isinstance(entry, StatisticSpec):
                if entry.family in GLM_FAMILIES:
                    ev = build_evaluator(entry, self.x_cov)
                elif cfg.family != "gaussian":
                    self.entries.append(("error", entry.fingerprint(),
                                         "gaussian statistic with non-gaussian family"))
                    continue
                else:
                    ev = build_evaluator(entry, self.x_full, hyp=self.hyp, red=self.red)
                mc_specs.append(ev)
                mc_idx.append(len(self.entries))
                self.entries.append(("mc", ev, None))
            elif entry == "composite":
                if cfg.family == "gaussian":
                    one_block = (tuple(range(self.hyp.r)),)
                    ev1 = build_evaluator(StatisticSpec("sqrt_affine_lasso"),
                                          self.x_full, hyp=self.hyp, red=self.red)
                    ev2 = build_evaluator(
                        StatisticSpec("sqrt_affine_group_lasso", row_partition=one_block),
                        self.x_full, hyp=self.hyp, red=self.red)
                else:
                    one_block = (tuple(range(cfg.p)),)
                    ev1 = build_evaluator(
                        StatisticSpec("glm_score_sup", glm_family=cfg.family), self.x_cov)
                    ev2 = build_evaluator(
                        StatisticSpec("glm_score_group", row_partition=one_block,
                                      glm_family=cfg.family), self.x_cov)
                comp = calibrate_composite(ev1, ev2, model, cfg.m_calib,
                                           cfg.alpha, cfg.seed)
                self.entries.append(("composite", (ev1, ev2), comp))
            else:
                self.entries.append((entry, entry, None))  # fisher / lrt baselines
        if mc_specs:
            cals = calibrate_many(mc_specs, model, cfg.m_calib, cfg.alpha, cfg.seed)
            for idx, cal in zip(mc_idx, cals):
                kind, ev, _ = self.entries[idx]
                self.entries[idx] = (kind, ev, cal)

    def simulate_cell(self, s, theta):
        cfg = self.cfg
        alt = AlternativeSpec(s, theta)
        y = np.empty((cfg.n, cfg.n_reps))
        for m in range(cfg.n_reps):
            rng = substream(cfg.seed, 1, s, _theta_key(theta), m)
            beta = gen_beta(alt, cfg.p, rng)
            y[:, m] = gen_response(self.x_cov, cfg.beta0, beta, self.family, rng)
        return y

    def evaluate_cell(self, s, theta):
        cfg = self.cfg
        y = self.simulate_cell(s, theta)
        rows = []
        for kind, ev, artifact in self.entries:
            if kind == "error":
                rows.append(PowerRow(ev, cfg.family, s, theta, np.nan, np.nan,
                                     cfg.n_reps, status=artifact))
                continue
            try:
                if kind == "mc":
                    vals, degen = ev.evaluate_batch(y)
                    rejects = (~degen) & (vals > artifact.lambda_alpha)
                    sid = ev.statistic_id
                elif kind == "composite":
                    ev1, ev2 = ev
                    v1, d1 = ev1.evaluate_batch(y)
                    v2, d2 = ev2.evaluate_batch(y)
                    ratio = np.maximum(v1 / artifact.cal_1.lambda_alpha,
                                       v2 / artifact.cal_2.lambda_alpha)
                    rejects = (~(d1 | d2)) & (ratio > artifact.kappa_alpha)
                    sid = (f"composite({artifact.cal_1.statistic_id},"
                           f"{artifact.cal_2.statistic_id})")
                elif kind == "fisher":
                    rejects = self._fisher_rejects(y)
                    sid = "baseline_fisher"
                else:
                    rejects = self._lrt_rejects(y)
                    sid = "baseline_lrt"
            except Exception as exc:  # per-cell failures never abort the grid
                rows.append(PowerRow(str(ev), cfg.family, s, theta, np.nan, np.nan,
                                     cfg.n_reps, status=f"error: {exc}"))
                continue
            power = float(np.mean(rejects))
            se = float(np.sqrt(power * (1.0 - power) / cfg.n_reps))
            rows.append(PowerRow(sid, cfg.family, s, theta, power, se, cfg.n_reps))
        return rows

    def _fisher_rejects(self, y):
        cfg = self.cfg
        if cfg.family == "gaussian":
            x, hyp = self.x_full, self.hyp
        else:
            x = DesignMatrix(np.hstack([np.ones((cfg.n, 1)), self.x_cov.values]),
                             intercept_column=0)
            hyp = SubsetHypothesis(1, np.zeros(cfg.p)).expand(cfg.p + 1)
        lam0, rss, df2 = _fisher_batch(x, hyp, y)
        f_vals = lam0 ** 2 / (rss / df2 * hyp.r)
        return sp_stats.f.sf(f_vals, hyp.r, df2) <= cfg.alpha

    def _lrt_rejects(self, y):
        cfg = self.cfg
        out = np.zeros(y.shape[1], dtype=bool)
        x1 = np.hstack([np.ones((cfg.n, 1)), self.x_cov.values])
        for m in range(y.shape[1]):
            res = baseline_lrt(y[:, m], self.x_cov.values, cfg.family, cfg.alpha,
                               _design_with_intercept=x1)
            out[m] = res.reject
        return out


def estimate_power(cfg, threads=1):
    """Rejection rate per (statistic, s, theta) cell, calibrating once per
    (design, statistic) and reusing across the whole grid."""
    harness = _Harness(cfg)
    cells = [(s, theta) for s in cfg.s_values for theta in cfg.theta_grid]
    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda cell: harness.evaluate_cell(*cell), cells))
    else:
        results = [harness.evaluate_cell(*cell) for cell in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    rows.sort(key=lambda r: (r.statistic_id, r.s, r.theta))
    return rows


def estimate_level(cfg, threads=1):
    """estimate_power restricted to theta = 0 (the null point of the H1 grid)."""
    null_cfg = ExperimentConfig(
        n=cfg.n, p=cfg.p, family=cfg.family, beta0=cfg.beta0, alpha=cfg.alpha,
        m_calib=cfg.m_calib, n_reps=cfg.n_reps, theta_grid=(0.0,),
        s_values=(min(cfg.s_values),) if cfg.s_values else (0,),
        design_spec=cfg.design_spec, statistics=cfg.statistics, seed=cfg.seed)
    return estimate_power(null_cfg, threads=threads)


def baseline_f_test(y, x, hyp, alpha=0.05):
    """Exact F-test of H0: A beta = c from two least-squares fits."""
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    if isinstance(hyp, SubsetHypothesis):
        hyp = hyp.expand(x.p)
    y = np.asarray(y, dtype=float)
    lam0, rss, df2 = _fisher_batch(x, hyp, y[:, None])
    df1 = hyp.r
    s2 = rss[0] / df2
    f_val = float(lam0[0] ** 2 / (s2 * df1)) if s2 > 0 else np.inf
    p = float(sp_stats.f.sf(f_val, df1, df2))
    return TestResult(
        observed=StatValue(f_val),
        lambda_alpha=float(sp_stats.f.ppf(1.0 - alpha, df1, df2)),
        p_value=p,
        reject=p <= alpha,
        alpha=alpha,
        statistic_id="baseline_fisher",
    )


_ETA_CLIP = 30.0


def _deviance(y, mu, tag):
    if tag == "gaussian":  # sigma = 1 known: deviance reduces to RSS
        return float(np.sum((y - mu) ** 2))
    if tag == "bernoulli":
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(y > 0, y * np.log(y / mu), 0.0)
            t2 = np.where(y < 1, (1 - y) * np.log((1 - y) / (1 - mu)), 0.0)
        return float(2.0 * np.sum(t1 + t2))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(t - (y - mu)))


def fit_glm_irls(x, y, family, tol=1e-8, max_iter=100):
    """Canonical-link GLM fit by iteratively reweighted least squares.

    Returns (coefficients, deviance). Desk-scale only (P < N full rank).
    """
    if isinstance(family, str):
        family = glm_family(family)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if p >= n:
        raise NotApplicable("IRLS baseline requires P < N")
    if family.tag == "gaussian":
        beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        if rank < p:
            raise RankDeficient("design is rank deficient")
        mu = x @ beta
        return beta, _deviance(y, mu, "gaussian")
    beta = np.zeros(p)
    ybar = float(np.mean(y))
    # start from the intercept-only fit when an intercept column is present
    ones = np.where(np.all(x == 1.0, axis=0))[0]
    mustart = min(max(ybar, 1e-8), 1 - 1e-8) if family.tag == "bernoulli" \
        else max(ybar, 1e-8)
    if ones.size:
        beta[ones[0]] = float(family.canonical_link(mustart))
    dev = np.inf
    for _ in range(max_iter):
        eta = np.clip(x @ beta, -_ETA_CLIP, _ETA_CLIP)
        mu = family.canonical_inverse_link(eta)
        w = np.asarray(family.variance(mu), dtype=float)  # canonical: dmu/deta = V(mu)
        w = np.maximum(w, 1e-10)
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        beta, _, _, _ = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)
        new_dev = _deviance(y, family.canonical_inverse_link(
            np.clip(x @ beta, -_ETA_CLIP, _ETA_CLIP)), family.tag)
        if abs(dev - new_dev) <= tol * (abs(new_dev) + 0.1):
            dev = new_dev
            break
        dev = new_dev
    return beta, dev


def baseline_lrt(y, x, family, alpha=0.05, _design_with_intercept=None):
    """Likelihood-ratio (deviance) test of H0: beta = 0 with a free intercept,
    against the chi-squared reference with P degrees of freedom."""
    if isinstance(x, DesignMatrix):
        x = x.tested_values()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(family, str):
        family = glm_family(family)
    n, p = x.shape
    if p >= n:
        raise NotApplicable("LRT baseline requires P < N")
    x1 = _design_with_intercept
    if x1 is None:
        x1 = np.hstack([np.ones((n, 1)), x])
    _, dev_full = fit_glm_irls(x1, y, family)
    ybar = float(np.mean(y))
    if family.tag == "bernoulli":
        mu0 = min(max(ybar, 1e-12), 1 - 1e-12)
    elif family.tag == "poisson":
        mu0 = max(ybar, 1e-12)
    else:
        mu0 = ybar
    dev_null = _deviance(y, np.full(n, mu0), family.tag)
    stat = max(dev_null - dev_full, 0.0)
    p_val = float(sp_stats.chi2.sf(stat, p))
    return TestResult(
        observed=StatValue(stat),
        lambda_alpha=float(sp_stats.chi2.ppf(1.0 - alpha, p)),
        p_value=p_val,
        reject=p_val <= alpha,
        alpha=alpha,
        statistic_id="baseline_lrt",
    )
