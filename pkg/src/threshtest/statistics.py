"""Zero-thresholding statistics evaluated in closed form.

Each statistic is a pure function of the data; the affine family also
needs the precomputed :class:`~threshtest.core.ReducedProblem`. Batch
evaluators (N x M response matrices) back the Monte-Carlo calibration.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import (
    DesignMatrix,
    GlmFamily,
    LinearHypothesis,
    ReducedProblem,
    build_reduction,
    glm_family,
    residual,
)
from .exceptions import (
    DimensionMismatch,
    NotApplicable,
    RankDeficient,
)

__all__ = [
    "StatisticSpec",
    "StatValue",
    "AFFINE_FAMILIES",
    "SQRT_FAMILIES",
    "GLM_FAMILIES",
    "zt_affine_lasso",
    "zt_affine_group_lasso",
    "zt_sqrt_variant",
    "zt_fisher_weighted",
    "fisher_F",
    "zt_lad",
    "sign_test",
    "glm_score_stat",
    "link_identity_residual",
    "build_evaluator",
]

AFFINE_FAMILIES = (
    "affine_lasso",
    "affine_group_lasso",
    "sqrt_affine_lasso",
    "sqrt_affine_group_lasso",
)
SQRT_FAMILIES = ("sqrt_affine_lasso", "sqrt_affine_group_lasso")
GLM_FAMILIES = ("glm_score_sup", "glm_score_group")
_ALL_FAMILIES = AFFINE_FAMILIES + ("fisher_weighted", "lad_sign") + GLM_FAMILIES


@dataclass(frozen=True)
class StatValue:
    """A nonnegative statistic value; ``degenerate`` marks a vanished denominator."""

    value: float
    degenerate: bool = False


@dataclass(frozen=True)
class StatisticSpec:
    """Which zero-thresholding statistic to use, plus its structure.

    ``row_partition`` (0-indexed blocks over the rows of A) only matters
    for the group families; ``glm_family`` only for the GLM score ones
    and may be a tag string.
    """

    family: str
    row_partition: Optional[Sequence[Sequence[int]]] = None
    glm_family: Optional[GlmFamily] = None

    def __post_init__(self):
        if self.family not in _ALL_FAMILIES:
            raise NotApplicable(f"unknown statistic family {self.family!r}")
        if isinstance(self.glm_family, str):
            object.__setattr__(self, "glm_family", glm_family(self.glm_family))
        if self.family in GLM_FAMILIES and self.glm_family is None:
            raise NotApplicable(f"{self.family} requires a glm_family")
        if self.row_partition is not None:
            object.__setattr__(
                self,
                "row_partition",
                tuple(tuple(int(i) for i in block) for block in self.row_partition),
            )

    @property
    def is_group(self):
        return self.family in ("affine_group_lasso", "sqrt_affine_group_lasso",
                               "glm_score_group")

    @property
    def is_sqrt(self):
        return self.family in SQRT_FAMILIES

    def fingerprint(self):
        parts = [self.family]
        if self.is_group and self.row_partition is not None:
            parts.append("groups=" + ";".join(
                ",".join(str(i) for i in block) for block in self.row_partition))
        if self.glm_family is not None:
            parts.append("family=" + self.glm_family.tag)
        return "|".join(parts)


def _partition_ids(partition, r):
    """Map a block partition to (row -> block id, n_blocks)."""
    if partition is None:
        return np.arange(r, dtype=np.int64), r
    ids = np.full(r, -1, dtype=np.int64)
    for l, block in enumerate(partition):
        for i in block:
            if not 0 <= i < r or ids[i] != -1:
                raise DimensionMismatch("invalid partition over statistic rows")
            ids[i] = l
    if np.any(ids < 0):
        raise DimensionMismatch("partition does not cover all rows")
    return ids, len(partition)


def zt_affine_lasso(red, x, y):
    """lambda_0(y) = || (A A^T)^{-1} A X^T r ||_inf (affine lasso closed form)."""
    vals, _ = _affine_batch(red, x, np.asarray(y, dtype=float)[:, None],
                            group_ids=None, n_blocks=None, sqrt=False)
    return StatValue(float(vals[0]))


def zt_affine_group_lasso(red, x, y, partition=None):
    """max over blocks of || [(A A^T)^{-1} A X^T r]^{H_l} ||_2."""
    r_rows = red.pseudo_s.shape[0]
    ids, n_blocks = _partition_ids(partition, r_rows)
    vals, _ = _affine_batch(red, x, np.asarray(y, dtype=float)[:, None],
                            group_ids=ids, n_blocks=n_blocks, sqrt=False)
    return StatValue(float(vals[0]))


def zt_sqrt_variant(red, x, y, base="lasso", partition=None):
    """Square-root variant: the base statistic divided by ||r||_2 (scale pivotal)."""
    if base not in ("lasso", "group"):
        raise NotApplicable(f"unknown base {base!r}")
    if base == "group":
        ids, n_blocks = _partition_ids(partition, red.pseudo_s.shape[0])
    else:
        ids, n_blocks = None, None
    vals, degen = _affine_batch(red, x, np.asarray(y, dtype=float)[:, None],
                                group_ids=ids, n_blocks=n_blocks, sqrt=True)
    return StatValue(float(vals[0]), degenerate=bool(degen[0]))


def _affine_batch(red, x, y_mat, group_ids, n_blocks, sqrt):
    """Shared batch path for the affine family; y_mat is N x M."""
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    r_mat = residual(red, x, y_mat)
    z = red.apply_pseudo(x.values.T @ r_mat)
    if group_ids is None:
        vals = _kernels.sup_abs_cols(z)
    else:
        vals = _kernels.block_max_norm_cols(z, group_ids, n_blocks)
    if not sqrt:
        return vals, np.zeros(vals.shape, dtype=bool)
    denom = _kernels.norm_cols(r_mat)
    degen = denom == 0.0
    out = np.zeros_like(vals)
    np.divide(vals, denom, out=out, where=~degen)
    return out, degen


def _full_rank_ls(x, hyp):
    """Pieces for the Fisher-weighted statistic; requires rank(X) = P < N."""
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    n, p = x.n, x.p
    if p >= n:
        raise NotApplicable(f"fisher statistic needs P < N, got P={p}, N={n}")
    q, rr = np.linalg.qr(x.values)
    diag = np.abs(np.diag(rr))
    if np.min(diag) <= max(n, p) * np.finfo(float).eps * np.max(diag):
        raise RankDeficient("X is numerically column-rank deficient")
    # (X^T X)^{-1} A^T via the QR factor
    rinv_at = np.linalg.solve(rr, np.linalg.solve(rr.T, hyp.a_matrix.T))
    m = hyp.a_matrix @ rinv_at  # A (X^T X)^{-1} A^T
    l = np.linalg.cholesky(m)
    return x, q, rr, l


def _fisher_batch(x, hyp, y_mat):
    """lambda_0, RSS, and df for an N x M batch of responses."""
    x, q, rr, l = _full_rank_ls(x, hyp)
    qty = q.T @ y_mat
    beta = np.linalg.solve(rr, qty)
    fit = q @ qty
    rss = np.sum((y_mat - fit) ** 2, axis=0)
    d = hyp.a_matrix @ beta - hyp.c_vector[:, None]
    w = np.linalg.solve(l, d)
    lam0 = np.sqrt(np.maximum(np.sum(w * w, axis=0), 0.0))
    return lam0, rss, x.n - x.p


def zt_fisher_weighted(x, hyp, y):
    """Fisher-weighted statistic: lambda_0^2 = RSS_{H0} - RSS."""
    lam0, _, _ = _fisher_batch(x, hyp, np.asarray(y, dtype=float)[:, None])
    return StatValue(float(lam0[0]))


def fisher_F(x, hyp, y):
    """Classical F statistic computed through the thresholding route.

    Returns (F, df1, df2) with F = lambda_0^2 / (S_2^2 R),
    S_2^2 = RSS / (N - P).
    """
    lam0, rss, df2 = _fisher_batch(x, hyp, np.asarray(y, dtype=float)[:, None])
    df1 = hyp.r
    s2 = rss[0] / df2
    return float(lam0[0] ** 2 / (s2 * df1)), df1, df2


def zt_lad(x, y, center="none"):
    """LAD-lasso sign statistic ||X^T sign(y)||_inf.

    With ``center="median"`` the response is centered by its sample
    median first (the l1 fit of the intercept-only null model) and x
    should contain the tested columns only. sign(0) = 0.
    """
    if isinstance(x, DesignMatrix):
        x = x.values
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y have different numbers of rows")
    if center == "median":
        y = y - np.median(y)
    elif center != "none":
        raise NotApplicable(f"unknown centering {center!r}")
    return StatValue(float(np.max(np.abs(x.T @ np.sign(y)))))


def sign_test(u, v):
    """Paired sign statistic: B = #{n : v_n > u_n} and |2B - N|."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch("u and v must be 1-d of equal length")
    b = int(np.sum(v > u))
    return b, abs(2 * b - u.shape[0])


def _glm_batch(x_mat, y_mat, family, group_ids, n_blocks):
    n = y_mat.shape[0]
    ybar = np.mean(y_mat, axis=0)
    z = x_mat.T @ (y_mat - ybar[None, :])
    if family.tag == "gaussian":
        xi = np.var(y_mat, axis=0, ddof=1)
    elif family.tag == "bernoulli":
        xi = ybar * (1.0 - ybar)
    else:
        xi = ybar
    if group_ids is None:
        num = _kernels.sup_abs_cols(z)
    else:
        num = _kernels.block_max_norm_cols(z, group_ids, n_blocks)
    degen = xi <= 0.0
    out = np.zeros_like(num)
    np.divide(num, np.sqrt(n * np.where(degen, 1.0, xi)), out=out, where=~degen)
    return out, degen


def glm_score_stat(x, y, family, norm="sup", partition=None):
    """T(y) = ||X^T (y - ybar 1)|| / sqrt(N xi_hat), sup or max-of-block-2-norms.

    ``xi_hat`` is the family's null variance estimate from ybar
    (gaussian: unbiased sample variance). Degenerate when xi_hat = 0.
    """
    if isinstance(family, str):
        family = glm_family(family)
    if isinstance(x, DesignMatrix):
        x_mat = x.tested_values()
    else:
        x_mat = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_mat.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y have different numbers of rows")
    if norm == "sup":
        ids, n_blocks = None, None
    elif norm == "group":
        ids, n_blocks = _partition_ids(partition, x_mat.shape[1])
    else:
        raise NotApplicable(f"unknown norm {norm!r}")
    vals, degen = _glm_batch(x_mat, y[:, None], family, ids, n_blocks)
    return StatValue(float(vals[0]), degenerate=bool(degen[0]))


def link_identity_residual(family, x_grid):
    """Pointwise {h'(x)}^2 - V(h(x)) on the pivotal link's domain."""
    if isinstance(family, str):
        family = glm_family(family)
    x_grid = family.check_pivotal_domain(x_grid)
    h = family.pivotal_inverse_link(x_grid)
    return family.pivotal_derivative(x_grid) ** 2 - family.variance(h)


class Evaluator:
    """Bound statistic: evaluates one StatisticSpec on vectors or N x M batches."""

    def __init__(self, spec, x, hyp=None, red=None):
        if not isinstance(x, DesignMatrix):
            x = DesignMatrix(np.asarray(x, dtype=float))
        self.spec = spec
        self.x = x
        self.hyp = hyp
        self.statistic_id = spec.fingerprint()
        fam = spec.family
        if fam in AFFINE_FAMILIES:
            if hyp is None:
                raise NotApplicable(f"{fam} requires a hypothesis")
            self.red = red if red is not None else build_reduction(x, hyp)
            if spec.is_group:
                part = spec.row_partition
                if part is None:
                    part = hyp.row_partition
                self._ids, self._n_blocks = _partition_ids(part, hyp.r)
            else:
                self._ids, self._n_blocks = None, None
        elif fam == "fisher_weighted":
            if hyp is None:
                raise NotApplicable("fisher_weighted requires a hypothesis")
            _full_rank_ls(x, hyp)  # applicability check up front
            self.red = None
        elif fam == "lad_sign":
            self.red = None
            self._lad_x = x.tested_values()
            self._lad_center = "median" if x.intercept_column is not None else "none"
        else:  # glm score families
            self.red = None
            self._glm_x = x.tested_values()
            if spec.family == "glm_score_group":
                part = spec.row_partition
                if part is None:  # default: one block over all tested columns
                    part = (tuple(range(self._glm_x.shape[1])),)
                self._ids, self._n_blocks = _partition_ids(part, self._glm_x.shape[1])
            else:
                self._ids, self._n_blocks = None, None

    def evaluate_batch(self, y_mat):
        """Return (values, degenerate_mask) for an N x M response matrix."""
        y_mat = np.asarray(y_mat, dtype=float)
        fam = self.spec.family
        if fam in AFFINE_FAMILIES:
            return _affine_batch(self.red, self.x, y_mat, self._ids,
                                 self._n_blocks, sqrt=self.spec.is_sqrt)
        if fam == "fisher_weighted":
            # studentized by S2 so the statistic is pivotal in sigma and
            # Monte-Carlo calibration under unit-variance nulls is valid
            lam0, rss, df2 = _fisher_batch(self.x, self.hyp, y_mat)
            s2 = np.sqrt(rss / df2)
            degen = s2 == 0.0
            out = np.zeros_like(lam0)
            np.divide(lam0, s2, out=out, where=~degen)
            return out, degen
        if fam == "lad_sign":
            if self._lad_center == "median":
                y_mat = y_mat - np.median(y_mat, axis=0)[None, :]
            vals = _kernels.sup_abs_cols(self._lad_x.T @ np.sign(y_mat))
            return vals, np.zeros(vals.shape, dtype=bool)
        return _glm_batch(self._glm_x, y_mat, self.spec.glm_family,
                          self._ids, self._n_blocks)

    def evaluate(self, y):
        vals, degen = self.evaluate_batch(np.asarray(y, dtype=float)[:, None])
        return StatValue(float(vals[0]), degenerate=bool(degen[0]))


def build_evaluator(spec, x, hyp=None, red=None):
    """Construct the bound evaluator for (spec, X, hypothesis)."""
    return Evaluator(spec, x, hyp=hyp, red=red)
