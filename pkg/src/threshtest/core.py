"""Model and hypothesis types plus the linear-algebra reduction.

Everything downstream consumes a :class:`ReducedProblem`: an orthonormal
kernel basis of the hypothesis matrix, the minimum-norm solution of
``A beta = c``, and a thin factor of the projector onto ``range(X K_A)``
so the residual can be formed with two matrix-vector products.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import (
    DimensionMismatch,
    DomainError,
    RankDeficient,
    Untestable,
)

__all__ = [
    "DesignMatrix",
    "LinearHypothesis",
    "SubsetHypothesis",
    "ReducedProblem",
    "GlmFamily",
    "glm_family",
    "kernel_basis",
    "min_norm_solution",
    "build_reduction",
    "residual",
]


def _as_2d(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-d, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return a


def _as_1d(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class DesignMatrix:
    """Dense N x P covariate matrix, optionally with an all-ones intercept column."""

    values: np.ndarray
    column_names: Optional[Sequence[str]] = None
    intercept_column: Optional[int] = None

    def __post_init__(self):
        values = _as_2d(self.values, "design matrix")
        object.__setattr__(self, "values", values)
        n, p = values.shape
        if n < 2 or p < 1:
            raise DimensionMismatch(f"need N >= 2 and P >= 1, got N={n}, P={p}")
        if self.column_names is not None and len(self.column_names) != p:
            raise DimensionMismatch("column_names length does not match P")
        if self.intercept_column is not None:
            j = self.intercept_column
            if not 0 <= j < p:
                raise DimensionMismatch("intercept_column out of range")
            if not np.allclose(values[:, j], 1.0):
                raise DimensionMismatch("intercept column is not all ones")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def tested_values(self):
        """Columns excluding the intercept column, if one is marked."""
        if self.intercept_column is None:
            return self.values
        keep = [j for j in range(self.p) if j != self.intercept_column]
        return self.values[:, keep]


def _default_partition(r):
    return tuple((i,) for i in range(r))


def _validate_partition(partition, r):
    seen = np.zeros(r, dtype=bool)
    blocks = []
    for block in partition:
        idx = np.asarray(block, dtype=int)
        if idx.size == 0:
            raise DimensionMismatch("empty partition block")
        if np.any(idx < 0) or np.any(idx >= r):
            raise DimensionMismatch("partition index out of range")
        if np.any(seen[idx]):
            raise DimensionMismatch("partition blocks overlap")
        seen[idx] = True
        blocks.append(tuple(int(i) for i in idx))
    if not np.all(seen):
        raise DimensionMismatch("partition does not cover all rows")
    return tuple(blocks)


@dataclass(frozen=True)
class LinearHypothesis:
    """The pair (A, c) of H0: A beta = c with a row partition {H_l}.

    Rows are 0-indexed; the default partition is all singletons (the
    natural choice for sup-norm statistics).
    """

    a_matrix: np.ndarray
    c_vector: np.ndarray
    row_partition: Optional[Sequence[Sequence[int]]] = None

    def __post_init__(self):
        a = _as_2d(self.a_matrix, "A")
        c = _as_1d(self.c_vector, "c")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "c_vector", c)
        r, p = a.shape
        if c.shape[0] != r:
            raise DimensionMismatch(f"c has length {c.shape[0]}, expected {r}")
        if r > p:
            raise RankDeficient(f"A is {r}x{p}: cannot have full row rank")
        if self.row_partition is None:
            object.__setattr__(self, "row_partition", _default_partition(r))
        else:
            object.__setattr__(
                self, "row_partition", _validate_partition(self.row_partition, r)
            )
        # full row rank is a standing assumption of every statistic
        s = np.linalg.svd(a, compute_uv=False)
        tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        if int(np.sum(s > tol)) < r:
            raise RankDeficient("A is numerically row-rank deficient")

    @property
    def r(self):
        return self.a_matrix.shape[0]

    @property
    def p(self):
        return self.a_matrix.shape[1]

    def with_c(self, c_vector):
        """Same A and partition, new right-hand side (used by confidence regions)."""
        return LinearHypothesis(self.a_matrix, c_vector, self.row_partition)


@dataclass(frozen=True)
class SubsetHypothesis:
    """H0: (beta_{j0+1}, ..., beta_P) = c, leaving the first j0 coefficients free."""

    j0: int
    c_vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c_vector", _as_1d(self.c_vector, "c"))
        if self.j0 < 0:
            raise DimensionMismatch("j0 must be nonnegative")

    def expand(self, p, row_partition=None):
        """Expand to a LinearHypothesis with A = [O  I_{P - j0}]."""
        r = p - self.j0
        if not 0 <= self.j0 < p:
            raise DimensionMismatch(f"j0={self.j0} incompatible with P={p}")
        if self.c_vector.shape[0] != r:
            raise DimensionMismatch(f"c has length {self.c_vector.shape[0]}, expected {r}")
        a = np.hstack([np.zeros((r, self.j0)), np.eye(r)])
        return LinearHypothesis(a, self.c_vector, row_partition)


@dataclass(frozen=True)
class ReducedProblem:
    """Precomputed pieces shared by every affine-lasso statistic.

    ``pseudo_*`` hold the thin SVD ``A = U diag(s) Vt`` so that
    ``(A A^T)^{-1} A w = U (Vt w / s)`` is applied without forming an
    inverse, and ``projector_factor`` holds an orthonormal basis Q of
    ``range(X K_A)`` so projecting is two thin products.
    """

    kernel_basis: np.ndarray
    beta_c: np.ndarray
    projector_factor: np.ndarray
    rank_xka: int
    pseudo_u: np.ndarray
    pseudo_s: np.ndarray
    pseudo_vt: np.ndarray
    x_fit_c: np.ndarray = field(repr=False)  # X beta_c, cached

    def apply_pseudo(self, w):
        """(A A^T)^{-1} A w for a vector or a P x M batch."""
        return self.pseudo_u @ ((self.pseudo_vt @ w).T / self.pseudo_s).T

    def project(self, v):
        """P_{X K_A} v for a vector or an N x M batch."""
        q = self.projector_factor
        if q.shape[1] == 0:
            return np.zeros_like(v)
        return q @ (q.T @ v)


def kernel_basis(a_matrix, tol=None):
    """Orthonormal basis of ker(A), with a numerical-rank guard.

    Raises RankDeficient if A does not have full row rank at the usual
    ``max(shape) * eps * s_max`` cutoff (or the given absolute ``tol``).
    """
    a = _as_2d(a_matrix, "A")
    r, p = a.shape
    if r > p:
        raise RankDeficient(f"A is {r}x{p}: cannot have full row rank")
    _, s, vh = np.linalg.svd(a, full_matrices=True)
    if tol is None:
        tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < r:
        raise RankDeficient(f"numerical row rank {rank} < R = {r}")
    return vh[rank:].T


def min_norm_solution(a_matrix, c_vector):
    """beta_c = A^T (A A^T)^{-1} c, the minimum l2-norm solution of A beta = c."""
    a = _as_2d(a_matrix, "A")
    c = _as_1d(c_vector, "c")
    r, p = a.shape
    if c.shape[0] != r:
        raise DimensionMismatch(f"c has length {c.shape[0]}, expected {r}")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if int(np.sum(s > tol)) < r:
        raise RankDeficient("A is numerically row-rank deficient")
    return vh.T @ (u.T @ c / s)


def build_reduction(x, hyp, tol=None):
    """Assemble the ReducedProblem for a design and hypothesis.

    Fails with Untestable when rank(X K_A) = N, in which case the
    zero-thresholding statistic is identically zero.
    """
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    a = hyp.a_matrix
    if a.shape[1] != x.p:
        raise DimensionMismatch(f"A has {a.shape[1]} columns, X has P = {x.p}")
    r = hyp.r
    u, s, vh = np.linalg.svd(a, full_matrices=True)
    if tol is None:
        a_tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    else:
        a_tol = tol
    rank_a = int(np.sum(s > a_tol))
    if rank_a < r:
        raise RankDeficient(f"numerical row rank {rank_a} < R = {r}")
    k_a = vh[r:].T
    beta_c = vh[:r].T @ (u.T @ hyp.c_vector / s[:r])

    xka = x.values @ k_a
    if xka.shape[1] == 0:
        q = np.zeros((x.n, 0))
        rank_xka = 0
    else:
        uq, sq, _ = np.linalg.svd(xka, full_matrices=False)
        q_tol = max(xka.shape) * np.finfo(float).eps * (sq[0] if sq.size else 0.0)
        rank_xka = int(np.sum(sq > q_tol))
        q = uq[:, :rank_xka]
    if rank_xka >= x.n:
        raise Untestable(
            "rank(X K_A) = N: lambda_0(y) = 0 for all y, no thresholding test exists"
        )
    return ReducedProblem(
        kernel_basis=k_a,
        beta_c=beta_c,
        projector_factor=q,
        rank_xka=rank_xka,
        pseudo_u=u,
        pseudo_s=s[:r],
        pseudo_vt=vh[:r],
        x_fit_c=x.values @ beta_c,
    )


def residual(red, x, y):
    """r = (I - P_{X K_A})(y - X beta_c); accepts an N-vector or N x M batch."""
    if not isinstance(x, DesignMatrix):
        x = DesignMatrix(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.shape[0] != x.n:
        raise DimensionMismatch(f"y has length {y.shape[0]}, expected N = {x.n}")
    if y.ndim == 1:
        v = y - red.x_fit_c
    else:
        v = y - red.x_fit_c[:, None]
    return v - red.project(v)


@dataclass(frozen=True)
class GlmFamily:
    """Exponential-family description used by the GLM score statistic.

    ``pivotal_inverse_link`` is the inverse link h with (h')^2 = V(h),
    which makes the normalized score asymptotically pivotal; the
    canonical link is kept for data generation. The family normalizer
    c(y, phi) is never needed and not represented.
    """

    tag: str
    variance: Callable[[np.ndarray], np.ndarray]
    dispersion_known: bool
    canonical_inverse_link: Callable[[np.ndarray], np.ndarray]
    canonical_link: Callable[[np.ndarray], np.ndarray]
    pivotal_inverse_link: Callable[[np.ndarray], np.ndarray]
    pivotal_derivative: Callable[[np.ndarray], np.ndarray]
    pivotal_domain: tuple
    null_variance_estimate: Callable[[np.ndarray], float]

    def check_pivotal_domain(self, x_grid):
        x_grid = np.asarray(x_grid, dtype=float)
        lo, hi = self.pivotal_domain
        if np.any(x_grid < lo) or np.any(x_grid > hi):
            raise DomainError(
                f"grid point outside the {self.tag} pivotal-link domain [{lo}, {hi}]"
            )
        return x_grid


def _gaussian_family():
    return GlmFamily(
        tag="gaussian",
        variance=lambda mu: np.ones_like(np.asarray(mu, dtype=float)),
        dispersion_known=False,
        canonical_inverse_link=lambda x: np.asarray(x, dtype=float),
        canonical_link=lambda mu: np.asarray(mu, dtype=float),
        pivotal_inverse_link=lambda x: np.asarray(x, dtype=float),
        pivotal_derivative=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        pivotal_domain=(-np.inf, np.inf),
        null_variance_estimate=lambda y: float(np.var(y, ddof=1)),
    )


def _bernoulli_family():
    return GlmFamily(
        tag="bernoulli",
        variance=lambda mu: np.asarray(mu) * (1.0 - np.asarray(mu)),
        dispersion_known=True,
        canonical_inverse_link=lambda x: 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float))),
        canonical_link=lambda mu: np.log(np.asarray(mu) / (1.0 - np.asarray(mu))),
        pivotal_inverse_link=lambda x: (np.sin(np.asarray(x, dtype=float)) + 1.0) / 2.0,
        pivotal_derivative=lambda x: np.cos(np.asarray(x, dtype=float)) / 2.0,
        pivotal_domain=(-np.pi / 2.0, np.pi / 2.0),
        null_variance_estimate=lambda y: float(np.mean(y) * (1.0 - np.mean(y))),
    )


def _poisson_family():
    return GlmFamily(
        tag="poisson",
        variance=lambda mu: np.asarray(mu, dtype=float),
        dispersion_known=True,
        canonical_inverse_link=lambda x: np.exp(np.asarray(x, dtype=float)),
        canonical_link=lambda mu: np.log(np.asarray(mu, dtype=float)),
        pivotal_inverse_link=lambda x: np.asarray(x, dtype=float) ** 2 / 4.0,
        pivotal_derivative=lambda x: np.asarray(x, dtype=float) / 2.0,
        pivotal_domain=(0.0, np.inf),
        null_variance_estimate=lambda y: float(np.mean(y)),
    )


_FAMILIES = {
    "gaussian": _gaussian_family,
    "bernoulli": _bernoulli_family,
    "poisson": _poisson_family,
}


def glm_family(tag):
    """Return the GlmFamily for one of {gaussian, bernoulli, poisson}."""
    try:
        return _FAMILIES[tag]()
    except KeyError:
        raise DomainError(f"unknown family {tag!r}") from None
