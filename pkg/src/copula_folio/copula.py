"""Empirical beta copula: estimation, CDF, sampling and Monte Carlo sizing.

The empirical beta copula of an ``n x d`` sample with column ranks ``R`` is

    C(u) = 1/n * sum_i prod_j F_{n, R_ij}(u_j)

with ``F_{n,r}`` the Beta(r, n + 1 - r) CDF (the law of the r-th order
statistic of n uniforms). It is a mixture over rows of products of
independent beta CDFs, which gives the exact sampler used here: pick a row
uniformly, then draw each coordinate from its own beta distribution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .exceptions import DomainError, MatrixError, ShapeError, SizeError
from .sgt import sgt_cdf, sgt_quantile

logger = logging.getLogger(__name__)

U_CLAMP = 1e-12
TIE_JITTER = 1e-12
MIN_REPLICATIONS = 16
PILOT_SIZE = 10_000


@dataclass(frozen=True)
class EbcModel:
    rank_matrix: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rank_matrix)
        if r.ndim == 1:
            r = r[:, None]
        if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
            raise ShapeError("rank matrix must be a non-empty n x d array")
        n = r.shape[0]
        expected = np.arange(1, n + 1)
        if not all(np.array_equal(np.sort(r[:, j]), expected) for j in range(r.shape[1])):
            raise DomainError("each rank column must be a permutation of 1..n")
        r = r.astype(np.int64)
        r.setflags(write=False)
        object.__setattr__(self, "rank_matrix", r)

    @property
    def n(self) -> int:
        return self.rank_matrix.shape[0]

    @property
    def d(self) -> int:
        return self.rank_matrix.shape[1]


@dataclass(frozen=True)
class McBudget:
    lambda_max: float
    epsilon: float
    m_required: int


def pseudo_uniforms(returns, fits) -> np.ndarray:
    """Map each column through its fitted SGT CDF, clamped away from {0, 1}."""
    r = np.asarray(returns, dtype=float)
    if r.ndim != 2:
        raise ShapeError("returns must be an n x d matrix")
    fits = list(fits)
    if len(fits) != r.shape[1]:
        raise ShapeError(f"{len(fits)} marginal fits for {r.shape[1]} columns")
    u = np.column_stack([sgt_cdf(r[:, j], fits[j]) for j in range(r.shape[1])])
    return np.clip(u, U_CLAMP, 1.0 - U_CLAMP)


def fit_ebc(u, seed: int = 0) -> EbcModel:
    """Column ranks of the pseudo-observations.

    Ranks are invariant under the marginal CDFs, so they equal the ranks of
    the raw returns. Tied values get a 1e-12 jitter so every column is a
    strict permutation of 1..n.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2:
        raise ShapeError("u must be an n x d matrix")
    n, d = u.shape
    if n < 2:
        raise SizeError("empirical beta copula needs at least 2 observations")
    if not np.isfinite(u).all():
        raise DomainError("pseudo-observations must be finite")
    rng = None
    cols = []
    for j in range(d):
        col = u[:, j]
        if np.unique(col).size < n:
            rng = rng or np.random.default_rng(seed)
            logger.info("column %d has ties; breaking them with %.0e jitter", j, TIE_JITTER)
            col = col + rng.uniform(-TIE_JITTER, TIE_JITTER, size=n)
        cols.append(stats.rankdata(col, method="ordinal"))
    return EbcModel(np.column_stack(cols).astype(np.int64))


def ebc_cdf(model: EbcModel, u):
    """Copula CDF at a point (shape ``(d,)``) or a batch of points (``(k, d)``)."""
    pts = np.asarray(u, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != model.d:
        raise ShapeError(f"point has {pts.shape[1]} coordinates, model has {model.d}")
    if np.isnan(pts).any() or (pts < 0).any() or (pts > 1).any():
        raise DomainError("copula arguments must lie in [0, 1]")
    n = model.n
    r = model.rank_matrix
    # F_{n,r}(u) = I_u(r, n + 1 - r); shape (k, n, d)
    probs = special.betainc(r[None, :, :], n + 1 - r[None, :, :], pts[:, None, :])
    out = probs.prod(axis=2).mean(axis=1)
    return float(out[0]) if single else out


def ebc_sample(model: EbcModel, count: int, seed=None) -> np.ndarray:
    if count < 1:
        raise SizeError("sample count must be at least 1")
    rng = np.random.default_rng(seed)
    n = model.n
    rows = rng.integers(0, n, size=count)
    a = model.rank_matrix[rows]
    draws = rng.beta(a, n + 1 - a)
    return np.clip(draws, U_CLAMP, 1.0 - U_CLAMP)


def joint_return_sample(model: EbcModel, fits, count: int, seed=None) -> np.ndarray:
    """Copula draws pushed through the fitted marginal quantile functions."""
    fits = list(fits)
    if len(fits) != model.d:
        raise ShapeError(f"{len(fits)} marginal fits for a {model.d}-dimensional copula")
    u = ebc_sample(model, count, seed)
    return np.column_stack([sgt_quantile(u[:, j], fits[j]) for j in range(model.d)])


def _replication_ratio(m: int) -> float:
    return m / math.log(math.log(m))


def mc_budget(covariance, epsilon: float, tol: float = 1e-10) -> McBudget:
    """Smallest ``m >= 16`` with ``m / ln(ln m) >= 2 lambda_max / epsilon**2``."""
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise MatrixError("covariance must be square")
    if not np.isfinite(cov).all():
        raise MatrixError("covariance contains non-finite values")
    if np.abs(cov - cov.T).max() > tol:
        raise MatrixError("covariance is not symmetric")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if eig[0] < -tol:
        raise MatrixError(f"covariance is indefinite (smallest eigenvalue {eig[0]:.3e})")
    lam_max = max(float(eig[-1]), 0.0)
    target = 2.0 * lam_max / epsilon**2

    lo = MIN_REPLICATIONS
    if _replication_ratio(lo) >= target:
        return McBudget(lam_max, float(epsilon), lo)
    hi = lo
    while _replication_ratio(hi) < target:
        lo, hi = hi, hi * 2
    # invariant: ratio(lo) < target <= ratio(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _replication_ratio(mid) >= target:
            hi = mid
        else:
            lo = mid
    return McBudget(lam_max, float(epsilon), hi)


def pilot_budget(model: EbcModel, fits, epsilon: float, pilot_size: int = PILOT_SIZE, seed=None) -> McBudget:
    """``mc_budget`` with lambda_max taken from a pilot copula draw."""
    pilot = joint_return_sample(model, fits, pilot_size, seed)
    cov = np.atleast_2d(np.cov(pilot, rowvar=False))
    return mc_budget(0.5 * (cov + cov.T), epsilon)
