"""Global minimum-variance portfolios under simplex and EWO constraints.

The program is

    min  w' S w   s.t.  1'w = 1,  w >= 0,  [mu'w >= mean(mu)]

solved with a primal active-set method. Inequalities are indexed
``0 .. d-1`` for the bounds ``w_i >= 0`` and ``d`` for the equal-weight
outperformance (EWO) constraint. Equal weights satisfy every constraint
(EWO with equality), so they are the cold start.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateError, MatrixError, ShapeError, SizeError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
RIDGE_FLOOR = 1e-10
# eigenvalues below -REPAIR_TOL * max(1, lambda_max) are not repaired
REPAIR_TOL = 1e-8
ZERO_WEIGHT = 1e-10


class ConstraintSet(str, enum.Enum):
    TWO = "two_constraint"
    THREE = "three_constraint"


@dataclass(frozen=True)
class QpProblem:
    covariance: np.ndarray
    expected_returns: np.ndarray
    constraint_set: ConstraintSet = ConstraintSet.THREE

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        mu = np.atleast_1d(np.asarray(self.expected_returns, dtype=float))
        if cov.shape != (mu.size, mu.size):
            raise ShapeError(f"covariance {cov.shape} does not match {mu.size} expected returns")
        if mu.size == 0:
            raise SizeError("empty asset universe")
        if not (np.isfinite(cov).all() and np.isfinite(mu).all()):
            raise MatrixError("problem data must be finite")
        if np.abs(cov - cov.T).max() > SYMMETRY_TOL:
            raise MatrixError("covariance is not symmetric")
        if (np.diag(cov) < 0).any():
            raise MatrixError("covariance has a negative variance")
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))
        object.__setattr__(self, "expected_returns", mu)
        object.__setattr__(self, "constraint_set", ConstraintSet(self.constraint_set))

    @property
    def d(self) -> int:
        return self.expected_returns.size

    @property
    def ewo_floor(self) -> float:
        return float(self.expected_returns.mean())


@dataclass(frozen=True)
class PortfolioWeights:
    weights: np.ndarray
    objective: float
    active_set: tuple[int, ...] = ()
    kkt_residual: float = 0.0
    status: str = "optimal"
    ridge: float = 0.0
    iterations: int = 0
    multipliers: dict = field(default_factory=dict, repr=False)


def sample_means(returns) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if r.shape[0] < 2:
        raise SizeError("need at least 2 observations")
    return r.mean(axis=0)


def sample_covariance(returns) -> np.ndarray:
    """Unbiased (n - 1) covariance, symmetric by construction."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    n = r.shape[0]
    if n < 2:
        raise SizeError("need at least 2 observations")
    dev = r - r.mean(axis=0)
    cov = dev.T @ dev / (n - 1)
    return 0.5 * (cov + cov.T)


def equal_weights(d: int, covariance=None) -> PortfolioWeights:
    if d < 1:
        raise SizeError("equal weights need at least one asset")
    w = np.full(d, 1.0 / d)
    obj = float("nan") if covariance is None else float(w @ np.asarray(covariance, dtype=float) @ w)
    return PortfolioWeights(w, obj, (), 0.0, "optimal")


def risk_contributions(weights, covariance) -> np.ndarray:
    """Share ``w_i (S w)_i / w'S w`` of portfolio variance per asset."""
    w = np.asarray(weights, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    contrib = w * (cov @ w)
    # w'Sw is the sum of the contributions; fsum keeps the shares summing to 1
    total = math.fsum(contrib)
    if not total > 0:
        raise DegenerateError("portfolio variance is zero")
    if np.all(contrib == contrib[0]):
        return np.full(w.size, 1.0 / w.size)
    return contrib / total


def _ridge(cov: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(cov)
    lo, hi = float(eig[0]), float(eig[-1])
    if lo < -REPAIR_TOL * max(1.0, hi):
        raise MatrixError(f"covariance is indefinite beyond repair (smallest eigenvalue {lo:.3e})")
    delta = max(0.0, RIDGE_FLOOR - lo)
    if delta > 0:
        logger.info("near-singular covariance; adding ridge %.3e", delta)
    return delta


class _Constraints:
    """Inequalities ``G w >= h`` plus the budget row ``1'w = 1``."""

    def __init__(self, problem: QpProblem):
        d = problem.d
        rows = [np.eye(d)]
        h = [np.zeros(d)]
        if problem.constraint_set is ConstraintSet.THREE:
            rows.append(problem.expected_returns[None, :])
            h.append(np.array([problem.ewo_floor]))
        self.G = np.vstack(rows)
        self.h = np.concatenate(h)
        self.d = d

    def slack(self, w: np.ndarray) -> np.ndarray:
        return self.G @ w - self.h

    def equality_rows(self, working: list[int]) -> np.ndarray:
        return np.vstack([np.ones((1, self.d)), self.G[working]])


def _eqp_step(H, g, A):
    """Solve ``min 1/2 p'Hp + g'p  s.t. A p = 0``; return (p, multipliers)."""
    d, k = H.shape[0], A.shape[0]
    K = np.zeros((d + k, d + k))
    K[:d, :d] = H
    K[:d, d:] = -A.T
    K[d:, :d] = A
    rhs = np.concatenate([-g, np.zeros(k)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:d], sol[d:]


def _eqp_point(H, A, b):
    """Minimiser of ``1/2 x'Hx`` on ``A x = b``."""
    d, k = H.shape[0], A.shape[0]
    K = np.zeros((d + k, d + k))
    K[:d, :d] = H
    K[:d, d:] = -A.T
    K[d:, :d] = A
    rhs = np.concatenate([np.zeros(d), b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    return sol[:d]


def _multipliers(H, w, cons: _Constraints, working: list[int]):
    A = cons.equality_rows(working)
    lam, *_ = np.linalg.lstsq(A.T, H @ w, rcond=None)
    return lam


def kkt_residual(problem: QpProblem, weights, active_set=()) -> float:
    """Largest violation among stationarity, feasibility and complementarity."""
    w = np.asarray(weights, dtype=float)
    cons = _Constraints(problem)
    H = 2.0 * problem.covariance
    working = sorted(active_set)
    lam = _multipliers(H, w, cons, working)
    A = cons.equality_rows(working)
    stationarity = np.abs(H @ w - A.T @ lam).max()
    slack = cons.slack(w)
    primal = max(abs(w.sum() - 1.0), float(max(0.0, -slack.min())))
    ineq = lam[1:]
    dual = float(max(0.0, -ineq.min())) if ineq.size else 0.0
    comp = float(np.abs(ineq * slack[working]).max()) if ineq.size else 0.0
    return float(max(stationarity, primal, dual, comp))


def solve_gmv(problem: QpProblem, warm_start=None, max_iter: int | None = None) -> PortfolioWeights:
    """Active-set solution of the GMV quadratic program.

    ``warm_start`` is an active set from a previous solve; it is used only if
    the point it defines is feasible, otherwise the solve starts cold.
    """
    d = problem.d
    cov = problem.covariance
    delta = _ridge(cov)
    H = 2.0 * (cov + delta * np.eye(d))
    cons = _Constraints(problem)
    n_ineq = cons.G.shape[0]
    scale = max(float(np.abs(H).max()), np.finfo(float).tiny)
    max_iter = max_iter or 50 * (n_ineq + 2)

    if d == 1:
        w = np.ones(1)
        return PortfolioWeights(w, float(cov[0, 0]), (), 0.0, "optimal", delta)

    w, working = None, []
    if warm_start:
        cand = sorted(set(int(i) for i in warm_start if 0 <= int(i) < n_ineq))
        if len(cand) < d:
            A = cons.equality_rows(cand)
            b = np.concatenate([[1.0], cons.h[cand]])
            x = _eqp_point(H, A, b)
            if x is not None and cons.slack(x).min() >= -1e-12:
                w, working = x, cand
    if w is None:
        w, working = np.full(d, 1.0 / d), []

    status = "degenerate-fallback"
    it = 0
    # after an unblocked full step w already minimises over the working set;
    # recomputing p there only returns rounding noise
    stationary = False
    for it in range(1, max_iter + 1):
        if not stationary:
            A = cons.equality_rows(working)
            p, _ = _eqp_step(H, H @ w, A)
            stationary = np.abs(p).max() <= 1e-13 * max(1.0, np.abs(w).max())
        if stationary:
            lam = _multipliers(H, w, cons, working)[1:]
            if lam.size == 0 or lam.min() >= -1e-12 * scale:
                status = "optimal"
                break
            # drop the most negative multiplier; lowest index on ties
            worst = float(lam.min())
            drop = min(working[i] for i in range(len(working)) if lam[i] <= worst + 1e-15 * scale)
            working.remove(drop)
            stationary = False
            continue
        Gp = cons.G @ p
        slack = cons.slack(w)
        alpha, block = 1.0, None
        for i in range(n_ineq):
            if i in working or Gp[i] >= -1e-14 * np.abs(p).max():
                continue
            step = max(0.0, slack[i]) / -Gp[i]
            if step < alpha - 1e-15:
                alpha, block = step, i
        w = w + alpha * p
        if block is not None:
            working = sorted(working + [block])
        else:
            stationary = True
    else:
        logger.warning("active-set solver hit the iteration cap (%d)", max_iter)

    lam_all = _multipliers(H, w, cons, working)
    w = np.where(w < ZERO_WEIGHT, 0.0, w)
    w = w / w.sum()
    resid = kkt_residual(problem, w, working)
    multipliers = {"budget": float(lam_all[0])}
    multipliers.update({int(i): float(v) for i, v in zip(working, lam_all[1:])})
    return PortfolioWeights(
        weights=w,
        objective=float(w @ cov @ w),
        active_set=tuple(working),
        kkt_residual=resid,
        status=status,
        ridge=delta,
        iterations=it,
        multipliers=multipliers,
    )
