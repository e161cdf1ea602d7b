"""Ranks, correlation measures, sample moments and the Anderson-Darling
uniformity test.

Ties are always resolved with midranks. ``kendall_tau`` is the tie-adjusted
tau-b.

Moment estimators
-----------------
``sample_moments`` returns the mean and the unbiased (``n - 1``) standard
deviation. ``sample_skewness`` is the adjusted Fisher-Pearson coefficient

    G1 = sqrt(n (n - 1)) / (n - 2) * m3 / m2 ** 1.5

with ``m_k`` the biased central sample moments.

Anderson-Darling p-values
-------------------------
The p-value is ``1 - adinf(A2)`` where ``adinf`` is the asymptotic
distribution of the statistic as approximated by Marsaglia & Marsaglia
(2004, J. Stat. Softw. 9(2)). No finite-sample correction is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import DegenerateError, DomainError, SizeError, UndefinedCorrelationError

AD_CLAMP = 1e-12


@dataclass(frozen=True)
class RankVector:
    ranks: np.ndarray
    ties: bool

    def __len__(self) -> int:
        return len(self.ranks)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.ranks, dtype=dtype)


@dataclass(frozen=True)
class AdResult:
    statistic: float
    p_value: float
    n: int


def _vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    if arr.size == 0:
        raise SizeError(f"{name} is empty")
    if np.isnan(arr).any():
        raise DomainError(f"{name} contains NaN")
    if not np.isfinite(arr).all():
        raise DomainError(f"{name} contains non-finite values")
    return arr


def ranks(x) -> RankVector:
    """Midranks of ``x``; the smallest value gets rank 1."""
    arr = _vector(x)
    r = stats.rankdata(arr, method="average")
    ties = bool(np.unique(arr).size < arr.size)
    if not ties:
        r = r.astype(np.int64)
    return RankVector(r, ties)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a = _vector(x, "x")
    b = _vector(y, "y")
    if a.size != b.size:
        raise SizeError("x and y must have equal length")
    if a.size < 2:
        raise SizeError("correlation needs at least 2 observations")
    return a, b


def _check_variance(a: np.ndarray, b: np.ndarray) -> None:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant input")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant input")
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def pearson(x, y) -> float:
    a, b = _pair(x, y)
    _check_variance(a, b)
    return _pearson(a, b)


def spearman(x, y) -> float:
    """Pearson correlation of the midranks."""
    a, b = _pair(x, y)
    _check_variance(a, b)
    return _pearson(stats.rankdata(a), stats.rankdata(b))


def kendall_tau(x, y) -> float:
    a, b = _pair(x, y)
    _check_variance(a, b)
    tau = stats.kendalltau(a, b, variant="b").statistic
    return float(np.clip(tau, -1.0, 1.0))


def sample_moments(x) -> tuple[float, float]:
    """Mean and unbiased standard deviation."""
    arr = _vector(x)
    if arr.size < 2:
        raise SizeError("standard deviation needs at least 2 observations")
    return float(arr.mean()), float(arr.std(ddof=1))


def sample_skewness(x) -> float:
    arr = _vector(x)
    n = arr.size
    if n < 3:
        raise SizeError("skewness needs at least 3 observations")
    dev = arr - arr.mean()
    m2 = float(np.mean(dev**2))
    if m2 == 0.0:
        raise DegenerateError("skewness undefined for a constant sample")
    m3 = float(np.mean(dev**3))
    g1 = m3 / m2**1.5
    return math.sqrt(n * (n - 1)) / (n - 2) * g1


def _adinf(z: float) -> float:
    """Asymptotic CDF of the Anderson-Darling statistic (Marsaglia 2004)."""
    if z <= 0.0:
        return 0.0
    if z < 2.0:
        poly = 2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z
        return math.exp(-1.2337141 / z) / math.sqrt(z) * poly
    inner = 1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z
    return math.exp(-math.exp(inner))


def ad_statistic(u) -> float:
    arr = np.sort(_vector(u, "u"))
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DomainError("uniformity test requires values in [0, 1]")
    arr = np.clip(arr, AD_CLAMP, 1.0 - AD_CLAMP)
    n = arr.size
    i = np.arange(1, n + 1)
    s = np.sum((2 * i - 1) * (np.log(arr) + np.log1p(-arr[::-1])))
    return float(-n - s / n)


def ad_p_value(statistic: float) -> float:
    return float(min(1.0, max(0.0, 1.0 - _adinf(statistic))))


def ad_uniform_test(u) -> AdResult:
    """Anderson-Darling test of U(0, 1) for a sample of at least 8 values."""
    arr = _vector(u, "u")
    if arr.size < 8:
        raise SizeError("Anderson-Darling test needs at least 8 observations")
    a2 = ad_statistic(arr)
    return AdResult(a2, ad_p_value(a2), int(arr.size))
