"""Seeded synthetic price panels for demos and tests."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np

from .exceptions import DomainError
from .market_data import PricePanel, ReturnPanel


def business_days(start: date, count: int) -> tuple[date, ...]:
    out = []
    day = start
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day)
        day += timedelta(days=1)
    return tuple(out)


def student_t_returns(n: int, corr, scale, drift, df: float, seed=None) -> np.ndarray:
    """Multivariate Student-t returns with unit-variance standardization."""
    corr = np.asarray(corr, dtype=float)
    if df <= 2:
        raise DomainError("df must exceed 2 for a finite variance")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(corr)
    z = rng.standard_normal((n, corr.shape[0])) @ chol.T
    w = np.sqrt(rng.chisquare(df, size=(n, 1)) / (df - 2))
    return np.asarray(drift) + np.asarray(scale) * z / w


def gaussian_returns(n: int, covariance, mean=None, seed=None) -> np.ndarray:
    cov = np.asarray(covariance, dtype=float)
    mean = np.zeros(cov.shape[0]) if mean is None else np.asarray(mean, dtype=float)
    return np.random.default_rng(seed).multivariate_normal(mean, cov, size=n, method="cholesky")


def returns_panel(returns, start: date = date(2021, 1, 4), assets=None) -> ReturnPanel:
    r = np.asarray(returns, dtype=float)
    assets = tuple(assets) if assets else tuple(f"A{j + 1}" for j in range(r.shape[1]))
    return ReturnPanel(business_days(start, r.shape[0]), assets, r)


def prices_from_returns(returns, start: date = date(2021, 1, 4), assets=None, initial=100.0) -> PricePanel:
    r = np.asarray(returns, dtype=float)
    assets = tuple(assets) if assets else tuple(f"A{j + 1}" for j in range(r.shape[1]))
    logp = np.vstack([np.zeros(r.shape[1]), np.cumsum(r, axis=0)])
    return PricePanel(business_days(start, r.shape[0] + 1), assets, initial * np.exp(logp))


def bundled_panel_prices(seed: int = 20250401) -> PricePanel:
    """The 3-asset, 600-day panel shipped as ``data/synthetic_3asset.csv``."""
    corr = np.array([[1.0, 0.6, 0.3], [0.6, 1.0, 0.4], [0.3, 0.4, 1.0]])
    r = student_t_returns(600, corr, scale=[0.012, 0.018, 0.009], drift=[4e-4, 6e-4, 2e-4], df=5.0, seed=seed)
    return prices_from_returns(r[:-1], assets=("ALPHA", "BRAVO", "CHARLIE"))


def write_wide_csv(panel: PricePanel, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("date," + ",".join(panel.assets) + "\n")
        for day, row in zip(panel.dates, panel.prices):
            fh.write(day.isoformat() + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
