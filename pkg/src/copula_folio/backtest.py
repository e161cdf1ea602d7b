"""Rolling-window backtest of copula-based and baseline GMV strategies.

Each rebalance point uses an estimation window of ``L`` returns starting at
row ``t`` (0-based) and is scored on the evaluation window of ``L`` returns
starting at ``t + f``:

    net worth = w' E[R_eval]
    sharpe    = w' E[R_eval] / sqrt(w' Cov[R_eval] w)

Window estimation (marginal fits, copula sampling, covariances) is
independent per window and may run in worker processes; the optimiser stage
runs serially so each window can warm-start from the previous active set.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import date

import numpy as np

from .copula import fit_ebc, joint_return_sample, pilot_budget, pseudo_uniforms
from .exceptions import (
    BacktestError,
    CopulaFolioError,
    DegenerateError,
    DomainError,
    FitError,
    InsufficientDataError,
    SizeError,
    UndefinedCorrelationError,
)
from .market_data import ReturnPanel
from .optimizer import (
    ConstraintSet,
    QpProblem,
    equal_weights,
    risk_contributions,
    sample_covariance,
    sample_means,
    solve_gmv,
)
from .sgt import FitReport, sgt_fit
from .stats_core import kendall_tau, pearson, spearman

logger = logging.getLogger(__name__)

STRATEGIES = ("eq_weights", "data_cov_3constraint", "copula_cov_2constraint", "copula_cov_3constraint")
COPULA_STRATEGIES = ("copula_cov_2constraint", "copula_cov_3constraint")
MARKET_EPSILON = {"us": 8e-4, "india": 7e-4, "hong_kong": 5e-4}
DEFAULT_REGIME_SPLITS = (date(2019, 4, 1), date(2020, 3, 1), date(2022, 3, 1), date(2025, 4, 1))
DEFAULT_REGIME_LABELS = ("pre-pandemic", "pandemic", "post-pandemic")
THREADS_ENV = "COPULA_FOLIO_THREADS"


@dataclass(frozen=True)
class BacktestConfig:
    window_length: int = 250
    rebalance_frequency: int = 5
    strategies: tuple[str, ...] = STRATEGIES
    epsilon: float = MARKET_EPSILON["us"]
    mc_cap: int = 200_000
    # minimum number of copula draws, whatever the budget says
    mc_floor: int = 0
    pilot_size: int = 10_000
    seed: int = 0
    regime_splits: tuple[date, ...] = DEFAULT_REGIME_SPLITS
    regime_labels: tuple[str, ...] | None = DEFAULT_REGIME_LABELS
    # refit the SGT marginals every k-th window, reusing them in between
    refit_interval: int = 1
    fit_restarts: int = 5
    workers: int = 1
    max_failed_fraction: float = 0.10
    target: str = "copula_cov_3constraint"
    baseline: str = "data_cov_3constraint"

    def __post_init__(self):
        if self.window_length < 50:
            raise DomainError("window_length must be at least 50")
        if self.rebalance_frequency < 1:
            raise DomainError("rebalance_frequency must be at least 1")
        strategies = tuple(self.strategies)
        if not strategies:
            raise DomainError("at least one strategy is required")
        unknown = set(strategies) - set(STRATEGIES)
        if unknown:
            raise DomainError(f"unknown strategies: {sorted(unknown)}")
        # canonical order keeps reports stable regardless of input order
        object.__setattr__(self, "strategies", tuple(s for s in STRATEGIES if s in strategies))
        splits = tuple(date.fromisoformat(s) if isinstance(s, str) else s for s in self.regime_splits)
        if any(b <= a for a, b in zip(splits, splits[1:])):
            raise DomainError("regime_splits must be strictly increasing")
        object.__setattr__(self, "regime_splits", splits)
        labels = self.regime_labels
        if labels is not None and len(labels) != max(0, len(splits) - 1):
            labels = None
        object.__setattr__(self, "regime_labels", tuple(labels) if labels is not None else None)
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.mc_cap < 16 or self.pilot_size < 16:
            raise DomainError("mc_cap and pilot_size must be at least 16")
        if self.mc_floor < 0:
            raise DomainError("mc_floor must be non-negative")
        if self.refit_interval < 1:
            raise DomainError("refit_interval must be at least 1")

    @property
    def regimes(self) -> list[tuple[str, date, date]]:
        splits = self.regime_splits
        labels = self.regime_labels or tuple(f"{a}..{b}" for a, b in zip(splits, splits[1:]))
        return [(lab, a, b) for lab, a, b in zip(labels, splits, splits[1:])]

    def to_dict(self) -> dict:
        out = asdict(self)
        # execution detail only; serial and parallel runs must serialize identically
        del out["workers"]
        out["strategies"] = list(self.strategies)
        out["regime_splits"] = [d.isoformat() for d in self.regime_splits]
        out["regime_labels"] = list(self.regime_labels) if self.regime_labels else None
        return out


@dataclass
class RebalancePoint:
    index: int
    start: int
    rebalance_date: str | None
    weights: dict[str, list[float]]
    expected_return: dict[str, float]
    next_period_return: dict[str, float]
    sharpe: dict[str, float]
    risk_contributions: dict[str, list[float] | None]
    solver: dict[str, dict]
    diagnostics: dict


@dataclass
class BacktestReport:
    config: dict
    assets: list[str]
    points: list[RebalancePoint]
    aggregates: dict[str, dict]
    wins: dict[str, dict]
    regimes: dict[str, dict]
    rolling: dict
    failed_windows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "assets": self.assets,
            "points": [asdict(p) for p in self.points],
            "aggregates": self.aggregates,
            "wins": self.wins,
            "regimes": self.regimes,
            "rolling": self.rolling,
            "failed_windows": self.failed_windows,
        }


def window_schedule(n_returns: int, L: int, f: int) -> list[int]:
    """0-based start rows of every window whose evaluation span fits the panel.

    The evaluation window of start ``t`` covers rows ``t+f .. t+f+L-1``, so
    there are ``floor((n_returns - L) / f)`` windows.
    """
    if L < 1 or f < 1:
        raise DomainError("window length and frequency must be positive")
    if n_returns <= L:
        raise InsufficientDataError(f"{n_returns} returns do not cover a window of {L}")
    count = (n_returns - L) // f
    if count < 1:
        raise InsufficientDataError(f"no window of length {L} has a full evaluation period at f={f}")
    return [k * f for k in range(count)]


def effective_workers(requested: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    workers = max(1, int(requested))
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, cap)
    return workers


# -- per-window estimation ---------------------------------------------------


@dataclass
class WindowEstimate:
    index: int
    start: int
    means: np.ndarray
    sample_cov: np.ndarray
    copula_cov: np.ndarray | None
    fits: list[FitReport] | None
    m_required: int | None = None
    mc_draws: int | None = None
    lambda_max: float | None = None
    events: list[str] = field(default_factory=list)


def _window_seeds(seed: int, index: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence([int(seed), int(index)]).spawn(3)


def fit_marginals(window: np.ndarray, config: BacktestConfig) -> list[FitReport]:
    return [sgt_fit(window[:, j], max_restarts=config.fit_restarts) for j in range(window.shape[1])]


def estimate_window(window: np.ndarray, index: int, start: int, config: BacktestConfig, fits=None) -> WindowEstimate:
    """Sample moments and, for copula strategies, the copula-implied covariance."""
    est = WindowEstimate(index, start, sample_means(window), sample_covariance(window), None, None)
    if not any(s in COPULA_STRATEGIES for s in config.strategies):
        return est
    pilot_seed, draw_seed, tie_seed = _window_seeds(config.seed, index)
    try:
        if fits is None:
            fits = fit_marginals(window, config)
        params = [fr.params for fr in fits]
        model = fit_ebc(pseudo_uniforms(window, params), seed=tie_seed)
        budget = pilot_budget(model, params, config.epsilon, config.pilot_size, seed=pilot_seed)
        m = min(max(budget.m_required, config.mc_floor), config.mc_cap)
        if m < budget.m_required:
            est.events.append(f"mc draws capped at {m} (required {budget.m_required})")
        draws = joint_return_sample(model, params, m, seed=draw_seed)
        est.fits = fits
        est.copula_cov = sample_covariance(draws)
        est.m_required, est.mc_draws, est.lambda_max = budget.m_required, m, budget.lambda_max
    except (FitError, SizeError, DomainError) as err:
        logger.warning("window %d: marginal fit failed (%s); using sample covariance", index, err)
        est.events.append(f"fit failure, sample-covariance fallback: {err}")
    return est


def _safe_estimate(args):
    window, index, start, config, fits = args
    try:
        return estimate_window(window, index, start, config, fits)
    except CopulaFolioError as err:
        return err
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        return err


def _safe_fit(args):
    window, config = args
    try:
        return fit_marginals(window, config)
    except (FitError, SizeError, DomainError) as err:
        return err


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# -- optimisation and scoring ------------------------------------------------


def _score(w: np.ndarray, eval_window: np.ndarray) -> tuple[float, float]:
    mean = eval_window.mean(axis=0)
    cov = sample_covariance(eval_window)
    net = float(w @ mean)
    var = float(w @ cov @ w)
    sharpe = net / math.sqrt(var) if var > 0 else float("nan")
    return net, sharpe


def solve_window(
    est: WindowEstimate,
    eval_window: np.ndarray,
    config: BacktestConfig,
    warm: dict | None = None,
    rebalance_date: date | None = None,
    assets=None,
) -> RebalancePoint:
    d = est.means.size
    weights, expected, net, sharpe, rcs, solver = {}, {}, {}, {}, {}, {}
    fallback = est.copula_cov is None
    for strategy in config.strategies:
        if strategy == "eq_weights":
            res = equal_weights(d, est.sample_cov)
            cov = est.sample_cov
        else:
            use_copula = strategy in COPULA_STRATEGIES and not fallback
            cov = est.copula_cov if use_copula else est.sample_cov
            cs = ConstraintSet.TWO if strategy == "copula_cov_2constraint" else ConstraintSet.THREE
            res = solve_gmv(QpProblem(cov, est.means, cs), warm_start=(warm or {}).get(strategy))
            if warm is not None:
                warm[strategy] = res.active_set
        w = res.weights
        weights[strategy] = w.tolist()
        expected[strategy] = float(w @ est.means)
        net[strategy], sharpe[strategy] = _score(w, eval_window)
        try:
            rcs[strategy] = risk_contributions(w, cov).tolist()
        except DegenerateError:
            rcs[strategy] = None
        solver[strategy] = {
            "status": res.status,
            "objective": res.objective,
            "kkt_residual": res.kkt_residual,
            "active_set": list(res.active_set),
            "ridge": res.ridge,
        }
    fits = []
    if est.fits is not None:
        names = list(assets) if assets is not None else [str(j) for j in range(d)]
        for name, fr in zip(names, est.fits):
            fits.append(
                {
                    "asset": name,
                    **fr.params.as_dict(),
                    "log_likelihood": fr.log_likelihood,
                    "converged": fr.converged,
                    "iterations": fr.iterations,
                    "ad_statistic": fr.ad.statistic,
                    "ad_p_value": fr.ad.p_value,
                }
            )
    diagnostics = {
        "fallback": fallback and any(s in COPULA_STRATEGIES for s in config.strategies),
        "events": list(est.events),
        "m_required": est.m_required,
        "mc_draws": est.mc_draws,
        "lambda_max": est.lambda_max,
        "fits": fits,
    }
    return RebalancePoint(
        index=est.index,
        start=est.start,
        rebalance_date=rebalance_date.isoformat() if rebalance_date else None,
        weights=weights,
        expected_return=expected,
        next_period_return=net,
        sharpe=sharpe,
        risk_contributions=rcs,
        solver=solver,
        diagnostics=diagnostics,
    )


def _as_matrix(returns) -> tuple[np.ndarray, tuple | None, tuple | None]:
    if isinstance(returns, ReturnPanel):
        return np.asarray(returns.returns), returns.dates, returns.assets
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    return r, None, None


def evaluate_window(returns, t: int, L: int, f: int, config: BacktestConfig, index: int | None = None) -> RebalancePoint:
    """Estimate, optimise and score a single rebalance point (no warm start)."""
    r, dates, assets = _as_matrix(returns)
    if t < 0 or t + L + f > r.shape[0]:
        raise InsufficientDataError(f"window start {t} leaves no full evaluation period")
    k = t // f if index is None else index
    est = estimate_window(r[t : t + L], k, t, config)
    reb = dates[t + L - 1] if dates else None
    return solve_window(est, r[t + f : t + f + L], config, None, reb, assets)


# -- rolling statistics ------------------------------------------------------


def _nan_if_undefined(fn, x, y) -> float:
    try:
        return fn(x, y)
    except UndefinedCorrelationError:
        return float("nan")


def rolling_dependence(returns, L: int, f: int, pair: tuple[int, int]) -> list[tuple[float, float, float]]:
    """(Pearson, Spearman, Kendall) over each scheduled estimation window.

    A constant column inside a window yields NaN entries for that window.
    """
    r, _, _ = _as_matrix(returns)
    i, j = pair
    if not (0 <= i < r.shape[1] and 0 <= j < r.shape[1]):
        raise DomainError(f"asset pair {pair} out of range")
    out = []
    for t in window_schedule(r.shape[0], L, f):
        x, y = r[t : t + L, i], r[t : t + L, j]
        out.append(tuple(_nan_if_undefined(fn, x, y) for fn in (pearson, spearman, kendall_tau)))
    return out


def rolling_asset_metrics(returns, L: int, f: int) -> list[dict]:
    r, _, _ = _as_matrix(returns)
    out = []
    for t in window_schedule(r.shape[0], L, f):
        w = r[t : t + L]
        mean = w.mean(axis=0)
        sd = w.std(axis=0, ddof=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            sharpe = np.where(sd > 0, mean / sd, np.nan)
        out.append({"mean": mean.tolist(), "sd": sd.tolist(), "sharpe": sharpe.tolist()})
    return out


# -- aggregation -------------------------------------------------------------


def _finite_mean(values) -> float | None:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def aggregate(points: list[RebalancePoint], strategies) -> dict[str, dict]:
    out = {}
    for s in strategies:
        out[s] = {
            "average_return": _finite_mean(p.next_period_return[s] for p in points),
            "average_sharpe": _finite_mean(p.sharpe[s] for p in points),
            "n_windows": len(points),
        }
    return out


def win_percentages(points: list[RebalancePoint], strategies) -> dict[str, dict]:
    """Percent of windows where strategy ``a`` beats ``b``, keyed ``"a|b"``."""
    out = {}
    for a, b in itertools.permutations(strategies, 2):
        if not points:
            out[f"{a}|{b}"] = {"return": None, "sharpe": None}
            continue
        ret = sum(p.next_period_return[a] > p.next_period_return[b] for p in points)
        shp = sum(
            math.isfinite(p.sharpe[a]) and math.isfinite(p.sharpe[b]) and p.sharpe[a] > p.sharpe[b]
            for p in points
        )
        out[f"{a}|{b}"] = {"return": 100.0 * ret / len(points), "sharpe": 100.0 * shp / len(points)}
    return out


def regime_breakdown(points: list[RebalancePoint], config: BacktestConfig) -> dict[str, dict]:
    out = {}
    for label, lo, hi in config.regimes:
        sub = [
            p for p in points
            if p.rebalance_date is not None and lo <= date.fromisoformat(p.rebalance_date) < hi
        ]
        out[label] = {
            "start": lo.isoformat(),
            "end": hi.isoformat(),
            "aggregates": aggregate(sub, config.strategies),
            "wins": win_percentages(sub, config.strategies),
        }
    return out


# -- driver ------------------------------------------------------------------


def run_backtest(returns: ReturnPanel, config: BacktestConfig) -> BacktestReport:
    r, dates, assets = _as_matrix(returns)
    assets = list(assets) if assets else [str(j) for j in range(r.shape[1])]
    L, f = config.window_length, config.rebalance_frequency
    starts = window_schedule(r.shape[0], L, f)
    workers = effective_workers(config.workers)
    use_copula = any(s in COPULA_STRATEGIES for s in config.strategies)

    fits_by_window: dict[int, object] = {}
    if use_copula and config.refit_interval > 1:
        anchors = list(range(0, len(starts), config.refit_interval))
        results = _map(_safe_fit, [(r[starts[k] : starts[k] + L], config) for k in anchors], workers)
        for k, res in zip(anchors, results):
            for kk in range(k, min(k + config.refit_interval, len(starts))):
                fits_by_window[kk] = None if isinstance(res, Exception) else res

    jobs = [(r[t : t + L], k, t, config, fits_by_window.get(k)) for k, t in enumerate(starts)]
    estimates = _map(_safe_estimate, jobs, workers)

    points, failed = [], []
    warm: dict = {}
    for k, (t, est) in enumerate(zip(starts, estimates)):
        if isinstance(est, Exception):
            failed.append({"index": k, "start": t, "error": f"{type(est).__name__}: {est}"})
            continue
        try:
            reb = dates[t + L - 1] if dates else None
            points.append(solve_window(est, r[t + f : t + f + L], config, warm, reb, assets))
        except CopulaFolioError as err:
            failed.append({"index": k, "start": t, "error": f"{type(err).__name__}: {err}"})
    if len(failed) > config.max_failed_fraction * len(starts):
        raise BacktestError(f"{len(failed)} of {len(starts)} windows failed; first: {failed[0]['error']}")

    rolling = {
        "dates": [dates[t + L - 1].isoformat() if dates else None for t in starts],
        "assets": rolling_asset_metrics(r, L, f),
        "pairs": {
            f"{assets[i]}|{assets[j]}": [list(v) for v in rolling_dependence(r, L, f, (i, j))]
            for i, j in itertools.combinations(range(len(assets)), 2)
        },
    }
    return BacktestReport(
        config=config.to_dict(),
        assets=assets,
        points=points,
        aggregates=aggregate(points, config.strategies),
        wins=win_percentages(points, config.strategies),
        regimes=regime_breakdown(points, config),
        rolling=rolling,
        failed_windows=failed,
    )
