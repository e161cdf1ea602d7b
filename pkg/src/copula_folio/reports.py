"""Serialization of backtest reports to JSON and plot-ready CSV tables.

All numbers are written with ``repr`` so files are byte-reproducible and
round-trip exactly. NaN and missing values become empty CSV cells and JSON
``null``. Column layouts are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import shutil
import tempfile
from pathlib import Path

from .backtest import BacktestReport

SUMMARY_METRICS = (
    "Average Return (%)",
    "Average Sharpe Ratio (%)",
    "No. of Windows",
    "% Higher Return Windows",
    "% Higher Sharpe Ratio Windows",
)
CSV_FILES = ("summary.csv", "weights.csv", "rolling_metrics.csv", "risk_contributions.csv", "fit_diagnostics.csv")
JSON_FILE = "report.json"


def _clean(obj):
    """Replace non-finite floats by None, recursively, for strict JSON."""
    if isinstance(obj, float):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_json(report: BacktestReport) -> str:
    return dumps_json(report.to_dict())


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        # float() drops numpy scalar types, whose repr is not a plain literal
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _pct(v):
    return None if v is None else 100.0 * v


def _gain(target, base):
    if target is None or base is None or base == 0:
        return None
    return 100.0 * (target - base) / abs(base)


def _summary_rows(scope, aggregates, wins, strategies, target, base):
    rows = []
    have_pair = target in strategies and base in strategies and target != base
    for label, key in (("Average Return (%)", "average_return"), ("Average Sharpe Ratio (%)", "average_sharpe")):
        vals = [aggregates[s][key] for s in strategies]
        gain = _gain(aggregates[target][key], aggregates[base][key]) if have_pair else None
        rows.append([label, scope, *[_pct(v) for v in vals], gain, None])
    n = [aggregates[s]["n_windows"] for s in strategies]
    rows.append(["No. of Windows", scope, *n, None, None])
    pair = wins.get(f"{target}|{base}", {}) if have_pair else {}
    rows.append(["% Higher Return Windows", scope, *[None] * len(strategies), None, pair.get("return")])
    rows.append(["% Higher Sharpe Ratio Windows", scope, *[None] * len(strategies), None, pair.get("sharpe")])
    return rows


def summary_csv(report: BacktestReport) -> str:
    """Per-strategy aggregates, overall and per regime, one row per metric.

    Average return and Sharpe are scaled by 100. ``gain_pct`` is the relative
    improvement of the target strategy over the baseline and ``win_pct`` the
    share of windows where the target beats the baseline.
    """
    cfg = report.config
    strategies = cfg["strategies"]
    target, base = cfg["target"], cfg["baseline"]
    rows = _summary_rows("all", report.aggregates, report.wins, strategies, target, base)
    for label, reg in report.regimes.items():
        rows += _summary_rows(label, reg["aggregates"], reg["wins"], strategies, target, base)
    return _table(["metric", "scope", *strategies, "gain_pct", "win_pct"], rows)


def weights_csv(report: BacktestReport) -> str:
    rows = []
    for p in report.points:
        for s, w in p.weights.items():
            rows += [[p.rebalance_date, p.index, s, a, x] for a, x in zip(report.assets, w)]
    return _table(["date", "window", "strategy", "asset", "weight"], rows)


def risk_contributions_csv(report: BacktestReport) -> str:
    rows = []
    for p in report.points:
        for s, rc in p.risk_contributions.items():
            vals = rc if rc is not None else [None] * len(report.assets)
            rows += [[p.rebalance_date, p.index, s, a, x] for a, x in zip(report.assets, vals)]
    return _table(["date", "window", "strategy", "asset", "risk_contribution"], rows)


def rolling_metrics_csv(report: BacktestReport) -> str:
    """Rolling per-asset moments, pairwise correlations and strategy scores."""
    rows = []
    roll = report.rolling
    for k, (day, stats) in enumerate(zip(roll["dates"], roll["assets"])):
        for j, a in enumerate(report.assets):
            rows.append([day, k, "asset", a, stats["mean"][j], stats["sd"][j], stats["sharpe"][j], None, None, None])
        for pair, series in roll["pairs"].items():
            pe, sp, kt = series[k]
            rows.append([day, k, "pair", pair, None, None, None, pe, sp, kt])
    for p in report.points:
        for s in p.next_period_return:
            rows.append([p.rebalance_date, p.index, "strategy", s, p.next_period_return[s], None, p.sharpe[s], None, None, None])
    header = ["date", "window", "kind", "series", "mean", "sd", "sharpe", "pearson", "spearman", "kendall"]
    return _table(header, rows)


def fit_diagnostics_csv(report: BacktestReport) -> str:
    cols = ["mu", "sigma", "lam", "p", "q", "log_likelihood", "ad_statistic", "ad_p_value", "converged", "iterations"]
    rows = []
    for p in report.points:
        diag = p.diagnostics
        for fit in diag["fits"]:
            rows.append([p.rebalance_date, p.index, fit["asset"], *[fit[c] for c in cols], diag["fallback"], diag["mc_draws"]])
        if not diag["fits"] and diag["fallback"]:
            rows.append([p.rebalance_date, p.index, None, *[None] * len(cols), True, None])
    return _table(["date", "window", "asset", *cols, "fallback", "mc_draws"], rows)


RENDERERS = {
    "summary.csv": summary_csv,
    "weights.csv": weights_csv,
    "rolling_metrics.csv": rolling_metrics_csv,
    "risk_contributions.csv": risk_contributions_csv,
    "fit_diagnostics.csv": fit_diagnostics_csv,
    JSON_FILE: report_json,
}


def output_files(fmt: str) -> tuple[str, ...]:
    if fmt == "json":
        return (JSON_FILE,)
    if fmt == "csv":
        return CSV_FILES
    if fmt == "both":
        return (JSON_FILE, *CSV_FILES)
    raise ValueError(f"unknown report format {fmt!r}")


def write_reports(report: BacktestReport, out_dir, fmt: str = "both") -> list[Path]:
    """Render every file, then move them into ``out_dir`` together.

    Files are staged in a temporary directory first, so a failure leaves no
    partial output behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = output_files(fmt)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    written = []
    try:
        for name in names:
            (stage / name).write_text(RENDERERS[name](report), encoding="utf-8")
        for name in names:
            os.replace(stage / name, out / name)
            written.append(out / name)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return written
