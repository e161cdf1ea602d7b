"""Command-line interface: ``copula-folio {backtest,fit-marginal,validate}``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
input error (missing file, malformed CSV, unknown asset).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, bundled_panel_path
from .backtest import MARKET_EPSILON, STRATEGIES, BacktestConfig, run_backtest
from .exceptions import (
    AlignmentError,
    CopulaFolioError,
    DomainError,
    InsufficientDataError,
    ParseError,
    SizeError,
)
from .market_data import load_prices, log_returns
from .reports import write_reports
from .sgt import density_grid, sgt_fit

logger = logging.getLogger("copula_folio")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
FREQUENCIES = {"daily": 1, "weekly": 5}
INPUT_ERRORS = (OSError, ParseError, AlignmentError, InsufficientDataError, DomainError, SizeError)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    out: str = "results"
    format: str = "both"
    verbosity: int = 0
    backtest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.format not in ("csv", "json", "both"):
            raise UsageError(f"format must be csv, json or both, not {self.format!r}")


BACKTEST_KEYS = {f.name for f in dataclasses.fields(BacktestConfig)}


def load_config_file(path) -> dict:
    """Read a YAML (or JSON) key-value config document."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping")
    return data


def _frequency(value) -> int:
    if isinstance(value, str) and value.lower() in FREQUENCIES:
        return FREQUENCIES[value.lower()]
    try:
        f = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"frequency must be daily, weekly or a positive integer, not {value!r}") from None
    if f < 1:
        raise UsageError("frequency must be positive")
    return f


def build_run_config(args) -> RunConfig:
    """Merge config file values with CLI flags; flags win."""
    values = load_config_file(args.config) if args.config else {}
    unknown = set(values) - BACKTEST_KEYS - {"input", "out", "format", "verbosity", "freq", "market"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    bt = {k: v for k, v in values.items() if k in BACKTEST_KEYS}
    if "market" in values:
        bt.setdefault("epsilon", MARKET_EPSILON[values["market"]])
    if "freq" in values:
        bt["rebalance_frequency"] = _frequency(values["freq"])

    flag_map = {
        "window_length": args.window_length,
        "strategies": args.strategies.split(",") if args.strategies else None,
        "seed": args.seed,
        "epsilon": args.epsilon if args.epsilon is not None else (MARKET_EPSILON[args.market] if args.market else None),
        "mc_cap": args.mc_cap,
        "mc_floor": args.mc_floor,
        "workers": args.workers,
        "refit_interval": args.refit_interval,
        "rebalance_frequency": _frequency(args.freq) if args.freq is not None else None,
    }
    bt.update({k: v for k, v in flag_map.items() if v is not None})
    if isinstance(bt.get("strategies"), str):
        bt["strategies"] = bt["strategies"].split(",")
    for key in ("strategies", "regime_splits", "regime_labels"):
        if isinstance(bt.get(key), list):
            bt[key] = tuple(bt[key])

    return RunConfig(
        input=args.input or values.get("input"),
        out=args.out or values.get("out", "results"),
        format=args.format or values.get("format", "both"),
        verbosity=args.verbose or int(values.get("verbosity", 0)),
        backtest=bt,
    )


def _returns(path):
    panel = load_prices(path)
    for line in panel.quality.lines():
        logger.info(line)
    return log_returns(panel)


def cmd_backtest(args) -> int:
    run = build_run_config(args)
    if not run.input:
        raise UsageError("an --input price file is required (or set 'input' in the config)")
    try:
        config = BacktestConfig(**run.backtest)
    except (TypeError, DomainError) as err:
        raise UsageError(f"invalid backtest configuration: {err}") from None
    returns = _returns(run.input)
    report = run_backtest(returns, config)
    written = write_reports(report, run.out, run.format)
    for path in written:
        print(path)
    if report.failed_windows:
        print(f"warning: {len(report.failed_windows)} window(s) failed", file=sys.stderr)
    return EXIT_OK


def _parse_window(text: str | None, n: int) -> tuple[int, int]:
    if text is None:
        return 0, n
    try:
        start_s, len_s = text.split(":")
        start, length = int(start_s), int(len_s)
    except ValueError:
        raise UsageError(f"window must be START:LENGTH, not {text!r}") from None
    if start < 0 or length < 1 or start + length > n:
        raise UsageError(f"window {text} is outside the {n} available returns")
    return start, length


def cmd_fit_marginal(args) -> int:
    returns = _returns(args.input)
    if args.asset not in returns.assets:
        raise UsageError(f"unknown asset {args.asset!r}; available: {', '.join(returns.assets)}")
    start, length = _parse_window(args.window, returns.n)
    col = returns.returns[start : start + length, returns.assets.index(args.asset)]
    fit = sgt_fit(col, seed=args.seed)
    out = sys.stdout
    out.write(f"asset,{args.asset}\nwindow_start,{start}\nwindow_length,{length}\n")
    out.write(f"first_date,{returns.dates[start].isoformat()}\nlast_date,{returns.dates[start + length - 1].isoformat()}\n")
    for k, v in fit.params.as_dict().items():
        out.write(f"{k},{float(v)!r}\n")
    out.write(f"log_likelihood,{float(fit.log_likelihood)!r}\nconverged,{str(fit.converged).lower()}\n")
    out.write(f"ad_statistic,{float(fit.ad.statistic)!r}\nad_p_value,{float(fit.ad.p_value)!r}\n\n")
    x, pdf = density_grid(fit.params, points=args.points)
    out.write("x,pdf\n")
    for xi, fi in zip(x.tolist(), pdf.tolist()):
        out.write(f"{xi!r},{fi!r}\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        panel = load_prices(args.input)
        report = panel.quality
        status = EXIT_OK
    except AlignmentError as err:
        if err.report is None:
            raise
        report = err.report
        print(f"alignment failed: {err}")
        status = EXIT_USAGE
    for line in report.lines():
        print(line)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copula-folio", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    bt = sub.add_parser("backtest", help="run the rolling-window strategy comparison")
    bt.add_argument("--input", help="price CSV (long or wide); 'bundled' for the shipped synthetic panel")
    bt.add_argument("--config", help="YAML/JSON file mirroring these flags")
    bt.add_argument("--out", help="output directory (default: results)")
    bt.add_argument("--format", choices=("csv", "json", "both"))
    bt.add_argument("--freq", help="rebalance frequency: daily, weekly or an integer number of days")
    bt.add_argument("--window-length", type=int)
    bt.add_argument("--strategies", help=f"comma-separated subset of {','.join(STRATEGIES)}")
    bt.add_argument("--seed", type=int)
    bt.add_argument("--market", choices=sorted(MARKET_EPSILON), help="preset Monte Carlo accuracy")
    bt.add_argument("--epsilon", type=float, help="Monte Carlo accuracy target")
    bt.add_argument("--mc-cap", type=int, help="maximum copula draws per window")
    bt.add_argument("--mc-floor", type=int, help="minimum copula draws per window")
    bt.add_argument("--workers", type=int, help="worker processes for window estimation")
    bt.add_argument("--refit-interval", type=int, help="refit marginals every k-th window")
    bt.add_argument("-v", "--verbose", action="count", default=0)
    bt.set_defaults(func=cmd_backtest)

    fm = sub.add_parser("fit-marginal", help="fit an SGT marginal on one window and print a density grid")
    fm.add_argument("--input", required=True)
    fm.add_argument("--asset", required=True)
    fm.add_argument("--window", help="START:LENGTH in return rows (default: whole series)")
    fm.add_argument("--points", type=int, default=201)
    fm.add_argument("--seed", type=int, default=0)
    fm.add_argument("-v", "--verbose", action="count", default=0)
    fm.set_defaults(func=cmd_fit_marginal)

    va = sub.add_parser("validate", help="align a price file and print a data-quality report")
    va.add_argument("--input", required=True)
    va.add_argument("-v", "--verbose", action="count", default=0)
    va.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "input", None) == "bundled":
        args.input = str(bundled_panel_path())
    try:
        return args.func(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except INPUT_ERRORS as err:
        parser.print_usage(sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (CopulaFolioError, np.linalg.LinAlgError, ArithmeticError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
