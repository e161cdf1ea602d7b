"""Price ingestion, calendar alignment and log returns.

Two CSV layouts are accepted and told apart by the header:

* long: ``date,asset,adj_close``
* wide: ``date,<ticker1>,<ticker2>,...`` (empty cell = missing)

Alignment policy: assets missing more than 5% of the union calendar are
rejected; the rest are restricted to their common date span. Inside that
span an isolated one-day gap is forward-filled, while dates inside longer
gaps are dropped for every asset.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .exceptions import AlignmentError, DomainError, ParseError, SizeError

logger = logging.getLogger(__name__)

MAX_MISSING_FRACTION = 0.05
LONG_HEADER = ["date", "asset", "adj_close"]


@dataclass
class QualityReport:
    first_date: date | None = None
    last_date: date | None = None
    n_dates: int = 0
    assets_kept: list[str] = field(default_factory=list)
    # asset -> fraction of the union calendar it is missing
    assets_rejected: dict[str, float] = field(default_factory=dict)
    fills: dict[str, list[date]] = field(default_factory=dict)
    dropped_dates: list[date] = field(default_factory=list)

    @property
    def n_fills(self) -> int:
        return sum(len(v) for v in self.fills.values())

    def lines(self) -> list[str]:
        out = [
            f"dates: {self.n_dates} ({self.first_date} .. {self.last_date})",
            f"assets kept: {len(self.assets_kept)} ({', '.join(self.assets_kept)})",
            f"gaps filled: {self.n_fills}",
        ]
        for asset, days in self.fills.items():
            if days:
                out.append(f"  {asset}: {', '.join(d.isoformat() for d in days)}")
        out.append(f"dates dropped: {len(self.dropped_dates)}")
        out.append(f"assets rejected: {len(self.assets_rejected)}")
        for asset, frac in self.assets_rejected.items():
            out.append(f"  {asset}: {100 * frac:.1f}% of dates missing")
        return out


@dataclass(frozen=True)
class PricePanel:
    dates: tuple[date, ...]
    assets: tuple[str, ...]
    prices: np.ndarray
    quality: QualityReport | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.shape != (len(self.dates), len(self.assets)):
            raise SizeError(f"prices shape {prices.shape} does not match dates x assets")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DomainError("dates must be strictly increasing")
        if not np.isfinite(prices).all() or (prices <= 0).any():
            raise DomainError("prices must be finite and positive")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)


@dataclass(frozen=True)
class ReturnPanel:
    dates: tuple[date, ...]
    assets: tuple[str, ...]
    returns: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        if r.shape != (len(self.dates), len(self.assets)):
            raise SizeError(f"returns shape {r.shape} does not match dates x assets")
        if not np.isfinite(r).all():
            raise DomainError("returns must be finite")
        r.setflags(write=False)
        object.__setattr__(self, "returns", r)

    @property
    def n(self) -> int:
        return len(self.dates)

    @property
    def d(self) -> int:
        return len(self.assets)


def log_returns(prices: PricePanel) -> ReturnPanel:
    if len(prices.dates) < 2:
        raise SizeError("log returns need at least 2 price rows")
    logp = np.log(prices.prices)
    return ReturnPanel(prices.dates[1:], prices.assets, np.diff(logp, axis=0))


def _parse_date(text: str, line: int) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"bad date {text!r}", line) from None


def _parse_price(text: str, line: int) -> float:
    try:
        val = float(text)
    except ValueError:
        raise ParseError(f"bad price {text!r}", line) from None
    if not math.isfinite(val):
        raise ParseError(f"non-finite price {text!r}", line)
    if val <= 0:
        raise DomainError(f"line {line}: non-positive price {val}")
    return val


def parse_price_csv(text: str) -> dict[str, dict[date, float]]:
    """Parse long or wide CSV text into ``{asset: {date: price}}``."""
    reader = csv.reader(io.StringIO(text))
    rows = [(i, r) for i, r in enumerate(reader, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty input", 1)
    header_line, header = rows[0]
    header = [h.strip() for h in header]
    series: dict[str, dict[date, float]] = {}

    if [h.lower() for h in header] == LONG_HEADER:
        for line, row in rows[1:]:
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line)
            day = _parse_date(row[0], line)
            asset = row[1].strip()
            if not asset:
                raise ParseError("empty asset identifier", line)
            prices = series.setdefault(asset, {})
            if day in prices:
                raise ParseError(f"duplicate date {day} for {asset}", line)
            prices[day] = _parse_price(row[2], line)
        return series

    if not header or header[0].lower() != "date" or len(header) < 2:
        raise ParseError("header must be 'date,asset,adj_close' or 'date,<ticker>,...'", header_line)
    tickers = header[1:]
    if len(set(tickers)) != len(tickers) or not all(tickers):
        raise ParseError("duplicate or empty ticker in header", header_line)
    for t in tickers:
        series[t] = {}
    seen = set()
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        day = _parse_date(row[0], line)
        if day in seen:
            raise ParseError(f"duplicate date {day}", line)
        seen.add(day)
        for t, cell in zip(tickers, row[1:]):
            if cell.strip():
                series[t][day] = _parse_price(cell, line)
    return series


def align_prices(series: dict[str, dict[date, float]]) -> PricePanel:
    report = QualityReport()
    if not series:
        raise AlignmentError("no assets in input")
    for asset, pts in series.items():
        if len(pts) < 2:
            raise SizeError(f"asset {asset} has fewer than 2 price rows")

    union = sorted(set().union(*(pts.keys() for pts in series.values())))
    kept = []
    for asset, pts in series.items():
        missing = 1.0 - len(pts) / len(union)
        if missing > MAX_MISSING_FRACTION:
            report.assets_rejected[asset] = missing
            logger.warning("rejecting %s: %.1f%% of dates missing", asset, 100 * missing)
        else:
            kept.append(asset)
    if not kept:
        raise AlignmentError("no asset survives alignment (date sets do not overlap)", report)

    start = max(min(series[a]) for a in kept)
    end = min(max(series[a]) for a in kept)
    calendar = [d for d in union if start <= d <= end and any(d in series[a] for a in kept)]
    if len(calendar) < 2:
        raise AlignmentError(f"common date span of {len(calendar)} day(s) is too short", report)

    has = np.array([[d in series[a] for a in kept] for d in calendar])
    fills = {a: [] for a in kept}
    drop = np.zeros(len(calendar), dtype=bool)
    for j, asset in enumerate(kept):
        for t in np.flatnonzero(~has[:, j]):
            # span endpoints always hold data, so 0 < t < len - 1
            if has[t - 1, j] and has[t + 1, j]:
                fills[asset].append(calendar[t])
            else:
                drop[t] = True
    for asset in kept:
        fills[asset] = [d for d in fills[asset] if not drop[calendar.index(d)]]

    dates = [d for d, x in zip(calendar, drop) if not x]
    if len(dates) < 2:
        raise AlignmentError("fewer than 2 aligned dates remain", report)
    prices = np.empty((len(dates), len(kept)))
    for j, asset in enumerate(kept):
        pts = series[asset]
        last = None
        for i, d in enumerate(dates):
            last = pts.get(d, last)
            prices[i, j] = last

    report.first_date, report.last_date = dates[0], dates[-1]
    report.n_dates = len(dates)
    report.assets_kept = list(kept)
    report.fills = fills
    report.dropped_dates = [d for d, x in zip(calendar, drop) if x]
    return PricePanel(tuple(dates), tuple(kept), prices, report)


def load_prices(source) -> PricePanel:
    """Read and align a price CSV from a path."""
    path = Path(source)
    text = path.read_text()
    return align_prices(parse_price_csv(text))


def fetch_prices(
    tickers,
    url_template: str,
    start: str = "",
    end: str = "",
    attempts: int = 3,
    backoff: float = 0.5,
    timeout: float = 30.0,
    session=None,
    sleep=time.sleep,
) -> PricePanel:
    """Download a wide-format CSV and align it.

    ``url_template`` is formatted with ``tickers`` (comma separated),
    ``start`` and ``end``. Failed requests are retried with exponential
    backoff, ``attempts`` times in total.
    """
    import requests

    session = session or requests.Session()
    url = url_template.format(tickers=",".join(tickers), start=start, end=end)
    if not url.startswith("https://"):
        raise DomainError("price fetch requires an https URL")
    last_err = None
    for attempt in range(attempts):
        try:
            resp = session.get(url, timeout=timeout)
            resp.raise_for_status()
            return align_prices(parse_price_csv(resp.text))
        except requests.RequestException as err:
            last_err = err
            logger.warning("fetch attempt %d/%d failed: %s", attempt + 1, attempts, err)
            if attempt + 1 < attempts:
                sleep(backoff * 2**attempt)
    raise ConnectionError(f"price fetch failed after {attempts} attempts: {last_err}")
