from datetime import date, timedelta

import numpy as np
import pytest
import requests

from copula_folio import bundled_panel_path
from copula_folio.exceptions import AlignmentError, DomainError, ParseError, SizeError
from copula_folio.market_data import (
    PricePanel,
    ReturnPanel,
    align_prices,
    fetch_prices,
    load_prices,
    log_returns,
    parse_price_csv,
)


def wide(rows, tickers=("A", "B")):
    lines = ["date," + ",".join(tickers)]
    lines += [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


def days(n):
    return [(date(2024, 1, 1) + timedelta(days=i)).isoformat() for i in range(n)]


CLEAN = wide([(d, str(10 + i), str(20 + i)) for i, d in enumerate(days(10))])


class TestParse:
    def test_wide(self):
        s = parse_price_csv(CLEAN)
        assert set(s) == {"A", "B"}
        assert s["A"][date(2024, 1, 1)] == 10.0

    def test_long_equals_wide(self):
        rows = ["date,asset,adj_close"]
        for i, d in enumerate(days(10)):
            rows.append(f"{d},A,{10 + i}")
            rows.append(f"{d},B,{20 + i}")
        long_panel = align_prices(parse_price_csv("\n".join(rows)))
        wide_panel = align_prices(parse_price_csv(CLEAN))
        assert long_panel.dates == wide_panel.dates
        assert long_panel.assets == wide_panel.assets
        assert np.array_equal(long_panel.prices, wide_panel.prices)

    def test_bad_price_has_line_number(self):
        with pytest.raises(ParseError) as err:
            parse_price_csv("date,A\n2024-01-01,1.0\n2024-01-02,abc\n")
        assert err.value.line == 3
        assert "line 3" in str(err.value)

    def test_bad_date(self):
        with pytest.raises(ParseError):
            parse_price_csv("date,A\n01/02/2024,1.0\n")

    def test_non_positive_price(self):
        with pytest.raises(DomainError):
            parse_price_csv("date,A\n2024-01-01,0\n")

    def test_bad_header(self):
        with pytest.raises(ParseError):
            parse_price_csv("day,A\n2024-01-01,1\n")

    def test_duplicate_dates(self):
        with pytest.raises(ParseError):
            parse_price_csv("date,A\n2024-01-01,1\n2024-01-01,2\n")
        with pytest.raises(ParseError):
            parse_price_csv("date,asset,adj_close\n2024-01-01,A,1\n2024-01-01,A,2\n")

    def test_ragged_row(self):
        with pytest.raises(ParseError):
            parse_price_csv("date,A,B\n2024-01-01,1\n")

    def test_empty(self):
        with pytest.raises(ParseError):
            parse_price_csv("\n\n")


class TestAlign:
    def test_clean_has_no_fills(self):
        panel = align_prices(parse_price_csv(CLEAN))
        assert panel.quality.n_fills == 0
        assert panel.quality.dropped_dates == []
        assert panel.prices.shape == (10, 2)

    def test_single_gap_forward_filled(self):
        rows = [(d, str(10 + i), "" if i == 4 else str(20 + i)) for i, d in enumerate(days(30))]
        panel = align_prices(parse_price_csv(wide(rows)))
        assert panel.quality.n_fills == 1
        assert panel.quality.fills["B"] == [date(2024, 1, 5)]
        assert panel.prices[4, 1] == panel.prices[3, 1]
        assert len(panel.dates) == 30

    def test_multi_day_gap_dropped(self):
        # 2 of 60 rows missing stays under the 5% rejection threshold
        rows = [(d, str(10 + i), "" if i in (4, 5) else str(20 + i)) for i, d in enumerate(days(60))]
        panel = align_prices(parse_price_csv(wide(rows)))
        assert panel.assets == ("A", "B")
        assert panel.quality.n_fills == 0
        assert panel.quality.dropped_dates == [date(2024, 1, 5), date(2024, 1, 6)]
        assert len(panel.dates) == 58

    def test_sparse_asset_rejected(self):
        rows = [(d, str(10 + i), str(20 + i) if i % 2 else "") for i, d in enumerate(days(30))]
        panel = align_prices(parse_price_csv(wide(rows)))
        assert panel.assets == ("A",)
        assert panel.quality.assets_rejected["B"] == pytest.approx(0.5)

    def test_disjoint_dates(self):
        text = "date,asset,adj_close\n2024-01-01,A,1\n2024-01-02,A,2\n2024-01-03,B,1\n2024-01-04,B,2\n"
        with pytest.raises(AlignmentError) as err:
            align_prices(parse_price_csv(text))
        assert set(err.value.report.assets_rejected) == {"A", "B"}

    def test_common_span(self):
        # B starts one day late and A ends one day early; both within the 5% budget
        rows = [(d, "" if i == 39 else str(10 + i), "" if i == 0 else str(20 + i)) for i, d in enumerate(days(40))]
        panel = align_prices(parse_price_csv(wide(rows)))
        assert panel.dates[0] == date(2024, 1, 2)
        assert panel.dates[-1] == date(2024, 2, 8)
        assert panel.quality.n_fills == 0

    def test_single_row_asset(self):
        with pytest.raises(SizeError):
            align_prices({"A": {date(2024, 1, 1): 1.0}})


class TestPanels:
    def test_log_returns(self):
        panel = align_prices(parse_price_csv(CLEAN))
        r = log_returns(panel)
        assert r.n == 9 and r.d == 2
        assert r.returns[0, 0] == pytest.approx(np.log(11 / 10), abs=1e-15)
        assert r.dates[0] == date(2024, 1, 2)

    def test_read_only(self):
        r = ReturnPanel((date(2024, 1, 1),), ("A",), np.array([[0.1]]))
        with pytest.raises(ValueError):
            r.returns[0, 0] = 1.0

    def test_validation(self):
        with pytest.raises(SizeError):
            PricePanel((date(2024, 1, 1),), ("A", "B"), np.array([[1.0]]))
        with pytest.raises(DomainError):
            PricePanel((date(2024, 1, 2), date(2024, 1, 1)), ("A",), np.array([[1.0], [2.0]]))

    def test_bundled_panel(self):
        panel = load_prices(bundled_panel_path())
        assert panel.prices.shape == (600, 3)
        assert panel.quality.n_fills == 0


class FakeResponse:
    def __init__(self, text, fail=False):
        self.text = text
        self.fail = fail

    def raise_for_status(self):
        if self.fail:
            raise requests.HTTPError("503")


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.urls = []

    def get(self, url, timeout):
        self.urls.append(url)
        return self.responses.pop(0)


class TestFetch:
    def test_retries_then_succeeds(self):
        session = FakeSession([FakeResponse("", fail=True), FakeResponse(CLEAN)])
        sleeps = []
        panel = fetch_prices(["A", "B"], "https://example.test/{tickers}?s={start}", start="2024", session=session, sleep=sleeps.append)
        assert panel.assets == ("A", "B")
        assert session.urls[0] == "https://example.test/A,B?s=2024"
        assert sleeps == [0.5]

    def test_gives_up(self):
        session = FakeSession([FakeResponse("", fail=True)] * 3)
        sleeps = []
        with pytest.raises(ConnectionError):
            fetch_prices(["A"], "https://example.test/{tickers}", session=session, sleep=sleeps.append)
        assert sleeps == [0.5, 1.0]

    def test_requires_https(self):
        with pytest.raises(DomainError):
            fetch_prices(["A"], "http://example.test/{tickers}", session=FakeSession([]))
