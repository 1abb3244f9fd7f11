"""Snapshot ingestion: parsing, aggregation, forwards, serialization."""

from pathlib import Path

import numpy as np
import pytest

from essvi.market import (
    AggregatedOption,
    CurvePoint,
    MarketSnapshot,
    OptionRecord,
    SnapshotError,
    aggregate,
    aggregated_table_csv,
    forward_at,
    parse_quote_file,
    reaggregated,
    write_snapshot,
)

CLOSE = 36000.0


def quote(strike=100.0, maturity=0.1, kind="call", ts=CLOSE, bid=2.0, ask=2.2, spot=100.0):
    return OptionRecord(
        strike=strike,
        maturity=maturity,
        option_kind=kind,
        record_kind="quote",
        timestamp=ts,
        spot_at_ts=spot,
        bid=bid,
        ask=ask,
    )


def trade(strike=100.0, maturity=0.1, kind="call", ts=CLOSE, price=2.1, spot=100.0):
    return OptionRecord(
        strike=strike,
        maturity=maturity,
        option_kind=kind,
        record_kind="trade",
        timestamp=ts,
        spot_at_ts=spot,
        trade_price=price,
    )


def write_files(tmp_path, quotes_rows, curve_rows=None, meta=None):
    curve_rows = curve_rows or ["0.1,100.0,0.999"]
    meta = meta or {"close_spot": "100.0", "close_time": "36000"}
    (tmp_path / "quotes.csv").write_text(
        "maturity,strike,kind,record_kind,timestamp,bid,ask,trade_price,spot_at_ts\n"
        + "".join(row + "\n" for row in quotes_rows)
    )
    (tmp_path / "curve.csv").write_text(
        "maturity,forward_close,discount_close\n" + "".join(r + "\n" for r in curve_rows)
    )
    (tmp_path / "meta.cfg").write_text(
        "".join(f"{k} = {v}\n" for k, v in meta.items())
    )


class TestOptionRecordValidation:
    def test_bid_above_ask(self):
        with pytest.raises(ValueError):
            quote(bid=2.3, ask=2.2)

    def test_needs_band_or_trade(self):
        with pytest.raises(ValueError):
            OptionRecord(
                strike=100,
                maturity=0.1,
                option_kind="call",
                record_kind="quote",
                timestamp=0.0,
                spot_at_ts=100.0,
                bid=2.0,
            )

    def test_nonpositive_maturity(self):
        with pytest.raises(ValueError):
            quote(maturity=0.0)


class TestParse:
    def test_single_quote_row(self, tmp_path):
        write_files(tmp_path, ["0.1,100,call,quote,36000,2,2.2,,100"])
        snap = parse_quote_file(tmp_path)
        assert len(snap.aggregated) == 1
        row = snap.aggregated[0]
        assert row.price == pytest.approx(2.1)
        assert (row.bid, row.ask) == (2.0, 2.2)

    def test_empty_records_section(self, tmp_path):
        write_files(tmp_path, [])
        snap = parse_quote_file(tmp_path)
        assert snap.aggregated == ()

    def test_ask_below_bid_names_line(self, tmp_path):
        write_files(tmp_path, ["0.1,100,call,quote,36000,2.5,2.2,,100"])
        with pytest.raises(SnapshotError, match="line 2"):
            parse_quote_file(tmp_path)

    def test_non_increasing_curve(self, tmp_path):
        write_files(
            tmp_path,
            ["0.1,100,call,quote,36000,2,2.2,,100"],
            curve_rows=["0.2,100.0,0.999", "0.1,100.5,0.998"],
        )
        with pytest.raises(SnapshotError, match="strictly increasing"):
            parse_quote_file(tmp_path)

    def test_unknown_maturity_rejected(self, tmp_path):
        write_files(tmp_path, ["0.5,100,call,quote,36000,2,2.2,,100"])
        with pytest.raises(SnapshotError, match="not on the curve"):
            parse_quote_file(tmp_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SnapshotError, match="missing snapshot file"):
            parse_quote_file(tmp_path)

    def test_row_order_preserved_within_maturity(self, tmp_path):
        write_files(
            tmp_path,
            [
                "0.1,105,call,quote,36000,1.0,1.2,,100",
                "0.1,95,put,quote,36000,0.8,1.0,,100",
            ],
        )
        snap = parse_quote_file(tmp_path)
        assert [r.strike for r in snap.records] == [105.0, 95.0]


class TestAggregate:
    def test_single_quote_mid(self):
        rows = aggregate([quote()], 600.0, CLOSE)
        assert rows[0].price == pytest.approx(2.1)

    def test_trade_beats_older_quote(self):
        rows = aggregate(
            [quote(ts=CLOSE - 600.0), trade(ts=CLOSE - 10.0, price=2.15)], 600.0, CLOSE
        )
        assert rows[0].price == 2.15
        assert rows[0].bid == 2.0 and rows[0].ask == 2.2

    def test_all_records_stale(self):
        assert aggregate([quote(ts=100.0), trade(ts=50.0)], 600.0, CLOSE) == []

    def test_trade_tie_resolved_by_quote_mid(self):
        rows = aggregate(
            [
                trade(ts=CLOSE - 5.0, price=2.4),
                trade(ts=CLOSE - 5.0, price=2.0),
                quote(ts=CLOSE - 50.0, bid=2.0, ask=2.2),
            ],
            600.0,
            CLOSE,
        )
        assert rows[0].price == pytest.approx(2.1)

    def test_trade_tie_without_quote_takes_last(self):
        rows = aggregate(
            [trade(ts=CLOSE - 5.0, price=2.4), trade(ts=CLOSE - 5.0, price=2.0)],
            600.0,
            CLOSE,
        )
        assert rows[0].price == 2.0

    def test_one_sided_quote_dropped(self):
        one_sided = OptionRecord(
            strike=100,
            maturity=0.1,
            option_kind="call",
            record_kind="quote",
            timestamp=CLOSE,
            spot_at_ts=100.0,
            bid=2.0,
            ask=None,
            trade_price=2.05,
        )
        assert aggregate([one_sided], 600.0, CLOSE) == []

    def test_idempotent(self):
        curve = [CurvePoint(0.1, 100.0, 0.999), CurvePoint(0.5, 101.0, 0.99)]
        records = [
            quote(),
            trade(ts=CLOSE - 20.0, price=2.15, spot=100.2),
            quote(strike=90.0, maturity=0.5, kind="put", bid=1.0, ask=1.1, spot=99.8),
        ]
        snap = MarketSnapshot.build(100.0, CLOSE, curve, records)
        again = reaggregated(snap)
        assert aggregated_table_csv(again) == aggregated_table_csv(snap)


class TestNoiseFilter:
    def test_sub_intrinsic_row_dropped(self):
        curve = [CurvePoint(0.1, 100.0, 1.0)]
        # deep ITM call quoted below intrinsic (forward 100, strike 50)
        bad = quote(strike=50.0, bid=40.0, ask=42.0)
        good = quote(strike=50.0, bid=50.0, ask=50.4)
        snap = MarketSnapshot.build(100.0, CLOSE, curve, [bad])
        assert snap.aggregated == ()
        snap = MarketSnapshot.build(100.0, CLOSE, curve, [good])
        assert len(snap.aggregated) == 1


class TestForwardAt:
    def test_identity_and_scaling(self):
        point = CurvePoint(0.25, 100.0, 0.99)
        assert forward_at(point, 100.0, 100.0) == 100.0
        assert forward_at(point, 200.0, 100.0) == 200.0

    def test_reference_value(self):
        point = CurvePoint(0.25, 1871.67, 0.99)
        assert forward_at(point, 0.99 * 100.0, 100.0) == pytest.approx(1852.9533, rel=1e-12)

    def test_homogeneous_in_spot(self):
        rng = np.random.default_rng(3)
        point = CurvePoint(0.25, 123.0, 0.97)
        for _ in range(50):
            spot = rng.uniform(1, 1000)
            scale = rng.uniform(0.1, 10)
            assert forward_at(point, scale * spot, 100.0) == pytest.approx(
                scale * forward_at(point, spot, 100.0), rel=1e-14
            )

    def test_domain_errors(self):
        point = CurvePoint(0.25, 100.0, 0.99)
        with pytest.raises(ValueError):
            forward_at(point, 0.0, 100.0)
        with pytest.raises(ValueError):
            forward_at(point, 100.0, -1.0)


class TestSerialization:
    def test_parse_write_parse_is_stable(self, tmp_path, small_snapshot):
        first = tmp_path / "first"
        write_snapshot(small_snapshot, first)
        snap1 = parse_quote_file(first)
        second = tmp_path / "second"
        write_snapshot(snap1, second)
        snap2 = parse_quote_file(second)
        assert aggregated_table_csv(snap1) == aggregated_table_csv(snap2)
        for name in ("quotes.csv", "curve.csv", "meta.cfg"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_quotes_path_accepted_directly(self, tmp_path, small_snapshot):
        write_snapshot(small_snapshot, tmp_path)
        snap = parse_quote_file(tmp_path / "quotes.csv")
        assert len(snap.aggregated) == len(small_snapshot.aggregated)
