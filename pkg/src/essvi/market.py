"""End-of-day option snapshot ingestion and aggregation.

A snapshot lives in a directory with three files:

* ``quotes.csv`` -- header ``maturity,strike,kind,record_kind,timestamp,bid,
  ask,trade_price,spot_at_ts``; absent fields are empty.  ``kind`` is
  ``call``/``put``, ``record_kind`` is ``trade``/``quote``, ``timestamp`` is
  seconds since the session open.
* ``curve.csv`` -- header ``maturity,forward_close,discount_close`` with
  strictly increasing maturities.
* ``meta.cfg`` -- ``key = value`` lines; required keys ``close_spot`` and
  ``close_time`` (seconds since open), optional ``window`` (seconds,
  default 600).

Numbers are serialized with 12 significant digits.  Aggregation keeps the
records inside the trailing window before the close and produces one
synthetic price per ``(strike, maturity, kind)``: the last trade price when
a trade exists in the window (ties at the same timestamp resolved by the
quote mid when a quote ties, otherwise by file order), else the latest
two-sided quote's midpoint.  One-sided quotes never produce a synthetic
price.  Rows whose synthetic price implies a negative time value against
the discounted intrinsic (off the timestamped forward), or a non-positive
price, are dropped as noise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .validation import check_positive

__all__ = [
    "SECONDS_PER_YEAR",
    "SnapshotError",
    "OptionRecord",
    "CurvePoint",
    "AggregatedOption",
    "MarketSnapshot",
    "forward_at",
    "aggregate",
    "parse_quote_file",
    "write_snapshot",
    "aggregated_table_csv",
    "fmt",
]

SECONDS_PER_YEAR = 365.25 * 86400.0

QUOTES_FILE = "quotes.csv"
CURVE_FILE = "curve.csv"
META_FILE = "meta.cfg"

QUOTES_HEADER = [
    "maturity",
    "strike",
    "kind",
    "record_kind",
    "timestamp",
    "bid",
    "ask",
    "trade_price",
    "spot_at_ts",
]
CURVE_HEADER = ["maturity", "forward_close", "discount_close"]
AGGREGATED_HEADER = [
    "maturity",
    "strike",
    "kind",
    "price",
    "bid",
    "ask",
    "timestamp",
    "spot_at_ts",
]

DEFAULT_WINDOW = 600.0


def fmt(x: float | None) -> str:
    """Canonical 12-significant-digit rendering; empty string for None."""
    if x is None:
        return ""
    return format(float(x), ".12g")


class SnapshotError(ValueError):
    """Malformed snapshot input; messages carry file and line context."""


@dataclass(frozen=True)
class OptionRecord:
    """One raw trade or quote observation."""

    strike: float
    maturity: float
    option_kind: str
    record_kind: str
    timestamp: float
    spot_at_ts: float
    bid: float | None = None
    ask: float | None = None
    trade_price: float | None = None

    def __post_init__(self) -> None:
        check_positive("strike", self.strike)
        check_positive("maturity", self.maturity)
        check_positive("spot_at_ts", self.spot_at_ts)
        if self.option_kind not in ("call", "put"):
            raise ValueError(f"kind must be call/put, got {self.option_kind!r}")
        if self.record_kind not in ("trade", "quote"):
            raise ValueError(f"record_kind must be trade/quote, got {self.record_kind!r}")
        if self.timestamp < 0.0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if self.bid is not None and self.bid < 0.0:
            raise ValueError(f"bid must be >= 0, got {self.bid}")
        if self.ask is not None and self.ask < 0.0:
            raise ValueError(f"ask must be >= 0, got {self.ask}")
        if self.bid is not None and self.ask is not None and self.bid > self.ask:
            raise ValueError(f"bid {self.bid} above ask {self.ask}")
        if self.trade_price is not None and self.trade_price <= 0.0:
            raise ValueError(f"trade_price must be positive, got {self.trade_price}")
        has_band = self.bid is not None and self.ask is not None
        if not has_band and self.trade_price is None:
            raise ValueError("record needs a bid/ask pair or a trade price")

    @property
    def two_sided(self) -> bool:
        return self.bid is not None and self.ask is not None


@dataclass(frozen=True)
class CurvePoint:
    """Closing forward and discount factor for one maturity."""

    maturity: float
    forward_close: float
    discount_close: float

    def __post_init__(self) -> None:
        check_positive("maturity", self.maturity)
        check_positive("forward_close", self.forward_close)
        if not (0.0 < self.discount_close <= 1.0):
            raise ValueError(f"discount_close must lie in ]0, 1], got {self.discount_close}")


@dataclass(frozen=True)
class AggregatedOption:
    """Synthetic market price per (strike, maturity, kind), plus band if any."""

    maturity: float
    strike: float
    option_kind: str
    price: float
    bid: float | None
    ask: float | None
    timestamp: float
    spot_at_ts: float

    def __post_init__(self) -> None:
        check_positive("price", self.price)


def forward_at(curve: CurvePoint, spot_at_ts: float, close_spot: float) -> float:
    """Timestamped forward: closing forward scaled by the spot ratio."""
    check_positive("spot_at_ts", spot_at_ts)
    check_positive("close_spot", close_spot)
    return curve.forward_close * spot_at_ts / close_spot


def aggregate(records, window: float, close_time: float) -> list[AggregatedOption]:
    """Aggregate raw records inside the trailing window into synthetic prices.

    Only records with ``close_time - window <= timestamp <= close_time``
    survive.  The last trade in the window wins; several trades tying at the
    latest timestamp are arbitrated by the quote mid when a two-sided quote
    exists, else by file order.  Without any trade, the latest two-sided
    quote's midpoint is used; one-sided quotes are dropped.  Returns one row
    per (maturity, strike, kind) in sorted order (calls before puts).
    """
    check_positive("window", window)
    cutoff = close_time - window
    groups: dict[tuple, dict] = {}
    for rec in records:
        if rec.timestamp < cutoff or rec.timestamp > close_time:
            continue
        key = (rec.maturity, rec.strike, rec.option_kind)
        g = groups.setdefault(key, {"trade": None, "trade_tie": False, "quote": None})
        if rec.record_kind == "trade":
            prev = g["trade"]
            if prev is None or rec.timestamp > prev.timestamp:
                g["trade"] = rec
                g["trade_tie"] = False
            elif rec.timestamp == prev.timestamp:
                g["trade"] = rec
                g["trade_tie"] = True
        elif rec.two_sided:
            prev = g["quote"]
            if prev is None or rec.timestamp >= prev.timestamp:
                g["quote"] = rec

    out: list[AggregatedOption] = []
    for (maturity, strike, kind), g in sorted(
        groups.items(), key=lambda item: (item[0][0], item[0][1], item[0][2])
    ):
        trade, quote = g["trade"], g["quote"]
        band = (quote.bid, quote.ask) if quote is not None else (None, None)
        if trade is not None:
            if g["trade_tie"] and quote is not None:
                winner, price = quote, 0.5 * (quote.bid + quote.ask)
            else:
                winner, price = trade, trade.trade_price
        elif quote is not None:
            winner, price = quote, 0.5 * (quote.bid + quote.ask)
        else:
            continue
        if price <= 0.0:
            continue
        out.append(
            AggregatedOption(
                maturity=maturity,
                strike=strike,
                option_kind=kind,
                price=price,
                bid=band[0],
                ask=band[1],
                timestamp=winner.timestamp,
                spot_at_ts=winner.spot_at_ts,
            )
        )
    return out


@dataclass(frozen=True)
class MarketSnapshot:
    """Immutable end-of-day snapshot: curve, raw records, aggregated table."""

    close_spot: float
    close_time: float
    curve: tuple[CurvePoint, ...]
    records: tuple[OptionRecord, ...]
    aggregated: tuple[AggregatedOption, ...]
    window: float = DEFAULT_WINDOW

    def __post_init__(self) -> None:
        check_positive("close_spot", self.close_spot)
        maturities = [p.maturity for p in self.curve]
        if any(t2 <= t1 for t1, t2 in zip(maturities, maturities[1:])):
            raise ValueError("curve maturities must be strictly increasing")
        known = set(maturities)
        for rec in self.records:
            if rec.maturity not in known:
                raise ValueError(f"record maturity {rec.maturity} missing from curve")

    @classmethod
    def build(cls, close_spot, close_time, curve, records, window=DEFAULT_WINDOW):
        """Aggregate ``records`` and drop noise rows, then freeze the snapshot.

        Noise filter: a synthetic price below the discounted intrinsic value
        (computed off the timestamped forward) has negative time value and
        is unusable; such rows are removed from the aggregation.
        """
        curve = tuple(curve)
        records = tuple(records)
        by_maturity = {p.maturity: p for p in curve}
        rows = []
        for row in aggregate(records, window, close_time):
            point = by_maturity.get(row.maturity)
            if point is None:
                raise ValueError(f"record maturity {row.maturity} missing from curve")
            fwd = forward_at(point, row.spot_at_ts, close_spot)
            if row.option_kind == "call":
                intrinsic = point.discount_close * max(fwd - row.strike, 0.0)
            else:
                intrinsic = point.discount_close * max(row.strike - fwd, 0.0)
            if row.price < intrinsic:
                continue
            rows.append(row)
        return cls(
            close_spot=float(close_spot),
            close_time=float(close_time),
            curve=curve,
            records=records,
            aggregated=tuple(rows),
            window=float(window),
        )

    def curve_point(self, maturity: float) -> CurvePoint:
        for point in self.curve:
            if abs(point.maturity - maturity) <= 1e-12 * max(1.0, abs(maturity)):
                return point
        raise KeyError(f"maturity {maturity} not on the curve")

    @property
    def maturities(self) -> tuple[float, ...]:
        return tuple(p.maturity for p in self.curve)


def _parse_float(field: str, text: str, where: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        raise SnapshotError(f"{where}: field {field} is not a number: {text!r}") from None


def _read_csv_rows(path: Path, header: list[str]):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            first = next(reader)
        except StopIteration:
            raise SnapshotError(f"{path.name}: empty file, expected header {header}")
        if [h.strip() for h in first] != header:
            raise SnapshotError(f"{path.name}: bad header {first}, expected {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise SnapshotError(
                    f"{path.name} line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            yield lineno, row


def _parse_meta(path: Path) -> dict:
    values: dict[str, float] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SnapshotError(f"{path.name} line {lineno}: expected key = value")
            key, _, raw = line.partition("=")
            value = _parse_float(key.strip(), raw, f"{path.name} line {lineno}")
            if value is None:
                raise SnapshotError(f"{path.name} line {lineno}: empty value")
            values[key.strip()] = value
    for required in ("close_spot", "close_time"):
        if required not in values:
            raise SnapshotError(f"{path.name}: missing key {required}")
    return values


def parse_quote_file(path) -> MarketSnapshot:
    """Load a snapshot from its directory (or the path of its quotes CSV).

    The curve and metadata files are looked up next to the quotes file under
    their standard names.  Raises :class:`SnapshotError` naming the file and
    line for malformed rows, and on non-increasing curve maturities.
    """
    path = Path(path)
    if path.is_dir():
        quotes_path = path / QUOTES_FILE
    else:
        quotes_path = path
    base = quotes_path.parent
    curve_path = base / CURVE_FILE
    meta_path = base / META_FILE
    for p in (quotes_path, curve_path, meta_path):
        if not p.exists():
            raise SnapshotError(f"missing snapshot file: {p}")

    meta = _parse_meta(meta_path)

    curve = []
    last_maturity = None
    for lineno, row in _read_csv_rows(curve_path, CURVE_HEADER):
        where = f"{curve_path.name} line {lineno}"
        values = [_parse_float(name, cell, where) for name, cell in zip(CURVE_HEADER, row)]
        if any(v is None for v in values):
            raise SnapshotError(f"{where}: curve fields cannot be empty")
        try:
            point = CurvePoint(*values)
        except ValueError as exc:
            raise SnapshotError(f"{where}: {exc}") from None
        if last_maturity is not None and point.maturity <= last_maturity:
            raise SnapshotError(f"{where}: curve maturities must be strictly increasing")
        last_maturity = point.maturity
        curve.append(point)

    known = {p.maturity for p in curve}
    records = []
    for lineno, row in _read_csv_rows(quotes_path, QUOTES_HEADER):
        where = f"{quotes_path.name} line {lineno}"
        fields = dict(zip(QUOTES_HEADER, row))
        kind = fields["kind"].strip()
        record_kind = fields["record_kind"].strip()
        numbers = {
            name: _parse_float(name, fields[name], where)
            for name in ("maturity", "strike", "timestamp", "bid", "ask", "trade_price", "spot_at_ts")
        }
        for required in ("maturity", "strike", "timestamp", "spot_at_ts"):
            if numbers[required] is None:
                raise SnapshotError(f"{where}: field {required} cannot be empty")
        try:
            record = OptionRecord(
                strike=numbers["strike"],
                maturity=numbers["maturity"],
                option_kind=kind,
                record_kind=record_kind,
                timestamp=numbers["timestamp"],
                spot_at_ts=numbers["spot_at_ts"],
                bid=numbers["bid"],
                ask=numbers["ask"],
                trade_price=numbers["trade_price"],
            )
        except ValueError as exc:
            raise SnapshotError(f"{where}: {exc}") from None
        if record.maturity not in known:
            raise SnapshotError(f"{where}: maturity {row[0]} not on the curve")
        records.append(record)

    return MarketSnapshot.build(
        close_spot=meta["close_spot"],
        close_time=meta["close_time"],
        curve=curve,
        records=records,
        window=meta.get("window", DEFAULT_WINDOW),
    )


def write_snapshot(snapshot: MarketSnapshot, directory) -> None:
    """Write the snapshot files with canonical number formatting."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with open(directory / META_FILE, "w", encoding="utf-8") as handle:
        handle.write(f"close_spot = {fmt(snapshot.close_spot)}\n")
        handle.write(f"close_time = {fmt(snapshot.close_time)}\n")
        handle.write(f"window = {fmt(snapshot.window)}\n")

    with open(directory / CURVE_FILE, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CURVE_HEADER)
        for point in snapshot.curve:
            writer.writerow(
                [fmt(point.maturity), fmt(point.forward_close), fmt(point.discount_close)]
            )

    with open(directory / QUOTES_FILE, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(QUOTES_HEADER)
        for rec in snapshot.records:
            writer.writerow(
                [
                    fmt(rec.maturity),
                    fmt(rec.strike),
                    rec.option_kind,
                    rec.record_kind,
                    fmt(rec.timestamp),
                    fmt(rec.bid),
                    fmt(rec.ask),
                    fmt(rec.trade_price),
                    fmt(rec.spot_at_ts),
                ]
            )


def aggregated_table_csv(snapshot: MarketSnapshot) -> str:
    """Canonical CSV rendering of the aggregated table."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(AGGREGATED_HEADER)
    for row in snapshot.aggregated:
        writer.writerow(
            [
                fmt(row.maturity),
                fmt(row.strike),
                row.option_kind,
                fmt(row.price),
                fmt(row.bid),
                fmt(row.ask),
                fmt(row.timestamp),
                fmt(row.spot_at_ts),
            ]
        )
    return buffer.getvalue()


def reaggregated(snapshot: MarketSnapshot) -> MarketSnapshot:
    """Rebuild the snapshot from its own aggregated rows (idempotence helper)."""
    records = []
    for row in snapshot.aggregated:
        if row.bid is not None and row.ask is not None:
            records.append(
                OptionRecord(
                    strike=row.strike,
                    maturity=row.maturity,
                    option_kind=row.option_kind,
                    record_kind="quote",
                    timestamp=row.timestamp,
                    spot_at_ts=row.spot_at_ts,
                    bid=row.bid,
                    ask=row.ask,
                )
            )
        records.append(
            OptionRecord(
                strike=row.strike,
                maturity=row.maturity,
                option_kind=row.option_kind,
                record_kind="trade",
                timestamp=row.timestamp,
                spot_at_ts=row.spot_at_ts,
                trade_price=row.price,
            )
        )
    return MarketSnapshot.build(
        close_spot=snapshot.close_spot,
        close_time=snapshot.close_time,
        curve=snapshot.curve,
        records=records,
        window=snapshot.window,
    )
