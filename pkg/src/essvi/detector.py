"""Static-arbitrage scan over grids of call prices.

Six violation families are checked, each a linear inequality on prices.
Writing ``n_i(m) = C_i(m * F_i) / (D_i * F_i)`` for the discounted-forward
normalized call at maturity ``T_i`` and moneyness ``m = K / F``, and
``w1 = (m3 - m2) / (m3 - m1)``, ``w3 = (m2 - m1) / (m3 - m1)`` for a strike
triple ``m1 < m2 < m3``, the no-arbitrage requirements are:

* Positivity              ``C >= 0``
* VerticalSpread          ``-D <= (C(K2) - C(K1)) / (K2 - K1) <= 0``
* VerticalButterfly       ``w1 C(K1) + w3 C(K3) >= C(K2)``
* CalendarSpread          ``n_{i+1}(m) >= n_i(m)``
* CalendarVerticalSpread  ``n_{i+1}(m1) >= n_i(m2)``  for ``m1 < m2``
* CalendarButterfly       ``w1 n_{i+1}(m1) + w3 n_{i+1}(m3) >= n_i(m2)``

The two mixed families are the model-free dominance portfolios that
combine a calendar position with a vertical one: a long later-maturity call
at the lower strike against a short earlier call at the higher strike, and
long later-maturity wings against a short earlier body (the payoff of the
wings dominates the body's by convexity of the hockey stick in the strike).
Calendar comparisons align strikes across maturities at equal ``K / F``;
off-grid levels are linearly interpolated in strike (which can only
overstate the convex later-maturity price, so an arbitrage-free grid is
never flagged) and marked as interpolated in the report.

All checks carry a currency tolerance, by default ``1e-8`` times the
maturity's forward; normalized comparisons convert it via ``D * F``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .market import fmt
from .validation import check_positive, check_strictly_increasing

__all__ = [
    "POSITIVITY",
    "VERTICAL_SPREAD",
    "VERTICAL_BUTTERFLY",
    "CALENDAR_SPREAD",
    "CALENDAR_VERTICAL_SPREAD",
    "CALENDAR_BUTTERFLY",
    "PriceGrid",
    "Violation",
    "ArbReport",
    "detect",
    "write_price_grid_csv",
    "read_price_grid_csv",
    "price_grid_csv",
]

POSITIVITY = "Positivity"
VERTICAL_SPREAD = "VerticalSpread"
VERTICAL_BUTTERFLY = "VerticalButterfly"
CALENDAR_SPREAD = "CalendarSpread"
CALENDAR_VERTICAL_SPREAD = "CalendarVerticalSpread"
CALENDAR_BUTTERFLY = "CalendarButterfly"

KINDS = (
    POSITIVITY,
    VERTICAL_SPREAD,
    VERTICAL_BUTTERFLY,
    CALENDAR_SPREAD,
    CALENDAR_VERTICAL_SPREAD,
    CALENDAR_BUTTERFLY,
)

GRID_HEADER = ["maturity", "strike", "call_price", "forward", "discount"]

DEFAULT_REL_TOL = 1e-8


@dataclass(frozen=True)
class PriceGrid:
    """Call prices per maturity on strictly increasing strike grids."""

    maturities: np.ndarray
    strikes: tuple
    calls: tuple
    forwards: np.ndarray
    discounts: np.ndarray

    def __post_init__(self) -> None:
        maturities = check_strictly_increasing("maturities", self.maturities)
        if not (
            len(self.strikes)
            == len(self.calls)
            == maturities.size
            == len(self.forwards)
            == len(self.discounts)
        ):
            raise ValueError("per-maturity fields must have equal lengths")
        strikes = []
        calls = []
        for i, (ks, cs) in enumerate(zip(self.strikes, self.calls)):
            ks = check_strictly_increasing(f"strikes[{i}]", ks)
            cs = np.asarray(cs, dtype=float)
            if cs.shape != ks.shape:
                raise ValueError(f"calls[{i}] shape differs from strikes[{i}]")
            if not np.all(np.isfinite(cs)):
                raise ValueError(f"calls[{i}] must be finite")
            strikes.append(ks)
            calls.append(cs)
        forwards = np.asarray(self.forwards, dtype=float)
        discounts = np.asarray(self.discounts, dtype=float)
        if np.any(forwards <= 0.0) or np.any(discounts <= 0.0):
            raise ValueError("forwards and discounts must be positive")
        object.__setattr__(self, "maturities", maturities)
        object.__setattr__(self, "strikes", tuple(strikes))
        object.__setattr__(self, "calls", tuple(calls))
        object.__setattr__(self, "forwards", forwards)
        object.__setattr__(self, "discounts", discounts)

    @property
    def n_maturities(self) -> int:
        return self.maturities.size


@dataclass(frozen=True)
class Violation:
    """One flagged inequality; indices locate the earliest involved point."""

    kind: str
    maturity_index: int
    strike_index: int
    magnitude: float
    interpolated: bool = False

    def describe(self) -> str:
        extra = " (interpolated)" if self.interpolated else ""
        return (
            f"{self.kind} at maturity {self.maturity_index} strike {self.strike_index}: "
            f"magnitude {self.magnitude:.6e}{extra}"
        )


@dataclass(frozen=True)
class ArbReport:
    """Sorted list of violations; empty means all checks pass within tolerance."""

    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> tuple:
        return tuple(v.kind for v in self.violations)

    def to_text(self) -> str:
        if self.ok:
            return "no static arbitrage detected\n"
        lines = [v.describe() for v in self.violations]
        return "\n".join(lines) + "\n"

    def to_document(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {
                    "kind": v.kind,
                    "maturity_index": v.maturity_index,
                    "strike_index": v.strike_index,
                    "magnitude": v.magnitude,
                    "interpolated": v.interpolated,
                }
                for v in self.violations
            ],
        }


def _interp_normalized(moneyness, grid_m, grid_n):
    """Interpolate normalized calls at ``moneyness``; NaN outside the grid.

    Returns the values and a flag marking genuinely interpolated points
    (exact grid hits are not flagged).
    """
    values = np.interp(moneyness, grid_m, grid_n, left=np.nan, right=np.nan)
    idx = np.searchsorted(grid_m, moneyness)
    idx = np.clip(idx, 0, grid_m.size - 1)
    nearest = np.minimum(
        np.abs(grid_m[idx] - moneyness),
        np.abs(grid_m[np.maximum(idx - 1, 0)] - moneyness),
    )
    exact = nearest <= 1e-9 * np.maximum(1.0, np.abs(moneyness))
    return values, ~exact & np.isfinite(values)


def detect(grid: PriceGrid, tol: float | None = None) -> ArbReport:
    """Scan the grid; ``tol`` in currency (default ``1e-8 * forward``)."""
    if tol is not None:
        check_positive("tol", tol)
    violations: list[Violation] = []

    def tol_at(i: int) -> float:
        return tol if tol is not None else DEFAULT_REL_TOL * grid.forwards[i]

    for i in range(grid.n_maturities):
        ks = grid.strikes[i]
        cs = grid.calls[i]
        disc = grid.discounts[i]
        eps = tol_at(i)

        for j in np.flatnonzero(cs < -eps):
            violations.append(Violation(POSITIVITY, i, int(j), float(-cs[j])))

        if ks.size >= 2:
            dc = np.diff(cs)
            dk = np.diff(ks)
            upper = dc > eps
            lower = dc < -disc * dk - eps
            for j in np.flatnonzero(upper | lower):
                mag = max(float(dc[j]), float(-dc[j] - disc * dk[j]))
                violations.append(Violation(VERTICAL_SPREAD, i, int(j), mag))

        if ks.size >= 3:
            k1, k2, k3 = ks[:-2], ks[1:-1], ks[2:]
            c1, c2, c3 = cs[:-2], cs[1:-1], cs[2:]
            w1 = (k3 - k2) / (k3 - k1)
            w3 = (k2 - k1) / (k3 - k1)
            slack = w1 * c1 + w3 * c3 - c2
            for j in np.flatnonzero(slack < -eps):
                violations.append(Violation(VERTICAL_BUTTERFLY, i, int(j), float(-slack[j])))

    for i in range(grid.n_maturities - 1):
        eps_n = tol_at(i) / (grid.discounts[i] * grid.forwards[i])
        m_short = grid.strikes[i] / grid.forwards[i]
        n_short = grid.calls[i] / (grid.discounts[i] * grid.forwards[i])
        m_long = grid.strikes[i + 1] / grid.forwards[i + 1]
        n_long_grid = grid.calls[i + 1] / (grid.discounts[i + 1] * grid.forwards[i + 1])
        n_long, interp = _interp_normalized(m_short, m_long, n_long_grid)
        usable = np.isfinite(n_long)

        gap = n_long - n_short
        for j in np.flatnonzero(usable & (gap < -eps_n)):
            violations.append(
                Violation(CALENDAR_SPREAD, i, int(j), float(-gap[j]), bool(interp[j]))
            )

        if m_short.size >= 2:
            low, high = slice(None, -1), slice(1, None)
            gap = n_long[low] - n_short[high]
            ok_pair = usable[low]
            for j in np.flatnonzero(ok_pair & (gap < -eps_n)):
                violations.append(
                    Violation(
                        CALENDAR_VERTICAL_SPREAD, i, int(j), float(-gap[j]), bool(interp[low][j])
                    )
                )

        if m_short.size >= 3:
            m1, m2, m3 = m_short[:-2], m_short[1:-1], m_short[2:]
            w1 = (m3 - m2) / (m3 - m1)
            w3 = (m2 - m1) / (m3 - m1)
            wings = w1 * n_long[:-2] + w3 * n_long[2:]
            ok_triple = usable[:-2] & usable[2:]
            gap = wings - n_short[1:-1]
            flagged = interp[:-2] | interp[2:]
            for j in np.flatnonzero(ok_triple & (gap < -eps_n)):
                violations.append(
                    Violation(CALENDAR_BUTTERFLY, i, int(j), float(-gap[j]), bool(flagged[j]))
                )

    violations.sort(key=lambda v: (v.maturity_index, v.strike_index, v.kind))
    return ArbReport(tuple(violations))


def price_grid_csv(grid: PriceGrid) -> str:
    """Canonical CSV rendering of the grid."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(GRID_HEADER)
    for i in range(grid.n_maturities):
        for k, c in zip(grid.strikes[i], grid.calls[i]):
            writer.writerow(
                [
                    fmt(grid.maturities[i]),
                    fmt(k),
                    fmt(c),
                    fmt(grid.forwards[i]),
                    fmt(grid.discounts[i]),
                ]
            )
    return buffer.getvalue()


def write_price_grid_csv(grid: PriceGrid, path) -> None:
    Path(path).write_text(price_grid_csv(grid), encoding="utf-8")


def read_price_grid_csv(path) -> PriceGrid:
    """Parse a grid CSV; rows must be grouped by increasing maturity."""
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != GRID_HEADER:
            raise ValueError(f"{path.name}: expected header {GRID_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(GRID_HEADER):
                raise ValueError(f"{path.name} line {lineno}: expected 5 fields")
            try:
                rows.append(tuple(float(cell) for cell in row))
            except ValueError:
                raise ValueError(f"{path.name} line {lineno}: non-numeric field") from None

    maturities = []
    strikes = []
    calls = []
    forwards = []
    discounts = []
    for t, k, c, f, d in rows:
        if not maturities or t != maturities[-1]:
            maturities.append(t)
            strikes.append([])
            calls.append([])
            forwards.append(f)
            discounts.append(d)
        strikes[-1].append(k)
        calls[-1].append(c)
    return PriceGrid(
        maturities=np.asarray(maturities),
        strikes=tuple(np.asarray(s) for s in strikes),
        calls=tuple(np.asarray(c) for c in calls),
        forwards=np.asarray(forwards),
        discounts=np.asarray(discounts),
    )
