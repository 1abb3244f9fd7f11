"""Shared synthetic-market fixtures."""

import numpy as np
import pytest

from essvi import (
    ButterflyRule,
    CurvePoint,
    GlobalParams,
    MarketSnapshot,
    OptionRecord,
    bs_price,
    to_slices,
    total_variance,
)

CLOSE_SPOT = 100.0
CLOSE_TIME = 36000.0


def draw_box(rng, n, a_max=0.05, theta_max=0.5):
    """Uniform draw from (a bounded patch of) the open box domain."""
    return GlobalParams(
        rhos=rng.uniform(-0.99, 0.99, n),
        theta1=rng.uniform(1e-4, theta_max),
        a=rng.uniform(1e-6, a_max, n - 1),
        c=rng.uniform(0.01, 0.99, n),
        maturities=np.cumsum(rng.uniform(0.02, 0.5, n)),
    )


def make_curve(maturities, spot=CLOSE_SPOT, rate=0.02, discount_rate=0.03):
    return [
        CurvePoint(float(t), spot * np.exp(rate * t), float(np.exp(-discount_rate * t)))
        for t in maturities
    ]


def make_snapshot(
    gp,
    rule=ButterflyRule("gj"),
    n_strikes=40,
    half_spread_frac=2e-4,
    k_span=2.0,
    timestamps=None,
    spots=None,
    window=600.0,
):
    """Snapshot generated exactly by the surface mapped from ``gp``.

    Quotes carry bid = ask band centered on the model price.  ``timestamps``
    and ``spots`` (parallel per-maturity lists) let tests exercise the
    timestamped-forward path; they default to the closing values.
    """
    slices, _ = to_slices(gp, rule)
    curve = make_curve([s.maturity for s in slices])
    records = []
    for idx, (s, cp) in enumerate(zip(slices, curve)):
        ts = CLOSE_TIME if timestamps is None else timestamps[idx]
        spot = CLOSE_SPOT if spots is None else spots[idx]
        fwd = cp.forward_close * spot / CLOSE_SPOT
        k_grid = np.linspace(-k_span, k_span, n_strikes) * np.sqrt(s.theta)
        strikes = fwd * np.exp(k_grid)
        w = total_variance(s, k_grid)
        for strike, wv in zip(strikes, w):
            for kind in ("call", "put"):
                price = float(bs_price(kind, fwd, strike, cp.discount_close, wv))
                if price <= 0.0:
                    continue
                half = max(price * half_spread_frac, 1e-9)
                records.append(
                    OptionRecord(
                        strike=float(strike),
                        maturity=float(s.maturity),
                        option_kind=kind,
                        record_kind="quote",
                        timestamp=float(ts),
                        spot_at_ts=float(spot),
                        bid=price - half,
                        ask=price + half,
                    )
                )
    return MarketSnapshot.build(
        close_spot=CLOSE_SPOT,
        close_time=CLOSE_TIME,
        curve=curve,
        records=records,
        window=window,
    )


@pytest.fixture(scope="session")
def six_maturity_params():
    """Feasible box point behind the round-trip calibration fixtures."""
    return GlobalParams(
        rhos=np.array([-0.35, -0.3, -0.28, -0.25, -0.2, -0.15]),
        theta1=0.0045,
        a=np.array([0.004, 0.0035, 0.011, 0.011, 0.012]),
        c=np.array([0.42, 0.45, 0.5, 0.52, 0.55, 0.6]),
        maturities=np.array([0.08, 0.17, 0.25, 0.5, 0.75, 1.0]),
    )


@pytest.fixture(scope="session")
def six_maturity_snapshot(six_maturity_params):
    return make_snapshot(six_maturity_params, n_strikes=40)


@pytest.fixture(scope="session")
def small_params():
    return GlobalParams(
        rhos=np.array([-0.3, -0.25, -0.2]),
        theta1=0.004,
        a=np.array([0.005, 0.009]),
        c=np.array([0.45, 0.5, 0.55]),
        maturities=np.array([0.1, 0.25, 0.5]),
    )


@pytest.fixture(scope="session")
def small_snapshot(small_params):
    return make_snapshot(small_params, n_strikes=20)
