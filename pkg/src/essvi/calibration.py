"""Global surface calibration by bounded least squares on price residuals.

One optimizer pass fits all maturities at once.  Each objective evaluation
walks the box-to-slices chain of :mod:`essvi.parametrization` (so every
iterate is an arbitrage-free surface by construction), prices the basket
off timestamped forwards ``F_t(T) = F_close(T) * S_t / S_close`` at
log-forward moneyness ``k = log(K / F_t)``, and returns the weighted price
residuals ``sqrt(w) * (market - model)``.  The search space is the open box
realized as a closed box shrunk by small epsilons.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .constraints import ButterflyRule
from .market import SECONDS_PER_YEAR, MarketSnapshot, forward_at
from .parametrization import GlobalParams, to_slices
from .pricing import bs_price, bs_vega, implied_total_variance, total_variance_raw
from .term import SurfaceCurve, slice_at, total_variance_at
from .validation import as_readonly, check_choice, check_positive

__all__ = [
    "CalibConfig",
    "CalibResult",
    "Basket",
    "build_basket",
    "initial_guess",
    "residuals",
    "calibrate",
    "ESSVICalibrator",
]

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
INVERSE_VEGA_SQUARED = "ivega2"

# Epsilons realizing the open box as a closed one.
_A_FLOOR = 1e-8
_THETA_FLOOR = 1e-8
_C_EPS = 1e-6
_DIFF_STEP = 1e-7


@dataclass(frozen=True)
class CalibConfig:
    """Calibration controls; prices are the only fitting target."""

    weight_scheme: str = UNIFORM
    butterfly_rule: ButterflyRule = field(default_factory=ButterflyRule)
    a_upper: float = 0.05
    rho_bound: float = 0.95
    max_evals: int = 1000
    ftol: float = 1e-8

    def __post_init__(self) -> None:
        check_choice("weight_scheme", self.weight_scheme, (UNIFORM, INVERSE_VEGA_SQUARED))
        check_positive("a_upper", self.a_upper)
        if not (0.0 < self.rho_bound < 1.0):
            raise ValueError(f"rho_bound must lie in ]0, 1[, got {self.rho_bound}")
        if self.max_evals < 1:
            raise ValueError(f"max_evals must be >= 1, got {self.max_evals}")
        check_positive("ftol", self.ftol)


@dataclass(frozen=True)
class Basket:
    """Vectorized calibration basket: one out-of-the-money option per strike.

    All arrays share the aggregated-table ordering restricted to the basket.
    ``slice_index`` maps each option onto its maturity slice; ``band`` fields
    are NaN when no two-sided quote backed the synthetic price.
    """

    maturities: np.ndarray
    strikes: np.ndarray
    kinds: tuple[str, ...]
    prices: np.ndarray
    bids: np.ndarray
    asks: np.ndarray
    forwards: np.ndarray
    discounts: np.ndarray
    expiries_effective: np.ndarray
    slice_index: np.ndarray
    weights: np.ndarray
    slice_maturities: np.ndarray

    @property
    def size(self) -> int:
        return self.prices.size

    @property
    def log_moneyness(self) -> np.ndarray:
        return np.log(self.strikes / self.forwards)


def _market_total_variances(basket_rows, snapshot):
    """Market-implied total variances per row; NaN where inversion fails."""
    out = np.empty(len(basket_rows))
    for i, row in enumerate(basket_rows):
        point = snapshot.curve_point(row.maturity)
        fwd = forward_at(point, row.spot_at_ts, snapshot.close_spot)
        try:
            out[i] = implied_total_variance(
                row.option_kind, row.price, fwd, row.strike, point.discount_close
            )
        except ValueError:
            out[i] = np.nan
    return out


def build_basket(snapshot: MarketSnapshot, config: CalibConfig) -> Basket:
    """Select the fitting basket and precompute weights and forwards.

    When both a call and a put exist at the same (maturity, strike), the
    out-of-the-money side (against the timestamped forward) is kept, which
    avoids double counting the same information through parity.
    """
    by_key: dict[tuple, dict] = {}
    for row in snapshot.aggregated:
        by_key.setdefault((row.maturity, row.strike), {})[row.option_kind] = row

    chosen = []
    for (maturity, strike), kinds in sorted(by_key.items()):
        if len(kinds) == 2:
            point = snapshot.curve_point(maturity)
            any_row = next(iter(kinds.values()))
            fwd = forward_at(point, any_row.spot_at_ts, snapshot.close_spot)
            row = kinds["call"] if strike >= fwd else kinds["put"]
        else:
            row = next(iter(kinds.values()))
        chosen.append(row)

    if not chosen:
        raise ValueError("snapshot has no usable options")

    maturities = np.array([r.maturity for r in chosen])
    slice_maturities = np.unique(maturities)
    strikes = np.array([r.strike for r in chosen])
    prices = np.array([r.price for r in chosen])
    bids = np.array([np.nan if r.bid is None else r.bid for r in chosen])
    asks = np.array([np.nan if r.ask is None else r.ask for r in chosen])
    forwards = np.array(
        [
            forward_at(snapshot.curve_point(r.maturity), r.spot_at_ts, snapshot.close_spot)
            for r in chosen
        ]
    )
    discounts = np.array(
        [snapshot.curve_point(r.maturity).discount_close for r in chosen]
    )
    expiries = np.array(
        [r.maturity - r.timestamp / SECONDS_PER_YEAR for r in chosen]
    )
    slice_index = np.searchsorted(slice_maturities, maturities)

    if config.weight_scheme == UNIFORM:
        weights = np.ones(len(chosen))
    else:
        market_w = _market_total_variances(chosen, snapshot)
        vegas = np.full(len(chosen), np.nan)
        ok = np.isfinite(market_w) & (market_w > 0.0)
        vegas[ok] = bs_vega(
            forwards[ok], strikes[ok], discounts[ok], market_w[ok], expiries[ok]
        )
        fallback = np.nanmedian(vegas) if np.any(np.isfinite(vegas)) else 1.0
        vegas = np.where(np.isfinite(vegas) & (vegas > 0.0), vegas, fallback)
        weights = 1.0 / (vegas * vegas)

    return Basket(
        maturities=as_readonly(maturities),
        strikes=as_readonly(strikes),
        kinds=tuple(r.option_kind for r in chosen),
        prices=as_readonly(prices),
        bids=as_readonly(bids),
        asks=as_readonly(asks),
        forwards=as_readonly(forwards),
        discounts=as_readonly(discounts),
        expiries_effective=as_readonly(expiries),
        slice_index=as_readonly(slice_index, dtype=int),
        weights=as_readonly(weights),
        slice_maturities=as_readonly(slice_maturities),
    )


def _model_prices(slices, basket: Basket) -> np.ndarray:
    """Vectorized model prices of the basket under the given slices."""
    thetas = np.array([s.theta for s in slices])[basket.slice_index]
    rhos = np.array([s.rho for s in slices])[basket.slice_index]
    psis = np.array([s.psi for s in slices])[basket.slice_index]
    w = total_variance_raw(thetas, rhos, psis, basket.log_moneyness)
    calls = bs_price("call", basket.forwards, basket.strikes, basket.discounts, w)
    is_put = np.array([kind == "put" for kind in basket.kinds])
    parity = basket.discounts * (basket.strikes - basket.forwards)
    return np.where(is_put, calls + parity, calls)


def _residuals_from_basket(gp: GlobalParams, basket: Basket, config: CalibConfig):
    slices, _ = to_slices(gp, config.butterfly_rule)
    model = _model_prices(slices, basket)
    return np.sqrt(basket.weights) * (basket.prices - model), model, slices


def residuals(gp: GlobalParams, snapshot: MarketSnapshot, config: CalibConfig) -> np.ndarray:
    """Weighted price residuals ``sqrt(w) * (market - model)`` per basket option."""
    basket = build_basket(snapshot, config)
    res, _, _ = _residuals_from_basket(gp, basket, config)
    return res


def _atm_total_variance_estimates(basket: Basket) -> np.ndarray:
    """Per-maturity ATM total-variance guesses from market implied variances.

    Linear interpolation in log-moneyness between the two strikes bracketing
    k = 0; falls back to the nearest strike when no bracket or when some
    inversions fail.
    """
    n = basket.slice_maturities.size
    estimates = np.empty(n)
    k_all = basket.log_moneyness
    for i in range(n):
        mask = basket.slice_index == i
        if not np.any(mask):
            raise ValueError(
                f"no usable option at maturity {basket.slice_maturities[i]}"
            )
        ks = k_all[mask]
        ws = np.empty(ks.size)
        rows = np.flatnonzero(mask)
        for j, idx in enumerate(rows):
            try:
                ws[j] = implied_total_variance(
                    basket.kinds[idx],
                    basket.prices[idx],
                    basket.forwards[idx],
                    basket.strikes[idx],
                    basket.discounts[idx],
                )
            except ValueError:
                ws[j] = np.nan
        order = np.argsort(ks)
        ks, ws = ks[order], ws[order]
        good = np.isfinite(ws)
        if not np.any(good):
            raise ValueError(
                f"no invertible option price at maturity {basket.slice_maturities[i]}"
            )
        ks, ws = ks[good], ws[good]
        below = ks[ks <= 0.0]
        above = ks[ks > 0.0]
        if below.size and above.size and ks.size >= 2:
            estimates[i] = float(np.interp(0.0, ks, ws))
        else:
            estimates[i] = float(ws[np.argmin(np.abs(ks))])
    return estimates


def _guess_with_bound(
    snapshot: MarketSnapshot, config: CalibConfig
) -> tuple[GlobalParams, float, float]:
    """Initial box point plus the (possibly doubled) a bound and theta cap."""
    basket = build_basket(snapshot, config)
    theta_hat = _atm_total_variance_estimates(basket)
    n = theta_hat.size

    a_upper = config.a_upper
    raw_a = np.diff(theta_hat)
    if raw_a.size and np.max(raw_a) > a_upper:
        a_upper = 2.0 * a_upper
    if np.any(raw_a <= _A_FLOOR):
        logger.warning(
            "non-increasing ATM variance estimates %s; clipping a to the floor",
            theta_hat.tolist(),
        )
    a = np.clip(raw_a, _A_FLOOR, a_upper)

    gp = GlobalParams(
        rhos=np.zeros(n),
        theta1=max(float(theta_hat[0]), _THETA_FLOOR * 2.0),
        a=a,
        c=np.full(n, 0.5),
        maturities=np.asarray(basket.slice_maturities),
    )
    theta_cap = max(4.0 * float(np.max(theta_hat)), 1e-4)
    return gp, a_upper, theta_cap


def initial_guess(snapshot: MarketSnapshot, config: CalibConfig) -> GlobalParams:
    """Starting box point: ATM-variance thetas, flat rho = 0, centered c = 0.5.

    The theta increments seed the ``a`` coordinates (couplings are 1 at
    rho = 0); if the largest raw increment exceeds ``a_upper`` the bound is
    doubled before clipping into ``(1e-8, a_upper]``.
    """
    gp, _, _ = _guess_with_bound(snapshot, config)
    return gp


@dataclass(frozen=True)
class CalibResult:
    """Fit output: box coordinates, slices, residual diagnostics.

    ``inside_bid_ask`` holds 1.0/0.0 per basket option, NaN where no
    two-sided quote backed the synthetic price.
    """

    params: GlobalParams
    slices: tuple
    objective_value: float
    residuals: np.ndarray
    model_prices: np.ndarray
    evals_used: int
    converged: bool
    inside_bid_ask: np.ndarray
    basket: Basket
    config: CalibConfig


def _pack(gp: GlobalParams) -> np.ndarray:
    return np.concatenate([gp.rhos, [gp.theta1], gp.a, gp.c])


def _unpack(x: np.ndarray, n: int, maturities) -> GlobalParams:
    return GlobalParams(
        rhos=x[:n],
        theta1=float(x[n]),
        a=x[n + 1 : 2 * n],
        c=x[2 * n :],
        maturities=maturities,
    )


def _result_from(gp, basket, config, evals, converged) -> CalibResult:
    res, model, slices = _residuals_from_basket(gp, basket, config)
    has_band = np.isfinite(basket.bids) & np.isfinite(basket.asks)
    inside = np.where(
        has_band, (basket.bids <= model) & (model <= basket.asks), np.nan
    )
    return CalibResult(
        params=gp,
        slices=tuple(slices),
        objective_value=float(np.sum(res * res)),
        residuals=res,
        model_prices=model,
        evals_used=evals,
        converged=converged,
        inside_bid_ask=inside,
        basket=basket,
        config=config,
    )


def calibrate(snapshot: MarketSnapshot, config: CalibConfig | None = None) -> CalibResult:
    """Fit box coordinates to the snapshot by bounded least squares.

    Runs a trust-region-reflective least-squares pass with a forward-difference
    Jacobian (relative step 1e-7), stopping on a relative objective decrease
    below ``config.ftol`` or after ``config.max_evals`` residual evaluations.
    If the solver fails to improve on the initial guess, that guess is
    returned with ``converged=False``.
    """
    if config is None:
        config = CalibConfig()
    guess, a_upper, theta_cap = _guess_with_bound(snapshot, config)
    basket = build_basket(snapshot, config)
    n = guess.n
    maturities = np.asarray(guess.maturities)

    lower = np.concatenate(
        [
            np.full(n, -config.rho_bound),
            [_THETA_FLOOR],
            np.full(n - 1, _A_FLOOR),
            np.full(n, _C_EPS),
        ]
    )
    upper = np.concatenate(
        [
            np.full(n, config.rho_bound),
            [theta_cap],
            np.full(n - 1, a_upper),
            np.full(n, 1.0 - _C_EPS),
        ]
    )
    x0 = np.clip(_pack(guess), lower, upper)

    def fun(x: np.ndarray) -> np.ndarray:
        gp = _unpack(x, n, maturities)
        res, _, _ = _residuals_from_basket(gp, basket, config)
        return res

    initial_result = _result_from(
        _unpack(x0, n, maturities), basket, config, evals=1, converged=False
    )

    try:
        sol = least_squares(
            fun,
            x0,
            bounds=(lower, upper),
            method="trf",
            diff_step=_DIFF_STEP,
            ftol=config.ftol,
            max_nfev=config.max_evals,
        )
    except Exception:  # pragma: no cover - solver crash falls back to the guess
        logger.exception("least squares solver failed; returning the initial guess")
        return initial_result

    final = _result_from(
        _unpack(sol.x, n, maturities),
        basket,
        config,
        evals=int(sol.nfev),
        converged=bool(sol.status > 0),
    )
    if final.objective_value > initial_result.objective_value:
        logger.warning(
            "solver did not improve on the initial guess "
            "(%.3e vs %.3e); keeping the guess",
            final.objective_value,
            initial_result.objective_value,
        )
        return initial_result
    logger.info(
        "calibration done: objective %.6e, %d evaluations, converged=%s",
        final.objective_value,
        final.evals_used,
        final.converged,
    )
    return final


class ESSVICalibrator(BaseEstimator):
    """Estimator wrapper around :func:`calibrate`.

    Parameters mirror :class:`CalibConfig`; ``fit`` takes a
    :class:`~essvi.market.MarketSnapshot` and exposes the fitted surface
    through ``params_``, ``slices_`` and ``result_``.  ``predict`` prices
    calls from ``(maturity, strike)`` pairs using the snapshot's closing
    forwards and discounts.
    """

    def __init__(
        self,
        butterfly_rule: str = "gj",
        weight_scheme: str = UNIFORM,
        a_upper: float = 0.05,
        rho_bound: float = 0.95,
        max_evals: int = 1000,
        ftol: float = 1e-8,
        mm_grid_size: int = 1024,
        mm_refine_tol: float = 1e-10,
    ):
        self.butterfly_rule = butterfly_rule
        self.weight_scheme = weight_scheme
        self.a_upper = a_upper
        self.rho_bound = rho_bound
        self.max_evals = max_evals
        self.ftol = ftol
        self.mm_grid_size = mm_grid_size
        self.mm_refine_tol = mm_refine_tol

    def _config(self) -> CalibConfig:
        rule = ButterflyRule(
            kind=self.butterfly_rule,
            mm_grid_size=self.mm_grid_size,
            mm_refine_tol=self.mm_refine_tol,
        )
        return CalibConfig(
            weight_scheme=self.weight_scheme,
            butterfly_rule=rule,
            a_upper=self.a_upper,
            rho_bound=self.rho_bound,
            max_evals=self.max_evals,
            ftol=self.ftol,
        )

    def fit(self, X: MarketSnapshot, y=None):
        """Calibrate to a snapshot; ``y`` is ignored (present for API parity)."""
        result = calibrate(X, self._config())
        self.result_ = result
        self.params_ = result.params
        self.slices_ = result.slices
        self.curve_ = SurfaceCurve(result.slices)
        self.market_curve_ = X.curve
        self.close_spot_ = X.close_spot
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("ESSVICalibrator is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        """Call prices for rows ``(maturity, strike)`` at closing forwards."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have shape (n_options, 2): maturity, strike")
        out = np.empty(X.shape[0])
        for i, (t, strike) in enumerate(X):
            point = _curve_lookup(self.market_curve_, t)
            w = total_variance_at(self.curve_, t, np.log(strike / point.forward_close))
            out[i] = bs_price(
                "call", point.forward_close, strike, point.discount_close, w
            )
        return out

    def total_variance(self, t: float, k) -> np.ndarray:
        """Interpolated total variance at maturity ``t`` and moneyness ``k``."""
        self._check_fitted()
        return total_variance_at(self.curve_, t, k)

    def slice_at(self, t: float):
        """Interpolated slice triple at maturity ``t``."""
        self._check_fitted()
        return slice_at(self.curve_, t)


def _curve_lookup(curve, maturity: float):
    for point in curve:
        if abs(point.maturity - maturity) <= 1e-12 * max(1.0, abs(maturity)):
            return point
    raise KeyError(f"maturity {maturity} not on the snapshot curve")
