"""eSSVI slice evaluation and Black-Scholes pricing on total variance.

A slice is an SSVI smile at one maturity, parametrized by the triple
``(theta, rho, psi)`` where ``theta`` is the ATM total implied variance,
``rho`` the correlation (skew) parameter and ``psi = theta * phi`` the
curvature scale.  Total implied variance at log-forward moneyness ``k`` is

    w(k) = 0.5 * (theta + rho*psi*k + sqrt((psi*k + theta*rho)**2
                                           + theta**2 * (1 - rho**2)))

Prices quote off a forward and a discount factor; time to maturity enters
pricing only through the total variance, except for vega which needs the
maturity to convert total variance into a volatility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .validation import check_open_interval, check_positive

__all__ = [
    "SSVISlice",
    "total_variance",
    "total_variance_raw",
    "norm_cdf",
    "norm_pdf",
    "bs_price",
    "bs_vega",
    "implied_total_variance",
]

# Bracket and price tolerance of the safeguarded total-variance inversion.
_IV_BRACKET = (1e-10, 16.0)
_IV_PRICE_TOL = 1e-12
_IV_MAX_ITER = 200


@dataclass(frozen=True)
class SSVISlice:
    """One maturity's smile: ATM total variance, correlation, curvature scale."""

    theta: float
    rho: float
    psi: float
    maturity: float

    def __post_init__(self) -> None:
        check_positive("theta", self.theta)
        check_open_interval("rho", self.rho, -1.0, 1.0)
        check_positive("psi", self.psi)
        check_positive("maturity", self.maturity)

    @property
    def phi(self) -> float:
        """Curvature parameter of the (theta, rho, phi) form."""
        return self.psi / self.theta


def norm_cdf(x):
    """Standard normal CDF, accurate to full double precision (erfc based)."""
    return special.ndtr(x)


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def total_variance_raw(theta, rho, psi, k):
    """Total implied variance of an SSVI smile, array-friendly in every argument."""
    theta = np.asarray(theta, dtype=float)
    rho = np.asarray(rho, dtype=float)
    psi = np.asarray(psi, dtype=float)
    k = np.asarray(k, dtype=float)
    term = psi * k + theta * rho
    root = np.sqrt(term * term + theta * theta * (1.0 - rho * rho))
    return 0.5 * (theta + rho * psi * k + root)


def total_variance(slc: SSVISlice, k):
    """Total implied variance of ``slc`` at log-forward moneyness ``k``."""
    return total_variance_raw(slc.theta, slc.rho, slc.psi, k)


def _call_price(forward, strike, discount, total_var):
    """Undiscounted-then-discounted forward call value; intrinsic at w = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        sqrt_w = np.sqrt(total_var)
        k = np.log(strike / forward)
        d1 = 0.5 * sqrt_w - k / sqrt_w
        d2 = d1 - sqrt_w
        live = discount * (forward * special.ndtr(d1) - strike * special.ndtr(d2))
    intrinsic = discount * np.maximum(forward - strike, 0.0)
    return np.where(total_var > 0.0, live, intrinsic)


def bs_price(kind: str, forward, strike, discount, total_var):
    """Black-Scholes price quoted off the forward with total variance as input.

    Args:
        kind: ``"call"`` or ``"put"``.
        forward: Forward level(s) of the underlier at the option maturity.
        strike: Strike(s), same shape rules as numpy broadcasting.
        discount: Discount factor(s) to the maturity.
        total_var: Total implied variance ``sigma**2 * T``; ``0`` prices the
            discounted intrinsic value.

    Returns:
        Option price(s) in currency units, broadcast over the inputs.

    Raises:
        ValueError: On negative total variance or unknown ``kind``.
    """
    forward = np.asarray(forward, dtype=float)
    strike = np.asarray(strike, dtype=float)
    discount = np.asarray(discount, dtype=float)
    total_var = np.asarray(total_var, dtype=float)
    if np.any(total_var < 0.0):
        raise ValueError("total_var must be non-negative")
    if np.any(forward <= 0.0) or np.any(strike <= 0.0):
        raise ValueError("forward and strike must be positive")
    call = _call_price(forward, strike, discount, total_var)
    if kind == "call":
        return call
    if kind == "put":
        return discount * (strike - forward) + call
    raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")


def bs_vega(forward, strike, discount, total_var, maturity):
    """Sensitivity to implied volatility: ``D * F * pdf(d1) * sqrt(T)``.

    Raises:
        ValueError: If ``total_var`` or ``maturity`` is not strictly positive.
    """
    forward = np.asarray(forward, dtype=float)
    strike = np.asarray(strike, dtype=float)
    total_var = np.asarray(total_var, dtype=float)
    maturity = np.asarray(maturity, dtype=float)
    if np.any(total_var <= 0.0):
        raise ValueError("total_var must be positive for vega")
    if np.any(maturity <= 0.0):
        raise ValueError("maturity must be positive for vega")
    sqrt_w = np.sqrt(total_var)
    d1 = 0.5 * sqrt_w - np.log(strike / forward) / sqrt_w
    return discount * forward * norm_pdf(d1) * np.sqrt(maturity)


def implied_total_variance(
    kind: str, price: float, forward: float, strike: float, discount: float
) -> float:
    """Invert a Black-Scholes price for the total implied variance.

    Safeguarded Newton iteration with a bisection fallback on the bracket
    ``(1e-10, 16)``, converging to ``1e-12`` in price.

    Raises:
        ValueError: If the price violates the static no-arbitrage bounds for
            the bracket, i.e. lies outside the open interval spanned by the
            prices at the bracket endpoints.
    """
    forward = check_positive("forward", forward)
    strike = check_positive("strike", strike)
    discount = check_positive("discount", discount)
    if kind == "put":
        price = price - discount * (strike - forward)
        kind = "call"
    elif kind != "call":
        raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")

    lo, hi = _IV_BRACKET
    p_lo = float(bs_price("call", forward, strike, discount, lo))
    p_hi = float(bs_price("call", forward, strike, discount, hi))
    if not (p_lo <= price <= p_hi):
        raise ValueError(
            f"price {price} outside attainable range [{p_lo}, {p_hi}] "
            f"for total variance in {_IV_BRACKET}"
        )

    w = 0.5 * (lo + hi)
    for _ in range(_IV_MAX_ITER):
        p = float(bs_price("call", forward, strike, discount, w))
        err = p - price
        if abs(err) <= _IV_PRICE_TOL:
            return w
        if err > 0.0:
            hi = w
        else:
            lo = w
        sqrt_w = math.sqrt(w)
        d1 = 0.5 * sqrt_w - math.log(strike / forward) / sqrt_w
        dpdw = discount * forward * float(norm_pdf(d1)) / (2.0 * sqrt_w)
        if dpdw > 0.0:
            w_new = w - err / dpdw
        else:
            w_new = 0.5 * (lo + hi)
        if not (lo < w_new < hi):
            w_new = 0.5 * (lo + hi)
        w = w_new
    return w
