"""Carr-Pelts-Tehranchi arbitrage-free price surface.

The model is built from a log-concave density ``f = exp(-h)`` on the real
line, with ``h`` a continuously differentiable convex piecewise-quadratic
exponent, and a nondecreasing continuous time change ``tau`` with
``tau(0) = 0``.  Writing ``Omega`` for the CDF of the normalized ``f`` and

    d(tau, k) = sup{ z : h(tau + z) - h(z) = -k },

the call price surface

    C(K, T) = D(T) * (F * Omega(d + tau(T)) - K * Omega(d)),  k = log(K / F)

is free of static arbitrage; ``tau = 0`` collapses it to the discounted
intrinsic value.  The Black-Scholes model is the member with a global
quadratic ``h(z) = z**2 / 2`` and ``tau(T) = sigma * sqrt(T)``.

Each quadratic segment of ``h`` integrates in closed form to scaled
Gaussian-CDF terms; the implementation evaluates them through ``erfcx``
where cancellation or overflow would otherwise occur.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .calibration import Basket, CalibConfig, _atm_total_variance_estimates, build_basket
from .market import MarketSnapshot
from .validation import as_readonly, check_positive, check_strictly_increasing

__all__ = [
    "HFunction",
    "TauCurve",
    "CPTModel",
    "omega",
    "omega_inverse",
    "d_f",
    "cpt_price",
    "CPTFitResult",
    "cpt_calibrate",
    "CPTCalibrator",
    "cpt_to_document",
    "cpt_from_document",
]

logger = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_PI_2 = math.sqrt(math.pi / 2.0)

_DF_TOL = 1e-14
_DF_MAX_EXPAND = 120
_OMEGA_INV_TOL = 1e-13


@dataclass(frozen=True)
class HFunction:
    """Convex C1 piecewise-quadratic exponent with quadratic Gaussian tails.

    Defined by node positions, values and first derivatives at the nodes;
    between nodes the curvature is constant, beyond the end nodes the
    function continues quadratically with ``tail_curvature > 0`` so that
    ``exp(-h)`` stays integrable.
    """

    nodes: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    tail_curvature: float = 1.0

    def __post_init__(self) -> None:
        nodes = check_strictly_increasing("nodes", self.nodes)
        values = np.asarray(self.values, dtype=float)
        slopes = np.asarray(self.slopes, dtype=float)
        if values.shape != nodes.shape or slopes.shape != nodes.shape:
            raise ValueError("nodes, values and slopes must have equal lengths")
        if np.any(np.diff(slopes) < 0.0):
            raise ValueError("slopes must be nondecreasing (h must be convex)")
        check_positive("tail_curvature", self.tail_curvature)
        if nodes.size >= 2:
            dv = np.diff(values)
            trap = 0.5 * np.diff(nodes) * (slopes[:-1] + slopes[1:])
            if np.any(np.abs(dv - trap) > 1e-8 * (1.0 + np.abs(trap))):
                raise ValueError("values are inconsistent with the slopes")
        object.__setattr__(self, "nodes", as_readonly(nodes))
        object.__setattr__(self, "values", as_readonly(values))
        object.__setattr__(self, "slopes", as_readonly(slopes))

    @classmethod
    def from_slopes(cls, nodes, slopes, value0: float = 0.0, tail_curvature: float = 1.0):
        """Build the exponent from node slopes; values follow by integration."""
        nodes = np.asarray(nodes, dtype=float)
        slopes = np.asarray(slopes, dtype=float)
        values = np.empty_like(nodes)
        values[0] = value0
        if nodes.size >= 2:
            values[1:] = value0 + np.cumsum(
                0.5 * np.diff(nodes) * (slopes[:-1] + slopes[1:])
            )
        return cls(nodes=nodes, values=values, slopes=slopes, tail_curvature=tail_curvature)

    @classmethod
    def gaussian(cls, half_width: float = 4.0, n_nodes: int = 9):
        """The global quadratic ``h(z) = z**2 / 2`` on a symmetric grid."""
        nodes = np.linspace(-half_width, half_width, n_nodes)
        return cls.from_slopes(nodes, nodes, value0=0.5 * half_width**2)

    def _piece_arrays(self):
        """Reference point and (value, slope, curvature) per piece.

        Piece ``j`` covers ``(edges[j], edges[j+1])`` with
        ``edges = [-inf, nodes..., +inf]``.
        """
        n = self.nodes
        v = self.values
        s = self.slopes
        q_interior = (
            np.diff(s) / np.diff(n) if n.size >= 2 else np.empty(0)
        )
        ref = np.concatenate([[n[0]], n])
        cc = np.concatenate([[v[0]], v])
        bb = np.concatenate([[s[0]], s])
        qq = np.concatenate([[self.tail_curvature], q_interior, [self.tail_curvature]])
        return ref, cc, bb, qq

    def piece_index(self, z) -> np.ndarray:
        return np.searchsorted(self.nodes, np.asarray(z, dtype=float), side="right")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        idx = self.piece_index(z)
        ref, cc, bb, qq = self._piece_arrays()
        u = z - ref[idx]
        return cc[idx] + bb[idx] * u + 0.5 * qq[idx] * u * u

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        idx = self.piece_index(z)
        ref, _, bb, qq = self._piece_arrays()
        return bb[idx] + qq[idx] * (z - ref[idx])


@dataclass(frozen=True)
class TauCurve:
    """Piecewise-linear nondecreasing time change with ``tau(0) = 0``."""

    maturities: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        maturities = check_strictly_increasing("maturities", self.maturities)
        values = np.asarray(self.values, dtype=float)
        if values.shape != maturities.shape:
            raise ValueError("maturities and values must have equal lengths")
        if maturities[0] <= 0.0:
            raise ValueError("tau node maturities must be positive")
        if np.any(values < 0.0):
            raise ValueError("tau values must be non-negative")
        if np.any(np.diff(values) < 0.0):
            raise ValueError("tau must be nondecreasing")
        object.__setattr__(self, "maturities", as_readonly(maturities))
        object.__setattr__(self, "values", as_readonly(values))

    def __call__(self, t) -> np.ndarray:
        """Evaluate through (0, 0) and the nodes; extend the last slope."""
        t = np.asarray(t, dtype=float)
        xs = np.concatenate([[0.0], self.maturities])
        ys = np.concatenate([[0.0], self.values])
        out = np.interp(t, xs, ys)
        if self.maturities.size >= 2:
            slope = (self.values[-1] - self.values[-2]) / (
                self.maturities[-1] - self.maturities[-2]
            )
        else:
            slope = self.values[-1] / self.maturities[-1]
        beyond = t > self.maturities[-1]
        return np.where(beyond, self.values[-1] + slope * (t - self.maturities[-1]), out)


def _erfcx_half(x):
    """``erfcx(x / sqrt(2))`` with the ``x = +inf`` limit mapped to 0."""
    x = np.asarray(x, dtype=float)
    return np.where(np.isinf(x), 0.0, special.erfcx(np.where(np.isinf(x), 0.0, x) / _SQRT2))


def _segment_mass(c, b, q, ulo, uhi, h_lo, h_hi):
    """``int exp(-(c + b*u + q*u^2/2)) du`` over ``[ulo, uhi]``, vectorized.

    ``h_lo``/``h_hi`` are the exponent values at the segment ends (``inf``
    at infinite ends).  Requires ``q > 0``; zero-curvature interior segments
    are handled by the caller.  Each branch factors out the exponent value
    at the dominating end (or at the interior vertex), so nothing overflows
    as long as the exponent is bounded below by a moderate constant.
    """
    c, b, q, ulo, uhi, h_lo, h_hi = map(
        np.asarray, np.broadcast_arrays(c, b, q, ulo, uhi, h_lo, h_hi)
    )
    s = np.sqrt(q)
    with np.errstate(invalid="ignore"):
        alpha = np.where(np.isneginf(ulo), -np.inf, b / s + s * ulo)
        beta = np.where(np.isposinf(uhi), np.inf, b / s + s * uhi)

    out = np.zeros(alpha.shape)
    right = alpha >= 0.0
    left = beta <= 0.0
    mid = ~(right | left)

    with np.errstate(invalid="ignore", over="ignore"):
        if np.any(right):
            a_, b_ = alpha[right], beta[right]
            expo = np.where(np.isinf(b_), -np.inf, 0.5 * (a_ - b_) * (a_ + b_))
            term = _erfcx_half(a_) - _erfcx_half(b_) * np.exp(expo)
            out[right] = np.exp(-h_lo[right]) / s[right] * _SQRT_PI_2 * term
        if np.any(left):
            a_, b_ = alpha[left], beta[left]
            expo = np.where(np.isinf(a_), -np.inf, 0.5 * (b_ - a_) * (b_ + a_))
            term = _erfcx_half(-b_) - _erfcx_half(-a_) * np.exp(expo)
            out[left] = np.exp(-h_hi[left]) / s[left] * _SQRT_PI_2 * term
        if np.any(mid):
            h_vertex = c[mid] - 0.5 * b[mid] * b[mid] / q[mid]
            out[mid] = (
                np.exp(-h_vertex)
                / s[mid]
                * _SQRT_2PI
                * (special.ndtr(beta[mid]) - special.ndtr(alpha[mid]))
            )
    return out


class CPTModel:
    """Normalized density ``exp(-h) / Z`` plus the time change ``tau``.

    Construction precomputes per-piece masses of ``exp(-h)`` so that the CDF
    evaluates in closed form; ``log_norm`` is ``log Z``.
    """

    def __init__(self, h: HFunction, tau: TauCurve):
        self.h = h
        self.tau = tau
        ref, cc, bb, qq = h._piece_arrays()
        edges = np.concatenate([[-np.inf], h.nodes, [np.inf]])
        lo = edges[:-1]
        hi = edges[1:]
        h_lo = np.where(np.isneginf(lo), np.inf, h(np.where(np.isneginf(lo), 0.0, lo)))
        h_hi = np.where(np.isposinf(hi), np.inf, h(np.where(np.isposinf(hi), 0.0, hi)))
        masses = np.empty(lo.size)
        for j in range(lo.size):
            if qq[j] > 0.0:
                masses[j] = float(
                    _segment_mass(
                        cc[j], bb[j], qq[j], lo[j] - ref[j], hi[j] - ref[j], h_lo[j], h_hi[j]
                    )
                )
            else:
                masses[j] = _linear_mass(bb[j], h_lo[j], h_hi[j], hi[j] - lo[j])
        self._piece_ref = ref
        self._piece_c = cc
        self._piece_b = bb
        self._piece_q = qq
        self._piece_lo = lo
        self._piece_h_lo = h_lo
        self._cum_mass = np.concatenate([[0.0], np.cumsum(masses)])
        total = float(self._cum_mass[-1])
        if not np.isfinite(total) or total <= 0.0:
            raise ValueError("density mass is not finite and positive")
        self.log_norm = math.log(total)

    @property
    def normalization(self) -> float:
        return math.exp(self.log_norm)

    def density(self, z):
        """Normalized density value ``exp(-h(z)) / Z``."""
        return np.exp(-self.h(z) - self.log_norm)


def _linear_mass(b, h_lo, h_hi, length):
    """Mass of a zero-curvature (linear) interior segment."""
    if b == 0.0:
        return math.exp(-h_lo) * length
    return (math.exp(-h_lo) - math.exp(-h_hi)) / b


def omega(model: CPTModel, z):
    """CDF of the normalized density at ``z`` (vectorized)."""
    z = np.asarray(z, dtype=float)
    idx = model.h.piece_index(z)
    ref = model._piece_ref[idx]
    cc = model._piece_c[idx]
    bb = model._piece_b[idx]
    qq = model._piece_q[idx]
    lo = model._piece_lo[idx]
    h_lo = model._piece_h_lo[idx]
    h_z = model.h(z)

    partial = np.zeros_like(z, dtype=float)
    finite = np.isfinite(z)
    pos_q = finite & (qq > 0.0)
    zero_q = finite & (qq == 0.0)
    if np.any(pos_q):
        partial[pos_q] = _segment_mass(
            cc[pos_q],
            bb[pos_q],
            qq[pos_q],
            lo[pos_q] - ref[pos_q],
            z[pos_q] - ref[pos_q],
            h_lo[pos_q],
            h_z[pos_q],
        )
    if np.any(zero_q):
        b_z = bb[zero_q]
        with np.errstate(divide="ignore", invalid="ignore"):
            linear = (np.exp(-h_lo[zero_q]) - np.exp(-h_z[zero_q])) / b_z
        flat = np.exp(-h_lo[zero_q]) * (z[zero_q] - lo[zero_q])
        partial[zero_q] = np.where(b_z == 0.0, flat, linear)

    raw = model._cum_mass[idx] + partial
    out = np.clip(raw * np.exp(-model.log_norm), 0.0, 1.0)
    out = np.where(np.isposinf(z), 1.0, out)
    out = np.where(np.isneginf(z), 0.0, out)
    return out


def omega_inverse(model: CPTModel, p: float) -> float:
    """Quantile of the normalized density (safeguarded Newton + bisection)."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in ]0, 1[, got {p}")
    lo, hi = model.h.nodes[0], model.h.nodes[-1]
    span = max(hi - lo, 1.0)
    for _ in range(200):
        if float(omega(model, lo)) <= p:
            break
        lo -= span
    for _ in range(200):
        if float(omega(model, hi)) >= p:
            break
        hi += span
    z = 0.5 * (lo + hi)
    for _ in range(200):
        err = float(omega(model, z)) - p
        if abs(err) <= _OMEGA_INV_TOL:
            return z
        if err > 0.0:
            hi = z
        else:
            lo = z
        dens = float(model.density(z))
        z_new = z - err / dens if dens > 0.0 else 0.5 * (lo + hi)
        if not (lo < z_new < hi):
            z_new = 0.5 * (lo + hi)
        z = z_new
    return z


def d_f(model: CPTModel, tau_val: float, k):
    """Largest ``z`` with ``h(tau + z) - h(z) = -k`` (vectorized in ``k``).

    The map ``z -> h(tau + z) - h(z)`` is nondecreasing by convexity, so the
    solution set is a point or an interval; the supremum is located by a
    monotone bracket bisection.  Values of ``-k`` beyond the attainable range
    return ``+-inf`` sentinels.
    """
    check_positive("tau_val", tau_val)
    target = -np.asarray(k, dtype=float)

    def phi(z):
        return model.h(tau_val + z) - model.h(z)

    span = max(float(model.h.nodes[-1] - model.h.nodes[0]), 1.0)
    lo = np.full(target.shape, model.h.nodes[0] - span)
    hi = np.full(target.shape, model.h.nodes[-1] + span)
    step = np.full(target.shape, span)
    for _ in range(_DF_MAX_EXPAND):
        bad = phi(lo) > target
        if not np.any(bad):
            break
        lo = np.where(bad, lo - step, lo)
        step = np.where(bad, 2.0 * step, step)
    else:
        lo = np.where(phi(lo) > target, -np.inf, lo)
    step = np.full(target.shape, span)
    for _ in range(_DF_MAX_EXPAND):
        bad = phi(hi) <= target
        if not np.any(bad):
            break
        hi = np.where(bad, hi + step, hi)
        step = np.where(bad, 2.0 * step, step)
    else:
        hi = np.where(phi(hi) <= target, np.inf, hi)

    usable = np.isfinite(lo) & np.isfinite(hi)
    lo_b = np.where(usable, lo, 0.0)
    hi_b = np.where(usable, hi, 1.0)
    for _ in range(200):
        mid = 0.5 * (lo_b + hi_b)
        take = phi(mid) <= target
        lo_b = np.where(take, mid, lo_b)
        hi_b = np.where(take, hi_b, mid)
        if np.all(hi_b - lo_b <= _DF_TOL * np.maximum(1.0, np.abs(lo_b))):
            break
    root = 0.5 * (lo_b + hi_b)
    root = np.where(usable, root, np.where(np.isneginf(lo), -np.inf, np.inf))
    return root if root.shape else float(root)


def cpt_price(model: CPTModel, kind: str, forward, strike, discount, maturity):
    """Option price off the forward with an explicit discount factor.

    ``tau(maturity) == 0`` prices the discounted intrinsic value exactly.
    """
    forward = np.asarray(forward, dtype=float)
    strike = np.asarray(strike, dtype=float)
    discount = np.asarray(discount, dtype=float)
    if np.any(forward <= 0.0) or np.any(strike <= 0.0):
        raise ValueError("forward and strike must be positive")
    tau_val = float(model.tau(maturity))
    if tau_val <= 0.0:
        call = discount * np.maximum(forward - strike, 0.0)
    else:
        k = np.log(strike / forward)
        d = np.asarray(d_f(model, tau_val, k), dtype=float)
        call = discount * (
            forward * omega(model, d + tau_val) - strike * omega(model, d)
        )
        call = np.where(np.isposinf(d), discount * (forward - strike), call)
        call = np.where(np.isneginf(d), 0.0, call)
    if kind == "call":
        return call
    if kind == "put":
        return call + discount * (strike - forward)
    raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def _node_grid(n_cpt: int, z_right: float) -> np.ndarray:
    """2*n_cpt nodes: n_cpt on [-3, 0] (0 included), n_cpt on ]0, z_right]."""
    left = np.linspace(-3.0, 0.0, n_cpt)
    right = np.linspace(0.0, z_right, n_cpt + 1)[1:]
    return np.concatenate([left, right])


def _shape_to_h(shape: np.ndarray, n_cpt: int, base_grid: np.ndarray) -> HFunction:
    """Decode shape parameters [width, left increments, right increments].

    Convexity comes from squaring the increments; the slope at the origin is
    pinned to zero, which fixes the density mode at ``z = 0`` (the location
    degeneracy) while normalization absorbs the level degeneracy.  Values are
    anchored so the minimum of the exponent is 0, keeping ``exp(-h)`` within
    floating-point range for arbitrary optimizer iterates.
    """
    width = shape[0]
    left_inc = shape[1:n_cpt]       # n_cpt - 1 increments, origin excluded
    right_inc = shape[n_cpt:]       # n_cpt increments
    nodes = width * base_grid
    slopes = np.empty(2 * n_cpt)
    slopes[n_cpt - 1] = 0.0
    slopes[: n_cpt - 1] = -np.cumsum((left_inc * left_inc)[::-1])[::-1]
    slopes[n_cpt:] = np.cumsum(right_inc * right_inc)
    raw = HFunction.from_slopes(nodes, slopes)
    return HFunction(
        nodes=nodes, values=raw.values - raw.values[n_cpt - 1], slopes=slopes
    )


def _tau_from_increments(t_params: np.ndarray, maturities: np.ndarray) -> TauCurve:
    values = np.cumsum(t_params * t_params) + 1e-12
    return TauCurve(maturities=maturities, values=values)


def _cpt_model_prices(model: CPTModel, basket: Basket) -> np.ndarray:
    out = np.empty(basket.size)
    for i, t in enumerate(basket.slice_maturities):
        mask = basket.slice_index == i
        if not np.any(mask):
            continue
        calls = cpt_price(
            model,
            "call",
            basket.forwards[mask],
            basket.strikes[mask],
            basket.discounts[mask],
            t,
        )
        parity = basket.discounts[mask] * (basket.strikes[mask] - basket.forwards[mask])
        is_put = np.array([basket.kinds[j] == "put" for j in np.flatnonzero(mask)])
        out[mask] = np.where(is_put, calls + parity, calls)
    return out


@dataclass(frozen=True)
class CPTFitResult:
    """CPT fit output mirroring the surface calibration result."""

    model: CPTModel
    objective_value: float
    residuals: np.ndarray
    model_prices: np.ndarray
    evals_used: int
    converged: bool
    inside_bid_ask: np.ndarray
    n_params: int
    basket: Basket


def cpt_calibrate(
    snapshot: MarketSnapshot, n_cpt: int = 6, config: CalibConfig | None = None
) -> CPTFitResult:
    """Fit tau values and density shape to the snapshot's weighted prices.

    The free vector stacks N tau increments and 2*n_cpt shape parameters
    (grid width plus slope increments); squaring the increments enforces the
    nondecreasing tau and the convexity of the exponent.  Initialization is
    the Black-Scholes member implied by the ATM variance estimates.
    """
    if config is None:
        config = CalibConfig()
    if n_cpt < 2:
        raise ValueError(f"n_cpt must be >= 2, got {n_cpt}")
    basket = build_basket(snapshot, config)
    maturities = np.asarray(basket.slice_maturities)
    n = maturities.size

    theta_hat = _atm_total_variance_estimates(basket)
    tau_hat = np.sqrt(theta_hat)
    z_right = 3.0 + float(np.max(tau_hat))
    base_grid = _node_grid(n_cpt, z_right)

    tau0 = np.sqrt(np.maximum(np.diff(np.concatenate([[0.0], tau_hat])), 1e-8))
    spacings = np.diff(base_grid)
    shape0 = np.concatenate(
        [[1.0], np.sqrt(spacings[: n_cpt - 1]), np.sqrt(spacings[n_cpt - 1 :])]
    )
    x0 = np.concatenate([tau0, shape0])

    lower = np.concatenate([np.full(n, -3.0), [0.2], np.full(2 * n_cpt - 1, -4.0)])
    upper = np.concatenate([np.full(n, 3.0), [5.0], np.full(2 * n_cpt - 1, 4.0)])
    x0 = np.clip(x0, lower, upper)

    sqrt_w = np.sqrt(basket.weights)

    def decode(x: np.ndarray) -> CPTModel:
        tau = _tau_from_increments(x[:n], maturities)
        h = _shape_to_h(x[n:], n_cpt, base_grid)
        return CPTModel(h, tau)

    def fun(x: np.ndarray) -> np.ndarray:
        model = decode(x)
        return sqrt_w * (basket.prices - _cpt_model_prices(model, basket))

    sol = least_squares(
        fun,
        x0,
        bounds=(lower, upper),
        method="trf",
        diff_step=1e-7,
        ftol=config.ftol,
        max_nfev=config.max_evals,
    )
    res0 = fun(x0)
    improved = float(np.sum(sol.fun**2)) <= float(np.sum(res0**2))
    use_x = sol.x if improved else x0
    converged = bool(sol.status > 0) and improved

    model = decode(use_x)
    res = fun(use_x)
    prices = _cpt_model_prices(model, basket)
    has_band = np.isfinite(basket.bids) & np.isfinite(basket.asks)
    inside = np.where(
        has_band, (basket.bids <= prices) & (prices <= basket.asks), np.nan
    )
    logger.info(
        "cpt calibration done: objective %.6e, %d evaluations, %d parameters",
        float(np.sum(res * res)),
        int(sol.nfev),
        n + 2 * n_cpt,
    )
    return CPTFitResult(
        model=model,
        objective_value=float(np.sum(res * res)),
        residuals=res,
        model_prices=prices,
        evals_used=int(sol.nfev),
        converged=converged,
        inside_bid_ask=inside,
        n_params=n + 2 * n_cpt,
        basket=basket,
    )


class CPTCalibrator(BaseEstimator):
    """Estimator wrapper around :func:`cpt_calibrate`."""

    def __init__(
        self,
        n_cpt: int = 6,
        weight_scheme: str = "uniform",
        max_evals: int = 1000,
        ftol: float = 1e-8,
    ):
        self.n_cpt = n_cpt
        self.weight_scheme = weight_scheme
        self.max_evals = max_evals
        self.ftol = ftol

    def fit(self, X: MarketSnapshot, y=None):
        config = CalibConfig(
            weight_scheme=self.weight_scheme,
            max_evals=self.max_evals,
            ftol=self.ftol,
        )
        result = cpt_calibrate(X, n_cpt=self.n_cpt, config=config)
        self.result_ = result
        self.model_ = result.model
        self.market_curve_ = X.curve
        return self

    def predict(self, X) -> np.ndarray:
        """Call prices for rows ``(maturity, strike)`` at closing forwards."""
        if not hasattr(self, "result_"):
            raise NotFittedError("CPTCalibrator is not fitted yet; call fit first")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have shape (n_options, 2): maturity, strike")
        out = np.empty(X.shape[0])
        for i, (t, strike) in enumerate(X):
            point = _lookup(self.market_curve_, t)
            out[i] = cpt_price(
                self.model_, "call", point.forward_close, strike, point.discount_close, t
            )
        return out


def _lookup(curve, maturity):
    for point in curve:
        if abs(point.maturity - maturity) <= 1e-12 * max(1.0, abs(maturity)):
            return point
    raise KeyError(f"maturity {maturity} not on the snapshot curve")


def cpt_to_document(result_or_model) -> dict:
    """Flat JSON-style record of the density exponent and time change."""
    model = getattr(result_or_model, "model", result_or_model)
    h, tau = model.h, model.tau
    return {
        "model": "cpt",
        "n_cpt": int(h.nodes.size // 2),
        "nodes": [float(x) for x in h.nodes],
        "values": [float(x) for x in h.values],
        "slopes": [float(x) for x in h.slopes],
        "tail_curvature": float(h.tail_curvature),
        "tau_maturities": [float(x) for x in tau.maturities],
        "tau_values": [float(x) for x in tau.values],
    }


def cpt_from_document(doc: dict) -> CPTModel:
    """Rebuild a model from :func:`cpt_to_document` output."""
    if doc.get("model") != "cpt":
        raise ValueError(f"not a cpt parameter document: model={doc.get('model')!r}")
    h = HFunction(
        nodes=np.asarray(doc["nodes"], dtype=float),
        values=np.asarray(doc["values"], dtype=float),
        slopes=np.asarray(doc["slopes"], dtype=float),
        tail_curvature=float(doc.get("tail_curvature", 1.0)),
    )
    tau = TauCurve(
        maturities=np.asarray(doc["tau_maturities"], dtype=float),
        values=np.asarray(doc["tau_values"], dtype=float),
    )
    return CPTModel(h, tau)
