"""Static no-arbitrage conditions for SSVI slice surfaces.

Two butterfly-arbitrage bounds on ``psi`` are supported:

* Gatheral-Jacquier ("gj"): the sufficient condition of Gatheral & Jacquier
  (2014, Theorem 4.2) combined with the Roger Lee moment bound, giving the
  explicit cap ``min(4 / (1 + |rho|), sqrt(4 * theta / (1 + |rho|)))``.
* Martini-Mingone ("mm"): the necessary-and-sufficient condition of Martini
  & Mingone (2021), which requires minimizing

      4 * theta * s * h(l)^2 / (theta * s * g(l)^2 - g2(l)),   s = sqrt(1-rho^2)

  over ``l > l2(|rho|)`` with ``g = N'/4``, ``h = 1 - (l - rho/s) N'/(2N)``,
  ``g2 = N'' - N'^2/(2N)`` and ``N = s + rho*l + sqrt(l^2+1)``.  The infimum
  is approximated by a grid scan over the substitution ``l = l2 + u/(1-u)``,
  ``u in (0, 1)``, followed by a bounded local refinement around the argmin.

Calendar-spread conditions between two slices follow Hendriks & Martini
(2019, Proposition 3.5): ``theta`` strictly increasing, the strict necessary
lower bound on ``psi`` and the tractable sufficient upper bound
``psi2 <= psi1 * theta2 / theta1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .pricing import SSVISlice
from .validation import check_choice

__all__ = [
    "ButterflyRule",
    "SVIParams",
    "svi_from_slice",
    "gj_psi_cap",
    "l2_threshold",
    "mm_psi_cap",
    "psi_cap",
    "CalendarCheck",
    "calendar_check",
    "SurfaceCheck",
    "surface_check",
]

GJ = "gj"
MM = "mm"


@dataclass(frozen=True)
class ButterflyRule:
    """Choice of butterfly bound plus the MM minimization controls."""

    kind: str = GJ
    mm_grid_size: int = 1024
    mm_refine_tol: float = 1e-10

    def __post_init__(self) -> None:
        check_choice("kind", self.kind, (GJ, MM))
        if self.mm_grid_size < 64:
            raise ValueError(f"mm_grid_size must be >= 64, got {self.mm_grid_size}")
        if not (0.0 < self.mm_refine_tol <= 1e-6):
            raise ValueError(
                f"mm_refine_tol must lie in ]0, 1e-6], got {self.mm_refine_tol}"
            )


@dataclass(frozen=True)
class SVIParams:
    """Raw SVI coordinates of an SSVI slice (used to cross-check the MM bound)."""

    a: float
    b: float
    m: float
    sigma: float

    def __post_init__(self) -> None:
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def svi_from_slice(slc: SSVISlice) -> SVIParams:
    """Map ``(theta, rho, psi)`` to raw SVI ``(a, b, m, sigma)``.

    ``a = theta (1-rho^2)/2``, ``b = psi/2``, ``m = -theta rho / psi`` and
    ``sigma = theta sqrt(1-rho^2) / psi``; the resulting raw SVI total
    variance coincides with the slice's.
    """
    one_minus = 1.0 - slc.rho * slc.rho
    return SVIParams(
        a=0.5 * slc.theta * one_minus,
        b=0.5 * slc.psi,
        m=-slc.theta * slc.rho / slc.psi,
        sigma=slc.theta * math.sqrt(one_minus) / slc.psi,
    )


def gj_psi_cap(theta: float, abs_rho: float) -> float:
    """Gatheral-Jacquier butterfly cap ``min(4/(1+r), sqrt(4*theta/(1+r)))``."""
    one_plus = 1.0 + abs_rho
    return min(4.0 / one_plus, math.sqrt(4.0 * theta / one_plus))


def l2_threshold(abs_rho: float) -> float:
    """Lower end of the MM minimization domain: ``cot(arccos(-|rho|)/3)``.

    Equals ``sqrt(3)`` at ``rho = 0`` and decreases to ``1/sqrt(3)`` as
    ``|rho| -> 1``; it is the sign-change point of ``g2``.
    """
    return 1.0 / math.tan(math.acos(-abs_rho) / 3.0)


def _mm_expression(l, theta: float, abs_rho: float):
    """MM bound integrand ``4*theta*s*h^2 / (theta*s*g^2 - g2)`` on ``l > l2``.

    Asserts ``g2 < 0`` and a positive denominator on the evaluated points,
    which hold on the domain under the Fukasawa monotonicity conditions.
    """
    l = np.asarray(l, dtype=float)
    s = math.sqrt(1.0 - abs_rho * abs_rho)
    root = np.sqrt(l * l + 1.0)
    big_n = s + abs_rho * l + root
    n1 = abs_rho + l / root
    n2 = 1.0 / (root * root * root)
    g = n1 / 4.0
    h = 1.0 - (l - abs_rho / s) * n1 / (2.0 * big_n)
    g2 = n2 - n1 * n1 / (2.0 * big_n)
    den = theta * s * g * g - g2
    if np.any(g2 >= 0.0):
        raise AssertionError("g2 must be negative for l > l2(|rho|)")
    if np.any(den <= 0.0):
        raise AssertionError("MM denominator must be positive on the scan domain")
    return 4.0 * theta * s * h * h / den


def mm_psi_cap(
    theta: float,
    abs_rho: float,
    rule: ButterflyRule | None = None,
    memo: dict | None = None,
) -> float:
    """Martini-Mingone butterfly cap ``min(4/(1+r), sqrt(inf over l))``.

    The infimum over the half line is scanned on a compactified grid and
    sharpened with a bounded scalar minimization around the grid argmin.
    An optional ``memo`` dict (keyed on inputs rounded to 1e-12) lets a
    calibration job reuse values across repeated slices.
    """
    if rule is None:
        rule = ButterflyRule(kind=MM)
    if memo is not None:
        key = (round(theta, 12), round(abs_rho, 12))
        hit = memo.get(key)
        if hit is not None:
            return hit

    l2 = l2_threshold(abs_rho)
    m = rule.mm_grid_size
    u = np.arange(1, m + 1) / (m + 1.0)
    grid = l2 + u / (1.0 - u)
    vals = _mm_expression(grid, theta, abs_rho)
    i = int(np.argmin(vals))
    lo = grid[i - 1] if i > 0 else l2 + 0.5 * u[0] / (1.0 - 0.5 * u[0])
    hi = grid[i + 1] if i < m - 1 else grid[-1]
    res = minimize_scalar(
        _mm_expression,
        bounds=(lo, hi),
        args=(theta, abs_rho),
        method="bounded",
        options={"xatol": rule.mm_refine_tol},
    )
    f_inf = min(float(vals[i]), float(res.fun))
    cap = min(4.0 / (1.0 + abs_rho), math.sqrt(f_inf))
    if memo is not None:
        memo[key] = cap
    return cap


def psi_cap(
    theta: float,
    abs_rho: float,
    rule: ButterflyRule,
    memo: dict | None = None,
) -> float:
    """Butterfly cap on ``psi`` under the selected rule."""
    if rule.kind == GJ:
        return gj_psi_cap(theta, abs_rho)
    return mm_psi_cap(theta, abs_rho, rule, memo)


@dataclass(frozen=True)
class CalendarCheck:
    """Outcome of the pairwise calendar-spread conditions."""

    ok: bool
    clause: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def calendar_check(s1: SSVISlice, s2: SSVISlice) -> CalendarCheck:
    """Check the calendar-spread conditions for slices ``s1`` before ``s2``.

    Passes iff ``theta2 > theta1``, the strict necessary bound
    ``psi2 > psi1 * max((1+rho1)/(1+rho2), (1-rho1)/(1-rho2))`` holds and the
    sufficient bound ``psi2 <= psi1 * theta2 / theta1`` holds.  A failing
    check names the violated clause.
    """
    if not s2.theta > s1.theta:
        return CalendarCheck(
            False, "theta", f"theta2 {s2.theta} not greater than theta1 {s1.theta}"
        )
    coupling = max(
        (1.0 + s1.rho) / (1.0 + s2.rho),
        (1.0 - s1.rho) / (1.0 - s2.rho),
    )
    floor = s1.psi * coupling
    if not s2.psi > floor:
        return CalendarCheck(
            False, "psi_lower", f"psi2 {s2.psi} not above necessary floor {floor}"
        )
    ceil = s1.psi * s2.theta / s1.theta
    if not s2.psi <= ceil:
        return CalendarCheck(
            False, "psi_upper", f"psi2 {s2.psi} above sufficient cap {ceil}"
        )
    return CalendarCheck(True)


@dataclass(frozen=True)
class SurfaceCheck:
    """Outcome of the full surface condition set."""

    ok: bool
    failures: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def surface_check(slices, rule: ButterflyRule) -> SurfaceCheck:
    """Check butterfly caps on every slice and calendar conditions pairwise.

    Butterfly caps are inclusive (``psi <= cap``); calendar inequalities are
    strict or inclusive exactly as in :func:`calendar_check`.  Maturities
    must be strictly increasing.
    """
    slices = list(slices)
    maturities = [s.maturity for s in slices]
    if any(t2 <= t1 for t1, t2 in zip(maturities, maturities[1:])):
        raise ValueError("slice maturities must be strictly increasing")

    failures: list[str] = []
    memo: dict = {}
    for i, s in enumerate(slices):
        cap = psi_cap(s.theta, abs(s.rho), rule, memo)
        if not s.psi <= cap:
            failures.append(f"slice {i}: psi {s.psi} exceeds {rule.kind} cap {cap}")
    for i, (s1, s2) in enumerate(zip(slices, slices[1:])):
        result = calendar_check(s1, s2)
        if not result.ok:
            failures.append(f"pair ({i}, {i + 1}): {result.clause} clause, {result.detail}")
    return SurfaceCheck(not failures, tuple(failures))
