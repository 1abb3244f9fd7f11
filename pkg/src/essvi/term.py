"""Maturity interpolation and extrapolation of calibrated slice parameters.

Between calibrated maturities the triple is interpolated linearly in
``(theta, psi, psi*rho)``; below the first maturity the whole first slice is
scaled by ``t / T_1`` with ``rho`` held fixed (equivalently, the implied
volatility at fixed moneyness is frozen); beyond the last maturity ``theta``
continues with the last available slope while ``psi`` and ``rho`` stay
constant.  All three regimes preserve the absence of static arbitrage of the
calibrated surface.

Both extrapolations sit exactly on a boundary of the pairwise calendar
conditions: the short end on the inclusive cap ``psi2 <= psi1*theta2/theta1``
(an equality, so its float evaluation can land a few ulps on either side)
and the long end on the strict lower bound ``psi2 > psi1`` (an equality,
which the strict clause rejects even though total variance still increases
strictly in maturity at every moneyness).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .pricing import SSVISlice, total_variance
from .validation import check_positive

__all__ = ["SurfaceCurve", "slice_at", "total_variance_at"]


@dataclass(frozen=True)
class SurfaceCurve:
    """A calibrated, arbitrage-free sequence of slices at increasing maturities.

    ``right_slope`` optionally overrides the ``theta`` slope used beyond the
    last maturity; it must be positive.  The default keeps the slope between
    the last two slices (or ``theta_1 / T_1`` for a single slice).
    """

    slices: tuple[SSVISlice, ...]
    right_slope: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "slices", tuple(self.slices))
        if not self.slices:
            raise ValueError("need at least one slice")
        maturities = [s.maturity for s in self.slices]
        if any(t2 <= t1 for t1, t2 in zip(maturities, maturities[1:])):
            raise ValueError("slice maturities must be strictly increasing")
        if self.right_slope is not None:
            check_positive("right_slope", self.right_slope)

    @property
    def maturities(self) -> tuple[float, ...]:
        return tuple(s.maturity for s in self.slices)

    def theta_slope_right(self) -> float:
        if self.right_slope is not None:
            return self.right_slope
        if len(self.slices) == 1:
            return self.slices[0].theta / self.slices[0].maturity
        last, prev = self.slices[-1], self.slices[-2]
        return (last.theta - prev.theta) / (last.maturity - prev.maturity)


def slice_at(curve: SurfaceCurve, t: float) -> SSVISlice:
    """Slice parameters at an arbitrary maturity ``t > 0``."""
    if not t > 0.0:
        raise ValueError(f"maturity t must be positive, got {t}")
    slices = curve.slices
    first, last = slices[0], slices[-1]

    if t < first.maturity:
        scale = t / first.maturity
        return SSVISlice(
            theta=scale * first.theta, rho=first.rho, psi=scale * first.psi, maturity=t
        )
    if t > last.maturity:
        theta = last.theta + curve.theta_slope_right() * (t - last.maturity)
        return SSVISlice(theta=theta, rho=last.rho, psi=last.psi, maturity=t)

    maturities = [s.maturity for s in slices]
    hi = bisect.bisect_left(maturities, t)
    if maturities[hi] == t:
        node = slices[hi]
        return SSVISlice(theta=node.theta, rho=node.rho, psi=node.psi, maturity=t)
    left, right = slices[hi - 1], slices[hi]
    lam = (t - left.maturity) / (right.maturity - left.maturity)
    theta = (1.0 - lam) * left.theta + lam * right.theta
    psi = (1.0 - lam) * left.psi + lam * right.psi
    rho = ((1.0 - lam) * left.psi * left.rho + lam * right.psi * right.rho) / psi
    return SSVISlice(theta=theta, rho=rho, psi=psi, maturity=t)


def total_variance_at(curve: SurfaceCurve, t: float, k):
    """Total implied variance of the interpolated surface at ``(t, k)``.

    Below the first maturity this equals ``(t / T_1)`` times the first
    slice's total variance at the same ``k``, exactly.
    """
    return total_variance(slice_at(curve, t), k)
