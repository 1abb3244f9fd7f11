"""Box-domain parametrization of arbitrage-free eSSVI surfaces.

An N-maturity surface is coordinatized by

    rho_1..rho_N in ]-1,1[,  theta_1 > 0,  a_2..a_N > 0,  c_1..c_N in ]0,1[

and mapped onto slice triples ``(theta_i, rho_i, psi_i)`` through the ordered
chain

    p_i   = max((1+rho_{i-1})/(1+rho_i), (1-rho_{i-1})/(1-rho_i))
    theta_i = theta_{i-1} * p_i + a_i
    f_i   = butterfly cap at (theta_i, |rho_i|)
    C_1   = min(f_1, f_2/p_2, ..., f_N / prod(p_2..p_N));  A_1 = 0
    C_i   = min(psi_{i-1} * theta_i / theta_{i-1}, f_i, f_{i+1}/p_{i+1}, ...)
    A_i   = psi_{i-1} * p_i
    psi_i = c_i * (C_i - A_i) + A_i

Every point of the open box maps to a surface satisfying the butterfly and
calendar conditions of :mod:`essvi.constraints`, which makes the box a
drop-in search domain for bounded least-squares calibration.  The suffix
minima entering ``C_i`` are accumulated in O(N) using cumulative coupling
products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ButterflyRule, psi_cap
from .pricing import SSVISlice
from .validation import as_readonly, check_positive, check_strictly_increasing

__all__ = [
    "GlobalParams",
    "AuxQuantities",
    "InversionError",
    "couplings",
    "to_slices",
    "from_slices",
    "feasibility_margin",
    "params_to_document",
    "params_from_document",
]

# Floor applied when floating-point collapse closes the psi interval.
_GAP_FLOOR = 1e-30


@dataclass(frozen=True)
class GlobalParams:
    """Box coordinates of an N-maturity surface.

    ``a`` holds the N-1 entries ``a_2..a_N`` (empty for N = 1); ``c`` has one
    entry per maturity.
    """

    rhos: np.ndarray
    theta1: float
    a: np.ndarray
    c: np.ndarray
    maturities: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rhos", as_readonly(self.rhos))
        object.__setattr__(self, "a", as_readonly(np.atleast_1d(self.a)))
        object.__setattr__(self, "c", as_readonly(self.c))
        maturities = check_strictly_increasing("maturities", self.maturities)
        if maturities[0] <= 0.0:
            raise ValueError("maturities must be positive year fractions")
        object.__setattr__(self, "maturities", as_readonly(maturities))
        n = self.rhos.size
        if self.maturities.size != n or self.c.size != n or self.a.size != n - 1:
            raise ValueError(
                f"inconsistent lengths: {n} rhos, {self.a.size} a, "
                f"{self.c.size} c, {self.maturities.size} maturities"
            )
        if np.any(np.abs(self.rhos) >= 1.0):
            raise ValueError("every rho must lie in ]-1, 1[")
        check_positive("theta1", self.theta1)
        if np.any(self.a <= 0.0):
            raise ValueError("every a must be positive")
        if np.any((self.c <= 0.0) | (self.c >= 1.0)):
            raise ValueError("every c must lie in ]0, 1[")

    @property
    def n(self) -> int:
        return self.rhos.size


@dataclass(frozen=True)
class AuxQuantities:
    """Intermediate quantities of the box-to-slices chain.

    ``ps`` holds ``p_2..p_N``; the other arrays have one entry per maturity.
    ``clamped`` marks maturities where the interval ``C_i - A_i`` collapsed
    below the floating-point floor and ``psi_i`` was pinned just above ``A_i``.
    """

    ps: np.ndarray
    fs: np.ndarray
    a_psis: np.ndarray
    c_psis: np.ndarray
    clamped: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.ps < 1.0):
            raise ValueError("couplings p_i must be >= 1")
        if np.any((self.fs <= 0.0) | (self.fs > 4.0)):
            raise ValueError("butterfly caps f_i must lie in ]0, 4]")


class InversionError(ValueError):
    """A slice surface has no preimage in the open box."""

    def __init__(self, index: int, coordinate: str, message: str):
        self.index = index
        self.coordinate = coordinate
        super().__init__(f"slice {index}: coordinate {coordinate} {message}")


def couplings(rhos: np.ndarray) -> np.ndarray:
    """Adjacent-slice couplings ``p_i`` (length N-1, all >= 1)."""
    r_prev = rhos[:-1]
    r_next = rhos[1:]
    return np.maximum((1.0 + r_prev) / (1.0 + r_next), (1.0 - r_prev) / (1.0 - r_next))


def _cap_chain(thetas, abs_rhos, ps, rule, memo):
    """Butterfly caps ``f_i`` plus cumulative products and suffix minima."""
    fs = np.array([psi_cap(t, r, rule, memo) for t, r in zip(thetas, abs_rhos)])
    prods = np.concatenate([[1.0], np.cumprod(ps)])
    suffix = np.minimum.accumulate((fs / prods)[::-1])[::-1]
    return fs, prods, suffix


def to_slices(
    gp: GlobalParams, rule: ButterflyRule
) -> tuple[list[SSVISlice], AuxQuantities]:
    """Map box coordinates onto slice triples.

    Returns the slices in maturity order together with the intermediate
    quantities; the output always satisfies
    :func:`essvi.constraints.surface_check` under the same rule.
    """
    n = gp.n
    abs_rhos = np.abs(gp.rhos)
    ps = couplings(gp.rhos) if n > 1 else np.empty(0)

    thetas = np.empty(n)
    thetas[0] = gp.theta1
    for i in range(1, n):
        thetas[i] = thetas[i - 1] * ps[i - 1] + gp.a[i - 1]

    memo: dict = {}
    fs, prods, suffix = _cap_chain(thetas, abs_rhos, ps, rule, memo)

    psis = np.empty(n)
    a_psis = np.empty(n)
    c_psis = np.empty(n)
    clamped = np.zeros(n, dtype=bool)
    for i in range(n):
        if i == 0:
            a_psis[i] = 0.0
            c_psis[i] = suffix[0]
        else:
            a_psis[i] = psis[i - 1] * ps[i - 1]
            c_psis[i] = min(
                psis[i - 1] * thetas[i] / thetas[i - 1], prods[i] * suffix[i]
            )
        gap = c_psis[i] - a_psis[i]
        if gap < _GAP_FLOOR:
            gap = _GAP_FLOOR
            clamped[i] = True
        psis[i] = gp.c[i] * gap + a_psis[i]

    slices = [
        SSVISlice(theta=thetas[i], rho=gp.rhos[i], psi=psis[i], maturity=gp.maturities[i])
        for i in range(n)
    ]
    aux = AuxQuantities(
        ps=as_readonly(ps),
        fs=as_readonly(fs),
        a_psis=as_readonly(a_psis),
        c_psis=as_readonly(c_psis),
        clamped=as_readonly(clamped, dtype=bool),
    )
    return slices, aux


def from_slices(slices, rule: ButterflyRule) -> GlobalParams:
    """Invert :func:`to_slices` on a strictly feasible surface.

    Raises:
        InversionError: Naming the slice and coordinate whenever a recovered
            box coordinate falls outside its open interval.
    """
    slices = list(slices)
    n = len(slices)
    if n == 0:
        raise ValueError("need at least one slice")
    rhos = np.array([s.rho for s in slices])
    thetas = np.array([s.theta for s in slices])
    psis = np.array([s.psi for s in slices])
    maturities = np.array([s.maturity for s in slices])

    for i, rho in enumerate(rhos):
        if not (-1.0 < rho < 1.0):
            raise InversionError(i, "rho", f"= {rho} outside ]-1, 1[")
    if thetas[0] <= 0.0:
        raise InversionError(0, "theta1", f"= {thetas[0]} not positive")

    ps = couplings(rhos) if n > 1 else np.empty(0)
    a = thetas[1:] - thetas[:-1] * ps
    for i, a_i in enumerate(a):
        if a_i <= 0.0:
            raise InversionError(i + 1, "a", f"= {a_i} not positive")

    memo: dict = {}
    _, prods, suffix = _cap_chain(thetas, np.abs(rhos), ps, rule, memo)

    c = np.empty(n)
    for i in range(n):
        if i == 0:
            a_psi = 0.0
            c_psi = suffix[0]
        else:
            a_psi = psis[i - 1] * ps[i - 1]
            c_psi = min(psis[i - 1] * thetas[i] / thetas[i - 1], prods[i] * suffix[i])
        gap = c_psi - a_psi
        if gap <= 0.0:
            raise InversionError(i, "c", f"has empty interval (C - A = {gap})")
        c[i] = (psis[i] - a_psi) / gap
        if not (0.0 < c[i] < 1.0):
            raise InversionError(i, "c", f"= {c[i]} outside ]0, 1[")

    return GlobalParams(
        rhos=rhos, theta1=float(thetas[0]), a=a, c=c, maturities=maturities
    )


def feasibility_margin(gp: GlobalParams, rule: ButterflyRule) -> np.ndarray:
    """Distances of each ``psi_i`` to its interval bounds and butterfly cap.

    Returns an ``(N, 3)`` array with columns ``C_i - psi_i``, ``psi_i - A_i``
    and ``f_i - psi_i``; all entries are strictly positive on valid inputs.
    """
    slices, aux = to_slices(gp, rule)
    psis = np.array([s.psi for s in slices])
    return np.column_stack([aux.c_psis - psis, psis - aux.a_psis, aux.fs - psis])


def params_to_document(gp: GlobalParams, rule: ButterflyRule) -> dict:
    """Flat JSON-style record of the box coordinates and rule kind."""
    return {
        "model": "essvi",
        "n": int(gp.n),
        "maturities": [float(t) for t in gp.maturities],
        "rhos": [float(r) for r in gp.rhos],
        "theta1": float(gp.theta1),
        "a": [float(x) for x in gp.a],
        "c": [float(x) for x in gp.c],
        "rule": rule.kind,
        "mm_grid_size": int(rule.mm_grid_size),
        "mm_refine_tol": float(rule.mm_refine_tol),
    }


def params_from_document(doc: dict) -> tuple[GlobalParams, ButterflyRule]:
    """Rebuild (params, rule) from :func:`params_to_document` output."""
    if doc.get("model") != "essvi":
        raise ValueError(f"not an essvi parameter document: model={doc.get('model')!r}")
    gp = GlobalParams(
        rhos=np.asarray(doc["rhos"], dtype=float),
        theta1=float(doc["theta1"]),
        a=np.asarray(doc["a"], dtype=float),
        c=np.asarray(doc["c"], dtype=float),
        maturities=np.asarray(doc["maturities"], dtype=float),
    )
    rule = ButterflyRule(
        kind=doc.get("rule", "gj"),
        mm_grid_size=int(doc.get("mm_grid_size", 1024)),
        mm_refine_tol=float(doc.get("mm_refine_tol", 1e-10)),
    )
    if gp.n != int(doc.get("n", gp.n)):
        raise ValueError("document field n disagrees with coordinate lengths")
    return gp, rule
