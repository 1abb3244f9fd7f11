"""Arbitrage-free eSSVI implied-volatility surface calibration toolkit."""

from .calibration import (
    CalibConfig,
    CalibResult,
    ESSVICalibrator,
    calibrate,
    initial_guess,
    residuals,
)
from .constraints import (
    ButterflyRule,
    calendar_check,
    gj_psi_cap,
    l2_threshold,
    mm_psi_cap,
    psi_cap,
    surface_check,
)
from .cpt import (
    CPTCalibrator,
    CPTModel,
    HFunction,
    TauCurve,
    cpt_calibrate,
    cpt_price,
    d_f,
    omega,
    omega_inverse,
)
from .detector import ArbReport, PriceGrid, Violation, detect
from .market import (
    AggregatedOption,
    CurvePoint,
    MarketSnapshot,
    OptionRecord,
    aggregate,
    forward_at,
    parse_quote_file,
    write_snapshot,
)
from .parametrization import (
    AuxQuantities,
    GlobalParams,
    feasibility_margin,
    from_slices,
    to_slices,
)
from .pricing import (
    SSVISlice,
    bs_price,
    bs_vega,
    implied_total_variance,
    total_variance,
)
from .term import SurfaceCurve, slice_at, total_variance_at

__version__ = "0.1.0"

__all__ = [
    "AggregatedOption",
    "ArbReport",
    "AuxQuantities",
    "ButterflyRule",
    "CPTCalibrator",
    "CPTModel",
    "CalibConfig",
    "CalibResult",
    "CurvePoint",
    "ESSVICalibrator",
    "GlobalParams",
    "HFunction",
    "MarketSnapshot",
    "OptionRecord",
    "PriceGrid",
    "SSVISlice",
    "SurfaceCurve",
    "TauCurve",
    "Violation",
    "aggregate",
    "bs_price",
    "bs_vega",
    "calendar_check",
    "calibrate",
    "cpt_calibrate",
    "cpt_price",
    "d_f",
    "detect",
    "feasibility_margin",
    "forward_at",
    "from_slices",
    "gj_psi_cap",
    "implied_total_variance",
    "initial_guess",
    "l2_threshold",
    "mm_psi_cap",
    "omega",
    "omega_inverse",
    "parse_quote_file",
    "psi_cap",
    "residuals",
    "slice_at",
    "surface_check",
    "to_slices",
    "total_variance",
    "total_variance_at",
    "write_snapshot",
]
