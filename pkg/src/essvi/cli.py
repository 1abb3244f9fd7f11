"""Command-line front end.

Subcommands::

    essvi calibrate      --snapshot DIR --out DIR [--rule gj|mm] [--weights ...]
    essvi cpt-calibrate  --snapshot DIR --out DIR [--n-cpt N]
    essvi slice          --params FILE --t T [--out FILE]
    essvi check-arb      --grid FILE [--tol X] [--out FILE]
    essvi report         --snapshot DIR --params FILE [--cpt-params FILE] --out DIR

Options may also come from a flat ``key = value`` config file passed with
``--config``; explicit flags win over file values.  Artifacts are
byte-stable across reruns with identical inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibration import CalibConfig, calibrate
from .constraints import ButterflyRule
from .cpt import cpt_calibrate, cpt_from_document, cpt_price, cpt_to_document
from .detector import PriceGrid, detect, read_price_grid_csv, write_price_grid_csv
from .market import MarketSnapshot, fmt, forward_at, parse_quote_file
from .parametrization import params_from_document, params_to_document
from .pricing import bs_price, total_variance
from .term import SurfaceCurve, slice_at, total_variance_at

CONFIG_KEYS = {
    "rule": str,
    "weights": str,
    "a_upper": float,
    "rho_bound": float,
    "max_evals": int,
    "ftol": float,
    "n_cpt": int,
    "k_min": float,
    "k_max": float,
    "k_points": int,
    "tol": float,
}

_DEFAULTS = {
    "rule": "gj",
    "weights": "uniform",
    "a_upper": 0.05,
    "rho_bound": 0.95,
    "max_evals": 1000,
    "ftol": 1e-8,
    "n_cpt": 6,
    "k_min": -2.0,
    "k_max": 2.0,
    "k_points": 81,
    "tol": None,
}


class CliError(Exception):
    pass


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    values: dict = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{p} line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise CliError(f"{p} line {lineno}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](raw.strip())
        except ValueError:
            raise CliError(f"{p} line {lineno}: bad value for {key!r}") from None
    return values


def _setting(args, file_values: dict, key: str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_values:
        return file_values[key]
    return _DEFAULTS[key]


def _calib_config(args, file_values) -> CalibConfig:
    rule = ButterflyRule(kind=_setting(args, file_values, "rule"))
    return CalibConfig(
        weight_scheme=_setting(args, file_values, "weights"),
        butterfly_rule=rule,
        a_upper=_setting(args, file_values, "a_upper"),
        rho_bound=_setting(args, file_values, "rho_bound"),
        max_evals=_setting(args, file_values, "max_evals"),
        ftol=_setting(args, file_values, "ftol"),
    )


def _load_snapshot(path: str) -> MarketSnapshot:
    p = Path(path)
    if not p.exists():
        raise CliError(f"snapshot path not found: {p}")
    return parse_quote_file(p)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _smile_rows(slices, k_grid):
    rows = []
    for s in slices:
        w = total_variance(s, k_grid)
        iv = np.sqrt(w / s.maturity)
        for k, wv, ivv in zip(k_grid, w, iv):
            rows.append((s.maturity, k, wv, ivv))
    return rows


def _write_smiles(path: Path, slices, k_grid) -> None:
    lines = ["maturity,k,total_variance,implied_vol"]
    for t, k, w, iv in _smile_rows(slices, k_grid):
        lines.append(f"{fmt(t)},{fmt(k)},{fmt(w)},{fmt(iv)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _model_grid(snapshot, slices, k_grid) -> PriceGrid:
    strikes = []
    calls = []
    forwards = []
    discounts = []
    for s in slices:
        point = snapshot.curve_point(s.maturity)
        ks = point.forward_close * np.exp(k_grid)
        w = total_variance(s, k_grid)
        cs = bs_price("call", point.forward_close, ks, point.discount_close, w)
        strikes.append(ks)
        calls.append(np.asarray(cs))
        forwards.append(point.forward_close)
        discounts.append(point.discount_close)
    return PriceGrid(
        maturities=np.array([s.maturity for s in slices]),
        strikes=tuple(strikes),
        calls=tuple(calls),
        forwards=np.array(forwards),
        discounts=np.array(discounts),
    )


def _write_residuals(path: Path, result) -> None:
    basket = result.basket
    lines = ["maturity,strike,kind,market_price,model_price,weight,inside_bid_ask"]
    for i in range(basket.size):
        inside = result.inside_bid_ask[i]
        inside_txt = "" if np.isnan(inside) else str(bool(inside)).lower()
        lines.append(
            ",".join(
                [
                    fmt(basket.maturities[i]),
                    fmt(basket.strikes[i]),
                    basket.kinds[i],
                    fmt(basket.prices[i]),
                    fmt(result.model_prices[i]),
                    fmt(basket.weights[i]),
                    inside_txt,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _k_grid(args, file_values) -> np.ndarray:
    k_min = _setting(args, file_values, "k_min")
    k_max = _setting(args, file_values, "k_max")
    k_points = _setting(args, file_values, "k_points")
    if not np.isfinite(k_min) or not np.isfinite(k_max) or k_min >= k_max:
        raise CliError(f"bad smile grid range [{k_min}, {k_max}]")
    return np.linspace(k_min, k_max, k_points)


def _cmd_calibrate(args) -> int:
    file_values = _load_config_file(args.config)
    config = _calib_config(args, file_values)
    snapshot = _load_snapshot(args.snapshot)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = calibrate(snapshot, config)
    _write_json(out / "params.json", params_to_document(result.params, config.butterfly_rule))
    _write_residuals(out / "residuals.csv", result)
    k_grid = _k_grid(args, file_values)
    _write_smiles(out / "smiles.csv", result.slices, k_grid)
    grid = _model_grid(snapshot, result.slices, k_grid)
    write_price_grid_csv(grid, out / "prices.csv")
    report = detect(grid)
    _write_json(out / "arbitrage.json", report.to_document())
    sys.stdout.write(report.to_text())
    sys.stdout.write(
        f"objective = {result.objective_value!r}, evaluations = {result.evals_used}, "
        f"converged = {result.converged}\n"
    )
    return 0 if (result.converged and report.ok) else 1


def _cmd_cpt_calibrate(args) -> int:
    file_values = _load_config_file(args.config)
    config = _calib_config(args, file_values)
    n_cpt = _setting(args, file_values, "n_cpt")
    snapshot = _load_snapshot(args.snapshot)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = cpt_calibrate(snapshot, n_cpt=n_cpt, config=config)
    _write_json(out / "cpt_params.json", cpt_to_document(result))

    basket = result.basket
    lines = ["maturity,strike,kind,market_price,model_price,weight,inside_bid_ask"]
    for i in range(basket.size):
        inside = result.inside_bid_ask[i]
        inside_txt = "" if np.isnan(inside) else str(bool(inside)).lower()
        lines.append(
            ",".join(
                [
                    fmt(basket.maturities[i]),
                    fmt(basket.strikes[i]),
                    basket.kinds[i],
                    fmt(basket.prices[i]),
                    fmt(result.model_prices[i]),
                    fmt(basket.weights[i]),
                    inside_txt,
                ]
            )
        )
    (out / "cpt_residuals.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    k_grid = _k_grid(args, file_values)
    strikes, calls, forwards, discounts = [], [], [], []
    for t in basket.slice_maturities:
        point = snapshot.curve_point(t)
        ks = point.forward_close * np.exp(k_grid)
        cs = cpt_price(result.model, "call", point.forward_close, ks, point.discount_close, t)
        strikes.append(ks)
        calls.append(np.asarray(cs))
        forwards.append(point.forward_close)
        discounts.append(point.discount_close)
    grid = PriceGrid(
        maturities=np.asarray(basket.slice_maturities),
        strikes=tuple(strikes),
        calls=tuple(calls),
        forwards=np.array(forwards),
        discounts=np.array(discounts),
    )
    write_price_grid_csv(grid, out / "cpt_prices.csv")
    report = detect(grid)
    _write_json(out / "cpt_arbitrage.json", report.to_document())
    sys.stdout.write(report.to_text())
    sys.stdout.write(
        f"objective = {result.objective_value!r}, parameters = {result.n_params}, "
        f"converged = {result.converged}\n"
    )
    return 0 if (result.converged and report.ok) else 1


def _cmd_slice(args) -> int:
    file_values = _load_config_file(args.config)
    doc = json.loads(Path(args.params).read_text(encoding="utf-8"))
    gp, rule = params_from_document(doc)
    from .parametrization import to_slices

    slices, _ = to_slices(gp, rule)
    curve = SurfaceCurve(tuple(slices))
    s = slice_at(curve, args.t)
    k_grid = _k_grid(args, file_values)
    lines = [
        f"# t = {fmt(args.t)}, theta = {fmt(s.theta)}, rho = {fmt(s.rho)}, psi = {fmt(s.psi)}",
        "k,total_variance,implied_vol",
    ]
    w = total_variance_at(curve, args.t, k_grid)
    iv = np.sqrt(w / args.t)
    for kv, wv, ivv in zip(k_grid, w, iv):
        lines.append(f"{fmt(kv)},{fmt(wv)},{fmt(ivv)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_check_arb(args) -> int:
    file_values = _load_config_file(args.config)
    path = Path(args.grid)
    if not path.exists():
        raise CliError(f"grid file not found: {path}")
    grid = read_price_grid_csv(path)
    tol = args.tol if args.tol is not None else file_values.get("tol")
    report = detect(grid, tol)
    sys.stdout.write(report.to_text())
    if args.out:
        _write_json(Path(args.out), report.to_document())
    return 0 if report.ok else 1


def _price_with_models(snapshot, row, essvi_curve, cpt_model):
    point = snapshot.curve_point(row.maturity)
    fwd = forward_at(point, row.spot_at_ts, snapshot.close_spot)
    k = np.log(row.strike / fwd)
    prices = {}
    if essvi_curve is not None:
        w = float(total_variance_at(essvi_curve, row.maturity, k))
        prices["essvi"] = float(
            bs_price(row.option_kind, fwd, row.strike, point.discount_close, w)
        )
    if cpt_model is not None:
        prices["cpt"] = float(
            cpt_price(
                cpt_model, row.option_kind, fwd, row.strike, point.discount_close, row.maturity
            )
        )
    return fwd, prices


def _check_maturities(model_maturities, snapshot, label: str) -> None:
    snap = np.unique([r.maturity for r in snapshot.aggregated])
    model = np.sort(np.asarray(model_maturities, dtype=float))
    if model.size != snap.size or not np.allclose(model, snap, rtol=0, atol=1e-12):
        raise CliError(f"{label} parameter maturities do not match the snapshot")


def _cmd_report(args) -> int:
    snapshot = _load_snapshot(args.snapshot)
    essvi_curve = None
    cpt_model = None
    models = []
    if args.params:
        doc = json.loads(Path(args.params).read_text(encoding="utf-8"))
        gp, rule = params_from_document(doc)
        _check_maturities(gp.maturities, snapshot, "essvi")
        from .parametrization import to_slices

        slices, _ = to_slices(gp, rule)
        essvi_curve = SurfaceCurve(tuple(slices))
        models.append("essvi")
    if args.cpt_params:
        doc = json.loads(Path(args.cpt_params).read_text(encoding="utf-8"))
        cpt_model = cpt_from_document(doc)
        _check_maturities(cpt_model.tau.maturities, snapshot, "cpt")
        models.append("cpt")
    if not models:
        raise CliError("need --params and/or --cpt-params")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["maturity", "strike", "kind", "market_price", "bid", "ask"]
    for name in models:
        header += [f"{name}_price", f"{name}_error_bp", f"{name}_inside"]
    lines = [",".join(header)]
    for row in snapshot.aggregated:
        fwd, prices = _price_with_models(snapshot, row, essvi_curve, cpt_model)
        cells = [
            fmt(row.maturity),
            fmt(row.strike),
            row.option_kind,
            fmt(row.price),
            fmt(row.bid),
            fmt(row.ask),
        ]
        for name in models:
            model_price = prices[name]
            error_bp = 1e4 * abs(row.price - model_price) / fwd
            if row.bid is None or row.ask is None:
                inside = ""
            else:
                inside = str(bool(row.bid <= model_price <= row.ask)).lower()
            cells += [fmt(model_price), fmt(error_bp), inside]
        lines.append(",".join(cells))
    (out / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write(f"wrote {out / 'report.csv'} ({len(snapshot.aggregated)} options)\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="essvi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, snapshot=True):
        if snapshot:
            p.add_argument("--snapshot", required=True, help="snapshot directory")
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--k-min", dest="k_min", type=float)
        p.add_argument("--k-max", dest="k_max", type=float)
        p.add_argument("--k-points", dest="k_points", type=int)

    p = sub.add_parser("calibrate", help="fit the surface to a snapshot")
    common(p)
    p.add_argument("--rule", choices=["gj", "mm"])
    p.add_argument("--weights", choices=["uniform", "ivega2"])
    p.add_argument("--a-upper", dest="a_upper", type=float)
    p.add_argument("--rho-bound", dest="rho_bound", type=float)
    p.add_argument("--max-evals", dest="max_evals", type=int)
    p.add_argument("--ftol", type=float)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("cpt-calibrate", help="fit the comparison price surface")
    common(p)
    p.add_argument("--n-cpt", dest="n_cpt", type=int)
    p.add_argument("--weights", choices=["uniform", "ivega2"])
    p.add_argument("--max-evals", dest="max_evals", type=int)
    p.add_argument("--ftol", type=float)
    p.set_defaults(func=_cmd_cpt_calibrate)

    p = sub.add_parser("slice", help="interpolate a slice at a maturity")
    common(p, snapshot=False)
    p.add_argument("--params", required=True, help="parameter document (json)")
    p.add_argument("--t", type=float, required=True, help="target maturity")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=_cmd_slice)

    p = sub.add_parser("check-arb", help="scan a price grid for static arbitrage")
    common(p, snapshot=False)
    p.add_argument("--grid", required=True, help="price grid csv")
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="write the machine-readable report here")
    p.set_defaults(func=_cmd_check_arb)

    p = sub.add_parser("report", help="per-option model-vs-market table")
    common(p, snapshot=False)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--params", help="surface parameter document")
    p.add_argument("--cpt-params", dest="cpt_params", help="cpt parameter document")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - surface everything as a diagnostic
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
