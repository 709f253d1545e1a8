"""Command-line front door.

Subcommands map one-to-one onto the library's main entry points: band
(linear-cost no-trade boundaries), layer (universal boundary-layer
profile), hjb (full grid solve), sweep (scaling studies), check
(consistency-property table) and validate (expansion-domain report).
Every command reads a JSON config and writes CSV plus plain-text
summaries under --out; gnuplot scripts are emitted next to the CSVs
they plot.

Exit codes: 0 success, 1 check-suite failure, 2 configuration problem,
3 mathematical-regime problem, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import asymptotics, band_zero, experiments, hjb
from .config import RunConfig, load_config
from .errors import (BandLayerError, ConfigError, ConvergenceError,
                     DomainError, RegimeError)
from .output import (gnuplot_loglog_script, gnuplot_velocity_script,
                     write_csv, write_text_report)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_REGIME = 3
EXIT_NO_CONVERGENCE = 4

# published value of the layer wall-slope coefficient; comparing our Airy
# construction against the independent literal keeps the check honest
_PUBLISHED_WALL_COEFF = 1.0187929716


def _say(quiet: bool, *parts):
    if not quiet:
        print(*parts)


def _band_inputs(cfg: RunConfig):
    params = cfg.need("model")
    costs = cfg.need("costs")
    spec = cfg.band
    x_nodes = None
    if spec is not None and spec.x_nodes is not None:
        x_nodes = np.asarray(spec.x_nodes, dtype=float)
    elif spec is not None and spec.count is not None:
        if params.omega > 0:
            from .model import default_x_domain
            lo, hi = default_x_domain(params)
        else:
            # no mean reversion: the band is x-independent, any range works
            lo, hi = -1.0, 1.0
        x_nodes = np.linspace(lo, hi, spec.count)
    return params, costs, x_nodes


def cmd_band(cfg: RunConfig, out: str, quiet: bool) -> int:
    params, costs, x_nodes = _band_inputs(cfg)
    band = band_zero.find_band_zero(params, costs.gamma_lin, x_nodes=x_nodes)
    path = os.path.join(out, cfg.output_prefix + "band.csv")
    write_csv(path,
              ["x", "theta_plus", "theta_minus", "theta_plus_slope",
               "theta_minus_slope", "width"],
              [band.x_nodes, band.theta_plus, band.theta_minus,
               band.theta_plus_deriv, band.theta_minus_deriv,
               band.theta_plus + band.theta_minus])
    _say(quiet, f"wrote {path} ({band.x_nodes.size} rows"
         + (", flat band)" if band.flat else ")"))
    return EXIT_OK


def cmd_layer(cfg: RunConfig, out: str, quiet: bool) -> int:
    params = cfg.need("model")
    costs = cfg.need("costs")
    spec = cfg.layer
    x = spec.x if spec is not None else 0.0
    samples = spec.samples if spec is not None else 2001
    band = band_zero.find_band_zero(params, costs.gamma_lin)
    c = asymptotics.layer_constants(params, band, x)

    from .model import CostKind
    if costs.kind is CostKind.THREE_HALVES:
        scale = (c.diffusivity / c.amp ** (4.0 / 3.0)) ** 0.6
        y_max = spec.y_max if spec is not None and spec.y_max else 150.0 * scale
        prof = asymptotics.abel_layer_solve(c.amp, c.diffusivity, y_max,
                                            n=samples)
        stem = "layer_abel"
    else:
        y_max = (spec.y_max if spec is not None and spec.y_max
                 else 50.0 * c.wall_offset)
        prof = asymptotics.layer_profile_airy(c, y_max, n=samples)
        stem = "layer_airy"

    path = os.path.join(out, cfg.output_prefix + stem + ".csv")
    write_csv(path, ["y", "profile", "profile_slope"],
              [prof.y, prof.f, prof.f_slope])
    residual = asymptotics.layer_ode_residual(prof)
    summary = os.path.join(out, cfg.output_prefix + stem + "_summary.txt")
    write_text_report(summary, [
        f"kind            {prof.kind.name}",
        f"x               {x:.17g}",
        f"amp             {prof.amp:.17g}",
        f"diffusivity     {prof.diffusivity:.17g}",
        f"wall_offset     {prof.wall_offset:.17g}",
        f"slope_at_zero   {prof.slope_at_zero:.17g}",
        f"ode_residual    {residual:.3e}",
        f"samples         {prof.y.size}",
    ])
    _say(quiet, f"wrote {path} and {summary} (residual {residual:.2e})")
    return EXIT_OK


def cmd_hjb(cfg: RunConfig, out: str, quiet: bool) -> int:
    params = cfg.need("model")
    costs = cfg.need("costs")
    grid = cfg.need("grid").to_grid()
    solver = cfg.solver or hjb.SolverConfig()
    vg = hjb.solve_hjb(params, costs, grid, solver)

    xx = np.repeat(grid.x_nodes, grid.theta_nodes.size)
    tt = np.tile(grid.theta_nodes, grid.x_nodes.size)
    field_path = os.path.join(out, cfg.output_prefix + "field.csv")
    write_csv(field_path, ["x", "theta", "value", "speed"],
              [xx, tt, vg.V.values.ravel(), vg.v.values.ravel()])

    band_path = os.path.join(out, cfg.output_prefix + "hjb_band.csv")
    bp = np.where(vg.plus_mask, vg.band_plus, np.nan)
    bm = np.where(vg.minus_mask, vg.band_minus, np.nan)
    write_csv(band_path,
              ["x", "band_plus", "plus_found", "band_minus", "minus_found"],
              [grid.x_nodes, bp, vg.plus_mask.astype(float), bm,
               vg.minus_mask.astype(float)])

    res_path = os.path.join(out, cfg.output_prefix + "residuals.csv")
    hist = np.asarray(vg.history, dtype=float)
    write_csv(res_path, ["iteration", "max_update"],
              [np.arange(1, hist.size + 1, dtype=float), hist])

    _say(quiet, f"solved in {vg.iterations} iterations, "
         f"residual {vg.residual:.3e}; wrote {field_path}, {band_path}, "
         f"{res_path}")
    return EXIT_OK


def _sweep_eta_shift(cfg, spec, out, quiet):
    params = cfg.need("model")
    costs = cfg.need("costs")
    grid = cfg.grid.to_grid() if cfg.grid is not None else None
    result = experiments.eta_shift_sweep(
        params, costs.gamma_lin, spec.values, x=spec.x, grid=grid,
        cfg=cfg.solver, crossing_cells=spec.crossing_cells)
    stem = cfg.output_prefix + "eta_shift"
    csv_path = os.path.join(out, stem + ".csv")
    predicted = result.predicted_prefactor * result.values ** (1.0 / 3.0)
    write_csv(csv_path, ["eta", "shift", "predicted_shift", "ratio"],
              [result.values, result.measured, predicted,
               result.prefactor_ratios])
    gp = gnuplot_loglog_script(
        os.path.basename(csv_path), 1, 2, "eta", "boundary shift",
        slope=result.fit.slope,
        prefactor=math.exp(result.fit.intercept),
        title="band shift vs quadratic cost")
    from .output import atomic_write_text
    atomic_write_text(os.path.join(out, stem + ".gp"), gp)
    return result, stem


def _sweep_gamma_width(cfg, spec, out, quiet):
    params = cfg.need("model")
    result = experiments.gamma_width_sweep(params, spec.values, x=spec.x)
    stem = cfg.output_prefix + "gamma_width"
    csv_path = os.path.join(out, stem + ".csv")
    write_csv(csv_path, ["gamma", "width", "dimensional_ratio"],
              [result.values, result.measured, result.prefactor_ratios])
    gp = gnuplot_loglog_script(
        os.path.basename(csv_path), 1, 2, "linear cost", "band width",
        slope=result.fit.slope, prefactor=math.exp(result.fit.intercept),
        title="band width vs linear cost")
    from .output import atomic_write_text
    atomic_write_text(os.path.join(out, stem + ".gp"), gp)
    return result, stem


def _sweep_summary(result, stem, out):
    lines = [f"sweep       {result.parameter}",
             f"points      {result.values.size}",
             f"slope       {result.fit.slope:.17g}",
             f"stderr      {result.fit.stderr:.3g}",
             f"reference   {result.reference_slope:.17g}",
             f"low_confidence {result.low_confidence}"]
    for value, reason in result.excluded:
        lines.append(f"warning: excluded {value:g}: {reason}")
    lines.extend(f"note: {n}" for n in result.notes)
    path = os.path.join(out, stem + "_summary.txt")
    write_text_report(path, lines)
    return path


def _sweep_regime(cfg, spec, out, quiet):
    params = cfg.need("model")
    costs = cfg.need("costs")
    grid = cfg.grid.to_grid() if cfg.grid is not None else None
    report = experiments.regime_map(params, costs, spec.x, grid=grid,
                                    cfg=cfg.solver)
    stem = cfg.output_prefix + "regime"
    csv_path = os.path.join(out, stem + ".csv")
    write_csv(csv_path, ["theta", "speed", "composite", "zone"],
              [report.theta, report.v, report.v_composite,
               list(report.labels)])
    gp = gnuplot_velocity_script(os.path.basename(csv_path), 1, 2,
                                 composite_col=3, boundary=report.boundary,
                                 title="trading-speed regimes")
    from .output import atomic_write_text
    atomic_write_text(os.path.join(out, stem + ".gp"), gp)
    lines = [f"x                     {report.x:.17g}",
             f"eta                   {report.eta:.17g}",
             f"boundary              {report.boundary:.17g}",
             f"layer_slope           {report.layer_slope:.17g}",
             f"sqrt_slope            {report.sqrt_slope:.17g}",
             f"linear_slope          {report.linear_slope:.17g}",
             f"layer_width           {report.layer_width:.17g}",
             f"layer_width_predicted {report.layer_width_predicted:.17g}",
             f"crossover             {report.crossover:.17g}",
             f"crossover_predicted   {report.crossover_predicted:.17g}"]
    lines.extend(f"note: {n}" for n in report.notes)
    summary = os.path.join(out, stem + "_summary.txt")
    write_text_report(summary, lines)
    _say(quiet, f"wrote {csv_path} and {summary}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: str, quiet: bool) -> int:
    spec = cfg.need("sweep")
    if spec.kind == "regime":
        return _sweep_regime(cfg, spec, out, quiet)
    if spec.kind == "eta_shift":
        result, stem = _sweep_eta_shift(cfg, spec, out, quiet)
    else:
        result, stem = _sweep_gamma_width(cfg, spec, out, quiet)
    summary = _sweep_summary(result, stem, out)
    _say(quiet, f"slope {result.fit.slope:.4f} +/- {result.fit.stderr:.4f} "
         f"(reference {result.reference_slope:g}); wrote {summary}")
    for value, reason in result.excluded:
        _say(quiet, f"warning: excluded {value:g}: {reason}")
    return EXIT_OK


def _check_rows(cfg: RunConfig):
    """Evaluate the consistency-property table. Returns (rows, all_ok)."""
    params = cfg.need("model")
    costs = cfg.need("costs")
    rows = []

    def add(name, ok, detail):
        rows.append((name, bool(ok), detail))

    band = band_zero.find_band_zero(params, costs.gamma_lin)
    comp = band_zero.greens_particular(
        params, band_zero.solve_homogeneous(params))
    x_lo, x_hi = band.x_nodes[0], band.x_nodes[-1]
    xs = np.linspace(0.6 * x_lo, 0.6 * x_hi, 5)

    c = asymptotics.layer_constants(params, band, 0.0)
    if cfg.check is not None and cfg.check.layer_table:
        y, f, f_slope = _read_layer_table(cfg.check.layer_table)
        prof = asymptotics.LayerProfile(
            kind=asymptotics.LayerKind.AIRY_QUADRATIC, y=y, f=f,
            f_slope=f_slope, slope_at_zero=c.wall_slope, amp=c.amp,
            diffusivity=c.diffusivity, wall_offset=c.wall_offset)
        source = os.path.basename(cfg.check.layer_table)
    else:
        prof = asymptotics.layer_profile_airy(c, 50.0 * c.wall_offset)
        source = "computed"
    residual = asymptotics.layer_ode_residual(prof)
    add("layer ODE residual <= 1e-8", residual <= 1e-8,
        f"residual {residual:.3e} ({source})")

    closed = _PUBLISHED_WALL_COEFF * c.amp ** (4.0 / 3.0) \
        * c.diffusivity ** (-1.0 / 3.0)
    rel = abs(c.wall_slope / closed - 1.0)
    add("layer wall slope closed form (1e-6 rel)", rel <= 1e-6,
        f"wall slope {c.wall_slope:.10g} vs {closed:.10g}, rel {rel:.2e}")

    # interior curvature magnitude sets the scale for "vanishes at the band"
    h = 0.1 * float(band.width(0.0))
    scale = abs(band_zero.value_nt_zero(comp, band, 0.0, h)
                - 2.0 * band_zero.value_nt_zero(comp, band, 0.0, 0.0)
                + band_zero.value_nt_zero(comp, band, 0.0, -h)) / h ** 2
    worst = max(abs(band_zero.second_derivative_at_band(comp, band, float(x)))
                for x in xs)
    add("value curvature vanishes at the boundary (1e-6 scaled)",
        worst <= 1e-6 * scale,
        f"max |V_tt| at band {worst:.3e}, interior scale {scale:.3e}")

    v3s = [band_zero.third_derivative_at_band(comp, band, float(x))
           for x in xs]
    add("third derivative positive at the boundary", min(v3s) > 0,
        f"min V_ttt {min(v3s):.6g} over {len(xs)} x values")

    worst_rel = 0.0
    for x in xs:
        lhs, rhs = band_zero.check_displacement_identity(comp, band, float(x))
        worst_rel = max(worst_rel, abs(lhs - rhs) / abs(rhs))
    add("displacement identity (1e-2 rel)", worst_rel <= 1e-2,
        f"worst relative gap {worst_rel:.3e} over {len(xs)} x values")

    return rows, all(ok for _, ok, _ in rows)


def _read_layer_table(path):
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError(f"cannot read layer table {path}: {exc}")
    for col in ("y", "profile", "profile_slope"):
        if col not in (data.dtype.names or ()):
            raise ConfigError(f"layer table {path} lacks column {col!r}")
    return data["y"], data["profile"], data["profile_slope"]


def cmd_check(cfg: RunConfig, out: str, quiet: bool) -> int:
    rows, all_ok = _check_rows(cfg)
    width = max(len(name) for name, _, _ in rows)
    lines = []
    for name, ok, detail in rows:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    lines.append(f"{'all checks passed' if all_ok else 'CHECK FAILURES'}")
    path = os.path.join(out, cfg.output_prefix + "check_report.txt")
    write_text_report(path, lines)
    for line in lines:
        _say(quiet, line)
    return EXIT_OK if all_ok else EXIT_CHECK_FAILED


def cmd_validate(cfg: RunConfig, out: str, quiet: bool) -> int:
    params = cfg.need("model")
    costs = cfg.need("costs")
    vp = cfg.need("validity")
    report = experiments.validity_report(params, costs.gamma_lin, vp)
    lines = [
        f"gamma_phi        {report.gamma_phi:.17g}",
        f"threshold        {report.threshold:.17g}",
        f"margin_decades   {report.margin_decades:.17g}",
        f"inside_domain    {report.ok}",
        f"eta_implied      {report.eta_implied:.17g}",
        "model_form       lhs={0:.17g} rhs={1:.17g} margin={2:.17g}".format(
            *report.model_form),
        "risk_form        lhs={0:.17g} rhs={1:.17g} margin={2:.17g}".format(
            *report.risk_form),
        f"forms_ratio      {report.forms_ratio:.17g}",
    ]
    lines.extend(f"note: {n}" for n in report.notes)
    path = os.path.join(out, cfg.output_prefix + "validity.txt")
    write_text_report(path, lines)
    for line in lines:
        _say(quiet, line)
    return EXIT_OK


_COMMANDS = {
    "band": cmd_band,
    "layer": cmd_layer,
    "hjb": cmd_hjb,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandlayer",
        description="No-trade band and trading-speed analysis under "
                    "linear plus small nonlinear costs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True,
                       help="path to the JSON run configuration")
        p.add_argument("--out", default=".",
                       help="output directory (created if missing)")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress chatter")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.out, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RegimeError, DomainError) as exc:
        print(f"regime error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except BandLayerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGIME


if __name__ == "__main__":
    sys.exit(main())
