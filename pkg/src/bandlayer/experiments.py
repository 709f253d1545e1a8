"""Quantitative studies built on the two independent solvers.

The module answers four questions about the model:

* how the no-trade boundary moves as the quadratic speed cost grows
  (``eta_shift_sweep``),
* how the band width scales with the linear cost (``gamma_width_sweep``),
* how the trading-speed curve splits into no-trade / layer / square-root /
  linear zones (``regime_map``), and
* whether a desk's cost numbers sit inside the domain where the expansion
  is trustworthy at all (``validity_report``).

Measurement conventions
-----------------------
The shift sweep differences every boundary against the dynamic-programming
solver's own smallest-eta baseline on the same grid, so discretization
bias common to all solves cancels.  The width sweep instead uses the exact
zero-eta band solver, which has no grid to bias it.  All fits are ordinary
least squares in log-log space and always carry a standard error; a slope
with stderr above 0.05 is flagged LOW-CONFIDENCE rather than hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, DomainError, RegimeError
from .model import (
    CostKind,
    CostParams,
    Grid2D,
    ModelParams,
    default_x_domain,
    markowitz_position,
    stationary_std,
)
from . import band_zero
from . import asymptotics
from . import hjb


# ---------------------------------------------------------------- fitting


@dataclass(frozen=True)
class LogLogFit:
    """Least-squares power-law fit y = prefactor * x**slope."""

    slope: float
    intercept: float
    stderr: float
    residuals: np.ndarray

    @property
    def prefactor(self) -> float:
        return math.exp(self.intercept)


def loglog_fit(x, y) -> LogLogFit:
    """Fit log(y) = slope*log(x) + intercept by ordinary least squares.

    ``stderr`` is the standard error of the slope under the usual
    homoskedastic assumption; with fewer than 3 points it is infinite
    (no degrees of freedom left).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("loglog_fit needs two equal-length 1-d arrays")
    if x.size < 2:
        raise ConfigError("loglog_fit needs at least 2 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("loglog_fit needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    beta, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ beta
    dof = x.size - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        sxx = float(np.sum((lx - lx.mean()) ** 2))
        stderr = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    else:
        stderr = math.inf
    return LogLogFit(slope=float(beta[0]), intercept=float(beta[1]),
                     stderr=stderr, residuals=resid)


# ------------------------------------------------------------ sweep result


LOW_CONFIDENCE_STDERR = 0.05


@dataclass(frozen=True)
class SweepResult:
    """One scaling study: measured points, the fit, and its health.

    ``values``/``measured`` hold the points that entered the fit;
    ``excluded`` records (value, reason) pairs that were dropped.
    ``prefactor_ratios`` is the per-point measured/predicted amplitude
    ratio when a prediction exists (NaN otherwise).
    """

    parameter: str
    values: np.ndarray
    measured: np.ndarray
    excluded: tuple
    fit: LogLogFit
    reference_slope: float
    predicted_prefactor: float
    prefactor_ratios: np.ndarray
    low_confidence: bool
    notes: tuple

    @property
    def slope(self) -> float:
        return self.fit.slope

    @property
    def stderr(self) -> float:
        return self.fit.stderr


def _as_positive_array(values, name):
    arr = np.asarray(list(values), dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{name} must be a non-empty 1-d sequence")
    if np.any(arr <= 0):
        raise DomainError(f"{name} must be strictly positive")
    if np.unique(arr).size != arr.size:
        raise ConfigError(f"{name} contains duplicates")
    return np.sort(arr)


def _require_span(arr, decades, name):
    span = math.log10(arr[-1] / arr[0])
    if arr.size < 4:
        raise ConfigError(f"{name}: need at least 4 points, got {arr.size}")
    if span < decades:
        raise ConfigError(
            f"{name}: points span {span:.2f} decades, need >= {decades}")


# -------------------------------------------------------- eta shift sweep


def _sweep_grid(params: ModelParams) -> Grid2D:
    """Default grid for the shift sweep.

    x covers 3 stationary deviations of the signal; theta covers the
    ideal-position range with a margin so the edge condition stays in its
    analytic branch.  The theta step must resolve boundary displacements
    of a few 1e-6, which dominates the node budget.
    """
    x_half = 3.0 * stationary_std(params)
    nx = 31
    markowitz_max = abs(markowitz_position(params, x_half))
    theta_half = 1.12 * markowitz_max
    htheta = 1e-6 * (theta_half / 7.5e-3)
    ntheta = 2 * int(round(theta_half / htheta)) + 1
    return Grid2D.regular(-x_half, x_half, nx, -theta_half, theta_half, ntheta)


def _boundary_at(vg: hjb.ValueGrid, x: float, rel_threshold: float) -> float:
    """Upper boundary at the x-node nearest x, at an explicit threshold."""
    band = hjb.extract_band(vg, threshold=rel_threshold)
    i = int(np.argmin(np.abs(band.x_nodes - x)))
    if not band.plus_mask[i]:
        return math.nan
    return float(band.theta_plus[i])


def eta_shift_sweep(params: ModelParams, gamma_lin: float, eta_list,
                    *, x: float = 0.0, grid: Grid2D | None = None,
                    cfg: hjb.SolverConfig | None = None,
                    crossing_cells: float = 6.0) -> SweepResult:
    """Measure the inward boundary displacement as a function of eta.

    For each eta the full dynamic-programming problem is solved on one
    shared grid (warm-starting each solve from its neighbor) and the
    upper boundary at ``x`` is read off the velocity field.  The
    displacement is measured against the solver's own baseline at the
    smallest trustworthy eta (``cfg.eta_floor``), so grid bias common to
    both solves cancels.  The crossing level is rescaled per eta so the
    extraction crosses the velocity profile at the same physical offset
    beyond the boundary for every eta; otherwise the threshold geometry
    itself would masquerade as a shift.

    Points failing the smallness gauge (predicted shift not small against
    the band width) are excluded with a warning note, as are points whose
    measured displacement comes back non-positive.
    """
    etas = _as_positive_array(eta_list, "eta_list")
    _require_span(etas, 2.0, "eta_list")
    cfg = cfg or hjb.SolverConfig(max_iters=200, convergence_tol=1e-9)
    if etas[0] <= cfg.eta_floor:
        raise ConfigError(
            f"smallest eta {etas[0]:g} must exceed the baseline eta_floor "
            f"{cfg.eta_floor:g}")
    grid = grid if grid is not None else _sweep_grid(params)

    # asymptotic prediction (independent route, used for the gauge and
    # the reported prefactor comparison, never for the measurement)
    comp = band_zero.greens_particular(
        params, band_zero.solve_homogeneous(params))
    band = band_zero.find_band_zero(params, gamma_lin)
    theta0 = float(band.theta_plus_at(x))
    width = float(band.width(x))
    c = asymptotics.layer_constants(params, band, x)
    v3 = band_zero.third_derivative_at_band(comp, band, x)
    shift_coeff = c.wall_slope / v3  # predicted shift = coeff * eta^(1/3)

    excluded = []
    notes = []
    keep = []
    for eta in etas:
        gauge = shift_coeff * eta ** (1.0 / 3.0) / width
        if gauge > 0.2:
            excluded.append((float(eta), f"outside validity gauge "
                             f"(shift/width = {gauge:.2f} > 0.2)"))
            notes.append(f"excluded eta={eta:g}: validity gauge {gauge:.2f}")
        else:
            keep.append(float(eta))
    if len(keep) < 4:
        raise ConfigError(
            "fewer than 4 eta values survive the validity gauge")

    # solve ladder: largest eta cold, then walk down to the floor so each
    # solve warm-starts from its neighbor (the fields differ only near
    # the boundary)
    ladder = sorted(keep, reverse=True) + [cfg.eta_floor]
    fields: dict[float, hjb.ValueGrid] = {}
    V = None
    for eta in ladder:
        vg = hjb.solve_hjb(params, CostParams(gamma_lin=gamma_lin, eta=eta),
                           grid, cfg, initial=V)
        V = vg.V.values
        fields[eta] = vg
    # re-solve the cold rung warm from its neighbor: cold starts at the
    # stiff end can leave policy chatter that one warm pass removes
    if len(ladder) > 1:
        vg = hjb.solve_hjb(
            params, CostParams(gamma_lin=gamma_lin, eta=ladder[0]), grid,
            cfg, initial=fields[ladder[1]].V.values)
        fields[ladder[0]] = vg

    # per-eta crossing level: the trading speed near the boundary scales
    # like 1/sqrt(eta), so a level proportional to 1/sqrt(eta) crosses
    # every profile at the same physical offset beyond the boundary and
    # the offsets cancel in the baseline difference.  The proportionality
    # constant is calibrated once, on the baseline profile, a fixed
    # number of cells beyond its trading onset; each crossing is then an
    # external level cut through the profile, interpolated between nodes,
    # so sub-cell boundary motion survives.
    baseline = fields[cfg.eta_floor]
    level_ref = _crossing_level(baseline, x, crossing_cells)
    if not (level_ref > 0):
        raise ConvergenceError(
            "eta_shift_sweep: baseline velocity profile has no usable "
            "trading onset to calibrate the crossing level", history=[])
    level_scale = level_ref * math.sqrt(cfg.eta_floor)
    measured = {}
    for eta, vg in fields.items():
        level = level_scale / math.sqrt(eta)
        rel = level / max(np.abs(vg.v.values).max(), 1e-300)
        rel = min(max(rel, 1e-12), 0.5)
        measured[eta] = _boundary_at(vg, x, rel)

    base_theta = measured[cfg.eta_floor]
    vals, shifts, ratios = [], [], []
    for eta in keep:
        s = base_theta - measured[eta]
        if not np.isfinite(s) or s <= 0:
            excluded.append((float(eta), "non-positive measured shift"))
            notes.append(f"excluded eta={eta:g}: unusable shift {s:g}")
            continue
        vals.append(eta)
        shifts.append(s)
        ratios.append(s / (shift_coeff * eta ** (1.0 / 3.0)))
    if len(vals) < 2:
        raise ConvergenceError(
            "eta_shift_sweep: fewer than 2 usable shift measurements",
            history=shifts)
    if len(vals) < 4:
        notes.append("fit uses fewer than 4 points after exclusions")

    fit = loglog_fit(np.array(vals), np.array(shifts))
    low = fit.stderr > LOW_CONFIDENCE_STDERR
    if low:
        notes.append(f"LOW-CONFIDENCE: slope stderr {fit.stderr:.3f} > "
                     f"{LOW_CONFIDENCE_STDERR}")
    notes.append(f"baseline boundary at eta_floor: {base_theta:.9g} "
                 f"(zero-cost prediction {theta0:.9g})")
    return SweepResult(
        parameter="eta",
        values=np.array(vals),
        measured=np.array(shifts),
        excluded=tuple(excluded),
        fit=fit,
        reference_slope=1.0 / 3.0,
        predicted_prefactor=float(shift_coeff),
        prefactor_ratios=np.array(ratios),
        low_confidence=low,
        notes=tuple(notes),
    )


def _crossing_level(vg: hjb.ValueGrid, x: float, cells: float) -> float:
    """Velocity level a fixed number of cells beyond the trading onset.

    Reads the |v| profile at the x-node nearest ``x``, finds where it
    leaves zero on the upper side, and returns the interpolated level
    ``cells`` grid steps further out.  Using the profile's own local
    slope makes the subsequent threshold crossing sit at the same
    physical distance beyond the onset irrespective of eta.
    """
    grid = vg.grid
    i = int(np.argmin(np.abs(grid.x_nodes - x)))
    a = np.abs(vg.v.values[i])
    jc = int(np.searchsorted(grid.theta_nodes, grid.theta_nodes.mean()))
    nz = np.flatnonzero(a[jc:] > 0)
    if nz.size == 0:
        return math.nan
    jf = jc + int(nz[0])
    jt = jf + cells
    j0 = int(math.floor(jt))
    if j0 + 1 >= a.size:
        return math.nan
    frac = jt - j0
    return float((1 - frac) * a[j0] + frac * a[j0 + 1])


# ------------------------------------------------------- gamma width sweep


def gamma_width_sweep(params: ModelParams, gamma_list,
                      *, x: float = 0.0) -> SweepResult:
    """Band width versus linear cost, using the exact zero-eta solver.

    The width at ``x`` should grow like gamma^(1/3) with a prefactor
    proportional to (sigma^2/lam) * (gamma * omega^2 / sigma^4)^(1/3);
    the per-point ratio against that dimensional combination is reported
    so a drift out of the small-cost regime is visible.
    """
    gammas = _as_positive_array(gamma_list, "gamma_list")
    _require_span(gammas, 2.0, "gamma_list")

    # only width(x) is consumed, so a window around x suffices; wide bands
    # need a larger search pad, so retry the level-set with growing pads
    half = max(2.0 * abs(x), stationary_std(params))
    nodes = np.linspace(x - half, x + half, 41)

    vals, widths, ratios = [], [], []
    excluded, notes = [], []
    for g in gammas:
        band = None
        last_exc = None
        for pad in (0.15, 0.5, 1.5, 4.0):
            try:
                band = band_zero.find_band_zero(
                    params, float(g), x_nodes=nodes, pad_frac=pad)
                break
            except (RegimeError, ConvergenceError) as exc:
                last_exc = exc
        if band is None:
            excluded.append((float(g), f"band not found: {last_exc}"))
            notes.append(f"excluded gamma={g:g}: {last_exc}")
            continue
        w = float(band.width(x))
        dimensional = (params.sigma ** 2 / params.lam) * (
            float(g) * params.omega ** 2 / params.sigma ** 4) ** (1.0 / 3.0)
        vals.append(float(g))
        widths.append(w)
        ratios.append(w / dimensional)
    if len(vals) < 4:
        raise ConvergenceError(
            "gamma_width_sweep: fewer than 4 usable widths", history=widths)

    fit = loglog_fit(np.array(vals), np.array(widths))
    low = fit.stderr > LOW_CONFIDENCE_STDERR
    if low:
        notes.append(f"LOW-CONFIDENCE: slope stderr {fit.stderr:.3f} > "
                     f"{LOW_CONFIDENCE_STDERR}")
    r = np.array(ratios)
    spread = float(r.max() / r.min() - 1.0)
    if spread > 0.15:
        worst = vals[int(np.argmax(np.abs(np.log(r / np.median(r)))))]
        notes.append(
            f"prefactor ratio drifts {100 * spread:.1f}% across the sweep "
            f"(worst at gamma={worst:g}); the largest costs are leaving "
            "the small-cost regime")
    return SweepResult(
        parameter="gamma_lin",
        values=np.array(vals),
        measured=np.array(widths),
        excluded=tuple(excluded),
        fit=fit,
        reference_slope=1.0 / 3.0,
        predicted_prefactor=float(np.median(r)),
        prefactor_ratios=r,
        low_confidence=low,
        notes=tuple(notes),
    )


# ------------------------------------------------------------- regime map


@dataclass(frozen=True)
class RegimeReport:
    """Classification of one trading-speed profile into its four zones.

    ``labels`` entries are "NT", "LAYER", "SQRT", "LINEAR" or "?" per
    theta sample.  Slopes are medians of local log-log slopes over the
    samples assigned to each zone (NaN when a zone is empty).  The
    comparison table pairs the measured speed with the matched-expansion
    composite at the same theta samples.
    """

    x: float
    eta: float
    theta: np.ndarray
    v: np.ndarray
    labels: tuple
    layer_slope: float
    sqrt_slope: float
    linear_slope: float
    layer_width: float
    layer_width_predicted: float
    crossover: float
    crossover_predicted: float
    boundary: float
    v_composite: np.ndarray
    notes: tuple

    def zone_count(self) -> int:
        present = {l for l in self.labels if l != "?"}
        return len(present)


def _local_slopes(dist, mag):
    """Centered log-log slope at interior samples, NaN at the ends."""
    out = np.full(dist.size, np.nan)
    ld, lm = np.log(dist), np.log(mag)
    out[1:-1] = (lm[2:] - lm[:-2]) / (ld[2:] - ld[:-2])
    return out


def regime_map(params: ModelParams, costs: CostParams, x: float,
               *, grid: Grid2D | None = None,
               cfg: hjb.SolverConfig | None = None,
               vg: hjb.ValueGrid | None = None) -> RegimeReport:
    """Classify the solved speed profile at ``x`` into its four zones.

    Walking outward from the boundary the local slope of log|v| against
    log(distance-from-boundary) starts near 1 (layer), relaxes to 1/2
    (square-root zone), and the slope against log(theta) returns to 1 in
    the far field.  The zone assignment is a three-state walk in that
    order; boundaries between zones are recorded where the walk switches.
    """
    if costs.kind is not CostKind.QUADRATIC:
        raise ConfigError("regime_map models the quadratic speed cost")
    eta = costs.eta
    if not (eta > 0):
        raise ConfigError("regime_map needs eta > 0")

    comp = band_zero.greens_particular(
        params, band_zero.solve_homogeneous(params))
    band = band_zero.find_band_zero(params, gamma_lin=costs.gamma_lin)
    c = asymptotics.layer_constants(params, band, x)
    v3 = band_zero.third_derivative_at_band(comp, band, x)
    shift = (c.wall_slope / v3) * eta ** (1.0 / 3.0)
    layer_pred = c.wall_offset * eta ** (1.0 / 3.0)
    cross_pred = asymptotics.sqrt_linear_crossover(params, c)

    if vg is None:
        if grid is None:
            grid = _regime_grid(params, band, x, eta, layer_pred, cross_pred)
        cfg = cfg or hjb.SolverConfig(max_iters=200, convergence_tol=1e-9)
        vg = hjb.solve_hjb(params, costs, grid, cfg)

    sl = hjb.velocity_slice(vg, x)
    if not np.isfinite(sl.band_plus):
        raise RegimeError("no upper boundary found in the solved field; "
                          "cannot anchor regime distances")
    b = sl.band_plus
    mask = (sl.theta > b) & (np.abs(sl.v) > 0)
    theta = sl.theta[mask]
    mag = np.abs(sl.v[mask])
    if theta.size < 8:
        raise RegimeError("too few trading samples beyond the boundary to "
                          "classify regimes")
    d = theta - b
    slope_d = _local_slopes(d, mag)
    slope_t = _local_slopes(theta, mag)

    labels = []
    phase = "LAYER"
    for k in range(theta.size):
        s = slope_d[k]
        st = slope_t[k]
        if not np.isfinite(s):
            labels.append("?")
            continue
        if phase == "LAYER":
            if s >= 0.75:
                labels.append("LAYER")
                continue
            phase = "SQRT"
        if phase == "SQRT":
            if s >= 0.35 or not np.isfinite(st) or st > 1.25:
                labels.append("SQRT" if s >= 0.35 else "?")
                continue
            phase = "LINEAR"
        labels.append("LINEAR" if np.isfinite(st) else "?")

    labels = np.array(labels)
    notes = []

    def _median(sel, arr):
        return float(np.median(arr[sel])) if sel.any() else math.nan

    lay = labels == "LAYER"
    sq = labels == "SQRT"
    lin = labels == "LINEAR"
    layer_width = float(d[lay][-1]) if lay.any() else math.nan
    crossover = float(d[lin][0]) if lin.any() else math.nan
    if not lay.any():
        notes.append("layer zone unresolved at this grid spacing")
    if not lin.any():
        notes.append("far-field zone not reached by the theta domain")

    # composite prediction on the same samples (selling sector)
    vp = asymptotics.composite_velocity(params, comp, band, x, eta, theta)

    full_labels = np.full(sl.theta.size, "NT", dtype=object)
    full_labels[mask] = labels
    return RegimeReport(
        x=float(sl.x), eta=float(eta),
        theta=sl.theta, v=sl.v, labels=tuple(full_labels),
        layer_slope=_median(lay, slope_d),
        sqrt_slope=_median(sq, slope_d),
        linear_slope=_median(lin, slope_t),
        layer_width=layer_width,
        layer_width_predicted=float(layer_pred),
        crossover=crossover,
        crossover_predicted=float(cross_pred),
        boundary=float(b),
        v_composite=_embed(vp.v, mask, sl.theta.size),
        notes=tuple(notes),
    )


def _embed(values, mask, n):
    out = np.full(n, np.nan)
    out[mask] = values
    return out


def _regime_grid(params, band, x, eta, layer_pred, cross_pred) -> Grid2D:
    """Grid sized so the layer holds >= 8 cells and the far field fits."""
    x_half = max(3.0 * stationary_std(params), abs(x) * 1.5)
    theta0 = float(band.theta_plus_at(x))
    markowitz_max = abs(markowitz_position(params, x_half))
    theta_half = max(4.0 * markowitz_max, theta0 + 8.0 * cross_pred)
    htheta = layer_pred / 8.0
    ntheta = 2 * int(round(theta_half / htheta)) + 1
    if ntheta > 60001:
        raise ConfigError(
            f"regime grid needs {ntheta} theta nodes to resolve the layer; "
            "pass an explicit grid or a larger eta")
    return Grid2D.regular(-x_half, x_half, 31, -theta_half, theta_half,
                          ntheta)


def layer_width_ratio(params: ModelParams, costs: CostParams, x: float,
                      factor: float = 8.0, **kwargs) -> float:
    """Measured layer-width ratio between costs.eta and factor*costs.eta.

    The layer thickness should scale like eta^(1/3), so the returned
    ratio is close to factor**(1/3) (2 for the default factor 8).
    """
    if factor <= 1:
        raise ConfigError("factor must exceed 1")
    r1 = regime_map(params, costs, x, **kwargs)
    costs2 = CostParams(gamma_lin=costs.gamma_lin, eta=factor * costs.eta)
    r2 = regime_map(params, costs2, x, **kwargs)
    if not (np.isfinite(r1.layer_width) and np.isfinite(r2.layer_width)):
        raise RegimeError("layer width unresolved at one of the two etas")
    return float(r2.layer_width / r1.layer_width)


# --------------------------------------------------------------- validity


@dataclass(frozen=True)
class ValidityParams:
    """Desk-scale inputs for the expansion-validity calculator.

    gamma_coeff: dimensionless quadratic-cost number (the speed cost is
        eta = gamma_coeff * sigma * T^{3/2} / daily_volume);
    phi: risk as a fraction of daily volume (risk = phi * volume * sigma);
    daily_volume, risk_target: the dimensional anchors.
    """

    gamma_coeff: float
    phi: float
    daily_volume: float
    risk_target: float

    def __post_init__(self):
        for name in ("gamma_coeff", "phi", "daily_volume", "risk_target"):
            if not (getattr(self, name) > 0):
                raise ConfigError(f"{name} must be > 0")


@dataclass(frozen=True)
class ValidityReport:
    """Three equivalent checks that the quadratic cost is 'small'.

    All quantities are per unit horizon (one day).  The headline check is
    the volume-free product gamma_coeff*phi against its threshold; the
    model-form and risk-form restate the same inequality through eta.
    The two restatements differ by exactly 2 when the risk target equals
    the canonical sqrt(omega)*sigma^2/(2*lam); ``forms_ratio`` reports
    that factor as computed, as an internal consistency witness.
    """

    gamma_phi: float
    threshold: float
    margin_decades: float
    ok: bool
    eta_implied: float
    model_form: tuple  # (lhs, rhs, margin_decades) using lam
    risk_form: tuple   # (lhs, rhs, margin_decades) using risk_target
    forms_ratio: float
    notes: tuple


def validity_report(params: ModelParams, gamma_lin: float,
                    vp: ValidityParams) -> ValidityReport:
    """Evaluate whether (gamma_lin, eta) sit inside the expansion domain.

    The inequality gamma_coeff*phi << (gamma_lin/(sigma*sqrt(T)))^{4/3}
    * (omega*T)^{-5/6} is evaluated with T = 1 (inputs quoted per day);
    'much less' is operationalized as at least one decade of margin.
    """
    if not (gamma_lin > 0):
        raise ConfigError("gamma_lin must be > 0")
    if params.omega <= 0:
        raise RegimeError("validity threshold needs omega > 0; the "
                          "flat-signal limit has no reversion horizon")
    T = 1.0
    sig_T = params.sigma * math.sqrt(T)
    lhs = vp.gamma_coeff * vp.phi
    threshold = (gamma_lin / sig_T) ** (4.0 / 3.0) * (
        params.omega * T) ** (-5.0 / 6.0)
    margin = math.log10(threshold / lhs)

    eta = vp.gamma_coeff * params.sigma * T ** 1.5 / vp.daily_volume
    ratio = eta / gamma_lin ** (4.0 / 3.0)
    rhs_model = params.lam / (params.sigma * params.omega) ** (4.0 / 3.0)
    rhs_risk = params.sigma ** (2.0 / 3.0) / (
        vp.risk_target * params.omega ** (5.0 / 6.0))
    canonical_risk = math.sqrt(params.omega) * params.sigma ** 2 / (
        2.0 * params.lam)
    rhs_risk_canonical = params.sigma ** (2.0 / 3.0) / (
        canonical_risk * params.omega ** (5.0 / 6.0))

    notes = []
    if abs(vp.risk_target / canonical_risk - 1.0) > 0.5:
        notes.append(
            f"risk_target {vp.risk_target:g} is far from the canonical "
            f"sqrt(omega)*sigma^2/(2 lam) = {canonical_risk:g}; the "
            "model-form and risk-form margins will not coincide")
    return ValidityReport(
        gamma_phi=float(lhs),
        threshold=float(threshold),
        margin_decades=float(margin),
        ok=bool(margin >= 1.0),
        eta_implied=float(eta),
        model_form=(float(ratio), float(rhs_model),
                    float(math.log10(rhs_model / ratio))),
        risk_form=(float(ratio), float(rhs_risk),
                   float(math.log10(rhs_risk / ratio))),
        forms_ratio=float(rhs_risk_canonical / rhs_model),
        notes=tuple(notes),
    )
