"""Finite-difference solver for the full stationary control problem.

This module is the brute-force oracle: it never calls the Green's-function
band construction or the layer asymptotics.  The discounted optimality
equation

    rho V = mu(x) theta - lam theta^2 + H(V_theta) + L_x V

with H the maximized trading Hamiltonian (linear cost gamma_lin plus a
quadratic eta v^2 or power zeta |v|^{3/2} term) is discretized with a
monotone upwind scheme and solved either by policy iteration (default,
one sparse LU per policy) or by explicit pseudo-time marching.

Grid layout note: fields are (nx, ntheta) arrays; the sparse system is
ordered x-fastest so the matrix bandwidth is nx, which keeps the LU
factor banded and cheap even for very fine theta grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from scipy.linalg import solve_banded

from .errors import ConfigError, ConvergenceError, DomainError
from .model import (CostKind, CostParams, Grid2D, ModelParams, ScalarField,
                    drift, markowitz_position, markowitz_slope, nt_rhs)
from .special import fd_weights

__all__ = [
    "SolverConfig",
    "ValueGrid",
    "ExtractedBand",
    "VelocitySlice",
    "ContinuityReport",
    "solve_hjb",
    "solve_hjb_aligned",
    "aligned_grid",
    "extract_band",
    "velocity_slice",
    "c2_continuity_check",
]


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls for :func:`solve_hjb`.

    ``pseudo_time_step`` is a CFL safety factor in (0, 1], applied to the
    stability bound of the explicit scheme (and ignored by the policy
    scheme).  ``eta_floor`` is the smallest quadratic coefficient the
    solver accepts; below it the discrete control is too stiff to trust.
    """

    max_iters: int = 400
    pseudo_time_step: float = 0.8
    convergence_tol: float = 1e-9
    eta_floor: float = 1e-8
    scheme: str = "policy"
    damping: float = 1.0
    velocity_cap_factor: float = 10.0
    band_threshold: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not (0.0 < self.pseudo_time_step <= 1.0):
            raise ConfigError("pseudo_time_step (CFL factor) must be in (0, 1]")
        if not (self.convergence_tol > 0):
            raise ConfigError("convergence_tol must be > 0")
        if not (self.eta_floor > 0):
            raise ConfigError("eta_floor must be > 0")
        if self.scheme not in ("policy", "explicit"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not (0.0 < self.damping <= 1.0):
            raise ConfigError("damping must be in (0, 1]")
        if not (self.velocity_cap_factor > 0):
            raise ConfigError("velocity_cap_factor must be > 0")
        if not (0.0 < self.band_threshold < 1.0):
            raise ConfigError("band_threshold must be in (0, 1)")


@dataclass(frozen=True)
class ValueGrid:
    """Solved value function and optimal velocity on a Grid2D."""

    V: ScalarField
    v: ScalarField
    band_plus: np.ndarray
    band_minus: np.ndarray
    plus_mask: np.ndarray
    minus_mask: np.ndarray
    residual: float
    iterations: int
    eta: float
    # per-iteration max value update, for convergence post-mortems
    history: tuple = ()

    @property
    def grid(self) -> Grid2D:
        return self.V.grid


@dataclass(frozen=True)
class ExtractedBand:
    """Per-x no-trade boundaries located from the velocity field.

    ``theta_plus`` is the upper boundary, ``theta_minus`` the magnitude of
    the lower one (the no-trade interval is [-theta_minus, theta_plus]).
    Nodes where a crossing was not found carry mask False and NaN.
    """

    x_nodes: np.ndarray
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    plus_mask: np.ndarray
    minus_mask: np.ndarray
    threshold_abs: float
    vmax: float

    def width(self):
        return self.theta_plus + self.theta_minus


@dataclass(frozen=True)
class VelocitySlice:
    """theta-profile of the optimal velocity at one x node."""

    x: float
    theta: np.ndarray
    v: np.ndarray
    band_plus: float
    band_minus: float


@dataclass(frozen=True)
class ContinuityReport:
    """Two-grid refinement study of derivative jumps across the boundary."""

    x_nodes: np.ndarray
    jump1_coarse: np.ndarray
    jump1_fine: np.ndarray
    jump2_coarse: np.ndarray
    jump2_fine: np.ndarray
    first_order: float
    second_order: float
    collinear_flags: np.ndarray
    passed: bool


# ------------------------------------------------------------------ control

def _hamiltonian(costs: CostParams, d_plus, d_minus, cap):
    """Monotone numerical Hamiltonian and its argmax velocity.

    Buying (v > 0) is priced against the forward difference, selling
    against the backward one, so the resulting advection is upwind by
    construction.  ``d_plus[:, -1]`` and ``d_minus[:, 0]`` must be
    pre-filled with values that disable the missing candidate.
    """
    g = costs.gamma_lin
    s_buy = np.maximum(d_plus - g, 0.0)
    s_sell = np.maximum(-d_minus - g, 0.0)
    if costs.kind is CostKind.QUADRATIC:
        v_buy = np.minimum(s_buy / (2.0 * costs.eta), cap)
        v_sell = np.minimum(s_sell / (2.0 * costs.eta), cap)
    else:
        v_buy = np.minimum((2.0 * s_buy / (3.0 * costs.zeta)) ** 2, cap)
        v_sell = np.minimum((2.0 * s_sell / (3.0 * costs.zeta)) ** 2, cap)
    h_buy = _run_gain(costs, v_buy, s_buy)
    h_sell = _run_gain(costs, v_sell, s_sell)
    take_sell = h_sell > h_buy
    v = np.where(take_sell, -v_sell, v_buy)
    h = np.where(take_sell, h_sell, h_buy)
    return h, v


def _run_gain(costs: CostParams, speed, slack):
    """speed * slack minus the nonlinear cost, for speed >= 0."""
    if costs.kind is CostKind.QUADRATIC:
        return speed * slack - costs.eta * speed ** 2
    return speed * slack - costs.zeta * speed ** 1.5


def _velocity_cap(params: ModelParams, costs: CostParams, grid: Grid2D,
                  factor: float) -> float:
    span = float(grid.theta_nodes[-1] - grid.theta_nodes[0])
    mu_max = params.omega * max(abs(float(grid.x_nodes[0])),
                                abs(float(grid.x_nodes[-1])))
    slope = params.lam * span ** 2 + mu_max * span + costs.gamma_lin
    if costs.kind is CostKind.QUADRATIC:
        base = slope / (2.0 * costs.eta) + math.sqrt(params.lam / costs.eta) * span
    else:
        base = (2.0 * slope / (3.0 * costs.zeta)) ** 2
    return factor * max(base, 1.0)


# ----------------------------------------------------------- edge conditions

def _edge_slopes(params: ModelParams, costs: CostParams, grid: Grid2D):
    """Analytic far-field slope of V at the two theta edges, per x node.

    The rebalancing asymptote gives V_theta = -+gamma_lin -+ c(rad) with
    rad = lam (theta - theta*)^2 - lam w_est^2, theta* the cost-free
    position and w_est the small-cost half-width estimate.  Where rad <= 0
    the band may reach the edge and the asymptote is meaningless; those
    nodes fall back to a one-sided optimality row (mask False).
    """
    x = grid.x_nodes
    star = markowitz_position(params, x)
    if params.omega > 0:
        w_est = (params.omega / (2.0 * params.lam)) * (
            3.0 * costs.gamma_lin * params.sigma ** 2
            / (2.0 * params.omega)) ** (1.0 / 3.0)
    else:
        w_est = 0.0
    out = {}
    for side, theta_e in (("bot", float(grid.theta_nodes[0])),
                          ("top", float(grid.theta_nodes[-1]))):
        rad = params.lam * (theta_e - star) ** 2 - params.lam * w_est ** 2
        usable = rad > 0.0
        rad = np.where(usable, rad, 0.0)
        if costs.kind is CostKind.QUADRATIC:
            extra = 2.0 * np.sqrt(costs.eta * rad)
        else:
            extra = (27.0 / 4.0) ** (1.0 / 3.0) * costs.zeta ** (2.0 / 3.0) \
                * rad ** (1.0 / 3.0)
        sign = -1.0 if side == "top" else 1.0
        out[side] = (usable, sign * (costs.gamma_lin + extra))
    return out["bot"], out["top"]


# ------------------------------------------------------------- policy scheme

def _assemble(params: ModelParams, grid: Grid2D, v, bc_bot, bc_top):
    """Sparse operator rho I - v d/dtheta - L_x with upwind advection.

    Unknowns are ordered x-fastest (k = i + j*nx).  Rows at theta edges
    where the bc mask is set enforce the one-sided slope instead of the
    optimality equation; the returned callback patches the rhs.
    """
    nx, nt = grid.nx, grid.ntheta
    hx, ht = grid.hx, grid.htheta
    n = nx * nt
    mu = drift(params, grid.x_nodes)
    half_sig2 = 0.5 * params.sigma ** 2

    ii = np.arange(nx)
    jj = np.arange(nt)
    K = ii[:, None] + nx * jj[None, :]

    rows, cols, vals = [], [], []

    def add(r, c, a):
        rows.append(np.ravel(r))
        cols.append(np.ravel(c))
        vals.append(np.ravel(a))

    bot_mask, _ = bc_bot
    top_mask, _ = bc_top
    is_bc = np.zeros((nx, nt), dtype=bool)
    is_bc[:, 0] = bot_mask
    is_bc[:, -1] = top_mask
    free = ~is_bc

    diag = np.full((nx, nt), params.rho)

    # x-diffusion, interior x only (zero curvature at x edges)
    w = np.full((nx, nt), half_sig2 / hx ** 2)
    w[0, :] = 0.0
    w[-1, :] = 0.0
    diag += 2.0 * w
    m = free & (K % nx > 0)
    add(K[m], K[m] - 1, -w[m])
    m = free & (K % nx < nx - 1)
    add(K[m], K[m] + 1, -w[m])

    # x-advection: centered where the diffusion dominates (keeps the
    # M-matrix property when |mu| hx <= sigma^2, and second order), upwind
    # by drift sign otherwise.  Mean reversion points inward on domains
    # straddling 0 so the upwind neighbour normally exists at the edges;
    # outward drift at an edge (off-center domain) is dropped.
    mu2 = np.broadcast_to(mu[:, None], (nx, nt)).copy()
    mu2[-1, :] = np.minimum(mu2[-1, :], 0.0)
    mu2[0, :] = np.maximum(mu2[0, :], 0.0)
    centered = (np.abs(mu2) * hx <= params.sigma ** 2) & (w > 0)
    half = np.where(centered, 0.5 * mu2 / hx, 0.0)
    m = free & centered
    add(K[m], K[m] + 1, -half[m])
    add(K[m], K[m] - 1, half[m])
    a_fwd = np.where(centered, 0.0, np.maximum(mu2, 0.0) / hx)
    a_bwd = np.where(centered, 0.0, np.maximum(-mu2, 0.0) / hx)
    diag += a_fwd + a_bwd
    m = free & (a_fwd > 0)
    add(K[m], K[m] + 1, -a_fwd[m])
    m = free & (a_bwd > 0)
    add(K[m], K[m] - 1, -a_bwd[m])

    # theta-advection, upwind by velocity sign
    t_fwd = np.maximum(v, 0.0) / ht
    t_bwd = np.maximum(-v, 0.0) / ht
    t_fwd[:, -1] = 0.0   # no forward neighbour; control never buys here
    t_bwd[:, 0] = 0.0
    diag += t_fwd + t_bwd
    m = free & (t_fwd > 0)
    add(K[m], K[m] + nx, -t_fwd[m])
    m = free & (t_bwd > 0)
    add(K[m], K[m] - nx, -t_bwd[m])

    add(K[free], K[free], diag[free])

    # slope rows: (V_edge - V_inner)/ht = g, written with +1 diagonal
    if np.any(bot_mask):
        kb = K[:, 0][bot_mask]
        add(kb, kb, np.full(kb.size, 1.0 / ht))
        add(kb, kb + nx, np.full(kb.size, -1.0 / ht))
    if np.any(top_mask):
        kt = K[:, -1][top_mask]
        add(kt, kt, np.full(kt.size, 1.0 / ht))
        add(kt, kt - nx, np.full(kt.size, -1.0 / ht))

    A = sp.csc_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))

    def patch_rhs(b):
        # bottom row reads (V[0]-V[1])/ht = -g_bot, top (V[J]-V[J-1])/ht = g_top
        if np.any(bot_mask):
            b[K[:, 0][bot_mask]] = -bc_bot[1][bot_mask]
        if np.any(top_mask):
            b[K[:, -1][top_mask]] = bc_top[1][top_mask]
        return b

    return A, patch_rhs, is_bc


def _one_sided_diffs(V, ht):
    """Forward and backward theta-differences with candidate-disabling fill."""
    d_plus = np.empty_like(V)
    d_minus = np.empty_like(V)
    d_plus[:, :-1] = (V[:, 1:] - V[:, :-1]) / ht
    d_plus[:, -1] = -np.inf   # no buy candidate at the top edge
    d_minus[:, 1:] = (V[:, 1:] - V[:, :-1]) / ht
    d_minus[:, 0] = np.inf    # no sell candidate at the bottom edge
    return d_plus, d_minus


def _nt_initial(params: ModelParams, grid: Grid2D):
    """Closed-form all-no-trade value, the policy-iteration seed.

    With v = 0 the equation is linear with quadratic source and is solved
    exactly by -(lam/rho) theta^2 - omega/(rho+omega) x theta.
    """
    th = grid.theta_nodes[None, :]
    x = grid.x_nodes[:, None]
    return (-(params.lam / params.rho) * th ** 2
            - params.omega / (params.rho + params.omega) * x * th)


def _bellman_residual(params, costs, grid, V, cap, bc_bot, bc_top):
    """Max |rho V - r - H - L_x V| over optimality rows, from the final V."""
    d_plus, d_minus = _one_sided_diffs(V, grid.htheta)
    h, v = _hamiltonian(costs, d_plus, d_minus, cap)
    A, patch, is_bc = _assemble(params, grid, v, bc_bot, bc_top)
    r = _reward(params, costs, grid, v)
    b = patch(np.ravel(r, order="F").copy())
    res = A @ np.ravel(V, order="F") - b
    res = np.reshape(res, V.shape, order="F")
    return float(np.max(np.abs(res[~is_bc]))), v


def _reward(params: ModelParams, costs: CostParams, grid: Grid2D, v):
    th = grid.theta_nodes[None, :]
    x = grid.x_nodes[:, None]
    run = -nt_rhs(params, x, th)
    if costs.kind is CostKind.QUADRATIC:
        cost = costs.gamma_lin * np.abs(v) + costs.eta * v ** 2
    else:
        cost = costs.gamma_lin * np.abs(v) + costs.zeta * np.abs(v) ** 1.5
    return run - cost


def _solve_policy(params, costs, grid, cfg, V):
    cap = _velocity_cap(params, costs, grid, cfg.velocity_cap_factor)
    bc_bot, bc_top = _edge_slopes(params, costs, grid)
    history = []
    v = np.zeros_like(V)
    for it in range(1, cfg.max_iters + 1):
        d_plus, d_minus = _one_sided_diffs(V, grid.htheta)
        _, v = _hamiltonian(costs, d_plus, d_minus, cap)
        A, patch, _ = _assemble(params, grid, v, bc_bot, bc_top)
        b = patch(np.ravel(_reward(params, costs, grid, v), order="F").copy())
        lu = splu(A)
        flat = lu.solve(b)
        # one step of iterative refinement; the advection rows are stiff at
        # small eta and plain LU roundoff is enough to rattle the boundary
        flat += lu.solve(b - A @ flat)
        V_new = np.reshape(flat, V.shape, order="F")
        delta = float(np.max(np.abs(V_new - V)))
        history.append(delta)
        V = V + cfg.damping * (V_new - V)
        if delta <= cfg.convergence_tol * max(1.0, float(np.max(np.abs(V)))):
            residual, v = _bellman_residual(params, costs, grid, V, cap,
                                            bc_bot, bc_top)
            return V, v, residual, it, tuple(history)
    raise ConvergenceError(
        f"policy iteration did not converge in {cfg.max_iters} iterations "
        f"(last update {history[-1]:.3e})", history=history)


def _solve_explicit(params, costs, grid, cfg, V):
    cap = _velocity_cap(params, costs, grid, cfg.velocity_cap_factor)
    bc_bot, bc_top = _edge_slopes(params, costs, grid)
    (bot_mask, g_bot), (top_mask, g_top) = bc_bot, bc_top
    hx, ht = grid.hx, grid.htheta
    mu = drift(params, grid.x_nodes)[:, None]
    mu_max = float(np.max(np.abs(mu)))
    half_sig2 = 0.5 * params.sigma ** 2
    th = grid.theta_nodes[None, :]
    x = grid.x_nodes[:, None]
    run = -nt_rhs(params, x, th)
    history = []
    for it in range(1, cfg.max_iters + 1):
        d_plus, d_minus = _one_sided_diffs(V, ht)
        h, v = _hamiltonian(costs, d_plus, d_minus, cap)
        # x operator: centered diffusion inside, zero curvature at edges,
        # inward upwind advection (exists at both edges)
        lx = np.zeros_like(V)
        lx[1:-1, :] = half_sig2 * (V[2:, :] - 2 * V[1:-1, :] + V[:-2, :]) / hx ** 2
        fwd = (np.vstack([V[1:, :], V[-1:, :]]) - V) / hx
        bwd = (V - np.vstack([V[:1, :], V[:-1, :]])) / hx
        interior = np.zeros((V.shape[0], 1), dtype=bool)
        interior[1:-1] = True
        use_ctr = (np.abs(mu) * hx <= params.sigma ** 2) & interior
        lx += np.where(use_ctr, mu * 0.5 * (fwd + bwd),
                       np.where(mu >= 0, mu * fwd, mu * bwd))
        rate = (2 * half_sig2 / hx ** 2 + mu_max / hx
                + float(np.max(np.abs(v))) / ht + params.rho)
        dt = cfg.pseudo_time_step / rate
        upd = dt * (run + h + lx - params.rho * V)
        # edge cells pinned by the slope condition take their value from
        # the assignment below; their raw update is phantom and would keep
        # the convergence measure from ever reaching zero
        if np.any(bot_mask):
            upd[bot_mask, 0] = 0.0
        if np.any(top_mask):
            upd[top_mask, -1] = 0.0
        V = V + upd
        if np.any(bot_mask):
            V[bot_mask, 0] = V[bot_mask, 1] - ht * g_bot[bot_mask]
        if np.any(top_mask):
            V[top_mask, -1] = V[top_mask, -2] + ht * g_top[top_mask]
        delta = float(np.max(np.abs(upd)))
        history.append(delta)
        if delta <= cfg.convergence_tol * dt:
            residual, v = _bellman_residual(params, costs, grid, V, cap,
                                            bc_bot, bc_top)
            return V, v, residual, it, tuple(history)
    raise ConvergenceError(
        f"explicit marching did not converge in {cfg.max_iters} steps "
        f"(last update {history[-1]:.3e})", history=history)


def solve_hjb(params: ModelParams, costs: CostParams, grid: Grid2D,
              cfg: SolverConfig | None = None,
              initial: np.ndarray | None = None) -> ValueGrid:
    """Solve the stationary optimality equation on the given grid.

    ``initial`` warm-starts the iteration (shape (nx, ntheta)); the
    default seed is the closed-form all-no-trade value.  Raises
    ConvergenceError when the iteration budget runs out and ConfigError
    for ill-posed setups (non-uniform grid, eta below the floor).
    """
    cfg = cfg or SolverConfig()
    if not (grid.x_uniform and grid.theta_uniform):
        raise ConfigError("solver requires uniform grid spacings")
    if costs.kind is CostKind.QUADRATIC:
        if costs.eta < cfg.eta_floor:
            raise ConfigError(
                f"eta={costs.eta:g} below eta_floor={cfg.eta_floor:g}; "
                "the discrete control is not trustworthy there")
    elif costs.zeta <= 0.0:
        raise ConfigError("three-halves cost needs zeta > 0")

    if initial is not None:
        V = np.array(initial, dtype=float)
        if V.shape != (grid.nx, grid.ntheta):
            raise ConfigError("initial guess shape does not match grid")
    else:
        V = _nt_initial(params, grid)

    if cfg.scheme == "policy":
        V, v, residual, iters, hist = _solve_policy(params, costs, grid, cfg, V)
    else:
        V, v, residual, iters, hist = _solve_explicit(params, costs, grid, cfg, V)

    vg = ValueGrid(V=ScalarField(V, grid), v=ScalarField(v, grid),
                   band_plus=np.array([]), band_minus=np.array([]),
                   plus_mask=np.array([], dtype=bool),
                   minus_mask=np.array([], dtype=bool),
                   residual=residual, iterations=iters,
                   eta=costs.eta if costs.kind is CostKind.QUADRATIC else 0.0)
    eb = extract_band(vg, cfg.band_threshold)
    return ValueGrid(V=vg.V, v=vg.v,
                     band_plus=eb.theta_plus, band_minus=eb.theta_minus,
                     plus_mask=eb.plus_mask, minus_mask=eb.minus_mask,
                     residual=residual, iterations=iters, eta=vg.eta,
                     history=hist)


# --------------------------------------------------------------- extraction

def _longest_quiet_run(below: np.ndarray):
    """Start and end (inclusive) of the longest True run, or None."""
    if not np.any(below):
        return None
    padded = np.concatenate([[False], below, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    starts, ends = edges[::2], edges[1::2] - 1
    k = int(np.argmax(ends - starts))
    return int(starts[k]), int(ends[k])


def extract_band(vg: ValueGrid, threshold: float = 1e-4) -> ExtractedBand:
    """Locate the no-trade boundaries from the |v| field.

    The cut level is ``threshold * max|v|`` over the whole grid.  Per x
    node the longest below-level run is taken as the no-trade interval
    and each boundary is placed by linear interpolation between the two
    straddling nodes.  Runs touching a theta edge yield mask False on
    that side.
    """
    if not (0.0 < threshold < 1.0):
        raise ConfigError("threshold must be in (0, 1)")
    grid = vg.grid
    speed = np.abs(vg.v.values)
    vmax = float(np.max(speed))
    if vmax == 0.0:
        # no trading anywhere: the whole domain is quiet, no boundary
        nan = np.full(grid.nx, np.nan)
        false = np.zeros(grid.nx, dtype=bool)
        return ExtractedBand(grid.x_nodes, nan, nan.copy(), false,
                             false.copy(), 0.0, 0.0)
    t_abs = threshold * vmax
    th = grid.theta_nodes
    nx, nt = grid.nx, grid.ntheta
    tp = np.full(nx, np.nan)
    tm = np.full(nx, np.nan)
    pm = np.zeros(nx, dtype=bool)
    mm = np.zeros(nx, dtype=bool)
    for i in range(nx):
        a = speed[i]
        run = _longest_quiet_run(a < t_abs)
        if run is None:
            continue
        j0, j1 = run
        if j1 < nt - 1:
            frac = (t_abs - a[j1]) / (a[j1 + 1] - a[j1])
            tp[i] = th[j1] + frac * (th[j1 + 1] - th[j1])
            pm[i] = True
        if j0 > 0:
            frac = (t_abs - a[j0]) / (a[j0 - 1] - a[j0])
            tm[i] = -(th[j0] - frac * (th[j0] - th[j0 - 1]))
            mm[i] = True
    return ExtractedBand(grid.x_nodes, tp, tm, pm, mm, t_abs, vmax)


def velocity_slice(vg: ValueGrid, x: float) -> VelocitySlice:
    """theta-profile of v at the grid node nearest to x."""
    grid = vg.grid
    if not (grid.x_nodes[0] <= x <= grid.x_nodes[-1]):
        raise DomainError(f"x={x:g} outside the grid")
    i = int(np.argmin(np.abs(grid.x_nodes - x)))
    bp = float(vg.band_plus[i]) if vg.plus_mask.size and vg.plus_mask[i] \
        else math.nan
    bm = float(vg.band_minus[i]) if vg.minus_mask.size and vg.minus_mask[i] \
        else math.nan
    return VelocitySlice(x=float(grid.x_nodes[i]),
                         theta=grid.theta_nodes.copy(),
                         v=vg.v.values[i].copy(),
                         band_plus=bp, band_minus=bm)


# ------------------------------------------------------ tilted-frame scheme
#
# On a plain (x, theta) grid the no-trade boundary runs obliquely: one x
# step moves it by |slope| * hx in theta, and once that exceeds the width
# of the boundary region the centered x-stencil straddles structurally
# different theta-profiles and averages the boundary away.  Restoring it
# by refining x is quadratically expensive.  Solving in the tilted frame
#
#     U(x, psi) = V(x, psi + m x),      m = markowitz_slope(params)
#
# makes the boundary nearly flat in psi, so no x-resolution of the
# boundary is needed at all.  The signal noise moves x at fixed theta,
# i.e. along the in-grid diagonals (i +- 1, j -+ k) with k = m hx/hpsi,
# which must be an integer (enforced); both the diffusion and the
# mean-reversion drift act along those diagonals and are discretized on
# them exactly as the flat solver does along x rows.  Each diagonal is a
# tridiagonal chain; the trading advection couples a chain to its
# neighbours one-sidedly (buying reads the chain above, selling the one
# below, edge-slope rows read inward).  A descending chain sweep hands
# every buy-side row a fresh upstream value and an ascending sweep does
# the same for the sell side, so one down-up cycle of banded solves is
# a strong block Gauss-Seidel step: O(N) time and memory, no LU.  The
# residual left by a cycle must cross the no-trade belt through in-chain
# diffusion to feed back, so cycles contract geometrically; the outer
# policy loop iterates them to tolerance.
#
# Chains that hit a psi edge mid-domain are clipped there, and their end
# rows would lose the along-chain operator.  Both psi edges are required
# to lie in the active trading region (where the analytic slope of U is
# known), so the missing off-grid neighbour is reconstructed by slope
# extrapolation from the psi-edge node one x column over; that closure
# is exact in the far field and keeps the rows monotone.


def aligned_grid(params: ModelParams, x_half: float, psi_half: float,
                 hpsi: float, hx_target: float) -> Grid2D:
    """Build a tilted-frame grid whose x step is alignment-compliant.

    The x spacing is snapped to the nearest integer multiple of
    hpsi / |markowitz_slope|, never below one multiple, and the x count
    is made odd so x = 0 is a node.
    """
    m = markowitz_slope(params)
    if m == 0.0:
        raise ConfigError("tilted frame needs omega > 0 (nonzero slope)")
    unit = hpsi / abs(m)
    k = max(1, int(round(hx_target / unit)))
    hx = k * unit
    half_steps = max(1, int(round(x_half / hx)))
    nx = 2 * half_steps + 1
    npsi = 2 * max(1, int(round(psi_half / hpsi))) + 1
    return Grid2D.regular(-half_steps * hx, half_steps * hx, nx,
                          -(npsi // 2) * hpsi, (npsi // 2) * hpsi, npsi)


class _AlignedOps:
    """Per-grid constants for the tilted-frame sweep.

    Nodes are re-ordered chain-major (chains sorted by the theta value
    they carry, nodes within a chain by x); all arrays below live in
    that ordering.  ``flat`` maps back to C-order (i * ntheta + j).
    """

    def __init__(self, params: ModelParams, grid: Grid2D):
        m = markowitz_slope(params)
        if m == 0.0:
            raise ConfigError(
                "tilted frame needs omega > 0; use solve_hjb instead")
        hx, hp = grid.hx, grid.htheta
        kf = m * hx / hp
        K = int(round(kf))
        if K == 0 or abs(kf - K) > 1e-8 * max(1.0, abs(kf)):
            raise ConfigError(
                f"x step {hx:g} is not an integer number of offset cells "
                f"(slope {m:g}, offset step {hp:g}); build the grid with "
                "aligned_grid()")
        self.m, self.K = m, K
        nx, nt = grid.nx, grid.ntheta
        ii, jj = np.meshgrid(np.arange(nx), np.arange(nt), indexing="ij")
        c = (jj + K * ii).ravel()
        c -= c.min()
        ncl = int(c.max()) + 1
        order = np.lexsort((ii.ravel(), c))
        self.c_sorted = c[order]
        self.flat = (ii.ravel() * nt + jj.ravel())[order]
        self.ptr = np.searchsorted(self.c_sorted, np.arange(ncl + 1))
        self.nchains = ncl

        pos = np.arange(order.size) - self.ptr[self.c_sorted]
        length = self.ptr[self.c_sorted + 1] - self.ptr[self.c_sorted]
        has_prev = pos > 0
        has_next = pos < length - 1

        i_s = ii.ravel()[order]
        j_s = jj.ravel()[order]
        # chain ends that are not true x edges were clipped by the psi
        # window; their missing neighbour is reconstructed from the psi
        # edge one x column over (see the note above)
        start_clip = ~has_prev & (i_s > 0)
        end_clip = ~has_next & (i_s < nx - 1)
        if np.any(start_clip & end_clip):
            raise ConfigError(
                "offset window narrower than one tilt step; widen the "
                "psi domain or coarsen x")
        avail = (has_prev | start_clip) & (has_next | end_clip)

        x_s = grid.x_nodes[i_s]
        b = drift(params, x_s)
        half_sig2 = 0.5 * params.sigma ** 2
        D = np.where(avail, half_sig2 / hx ** 2, 0.0)
        centered = (np.abs(b) * hx <= params.sigma ** 2) & avail
        half = np.where(centered, 0.5 * b / hx, 0.0)
        a_fwd = np.where(~centered & (has_next | end_clip),
                         np.maximum(b, 0.0) / hx, 0.0)
        a_bwd = np.where(~centered & (has_prev | start_clip),
                         np.maximum(-b, 0.0) / hx, 0.0)

        coeff_next = D + half + a_fwd
        coeff_prev = D - half + a_bwd
        self.diag0 = params.rho + 2.0 * D + a_fwd + a_bwd
        self.upper = np.where(has_next, -coeff_next, 0.0)
        self.lower = np.where(has_prev, -coeff_prev, 0.0)

        # clip closure: weight, gather index, distance past the edge and
        # which edge's slope to extrapolate with
        self.w2 = np.where(end_clip, coeff_next, 0.0) \
            + np.where(start_clip, coeff_prev, 0.0)
        j_miss = np.where(end_clip, j_s - K, np.where(start_clip, j_s + K, 0))
        miss_bot = j_miss < 0
        dist = np.where(miss_bot, -j_miss, j_miss - (nt - 1))
        any_clip = start_clip | end_clip
        self.clip_dist = np.where(any_clip, dist, 0) * hp
        self.clip_bot = miss_bot & any_clip
        i_nb = np.where(end_clip, i_s + 1, np.where(start_clip, i_s - 1, i_s))
        self.nb2 = np.clip(i_nb, 0, nx - 1) * nt \
            + np.where(self.clip_bot, 0, nt - 1)

        self.i_s, self.j_s = i_s, j_s
        self.top_row = j_s == nt - 1
        self.bot_row = j_s == 0
        # cross-chain neighbour in psi (clipped; weight is zero when the
        # neighbour does not exist, so the clipped index is never used)
        self.nb_up = i_s * nt + np.minimum(j_s + 1, nt - 1)
        self.nb_dn = i_s * nt + np.maximum(j_s - 1, 0)
        th = grid.theta_nodes[j_s] + m * x_s
        self.run = -nt_rhs(params, x_s, th)
        self.hp, self.hx = hp, hx
        self.grid = grid

    def edge_conditions(self, params: ModelParams, costs: CostParams):
        """x-uniform slope magnitudes at the psi edges (offset frame
        keeps theta - theta* constant along each edge)."""
        grid = self.grid
        if params.omega > 0:
            w_est = (params.omega / (2.0 * params.lam)) * (
                3.0 * costs.gamma_lin * params.sigma ** 2
                / (2.0 * params.omega)) ** (1.0 / 3.0)
        else:
            w_est = 0.0
        out = []
        for psi_e in (float(grid.theta_nodes[0]),
                      float(grid.theta_nodes[-1])):
            rad = params.lam * psi_e ** 2 - params.lam * w_est ** 2
            usable = rad > 0.0
            if costs.kind is CostKind.QUADRATIC:
                extra = 2.0 * math.sqrt(costs.eta * max(rad, 0.0))
            else:
                extra = (27.0 / 4.0) ** (1.0 / 3.0) \
                    * costs.zeta ** (2.0 / 3.0) * max(rad, 0.0) ** (1.0 / 3.0)
            out.append((usable, costs.gamma_lin + extra))
        return out[0], out[1]


def _aligned_terms(ops: _AlignedOps, costs: CostParams, v_s, slope_top,
                   slope_bot, g_top, g_bot, rhs_clip):
    """Per-node system pieces for one policy evaluation.

    Returns (diag, w_cross, nb, rhs): the diagonal, the weight and
    C-order index of the cross-chain value each row reads, and the
    right-hand side without that term (but with the constant part of
    the clip closure folded in).
    """
    hp = ops.hp
    av = np.abs(v_s) / hp
    if costs.kind is CostKind.QUADRATIC:
        cost = costs.gamma_lin * np.abs(v_s) + costs.eta * v_s ** 2
    else:
        cost = costs.gamma_lin * np.abs(v_s) + costs.zeta * np.abs(v_s) ** 1.5
    diag = ops.diag0 + av
    rhs = ops.run - cost + rhs_clip
    w_cross = av.copy()
    nb = np.where(v_s > 0.0, ops.nb_up, ops.nb_dn)

    # slope rows replace the optimality row: (U_edge - U_inward)/hp = -g,
    # since the value falls off away from the band on both sides
    for mask, g, nbr in ((slope_top, g_top, ops.nb_dn),
                         (slope_bot, g_bot, ops.nb_up)):
        if np.any(mask):
            diag[mask] = 1.0 / hp
            w_cross[mask] = 1.0 / hp
            nb[mask] = nbr[mask]
            rhs[mask] = -g

    return diag, w_cross, nb, rhs


def _aligned_cycle(ops: _AlignedOps, upper, lower, w2, diag, w_cross, nb,
                   rhs, U_flat):
    """One symmetric block Gauss-Seidel cycle over the chains.

    Solves every chain's tridiagonal system twice, first in descending
    then in ascending chain order, reading neighbour chains' freshest
    values in place.  The descending pass resolves all buy-side
    couplings exactly (each reads a chain already solved in the pass),
    the ascending pass the sell-side ones.  Returns the updated copy.
    """
    W = U_flat.copy()
    ptr, flat = ops.ptr, ops.flat
    nb2 = ops.nb2

    def solve_chain(c):
        s0, s1 = ptr[c], ptr[c + 1]
        L = s1 - s0
        if L == 0:
            return
        sl = slice(s0, s1)
        r = rhs[sl] + w_cross[sl] * W[nb[sl]] + w2[sl] * W[nb2[sl]]
        if L == 1:
            W[flat[s0]] = r[0] / diag[s0]
            return
        ab = np.empty((3, L))
        ab[0, 0] = 0.0
        ab[0, 1:] = upper[s0:s1 - 1]
        ab[1] = diag[sl]
        ab[2, :-1] = lower[s0 + 1:s1]
        ab[2, -1] = 0.0
        W[flat[sl]] = solve_banded((1, 1), ab, r,
                                   overwrite_ab=True, overwrite_b=True,
                                   check_finite=False)

    for c in range(ops.nchains - 1, -1, -1):
        solve_chain(c)
    for c in range(ops.nchains):
        solve_chain(c)
    return W


def _aligned_residual(ops: _AlignedOps, upper, lower, diag, w_cross, nb,
                      rhs, slope_rows, U_flat):
    """Max |A U - rhs| over optimality rows, in the sweep's own algebra."""
    U_s = U_flat[ops.flat]
    nxt = np.zeros_like(U_s)
    prv = np.zeros_like(U_s)
    nxt[:-1] = U_s[1:]
    prv[1:] = U_s[:-1]
    res = (diag * U_s + upper * nxt + lower * prv
           - w_cross * U_flat[nb] - rhs)
    return float(np.max(np.abs(res[~slope_rows])))


def _solve_aligned(params, costs, grid, cfg, U):
    ops = _AlignedOps(params, grid)
    cap = _velocity_cap(params, costs, grid, cfg.velocity_cap_factor)
    (bot_usable, g_bot), (top_usable, g_top) = \
        ops.edge_conditions(params, costs)
    slope_top = ops.top_row & top_usable
    slope_bot = ops.bot_row & bot_usable
    slope_rows = slope_top | slope_bot
    upper = np.where(slope_rows, 0.0, ops.upper)
    lower = np.where(slope_rows, 0.0, ops.lower)

    history = []
    U_flat = U.ravel().copy()
    nt = grid.ntheta

    def stage(U_flat):
        Um = U_flat.reshape(grid.nx, nt)
        d_plus, d_minus = _one_sided_diffs(Um, ops.hp)
        _, v = _hamiltonian(costs, d_plus, d_minus, cap)
        v_s = v.ravel()[ops.flat]
        terms = _aligned_terms(ops, costs, v_s, slope_top, slope_bot,
                               g_top, g_bot)
        return v, terms

    for it in range(1, cfg.max_iters + 1):
        _, (diag, w_cross, nb, rhs) = stage(U_flat)
        W = _aligned_cycle(ops, upper, lower, diag, w_cross, nb, rhs,
                           U_flat)
        delta = float(np.max(np.abs(W - U_flat)))
        history.append(delta)
        U_flat = U_flat + cfg.damping * (W - U_flat)
        if delta <= cfg.convergence_tol * max(1.0, float(np.max(np.abs(U_flat)))):
            v, (diag, w_cross, nb, rhs) = stage(U_flat)
            residual = _aligned_residual(ops, upper, lower, diag, w_cross,
                                         nb, rhs, slope_rows, U_flat)
            return U_flat.reshape(grid.nx, nt), v, residual, it, \
                tuple(history)
    raise ConvergenceError(
        f"tilted-frame iteration did not converge in {cfg.max_iters} "
        f"iterations (last update {history[-1]:.3e})", history=history)


def solve_hjb_aligned(params: ModelParams, costs: CostParams, grid: Grid2D,
                      cfg: SolverConfig | None = None,
                      initial: np.ndarray | None = None) -> ValueGrid:
    """Solve the optimality equation in the tilted (offset) frame.

    ``grid.theta_nodes`` are offsets psi from the cost-free position
    line: the physical position at node (i, j) is psi_j + slope * x_i.
    The x spacing must be an integer multiple of hpsi/|slope| (see
    :func:`aligned_grid`).  The returned ValueGrid, including its band
    arrays, lives in the offset frame; at x = 0 offsets and positions
    coincide.  Use this variant when the boundary structure must be
    resolved much below |slope| * hx, e.g. for small-eta boundary-shift
    measurements; use :func:`solve_hjb` for plain-frame fields.
    """
    cfg = cfg or SolverConfig()
    if not (grid.x_uniform and grid.theta_uniform):
        raise ConfigError("solver requires uniform grid spacings")
    if costs.kind is CostKind.QUADRATIC:
        if costs.eta < cfg.eta_floor:
            raise ConfigError(
                f"eta={costs.eta:g} below eta_floor={cfg.eta_floor:g}; "
                "the discrete control is not trustworthy there")
    elif costs.zeta <= 0.0:
        raise ConfigError("three-halves cost needs zeta > 0")

    if initial is not None:
        U = np.array(initial, dtype=float)
        if U.shape != (grid.nx, grid.ntheta):
            raise ConfigError("initial guess shape does not match grid")
    else:
        m = markowitz_slope(params)
        th = grid.theta_nodes[None, :] + m * grid.x_nodes[:, None]
        x = grid.x_nodes[:, None]
        U = (-(params.lam / params.rho) * th ** 2
             - params.omega / (params.rho + params.omega) * x * th)

    U, v, residual, iters, hist = _solve_aligned(params, costs, grid, cfg, U)
    vg = ValueGrid(V=ScalarField(U, grid), v=ScalarField(v, grid),
                   band_plus=np.array([]), band_minus=np.array([]),
                   plus_mask=np.array([], dtype=bool),
                   minus_mask=np.array([], dtype=bool),
                   residual=residual, iterations=iters,
                   eta=costs.eta if costs.kind is CostKind.QUADRATIC else 0.0)
    eb = extract_band(vg, cfg.band_threshold)
    return ValueGrid(V=vg.V, v=vg.v,
                     band_plus=eb.theta_plus, band_minus=eb.theta_minus,
                     plus_mask=eb.plus_mask, minus_mask=eb.minus_mask,
                     residual=residual, iterations=iters, eta=vg.eta,
                     history=hist)


# ---------------------------------------------------------------- continuity

def _boundary_jumps(vg: ValueGrid, stencil: int = 4):
    """One-sided extrapolated V_theta and V_thetatheta jumps at the upper
    boundary, per x node (NaN where the boundary is missing or too close
    to a theta edge for the stencils)."""
    grid = vg.grid
    V = vg.V.values
    th = grid.theta_nodes
    nx = grid.nx
    j1 = np.full(nx, np.nan)
    j2 = np.full(nx, np.nan)
    for i in range(nx):
        if not vg.plus_mask[i]:
            continue
        tb = vg.band_plus[i]
        jb = int(np.searchsorted(th, tb))
        if jb - stencil < 0 or jb + 1 + stencil > th.size:
            continue
        inside = slice(jb - stencil, jb)
        outside = slice(jb + 1, jb + 1 + stencil)
        d1_in = float(fd_weights(tb, th[inside], 1) @ V[i, inside])
        d1_out = float(fd_weights(tb, th[outside], 1) @ V[i, outside])
        d2_in = float(fd_weights(tb, th[inside], 2) @ V[i, inside])
        d2_out = float(fd_weights(tb, th[outside], 2) @ V[i, outside])
        j1[i] = abs(d1_out - d1_in)
        j2[i] = abs(d2_out - d2_in)
    return j1, j2


def c2_continuity_check(coarse: ValueGrid, fine: ValueGrid) -> ContinuityReport:
    """Grid-refinement study of smoothness across the no-trade boundary.

    ``fine`` must be the same problem re-solved with the theta spacing
    halved (same x nodes).  Extrapolates first and second theta
    derivatives to the extracted boundary from both sides on each grid;
    the decay rate of the jumps under refinement is the smoothness order.
    Passes when the second-derivative jump decays at order >= 1 and the
    first-derivative jump at order >= 2 (or no boundary exists at all).
    """
    gc, gf = coarse.grid, fine.grid
    if gc.nx != gf.nx or not np.allclose(gc.x_nodes, gf.x_nodes):
        raise ConfigError("the two solves must share x nodes")
    if not math.isclose(gf.htheta, 0.5 * gc.htheta, rel_tol=0.02):
        raise ConfigError("fine grid must halve the theta spacing")

    j1c, j2c = _boundary_jumps(coarse)
    j1f, j2f = _boundary_jumps(fine)
    valid = np.isfinite(j1c) & np.isfinite(j1f) & (j1f > 0) & (j2f > 0)

    if not np.any(valid):
        # degenerate all-quiet case: nothing to jump across
        zeros = np.zeros(gc.nx)
        return ContinuityReport(gc.x_nodes, zeros, zeros.copy(),
                                zeros.copy(), zeros.copy(),
                                math.nan, math.nan,
                                np.zeros(gc.nx, dtype=bool), True)

    # boundary slope in x, to flag nodes where it is nearly flat
    # (the smoothness argument degrades where the boundary runs along x)
    slope = np.gradient(coarse.band_plus, gc.x_nodes)
    ref = np.nanmedian(np.abs(slope[valid])) if np.any(valid) else 0.0
    collinear = np.abs(slope) < 0.1 * ref
    use = valid & ~collinear
    if not np.any(use):
        use = valid

    p1 = float(np.nanmedian(np.log2(j1c[use] / j1f[use])))
    p2 = float(np.nanmedian(np.log2(j2c[use] / j2f[use])))
    return ContinuityReport(gc.x_nodes, j1c, j1f, j2c, j2f, p1, p2,
                            collinear, bool(p2 >= 1.0 and p1 >= 2.0))
