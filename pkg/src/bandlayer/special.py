"""Numerical substrate: Airy functions, ODE integration, root finding.

The Airy pair Ai / Ai' is evaluated from scratch (power series plus
asymptotic expansions) rather than imported, so the boundary-layer
profile rests on code whose accuracy is verified inside this package.
Target: absolute error <= 1e-10 on [-15, 8].

Branch layout
-------------
* ``-7.5 <= u <= 5``  : Maclaurin series, accumulated in extended
  precision (numpy longdouble) because the series alternates with terms
  up to ~5e4 near the negative end of the range.
* ``u > 5``           : decaying asymptotic expansion.
* ``u < -7.5``        : oscillatory asymptotic expansion.  The classical
  switch at |u| = 5 is not accurate enough in double precision (only
  ~1e-8 there), hence the wider series range.

Both switch points carry an overlap band where the two branches are
cross-checked in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import BracketError, ConfigError, ConvergenceError

__all__ = [
    "airy_ai",
    "airy_ai_prime",
    "airy_first_max",
    "airy_log_derivative",
    "RootBracket",
    "find_root",
    "integrate_ode",
    "fd_weights",
    "SERIES_MAX",
    "SERIES_MIN",
]

# series/asymptotic switch points (see module docstring)
SERIES_MAX = 5.0
SERIES_MIN = -7.5

# Ai(0) = 3**(-2/3) / Gamma(2/3), Ai'(0) = -3**(-1/3) / Gamma(1/3)
_C1 = 3.0 ** (-2.0 / 3.0) / math.gamma(2.0 / 3.0)
_C2 = 3.0 ** (-1.0 / 3.0) / math.gamma(1.0 / 3.0)


def _ai_series(u: float):
    """Maclaurin series for (Ai, Ai') in longdouble arithmetic.

    Ai(u) = c1*f(u) - c2*g(u) with
    f = sum u^{3k} * prod, g = sum u^{3k+1} * prod; term recurrences
    t_{k+1} = t_k u^3 / ((3k+2)(3k+3)) for f and / ((3k+3)(3k+4)) for g.
    Derivatives are accumulated alongside.
    """
    x = np.longdouble(u)
    x3 = x * x * x
    tf = np.longdouble(1.0)   # current f term, u^{3k} coefficient chain
    tg = x                    # current g term
    f = tf
    g = tg
    fp = np.longdouble(0.0)   # d/du of f-series
    gp = np.longdouble(1.0)   # d/du of g-series
    k = 0
    while True:
        k += 1
        tf = tf * x3 / np.longdouble((3 * k - 1) * (3 * k))
        tg = tg * x3 / np.longdouble((3 * k) * (3 * k + 1))
        f += tf
        g += tg
        # term derivatives: d/du u^{3k} = 3k u^{3k-1}; factor out via tf/x
        if x != 0:
            fp += tf * np.longdouble(3 * k) / x
            gp += tg * np.longdouble(3 * k + 1) / x
        if abs(tf) < np.longdouble(1e-25) * (abs(f) + 1) and \
           abs(tg) < np.longdouble(1e-25) * (abs(g) + 1):
            break
        if k > 200:
            break
    ai = _C1 * float(f) - _C2 * float(g)
    aip = _C1 * float(fp) - _C2 * float(gp)
    return ai, aip


def _asymptotic_coeffs(n: int):
    """Coefficients u_k, v_k of the Airy asymptotic expansions."""
    us = [1.0]
    vs = [1.0]
    for k in range(1, n):
        uk = us[-1] * (6 * k - 5) * (6 * k - 3) * (6 * k - 1) / (216.0 * k * (2 * k - 1))
        us.append(uk)
        vs.append(uk * (6 * k + 1) / (1 - 6 * k))
    return us, vs


_UK, _VK = _asymptotic_coeffs(40)


def _sum_adaptive(terms):
    """Sum an asymptotic series, truncating at its smallest term."""
    total = 0.0
    prev = math.inf
    for t in terms:
        if abs(t) >= prev:
            break
        total += t
        prev = abs(t)
    return total


def _ai_asymptotic_pos(u: float):
    # DLMF 9.7.5/9.7.6 (decaying branch)
    xi = (2.0 / 3.0) * u ** 1.5
    pre = math.exp(-xi) / (2.0 * math.sqrt(math.pi) * u ** 0.25)
    ai = pre * _sum_adaptive(((-1) ** k * _UK[k] / xi ** k) for k in range(len(_UK)))
    prep = -(u ** 0.25) * math.exp(-xi) / (2.0 * math.sqrt(math.pi))
    aip = prep * _sum_adaptive(((-1) ** k * _VK[k] / xi ** k) for k in range(len(_VK)))
    return ai, aip


def _ai_asymptotic_neg(u: float):
    # DLMF 9.7.9/9.7.10 (oscillatory branch), u = -t with t > 0
    t = -u
    xi = (2.0 / 3.0) * t ** 1.5
    ph = xi - 0.25 * math.pi
    ceven = _sum_adaptive(((-1) ** k * _UK[2 * k] / xi ** (2 * k))
                          for k in range(len(_UK) // 2))
    codd = _sum_adaptive(((-1) ** k * _UK[2 * k + 1] / xi ** (2 * k + 1))
                         for k in range((len(_UK) - 1) // 2))
    ai = (math.cos(ph) * ceven + math.sin(ph) * codd) / (math.sqrt(math.pi) * t ** 0.25)
    deven = _sum_adaptive(((-1) ** k * _VK[2 * k] / xi ** (2 * k))
                          for k in range(len(_VK) // 2))
    dodd = _sum_adaptive(((-1) ** k * _VK[2 * k + 1] / xi ** (2 * k + 1))
                         for k in range((len(_VK) - 1) // 2))
    aip = (t ** 0.25) * (math.sin(ph) * deven - math.cos(ph) * dodd) / math.sqrt(math.pi)
    return ai, aip


def _ai_pair(u: float):
    if not math.isfinite(u):
        raise ConfigError(f"airy argument must be finite, got {u}")
    if u > SERIES_MAX:
        return _ai_asymptotic_pos(u)
    if u < SERIES_MIN:
        return _ai_asymptotic_neg(u)
    return _ai_series(u)


def airy_ai(u):
    """Airy function Ai(u); scalar or array argument."""
    if np.ndim(u):
        return np.array([_ai_pair(float(x))[0] for x in np.ravel(u)]).reshape(np.shape(u))
    return _ai_pair(float(u))[0]


def airy_ai_prime(u):
    """Derivative Ai'(u); scalar or array argument."""
    if np.ndim(u):
        return np.array([_ai_pair(float(x))[1] for x in np.ravel(u)]).reshape(np.shape(u))
    return _ai_pair(float(u))[1]


def airy_log_derivative(u: float) -> float:
    """Ai'(u)/Ai(u), safe for large positive u where Ai underflows.

    For u >= 40 uses the asymptotic log-derivative whose coefficients
    solve the Riccati recursion r' + r^2 = u order by order:
    -sqrt(u) - 1/(4u) + 5/(32 u^{5/2}) - 15/(64 u^4) + 1105/(2048 u^{11/2}).
    Error ~ u^{-7}, i.e. ~1e-11 relative at the switch.
    """
    if u < 40.0:
        ai, aip = _ai_pair(float(u))
        if ai == 0.0:
            raise ConfigError(f"Ai({u}) vanishes; log-derivative undefined")
        return aip / ai
    s = math.sqrt(u)
    return (-s - 1.0 / (4.0 * u) + 5.0 / (32.0 * u ** 2 * s)
            - 15.0 / (64.0 * u ** 4) + 1105.0 / (2048.0 * u ** 5 * s))


def airy_first_max() -> float:
    """Location of the first maximum of Ai on the negative axis.

    Largest root of Ai'(u) = 0, approximately -1.0187929716.
    """
    return find_root(airy_ai_prime, RootBracket(-2.0, 0.0, 1e-14))


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tol: float = 1e-12

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise ConfigError(f"bracket requires lo < hi, got ({self.lo}, {self.hi})")
        if not (self.tol > 0):
            raise ConfigError("bracket tol must be > 0")


def find_root(f, bracket: RootBracket) -> float:
    """Bracketed root of a scalar function (Brent's method)."""
    flo = f(bracket.lo)
    fhi = f(bracket.hi)
    if flo == 0.0:
        return bracket.lo
    if fhi == 0.0:
        return bracket.hi
    if flo * fhi > 0:
        raise BracketError(
            f"no sign change on [{bracket.lo}, {bracket.hi}]: "
            f"f(lo)={flo:.3e}, f(hi)={fhi:.3e}")
    return float(brentq(f, bracket.lo, bracket.hi,
                        xtol=bracket.tol, rtol=4 * np.finfo(float).eps))


class _Trajectory:
    """Dense ODE solution: sampled values plus an interpolant."""

    def __init__(self, sol):
        self._sol = sol
        self.ts = sol.t
        self.ys = sol.y

    def __call__(self, t):
        return self._sol.sol(t)

    @property
    def end_state(self):
        return self.ys[:, -1]


def integrate_ode(rhs, y0, span, tol=1e-10, t_eval=None, max_step=np.inf,
                  method="DOP853") -> _Trajectory:
    """Adaptive Runge-Kutta integration with dense output.

    Parameters
    ----------
    rhs : callable(t, y) -> dy/dt
    y0 : array_like initial state
    span : (t0, t1); t1 < t0 integrates backward
    tol : local relative error target per step

    Raises
    ------
    ConvergenceError
        on step-size underflow / solver failure, with diagnostics.
    """
    if not (tol > 0):
        raise ConfigError("ode tol must be > 0")
    sol = solve_ivp(rhs, span, np.atleast_1d(np.asarray(y0, dtype=float)),
                    method=method, rtol=tol, atol=tol * 1e-3,
                    dense_output=True, t_eval=t_eval, max_step=max_step)
    if not sol.success:
        raise ConvergenceError(
            f"ODE integration failed on span {span}: {sol.message} "
            f"(stiffness or step-size underflow; try a smaller domain or "
            f"a larger regularization)", history=sol.t)
    return _Trajectory(sol)


def fd_weights(z: float, xs, m: int) -> np.ndarray:
    """Finite-difference weights on arbitrary nodes (Fornberg's algorithm).

    Returns w such that sum(w * f(xs)) approximates the m-th derivative
    of f at z, exact for polynomials of degree len(xs)-1.
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    if m >= n:
        raise ConfigError(f"need more than {m} nodes for derivative order {m}")
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - z
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - z
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]
