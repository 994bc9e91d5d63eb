"""Critical barrier constants and the blow-down ODE.

Everything here is deterministic. The central objects are

* ``a_alpha = (1 + 1/alpha) * (alpha (1 + alpha) C)**(1/(1+alpha))``, the
  minimum of ``f(x) = x + (1 + alpha) C / x**alpha``;
* ``r_a``, the larger root of ``f(x) = a`` for ``a > a_alpha``;
* the ODE ``h'(t) = a/(1+alpha) t**(-alpha/(1+alpha)) - C / h**alpha`` whose
  blow-down time fixes the decay constant of the survival probability below
  the critical barrier;
* the corridor functions of the two-barrier lower bound and their
  combination ``G_lambda``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .spine_law import check_alpha

def _check_positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class CriticalParams:
    alpha: float
    cstar: float
    a: float

    def __post_init__(self):
        check_alpha(self.alpha)
        _check_positive(cstar=self.cstar, a=self.a)


def a_alpha(alpha: float, cstar: float) -> float:
    alpha = check_alpha(alpha)
    _check_positive(cstar=cstar)
    return (1.0 + 1.0 / alpha) * (alpha * (1.0 + alpha) * cstar) ** (1.0 / (1.0 + alpha))


def finite_variance_a_hat(sigma2: float) -> float:
    """Critical coefficient of the ``a n**(1/3)`` barrier in the finite-variance case."""
    return 1.5 * (3.0 * math.pi**2 * sigma2) ** (1.0 / 3.0)


def barrier_tradeoff_f(x, alpha: float, cstar: float):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("f is defined for x > 0 only")
    out = x + (1.0 + alpha) * cstar / x**alpha
    return float(out) if out.ndim == 0 else out


def argmin_f(alpha: float, cstar: float) -> float:
    return alpha * a_alpha(alpha, cstar) / (1.0 + alpha)


def r_a(a: float, alpha: float, cstar: float, tol: float = 1e-10) -> float:
    """Larger solution of ``a = x + (1 + alpha) C / x**alpha``.

    Bisection on ``[argmin_f, a]`` where ``f`` is increasing and
    ``f(a) > a``. Requires ``a > a_alpha``.
    """
    crit = a_alpha(alpha, cstar)
    if a <= crit:
        raise ValueError(f"a={a} must exceed a_alpha={crit} for two real roots")
    lo, hi = argmin_f(alpha, cstar), float(a)
    g = lambda x: barrier_tradeoff_f(x, alpha, cstar) - a
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15 * hi:
            break
    root = 0.5 * (lo + hi)
    if abs(g(root)) > tol:
        # bisection stalls in floating point only when f is extremely steep
        root = optimize.brentq(g, argmin_f(alpha, cstar), a, xtol=1e-15)
    return root


# ---------------------------------------------------------------------------
# the ODE
# ---------------------------------------------------------------------------

@dataclass
class OdeSolveResult:
    """Solution of the blow-down ODE started from ``h(0) = h0``.

    ``t_max`` is ``inf`` and ``blew_down`` is False when ``h`` did not reach
    the floor within the time budget. ``K`` is ``h_eps(0)`` of the solution
    rescaled to blow down at time one, i.e. ``h0 * t_max**(-1/(1+alpha))``
    when ``h0 = 1`` (see :meth:`rescaled`).
    """

    t_grid: np.ndarray
    h_values: np.ndarray
    integral: np.ndarray
    t_max: float
    K: float
    conserved_residual: float
    blew_down: bool
    a: float
    alpha: float
    cstar: float
    h0: float
    _sol: object = None

    _tail: object = None
    _s_switch: float = math.inf

    def h(self, t):
        """Dense interpolant of ``h`` on ``[0, t_max]`` (zero at and beyond ``t_max``)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = np.clip(t, 0.0, None) ** (1.0 / (1.0 + self.alpha))
        out = np.empty_like(t)
        early = s <= self._s_switch
        if np.any(early):
            out[early] = self._sol(s[early])[0]
        if np.any(~early):
            out[~early] = [self._h_tail(x) for x in t[~early]]
        return out

    def _h_tail(self, t):
        if t >= self.t_max:
            return 0.0
        h_hi = self.h_values[self.t_grid <= self._s_switch ** (1 + self.alpha)][-1]
        return optimize.brentq(lambda hh: self._tail(hh)[0] - t, 0.0, h_hi, xtol=1e-15)

    def rescaled(self) -> Callable:
        """``h_eps(t) = t_max**(-1/(1+alpha)) * h(t_max * t)``, blowing down at ``t = 1``."""
        if not self.blew_down:
            raise ValueError("no blow-down: the rescaled solution is undefined")
        q = self.t_max ** (-1.0 / (1.0 + self.alpha))
        tm = self.t_max

        def h_eps(t):
            t = np.asarray(t, dtype=float)
            inside = t < 1.0
            val = np.zeros_like(t)
            if np.any(inside):
                val[inside] = q * np.maximum(self.h(tm * t[inside]), 0.0)
            return val

        return h_eps


def solve_h(a: float, alpha: float, cstar: float, h0: float = 1.0, tol: float = 1e-12,
            t_budget: float | None = None, h_switch: float = 1e-2) -> OdeSolveResult:
    """Integrate ``h' = a/(1+alpha) t**(-alpha/(1+alpha)) - cstar / h**alpha``.

    The forcing is unbounded at ``t = 0``. Writing ``t = s**(1+alpha)`` turns
    the system into ``dh/ds = a - (1+alpha) cstar s**alpha / h**alpha``,
    which is regular at ``s = 0``; the running integral of ``h**-alpha`` is
    carried as a second state so the conserved quantity
    ``-a t**(1/(1+alpha)) + h + cstar * int_0^t h**-alpha`` can be audited.

    Near blow-down ``h`` falls like ``(t_max - t)**(1/(1+alpha))`` and time
    stepping stalls. Once ``h`` drops to ``h_switch * h0`` the roles are
    swapped: ``t`` and the integral are integrated as functions of ``h`` down
    to ``h = 0``, where ``dt/dh ~ -h**alpha / cstar`` is smooth, giving
    ``t_max`` directly.
    """
    alpha = check_alpha(alpha)
    _check_positive(h0=h0, cstar=cstar)
    if a < 0:
        raise ValueError("a must be non-negative")
    if t_budget is None:
        t_budget = 1e8 / ((1.0 + alpha) * cstar)
    p = 1.0 + alpha

    def rhs(s, y):
        h = max(y[0], 1e-300)
        g = p * s**alpha / h**alpha
        return [a - cstar * g, g]

    def switch_event(s, y):
        return y[0] - h_switch * h0

    switch_event.terminal = True
    switch_event.direction = -1
    s_end = t_budget ** (1.0 / p)
    sol = integrate.solve_ivp(rhs, (0.0, s_end), [h0, 0.0], method="DOP853", rtol=tol,
                              atol=tol * 1e-3 * h0, events=switch_event, dense_output=True)
    if sol.status == -1:
        raise RuntimeError(f"ODE integration failed: {sol.message}")
    s, h, integral = sol.t, sol.y[0], sol.y[1]
    t = s**p
    residual = float(np.max(np.abs(-a * s + h + cstar * integral - h0)))
    blew_down = sol.status == 1
    if not blew_down:
        return OdeSolveResult(t, h, integral, math.inf, 0.0, residual, False,
                              a, alpha, cstar, h0, sol.sol)

    def rhs_h(hh, y):
        tt = max(y[0], 1e-300)
        slope = a / p * tt ** (-alpha / p) - cstar / hh**alpha if hh > 0 else -math.inf
        dt = 1.0 / slope
        return [dt, dt / hh**alpha if hh > 0 else -1.0 / cstar]

    h_f = float(sol.y_events[0][0][0])
    if a / p * float(sol.t_events[0][0]) ** (-alpha) - cstar / h_f**alpha >= 0:
        raise RuntimeError("h is not decreasing at the switch point")
    tail = integrate.solve_ivp(rhs_h, (h_f, 0.0), [float(sol.t_events[0][0]) ** p,
                                                   float(sol.y_events[0][0][1])],
                               method="DOP853", rtol=tol, atol=tol * 1e-3 * h0,
                               dense_output=True)
    if tail.status != 0:
        raise RuntimeError(f"ODE integration failed near blow-down: {tail.message}")
    t_tail, i_tail = tail.y
    h_tail = tail.t
    residual = max(residual, float(np.max(np.abs(
        -a * t_tail ** (1.0 / p) + h_tail + cstar * i_tail - h0))))
    t_max = float(t_tail[-1])
    K = h0 * t_max ** (-1.0 / p)
    res = OdeSolveResult(np.concatenate((t, t_tail[1:])), np.concatenate((h, h_tail[1:])),
                         np.concatenate((integral, i_tail[1:])), t_max, K, residual, True,
                         a, alpha, cstar, h0, sol.sol)
    res._tail = tail.sol
    res._s_switch = float(sol.t_events[0][0])
    return res


def decay_K(a: float, alpha: float, cstar: float, **kw) -> float:
    """Decay constant ``h_eps(0) = t_max**(-1/(1+alpha))`` for ``0 <= a < a_alpha``."""
    crit = a_alpha(alpha, cstar)
    if not 0 <= a < crit:
        raise ValueError(f"decay_K needs 0 <= a < a_alpha={crit}, got {a}")
    res = solve_h(a, alpha, cstar, 1.0, **kw)
    if not res.blew_down:
        raise RuntimeError("no blow-down within t_budget; a is too close to a_alpha")
    return res.K


def K1_K2(h: Callable, a: float, alpha: float, cstar: float, n_grid: int = 1000) -> tuple[float, float]:
    """Evaluate ``K1 = -a + C int_0^1 h**-alpha`` and
    ``K2 = min_rho { -a rho**(1/(1+alpha)) + h(rho) + C int_0^rho h**-alpha }``.

    ``h`` must be positive on ``[0, 1)``; it may vanish at ``t = 1`` provided
    ``h**-alpha`` stays integrable. The inner integral is accumulated panel by
    panel on the grid, then the minimum is refined by golden-section search.
    """
    p = 1.0 + alpha
    grid = np.linspace(0.0, 1.0, n_grid + 1)
    vals = np.asarray(h(grid[:-1]), dtype=float)
    if np.any(vals <= 0):
        bad = grid[:-1][vals <= 0][0]
        raise ValueError(f"h touches zero at t={bad:.4g} inside [0, 1); use the rescaled solution")
    inv = lambda t: float(np.asarray(h(np.array([t])))[0]) ** -alpha
    opts = dict(epsabs=1e-13, epsrel=1e-11, limit=200)
    panels = np.array([integrate.quad(inv, grid[i], grid[i + 1], **opts)[0]
                       for i in range(n_grid - 1)])
    last = _last_panel(h, grid[-2], alpha)
    cum = np.concatenate(([0.0], np.cumsum(panels), [panels.sum() + last]))
    K1 = -a + cstar * cum[-1]
    h_all = np.concatenate((vals, [max(float(np.asarray(h(np.array([1.0])))[0]), 0.0)]))
    obj = -a * grid ** (1.0 / p) + h_all + cstar * cum
    i = int(np.argmin(obj))
    best = obj[i]
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid)]
    if hi < 1.0:
        def objective(r):
            j = min(int(r * n_grid), n_grid - 1)
            part = integrate.quad(inv, grid[j], r, **opts)[0] if r > grid[j] else 0.0
            return -a * r ** (1.0 / p) + float(np.asarray(h(np.array([r])))[0]) + cstar * (cum[j] + part)

        res = optimize.minimize_scalar(objective, bracket=None, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        if res.fun < best:
            best = float(res.fun)
    return float(K1), float(best)


def _last_panel(h, t0, alpha):
    """``int_{t0}^1 h**-alpha`` allowing ``h(1) = 0`` with a ``(1-t)**(1/(1+alpha))`` profile."""
    e = alpha / (1.0 + alpha)
    h1 = float(np.asarray(h(np.array([1.0])))[0])
    if h1 > 0:
        return integrate.quad(lambda t: float(np.asarray(h(np.array([t])))[0]) ** -alpha, t0, 1.0)[0]

    def smooth(t):
        v = float(np.asarray(h(np.array([t])))[0])
        return (v ** -alpha) * (1.0 - t) ** e if v > 0 else np.nan

    # weight (1 - t)**(-e) carries the endpoint singularity
    val = integrate.quad(lambda t: smooth(t) if t < 1.0 else smooth(1.0 - 1e-12), t0, 1.0,
                         weight="alg", wvar=(0.0, -e), limit=200)[0]
    return val


# ---------------------------------------------------------------------------
# corridor functions of the two-barrier construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorridorFunctions:
    lambda_: float
    a: float
    b: float
    alpha: float

    @property
    def offset(self) -> float:
        return 1.0 / math.expm1(self.lambda_)

    def f(self, t):
        return (np.asarray(t, dtype=float) + self.offset) ** (1.0 / (1.0 + self.alpha))

    def g2(self, t):
        return self.a * (self.f(t) - self.f(0.0))

    def g(self, t):
        return self.b * self.f(t)

    def g1(self, t):
        return self.g2(t) - self.g(t)


def G_lambda(rho, a: float, b: float, lambda_: float, alpha: float, cstar: float):
    """Reduced closed form of ``G_lambda(rho)``."""
    cf = CorridorFunctions(lambda_, a, b, alpha)
    k = (1.0 + alpha) * cstar / b**alpha
    return ((b + k - a) * cf.f(rho)
            + math.exp(-lambda_ / (1.0 + alpha)) * (a - k) * cf.f(0.0))


def G_lambda_direct(rho: float, a: float, b: float, lambda_: float, alpha: float, cstar: float) -> float:
    """``G_lambda(rho)`` from its defining expression, integrals by quadrature."""
    cf = CorridorFunctions(lambda_, a, b, alpha)
    inv = lambda t: float(cf.g(t)) ** -alpha
    opts = dict(epsabs=1e-13, epsrel=1e-13, limit=200)
    i_rho = integrate.quad(inv, 0.0, rho, **opts)[0]
    i_one = integrate.quad(inv, 0.0, 1.0, **opts)[0]
    return float(-cf.g2(rho) + cf.g(rho) + cstar * i_rho
                 + math.exp(-lambda_ / (1.0 + alpha)) * (-cf.g2(1.0) + cstar * i_one))


def corridor_gain(a: float, b: float, lambda_: float, alpha: float, cstar: float) -> float:
    """``g2(1) - C int_0^1 g**-alpha``, which equals ``(f(1) - f(0)) (a - (1+alpha) C / b**alpha)``."""
    cf = CorridorFunctions(lambda_, a, b, alpha)
    i_one = integrate.quad(lambda t: float(cf.g(t)) ** -alpha, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)[0]
    return float(cf.g2(1.0) - cstar * i_one)
