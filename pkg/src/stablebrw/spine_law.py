"""Spine step laws.

The main object is :class:`SpineLaw`, a mean-zero law with an exact Pareto
right tail ``P(X > y) = c * y**-alpha`` for ``y >= y0`` and an exponential
left part below ``y0``::

    density(x) = c * alpha * x**(-alpha - 1)            x >= y0
    density(x) = w * lam * exp(lam * (x - y0))          x <  y0

with ``w = 1 - c * y0**-alpha`` and ``lam`` chosen so the mean vanishes. Both
calibration equations are solved in closed form by :func:`make_pareto_spine`.

:class:`GaussianStepLaw` is the finite-variance (alpha = 2) counterpart used as
the spine of the binary Gaussian offspring model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.stats import norm

QUAD_TOL = 1e-10


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (1.0 < alpha <= 2.0) or math.isnan(alpha):
        raise ValueError(f"alpha must lie in (1, 2], got {alpha}")
    return alpha


@dataclass(frozen=True)
class SpineLaw:
    """Exact-Pareto-tail / exponential-left mixture with mean zero.

    Only ``alpha``, ``tail_const`` and ``tail_threshold`` are stored; the left
    weight and rate are recomputed from them. Build instances through
    :func:`make_pareto_spine`, which validates the parameters.
    """

    alpha: float
    tail_const: float
    tail_threshold: float

    @cached_property
    def left_weight(self) -> float:
        return 1.0 - self.tail_const * self.tail_threshold ** (-self.alpha)

    @cached_property
    def left_rate(self) -> float:
        a, c, y0, w = self.alpha, self.tail_const, self.tail_threshold, self.left_weight
        return w / (w * y0 + c * a * y0 ** (1.0 - a) / (a - 1.0))

    @property
    def tail_mass(self) -> float:
        return self.tail_const * self.tail_threshold ** (-self.alpha)

    # -- distribution functions ------------------------------------------
    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        a, c, y0 = self.alpha, self.tail_const, self.tail_threshold
        w, lam = self.left_weight, self.left_rate
        right = c * a * np.maximum(x, y0) ** (-a - 1.0)
        left = w * lam * np.exp(lam * (np.minimum(x, y0) - y0))
        return np.where(x >= y0, right, left)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        a, c, y0 = self.alpha, self.tail_const, self.tail_threshold
        w, lam = self.left_weight, self.left_rate
        right = 1.0 - c * np.maximum(x, y0) ** (-a)
        left = w * np.exp(lam * (np.minimum(x, y0) - y0))
        return np.where(x >= y0, right, left)

    def sf(self, x):
        """Exact ``P(X > x)``."""
        x = np.asarray(x, dtype=float)
        a, c, y0 = self.alpha, self.tail_const, self.tail_threshold
        w, lam = self.left_weight, self.left_rate
        right = c * np.maximum(x, y0) ** (-a)
        left = 1.0 - w * np.exp(lam * (np.minimum(x, y0) - y0))
        return np.where(x >= y0, right, left)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        w, lam, y0 = self.left_weight, self.left_rate, self.tail_threshold
        with np.errstate(divide="ignore", invalid="ignore"):
            left = y0 + np.log(u / w) / lam
            right = (self.tail_const / (1.0 - u)) ** (1.0 / self.alpha)
        return np.where(u < w, left, right)

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draws; deterministic given the state of ``rng``."""
        u = rng.random(size)
        out = self.ppf(u)
        return float(out) if size is None else out

    # -- quadrature checks -------------------------------------------------
    def moment_by_quadrature(self, fn) -> float:
        """``E fn(X)`` by adaptive quadrature over both pieces."""
        y0 = self.tail_threshold
        left, _ = integrate.quad(lambda x: fn(x) * float(self.pdf(x)), -np.inf, y0,
                                 epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
        right, _ = integrate.quad(lambda x: fn(x) * float(self.pdf(x)), y0, np.inf,
                                  epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
        return left + right

    def stable_c0(self) -> float:
        """Scale ``c0`` of the stable limit of ``S_n / n**(1/alpha)``."""
        if self.alpha >= 2.0:
            raise ValueError("a Pareto tail with alpha = 2 has infinite variance; "
                             "S_n / sqrt(n) has no Gaussian limit")
        from .stable_process import extract_c0

        return extract_c0(self.alpha, self.tail_const).c0

    # -- config ----------------------------------------------------------
    def to_config(self) -> dict:
        return {"alpha": self.alpha, "tail_const": self.tail_const,
                "tail_threshold": self.tail_threshold}

    @classmethod
    def from_config(cls, block: dict) -> "SpineLaw":
        return make_pareto_spine(float(block["alpha"]), float(block["tail_const"]),
                                 float(block["tail_threshold"]))


def make_pareto_spine(alpha: float, tail_const: float, tail_threshold: float) -> SpineLaw:
    """Calibrate a mean-zero spine law with exact Pareto tail beyond ``tail_threshold``.

    Raises
    ------
    ValueError
        If ``alpha`` is outside (1, 2], a constant is non-positive, or the
        Pareto part would carry total mass ``>= 1``.
    """
    alpha = check_alpha(alpha)
    if tail_const <= 0 or tail_threshold <= 0:
        raise ValueError("tail_const and tail_threshold must be positive")
    mass = tail_const * tail_threshold ** (-alpha)
    if mass >= 1.0:
        raise ValueError(f"Pareto tail mass {mass:g} >= 1; increase tail_threshold")
    law = SpineLaw(alpha, float(tail_const), float(tail_threshold))
    if not law.left_rate > 0:
        raise ValueError("calibration produced a non-positive left rate")
    return law


def step_tail(law: SpineLaw, y: float) -> float:
    return float(law.sf(y))


@dataclass(frozen=True)
class TailReport:
    tail_deviation: float
    mean_abs: float
    exp_moment: float
    per_point: dict = field(default_factory=dict)


def validate_boundary_tail(law: SpineLaw, probe_grid, varrho: float) -> TailReport:
    """Check the exact tail, the zero mean and the exponential left moment.

    ``varrho`` must be strictly below ``law.left_rate``; at or above it the
    moment ``E exp(-varrho X)`` diverges and a ``ValueError`` is raised.
    """
    if varrho >= law.left_rate:
        raise ValueError(f"E exp(-varrho X) diverges for varrho={varrho} >= left_rate={law.left_rate}")
    per_point = {}
    dev = 0.0
    for y in probe_grid:
        d = abs(y ** law.alpha * step_tail(law, y) - law.tail_const)
        per_point[float(y)] = d
        if y >= law.tail_threshold:
            dev = max(dev, d)
    mean = law.moment_by_quadrature(lambda x: x)
    # left part in closed form (the integrand overflows naively at -inf)
    w, lam, y0 = law.left_weight, law.left_rate, law.tail_threshold
    right, _ = integrate.quad(lambda x: math.exp(-varrho * x) * float(law.pdf(x)), y0, np.inf,
                              epsabs=1e-13, epsrel=1e-10, limit=200)
    moment = w * lam * math.exp(-varrho * y0) / (lam - varrho) + right
    return TailReport(dev, abs(mean), moment, per_point)


@dataclass(frozen=True)
class GaussianStepLaw:
    """Normal(``mean``, ``variance``) steps; the alpha = 2 spine."""

    variance: float
    mean: float = 0.0
    alpha: float = 2.0

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mean, math.sqrt(self.variance), size)

    def cdf(self, x):
        return norm.cdf(x, self.mean, math.sqrt(self.variance))

    def stable_c0(self) -> float:
        return self.variance / 2.0


@dataclass(frozen=True)
class WalkPath:
    positions: np.ndarray
    law: object

    @property
    def n(self) -> int:
        return len(self.positions) - 1


def walk_path(law, n: int, rng: np.random.Generator) -> WalkPath:
    """Random walk ``S_0 = 0, S_j = X_1 + ... + X_j`` with i.i.d. steps from ``law``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    steps = np.asarray(law.sample(rng, n), dtype=float)
    return WalkPath(np.concatenate(([0.0], np.cumsum(steps))), law)
