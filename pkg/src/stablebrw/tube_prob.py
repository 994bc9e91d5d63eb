"""Small-deviation (tube) probabilities of random walks.

A tube is a pair of piecewise-linear boundaries ``f < g`` on ``[0, 1]``
together with a horizon ``n`` and a scale ``c_n = n**scale_exponent``; the
walk must satisfy ``c_n f(j/n) <= S_j <= c_n g(j/n)`` for ``0 <= j <= n``.
Its log-probability behaves like ``-(n / c_n**alpha) * C_* int (g-f)**-alpha``.

Estimators:

* :func:`tube_prob_mc` - crude Monte Carlo (binomial error, pathwise
  monotone under common random numbers) or a splitting estimator
  (kill-and-replace particle system) for probabilities far below ``1/trials``;
* :func:`tube_prob_dp` - exact forward recursion for lattice steps.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.stats import ks_2samp

from .estimates import Estimate, binomial_estimate, clopper_pearson
from .spine_law import check_alpha
from .stable_process import StableSpec, sample_stable


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear function on [0, 1] given by breakpoints."""

    knots: tuple
    values: tuple

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.size != len(self.values) or k.size < 1:
            raise ValueError("knots and values must have the same non-zero length")
        if k[0] != 0.0 or k[-1] != 1.0 or np.any(np.diff(k) <= 0):
            raise ValueError("knots must increase strictly from 0 to 1")

    @classmethod
    def constant(cls, v: float) -> "PiecewiseLinear":
        return cls((0.0, 1.0), (float(v), float(v)))

    @classmethod
    def from_points(cls, points) -> "PiecewiseLinear":
        ks, vs = zip(*points)
        return cls(tuple(map(float, ks)), tuple(map(float, vs)))

    def __call__(self, s):
        return np.interp(s, self.knots, self.values)

    def shifted(self, d: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.knots, tuple(v + d for v in self.values))

    def scaled(self, k: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.knots, tuple(v * k for v in self.values))


def _as_pl(x) -> PiecewiseLinear:
    if isinstance(x, PiecewiseLinear):
        return x
    if isinstance(x, (int, float)):
        return PiecewiseLinear.constant(x)
    return PiecewiseLinear.from_points(x)


@dataclass(frozen=True)
class TubeSpec:
    """Boundaries ``lower < upper`` on [0, 1], horizon ``n`` and scale exponent.

    ``lower_n`` / ``upper_n`` optionally map ``n`` to perturbed boundaries
    converging uniformly to ``lower`` / ``upper``; when present they are used
    for the finite-``n`` event while the rate functional uses the limits.
    ``relaxed`` admits ``lower <= upper`` with ``lower(0) <= 0 <= upper(0)``.
    """

    lower: PiecewiseLinear
    upper: PiecewiseLinear
    n: int
    scale_exponent: float = 1.0 / 3.0
    lower_n: Callable | None = None
    upper_n: Callable | None = None
    relaxed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lower", _as_pl(self.lower))
        object.__setattr__(self, "upper", _as_pl(self.upper))
        if self.n < 0:
            raise ValueError("horizon must be non-negative")
        knots = np.union1d(self.lower.knots, self.upper.knots)
        width = self.upper(knots) - self.lower(knots)
        f0, g0 = float(self.lower(0.0)), float(self.upper(0.0))
        if self.relaxed:
            if np.any(width < 0) or not f0 <= 0 <= g0:
                raise ValueError("relaxed tube needs lower <= upper and lower(0) <= 0 <= upper(0)")
        elif np.any(width <= 0) or not f0 < 0 < g0:
            raise ValueError("tube needs lower < upper and lower(0) < 0 < upper(0)")

    @classmethod
    def for_alpha(cls, lower, upper, n: int, alpha: float, **kw) -> "TubeSpec":
        return cls(lower, upper, n, 1.0 / (1.0 + check_alpha(alpha)), **kw)

    @classmethod
    def from_sequences(cls, lower, upper) -> "TubeSpec":
        """Unscaled tube with per-step bounds ``lower[j] <= S_j <= upper[j]``.

        Breakpoints sit at ``j/n`` so the bounds are reproduced exactly.
        """
        lower, upper = list(map(float, lower)), list(map(float, upper))
        if len(lower) != len(upper) or len(lower) < 2:
            raise ValueError("bound sequences must have equal length >= 2")
        n = len(lower) - 1
        knots = tuple(j / n for j in range(n + 1))
        return cls(PiecewiseLinear(knots, tuple(lower)), PiecewiseLinear(knots, tuple(upper)),
                   n, 0.0, relaxed=True)

    @property
    def c_n(self) -> float:
        return float(self.n) ** self.scale_exponent if self.n > 0 else 1.0

    def with_horizon(self, n: int) -> "TubeSpec":
        return replace(self, n=n)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        s = np.arange(n + 1) / max(n, 1)
        lo = self.lower_n(n) if self.lower_n is not None else self.lower
        hi = self.upper_n(n) if self.upper_n is not None else self.upper
        return self.c_n * np.asarray(lo(s), float), self.c_n * np.asarray(hi(s), float)

    def width(self, s):
        return self.upper(s) - self.lower(s)


@dataclass(frozen=True)
class ShiftedTubeSpec:
    base: TubeSpec
    beta_star: float
    gamma_star: float
    u_star: float
    v_star: float

    def __post_init__(self):
        if not 0.0 <= self.beta_star < self.gamma_star <= 1.0:
            raise ValueError("need 0 <= beta* < gamma* <= 1")
        f_b = float(self.base.lower(self.beta_star))
        g_b = float(self.base.upper(self.beta_star))
        if not f_b <= self.u_star < self.v_star <= g_b and not (
                self.u_star == self.v_star and f_b <= self.u_star <= g_b):
            raise ValueError("need f(beta*) <= u* < v* <= g(beta*)")


@dataclass(frozen=True)
class TruncationEvent:
    """``{upsilon_j <= exp(n**(1/beta)) for j <= n}`` with ``beta > 1 + alpha``."""

    beta_trunc: float
    n: int
    alpha: float = 2.0

    def __post_init__(self):
        if not self.beta_trunc > 1.0 + self.alpha:
            raise ValueError("beta_trunc must exceed 1 + alpha")

    @property
    def threshold(self) -> float:
        return math.exp(self.n ** (1.0 / self.beta_trunc))


def _rate_integral(width_fn, lo, hi, knots, alpha):
    pts = [k for k in knots if lo < k < hi]
    vals = np.asarray(width_fn(np.array([lo, hi] + pts)), dtype=float)
    if np.any(vals <= 0):
        warnings.warn("tube width vanishes; the rate functional diverges", RuntimeWarning)
        return math.inf
    val, _ = integrate.quad(lambda s: float(width_fn(s)) ** -alpha, lo, hi,
                            points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def rate_functional(tube: TubeSpec, alpha: float, cstar: float) -> float:
    """Positive rate ``J = C_* int_0^1 (g - f)**-alpha ds``; ``inf`` if the width touches zero."""
    knots = np.union1d(tube.lower.knots, tube.upper.knots)
    return cstar * _rate_integral(tube.width, 0.0, 1.0, knots, alpha)


def shifted_rate_functional(spec: ShiftedTubeSpec, alpha: float, cstar: float) -> float:
    """``C_* int_{beta*}^{gamma*} (g - u* - f + v*)**-alpha ds``."""
    base = spec.base
    shift = spec.v_star - spec.u_star
    knots = np.union1d(base.lower.knots, base.upper.knots)
    return cstar * _rate_integral(lambda s: base.width(s) + shift, spec.beta_star,
                                  spec.gamma_star, knots, alpha)


# ---------------------------------------------------------------------------
# step laws used in tests and oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeStepLaw:
    """Integer-valued steps with finite support."""

    values: tuple
    probs: tuple
    alpha: float = 2.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(self.values) != len(self.probs) or np.any(p < 0) or not math.isclose(p.sum(), 1.0):
            raise ValueError("probs must be a probability vector matching values")
        if any(int(v) != v for v in self.values):
            raise ValueError("lattice values must be integers")

    @classmethod
    def from_pmf(cls, pmf: dict) -> "LatticeStepLaw":
        ks = sorted(pmf)
        return cls(tuple(int(k) for k in ks), tuple(float(pmf[k]) for k in ks))

    @property
    def pmf(self) -> dict:
        return dict(zip(self.values, self.probs))

    @property
    def variance(self) -> float:
        v, p = np.asarray(self.values, float), np.asarray(self.probs)
        m = float(v @ p)
        return float(((v - m) ** 2) @ p)

    def sample(self, rng, size=None):
        return rng.choice(np.asarray(self.values, dtype=float), size=size, p=self.probs)

    def stable_c0(self) -> float:
        return self.variance / 2.0


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _check_start(tube: TubeSpec, start_z: float):
    lo, hi = tube.bounds()
    if not lo[0] <= start_z <= hi[0]:
        raise ValueError(f"start {start_z} lies outside the tube at j=0 [{lo[0]}, {hi[0]}]")
    return lo, hi


def tube_prob_mc(law, tube: TubeSpec, start_z: float, trials: int, rng: np.random.Generator,
                 trunc: TruncationEvent | None = None, method: str = "crude",
                 replicates: int = 10, chunk: int = 20000) -> Estimate:
    """Monte Carlo estimate of ``P_z(lower_j <= S_j <= upper_j, 0 <= j <= n)``.

    ``law`` is any step law with ``sample(rng, size)``. With ``trunc`` the
    law must also provide ``sample_enriched(rng, size) -> (steps, marks)``
    and the brood-size marks must stay below ``trunc.threshold``.

    ``method="crude"`` draws whole paths (steps are drawn in the same order
    regardless of the tube, so two calls with equal generator states see the
    same paths). ``method="splitting"`` runs ``replicates`` independent
    kill-and-replace particle systems of ``trials // replicates`` walkers;
    each returns the product of per-step survival fractions, an unbiased
    estimate even when the probability is astronomically small.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    lo, hi = _check_start(tube, start_z)
    if method == "crude":
        return _crude(law, lo, hi, start_z, trials, rng, trunc, chunk)
    if method == "splitting":
        return _splitting(law, lo, hi, start_z, trials, rng, trunc, replicates)
    raise ValueError(f"unknown method {method!r}")


def _draw(law, rng, size, trunc):
    if trunc is None:
        return np.asarray(law.sample(rng, size), dtype=float), None
    x, marks = law.sample_enriched(rng, size)
    return np.asarray(x, dtype=float), np.asarray(marks)


def _crude(law, lo, hi, z, trials, rng, trunc, chunk):
    n = lo.size - 1
    hits = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        ok = np.ones(m, dtype=bool)
        if n > 0:
            steps, marks = _draw(law, rng, (m, n), trunc)
            paths = z + np.cumsum(steps, axis=1)
            ok = np.all((paths >= lo[1:]) & (paths <= hi[1:]), axis=1)
            if trunc is not None:
                ok &= np.all(marks <= trunc.threshold, axis=1)
        hits += int(ok.sum())
        done += m
    est = binomial_estimate(hits, trials, method="crude")
    if hits == 0:
        # one-sided 95% bound instead of a degenerate two-sided interval
        _, upper = clopper_pearson(0, trials, 0.90)
        est = Estimate(0.0, 0.0, 0.0, upper, trials, {"method": "crude", "successes": 0,
                                                      "one_sided": True})
    return est


def _splitting(law, lo, hi, z, trials, rng, trunc, replicates):
    n = lo.size - 1
    per = max(trials // replicates, 2)
    logs = []
    for _ in range(replicates):
        x = np.full(per, float(z))
        logp = 0.0
        for j in range(1, n + 1):
            steps, marks = _draw(law, rng, per, trunc)
            x = x + steps
            alive = (x >= lo[j]) & (x <= hi[j])
            if trunc is not None:
                alive &= marks <= trunc.threshold
            k = int(alive.sum())
            if k == 0:
                logp = -math.inf
                break
            logp += math.log(k / per)
            if k < per:
                surv = np.flatnonzero(alive)
                dead = np.flatnonzero(~alive)
                x[dead] = x[surv[rng.integers(0, k, dead.size)]]
        logs.append(logp)
    logs = np.asarray(logs)
    finite = logs[np.isfinite(logs)]
    if finite.size == 0:
        return Estimate(0.0, 0.0, 0.0, 1.0, trials, {"method": "splitting", "log_value": -math.inf})
    shift = finite.max()
    vals = np.exp(logs - shift)
    mean = vals.mean()
    se = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    log_mean = shift + math.log(mean)
    value = math.exp(log_mean)
    scale = math.exp(shift)
    return Estimate(value, se * scale, max(0.0, (mean - 1.96 * se)) * scale,
                    (mean + 1.96 * se) * scale, trials,
                    {"method": "splitting", "log_value": log_mean,
                     "log_std_error": se / mean if mean > 0 else math.inf,
                     "replicates": replicates})


def tube_prob_dp(lattice_step_pmf, lower, upper) -> float:
    """Exact ``P(lower_j <= S_j <= upper_j for all 0 <= j <= n)`` for a lattice walk from 0.

    Forward recursion on the integer window; each new cell is a dot product
    summed with :func:`math.fsum` to avoid cancellation.
    """
    if isinstance(lattice_step_pmf, LatticeStepLaw):
        pmf = lattice_step_pmf.pmf
    else:
        pmf = dict(lattice_step_pmf)
    lower = [int(math.ceil(v - 1e-12)) for v in lower]
    upper = [int(math.floor(v + 1e-12)) for v in upper]
    if len(lower) != len(upper) or not lower:
        raise ValueError("lower and upper must have the same non-zero length")
    if any(int(k) != k for k in pmf):
        raise ValueError("step support must be integer")
    if any(lo > hi for lo, hi in zip(lower, upper)):
        raise ValueError("need lower_j <= upper_j for every j")
    if not lower[0] <= 0 <= upper[0]:
        return 0.0
    steps = [(int(k), float(p)) for k, p in pmf.items() if p > 0]
    dist = {0: 1.0}
    for j in range(1, len(lower)):
        lo, hi = lower[j], upper[j]
        new = {}
        for y in range(lo, hi + 1):
            terms = [dist[y - k] * p for k, p in steps if (y - k) in dist]
            if terms:
                new[y] = math.fsum(terms)
        dist = {y: v for y, v in new.items() if v > 0}
        if not dist:
            return 0.0
    return math.fsum(dist.values())


@dataclass
class RateReport:
    n_list: list
    rates: list
    rate_std_errors: list
    log_probs: list
    extrapolated: float
    extrapolated_std_error: float
    target: float
    gaps: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    @property
    def extrapolated_gap(self) -> float:
        return abs(self.extrapolated - self.target) / self.target

    def as_dict(self) -> dict:
        return {"n_list": self.n_list, "rates": self.rates, "rate_std_errors": self.rate_std_errors,
                "log_probs": self.log_probs, "extrapolated": self.extrapolated,
                "extrapolated_std_error": self.extrapolated_std_error, "target": self.target,
                "gaps": self.gaps, "extrapolated_gap": self.extrapolated_gap,
                "excluded": self.excluded}


def empirical_rate(law, tube: TubeSpec, n_list, trials: int, rng: np.random.Generator,
                   cstar: float, start_z: float = 0.0) -> RateReport:
    """Finite-``n`` rates ``-(c_n**alpha / n) log p_n`` and their extrapolation.

    Probabilities come from the splitting estimator. The leading finite-size
    correction is of order ``1/c_n`` (the step scale relative to the tube
    width), so ``rate_n = R + A / c_n`` is fitted by least squares and ``R``
    compared with :func:`rate_functional`.
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    alpha = law.alpha
    target = rate_functional(tube, alpha, cstar)
    ns, rates, ses, logs, excluded = [], [], [], [], []
    for n in n_list:
        t_n = tube.with_horizon(n)
        est = tube_prob_mc(law, t_n, start_z, trials, rng, method="splitting")
        if est.value <= 0:
            warnings.warn(f"zero probability estimate at n={n}; excluded", RuntimeWarning)
            excluded.append(n)
            continue
        factor = t_n.c_n ** alpha / n
        ns.append(n)
        logs.append(est.extra["log_value"])
        rates.append(-factor * est.extra["log_value"])
        ses.append(factor * est.extra["log_std_error"])
    if len(ns) < 2:
        raise ValueError("need at least two usable horizons to extrapolate")
    x = np.array([1.0 / tube.with_horizon(n).c_n for n in ns])
    A = np.vstack([np.ones_like(x), x]).T
    w = 1.0 / np.maximum(np.asarray(ses), 1e-12)
    coef, *_ = np.linalg.lstsq(A * w[:, None], np.asarray(rates) * w, rcond=None)
    cov = np.linalg.pinv((A * w[:, None]).T @ (A * w[:, None]))
    gaps = [abs(r - target) / target for r in rates]
    return RateReport(ns, rates, ses, logs, float(coef[0]), float(math.sqrt(cov[0, 0])),
                      target, gaps, excluded)


def scaled_path_convergence_check(law, n: int, trials: int, rng: np.random.Generator,
                                  n_ref: int | None = None, chunk: int = 500) -> dict:
    """Two-sample KS distance between ``S_n / n**(1/alpha)`` and stable draws.

    The stable reference uses ``c0 = law.stable_c0()``; ``n_ref`` reference
    draws (default ``10 * trials``) keep the reference noise small.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if n < 1:
        raise ValueError("n must be positive")
    alpha = law.alpha
    c0 = law.stable_c0()
    total = np.zeros(trials)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        total += np.asarray(law.sample(rng, (m, trials)), dtype=float).sum(axis=0)
        done += m
    scaled = total / n ** (1.0 / alpha)
    ref = np.asarray(sample_stable(StableSpec(alpha, c0), rng, n_ref or 10 * trials))
    res = ks_2samp(scaled, ref)
    return {"n": n, "trials": trials, "alpha": alpha, "c0": c0,
            "ks": float(res.statistic), "pvalue": float(res.pvalue)}
