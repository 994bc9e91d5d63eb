"""Monte Carlo estimate containers and binomial confidence intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.stats import beta as beta_dist


@dataclass(frozen=True)
class Estimate:
    """A point estimate with its standard error and a confidence interval."""

    value: float
    std_error: float
    lower: float
    upper: float
    n: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def overlaps(self, other: "Estimate", slack: float = 0.0) -> bool:
        return self.lower - slack <= other.upper and other.lower <= self.upper + slack

    def as_dict(self) -> dict:
        out = {"value": self.value, "std_error": self.std_error,
               "lower": self.lower, "upper": self.upper, "n": self.n}
        out.update(self.extra)
        return out


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial interval."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    tail = (1.0 - level) / 2.0
    lo = 0.0 if successes == 0 else float(beta_dist.ppf(tail, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(beta_dist.ppf(1 - tail, successes + 1, trials - successes))
    return lo, hi


def binomial_estimate(successes: int, trials: int, level: float = 0.95, **extra) -> Estimate:
    p = successes / trials
    se = math.sqrt(p * (1 - p) / trials)
    lo, hi = clopper_pearson(successes, trials, level)
    return Estimate(p, se, lo, hi, trials, dict(extra))


def mean_estimate(samples, level: float = 0.95, **extra) -> Estimate:
    """Normal-approximation interval for the mean of i.i.d. samples."""
    import numpy as np

    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n))
    z = float(_z(level))
    return Estimate(m, se, m - z * se, m + z * se, n, dict(extra))


def _z(level: float) -> float:
    from scipy.stats import norm

    return norm.ppf(0.5 + level / 2.0)
