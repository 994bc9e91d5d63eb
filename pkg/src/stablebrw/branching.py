"""Branching random walk with absorbing barriers.

Every individual carries a 64-bit genealogical key; its displacement and its
brood are deterministic functions of that key (see :mod:`.streams`). Two runs
that share root keys therefore share the whole tree, and raising the barrier
can only add individuals. This gives exact pathwise monotonicity in ``a`` and
between capped and uncapped runs.

Two offspring models realise the boundary case
``E sum e^{-V} = 1, E sum V e^{-V} = 0``:

* ``poisson_boundary`` - a Poisson point process with intensity
  ``e^v P(X in dv)`` cut at ``v <= T``. Children are generated in increasing
  order of position as arrivals of a unit-rate process in the cumulative
  intensity ``Lambda``. Only arrivals below the barrier are materialised, and
  broods for two barrier levels are nested.
* ``binary_gaussian`` - two i.i.d. ``N(m, s2)`` children with ``m = s2 = 2 log 2``.

The survival engine works on blocks of trials at once: positions, keys and
trial labels of all living individuals sit in flat arrays.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import poisson

from .critical_ode import a_alpha, r_a
from .estimates import Estimate, binomial_estimate, clopper_pearson, mean_estimate
from .spine_law import GaussianStepLaw, SpineLaw
from .streams import child_keys, keyed_exponential, keyed_normal, keyed_uniform, root_keys

LOG2 = math.log(2.0)
DEFECT_BUDGET = 1e-3

# keyed channels
_CH_STEP = 0
_CH_REST = 5


# ---------------------------------------------------------------------------
# offspring models
# ---------------------------------------------------------------------------

class OffspringModel:
    """Common interface; see :class:`PoissonBoundaryModel` and :class:`BinaryGaussianModel`."""

    kind = "abstract"
    cap: int | None = None

    def children(self, pos, keys, room):
        """Vectorised broods.

        ``room[i]`` is the largest admissible displacement of parent ``i``
        (``inf`` for no barrier). Returns ``(parent_index, displacement,
        child_key, brood_size)`` where ``brood_size`` is the full size of each
        parent's brood (for the cap), one entry per parent.
        """
        raise NotImplementedError

    def sample_brood(self, parent_position: float, barrier_at_next: float, rng) -> np.ndarray:
        key = root_keys(rng, 1)
        room = np.array([barrier_at_next - parent_position], dtype=float)
        idx, disp, _, size = self.children(np.array([parent_position]), key, room)
        if self.cap is not None and size[0] > self.cap:
            return np.empty(0)
        return parent_position + disp

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass
class PoissonBoundaryModel(OffspringModel):
    """Poisson broods with intensity ``e^v P(X in dv)`` on ``v <= right_cut``."""

    spine: SpineLaw
    right_cut: float
    cap: int | None = None
    n_grid: int = 20001
    kind: str = field(default="poisson_boundary", init=False)

    def __post_init__(self):
        law = self.spine
        T, y0 = float(self.right_cut), law.tail_threshold
        if T < y0:
            raise ValueError("right cut must lie in the Pareto tail (T >= y0)")
        if self.defect[0] > DEFECT_BUDGET:
            raise ValueError(f"boundary defect c*T^-alpha = {self.defect[0]:.3g} exceeds "
                             f"the budget {DEFECT_BUDGET}; raise T")
        w, lam = law.left_weight, law.left_rate
        self._lam_y0 = w * lam * math.exp(y0) / (lam + 1.0)
        c, a = law.tail_const, law.alpha
        grid = np.linspace(y0, T, self.n_grid) if T > y0 else np.array([y0])
        if grid.size > 1:
            dens = np.exp(grid) * c * a * grid ** (-a - 1.0)
            cum = integrate.cumulative_simpson(dens, x=grid, initial=0.0)
        else:
            cum = np.zeros(1)
        self._grid = grid
        self._loglam = np.log(self._lam_y0 + cum)

    @property
    def alpha(self) -> float:
        return self.spine.alpha

    @property
    def spine_law(self) -> SpineLaw:
        return self.spine

    def stable_c0(self) -> float:
        return self.spine.stable_c0()

    @property
    def defect(self) -> tuple[float, float]:
        """``(1 - E sum e^{-V}, |E sum V e^{-V}|)`` caused by the right cut."""
        c, a, T = self.spine.tail_const, self.spine.alpha, float(self.right_cut)
        return c * T ** -a, c * a * T ** (1.0 - a) / (a - 1.0)

    def intensity_mass(self, level) -> np.ndarray:
        """``Lambda(L) = int_{-inf}^{min(L, T)} e^v P(X in dv)``."""
        v = np.minimum(np.asarray(level, dtype=float), self.right_cut)
        law = self.spine
        lam, y0 = law.left_rate, law.tail_threshold
        left = self._lam_y0 * np.exp((lam + 1.0) * np.minimum(v - y0, 0.0))
        right = np.exp(np.interp(v, self._grid, self._loglam))
        return np.where(v <= y0, left, right)

    @property
    def total_mass(self) -> float:
        return float(self.intensity_mass(self.right_cut))

    def _inverse(self, s):
        lam, y0 = self.spine.left_rate, self.spine.tail_threshold
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            ls = np.log(s)
        left = y0 + (ls - math.log(self._lam_y0)) / (lam + 1.0)
        right = np.interp(ls, self._loglam, self._grid)
        return np.where(s <= self._lam_y0, left, right)

    def children(self, pos, keys, room):
        room = np.minimum(np.asarray(room, dtype=float), self.right_cut)
        limit = self.intensity_mass(room)
        m = keys.size
        parents, arrivals, ckeys = [], [], []
        counts = np.zeros(m, dtype=np.int64)
        active = np.arange(m)
        acc = np.zeros(m)
        j = 0
        while active.size:
            ck = child_keys(keys[active], j)
            acc_a = acc[active] + keyed_exponential(ck, _CH_STEP)
            ok = acc_a <= limit[active]
            active, acc_a, ck = active[ok], acc_a[ok], ck[ok]
            acc[active] = acc_a
            counts[active] += 1
            parents.append(active)
            arrivals.append(acc_a)
            ckeys.append(ck)
            j += 1
        if parents:
            idx = np.concatenate(parents)
            disp = self._inverse(np.concatenate(arrivals))
            ck = np.concatenate(ckeys)
        else:
            idx, disp, ck = np.empty(0, np.int64), np.empty(0), np.empty(0, np.uint64)
        size = counts
        if self.cap is not None:
            # children above the barrier are never drawn; their number is
            # Poisson(Lambda(T) - Lambda(room)) on its own keyed channel
            rest = self.total_mass - limit
            u = keyed_uniform(keys, _CH_REST)
            size = counts + poisson.ppf(u, np.maximum(rest, 0.0)).astype(np.int64)
        return idx, disp, ck, size

    def sample_enriched(self, rng, size):
        """Spine steps with brood-size marks ``1 + Poisson(Lambda(T))`` (size-biased brood)."""
        x = self.spine.sample(rng, size)
        marks = 1 + rng.poisson(self.total_mass, size=size)
        return x, marks

    def sample(self, rng, size=None):
        return self.spine.sample(rng, size)

    def to_config(self) -> dict:
        out = {"kind": self.kind, "right_cut": self.right_cut, "cap": self.cap}
        out.update(self.spine.to_config())
        return out


@dataclass
class BinaryGaussianModel(OffspringModel):
    """Two ``N(m, s2)`` children; ``m = s2 = 2 log 2`` puts it in the boundary case."""

    m: float = 2.0 * LOG2
    s2: float = 2.0 * LOG2
    cap: int | None = None
    kind: str = field(default="binary_gaussian", init=False)
    alpha: float = field(default=2.0, init=False)
    right_cut: float = field(default=math.inf, init=False)

    @property
    def sigma2(self) -> float:
        """Variance of the spine step (the tilt keeps the Gaussian variance)."""
        return self.s2

    @property
    def spine_law(self) -> GaussianStepLaw:
        return GaussianStepLaw(self.s2, self.m - self.s2)

    def stable_c0(self) -> float:
        return self.s2 / 2.0

    @property
    def defect(self) -> tuple[float, float]:
        return 0.0, 0.0

    def children(self, pos, keys, room):
        m = keys.size
        room = np.asarray(room, dtype=float)
        ck = child_keys(keys[:, None], np.arange(2)[None, :]).ravel()
        disp = self.m + math.sqrt(self.s2) * keyed_normal(ck, _CH_STEP)
        idx = np.repeat(np.arange(m), 2)
        ok = disp <= room[idx]
        return idx[ok], disp[ok], ck[ok], np.full(m, 2, dtype=np.int64)

    def sample_enriched(self, rng, size):
        x = self.spine_law.sample(rng, size)
        return x, np.full(np.shape(x), 2)

    def sample(self, rng, size=None):
        return self.spine_law.sample(rng, size)

    def to_config(self) -> dict:
        return {"kind": self.kind, "m": self.m, "s2": self.s2, "cap": self.cap}


def default_right_cut(spine: SpineLaw, budget: float = DEFECT_BUDGET) -> float:
    """Smallest cut with ``c T**-alpha <= budget``, padded by 25%."""
    t = 1.25 * (spine.tail_const / budget) ** (1.0 / spine.alpha)
    return max(t, spine.tail_threshold)


def make_poisson_boundary_model(spine: SpineLaw, right_cut: float | None = None,
                                cap=None) -> PoissonBoundaryModel:
    if right_cut is None:
        right_cut = default_right_cut(spine)
    return PoissonBoundaryModel(spine, right_cut, cap)


def make_binary_gaussian_model(cap=None) -> BinaryGaussianModel:
    return BinaryGaussianModel(cap=cap)


# ---------------------------------------------------------------------------
# barriers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BarrierSpec:
    """Upper barrier ``a i**exponent`` (or ``linear_eps * i``), optional lower ``(a-b) i**exponent``."""

    a: float = 1.0
    exponent: float = 1.0 / 3.0
    b: float | None = None
    linear_eps: float | None = None

    def __post_init__(self):
        if self.linear_eps is None and not self.a > 0:
            raise ValueError("barrier coefficient a must be positive")
        if self.b is not None and not 0 < self.b:
            raise ValueError("lower offset b must be positive")

    @classmethod
    def for_alpha(cls, a: float, alpha: float, **kw) -> "BarrierSpec":
        return cls(a, 1.0 / (1.0 + alpha), **kw)

    def upper(self, i) -> np.ndarray:
        i = np.asarray(i, dtype=float)
        if self.linear_eps is not None:
            return self.linear_eps * i
        return self.a * i ** self.exponent

    def lower(self, i):
        if self.b is None:
            return -np.inf
        return (self.a - self.b) * np.asarray(i, dtype=float) ** self.exponent

    def with_a(self, a: float) -> "BarrierSpec":
        return BarrierSpec(a, self.exponent, self.b, self.linear_eps)


NO_BARRIER = None


# ---------------------------------------------------------------------------
# population engine
# ---------------------------------------------------------------------------

@dataclass
class BlockResult:
    """Per-trial outcome of one block."""

    death_gen: np.ndarray       # first generation with no member; horizon+1 if alive at the end
    early_exit: np.ndarray      # population exceeded max_pop (declared surviving)
    counts: dict                # generation -> per-trial population sizes (recorded generations)
    max_seen: np.ndarray


def _evolve(model, barrier, keys, start_pos, start_gen, n_gens, max_pop=None,
            record=(), mode="declare", check=False):
    """Run a block of independent trees for ``n_gens`` generations.

    Trial ``t`` starts with one individual at ``start_pos[t]`` in generation
    ``start_gen``. Individuals are removed when above ``barrier.upper`` or
    below ``barrier.lower`` of their generation. When a tree exceeds
    ``max_pop`` it is either frozen and declared surviving (``mode="declare"``)
    or thinned to ``max_pop`` members by keyed uniform ranks (``"subsample"``).
    """
    nt = keys.size
    pos = np.asarray(start_pos, dtype=float).copy()
    k = keys.copy()
    tid = np.arange(nt)
    death = np.full(nt, n_gens + 1, dtype=np.int64)
    early = np.zeros(nt, dtype=bool)
    max_seen = np.ones(nt, dtype=np.int64)
    counts = {}
    record = set(record)
    if 0 in record:
        counts[0] = np.ones(nt, dtype=np.int64)
    for g in range(1, n_gens + 1):
        gen = start_gen + g
        if pos.size == 0:
            for r in record:
                if r >= g:
                    counts.setdefault(r, np.zeros(nt, dtype=np.int64))
            break
        if barrier is None:
            room = np.full(pos.size, np.inf)
        else:
            room = float(barrier.upper(gen)) - pos
        idx, disp, ck, size = model.children(pos, k, room)
        if model.cap is not None:
            keep = size[idx] <= model.cap
            idx, disp, ck = idx[keep], disp[keep], ck[keep]
        newpos = pos[idx] + disp
        newtid = tid[idx]
        if barrier is not None:
            lo = barrier.lower(gen)
            ok = (newpos >= lo) & (newpos <= float(barrier.upper(gen)))
            newpos, newtid, ck = newpos[ok], newtid[ok], ck[ok]
            if check and newpos.size:
                # absorption soundness: every materialised member is inside the corridor
                if not (np.all(newpos <= float(barrier.upper(gen))) and np.all(newpos >= lo)):
                    raise AssertionError(f"member outside the barriers at generation {gen}")
        pos, k, tid = newpos, ck, newtid
        c = np.bincount(tid, minlength=nt)
        max_seen = np.maximum(max_seen, c)
        alive_before = death > n_gens
        died = alive_before & (c == 0) & ~early
        death[died] = g
        if g in record:
            counts[g] = c.copy()
        if max_pop is not None:
            over = c > max_pop
            if np.any(over):
                if mode == "declare":
                    early |= over
                    drop = over[tid]
                    pos, k, tid = pos[~drop], k[~drop], tid[~drop]
                elif mode == "subsample":
                    u = keyed_uniform(k, 11)
                    order = np.lexsort((u, tid))
                    tid_s = tid[order]
                    starts = np.searchsorted(tid_s, np.arange(nt))
                    rank = np.arange(tid_s.size) - starts[tid_s]
                    keep = np.zeros(tid.size, dtype=bool)
                    keep[order[rank < max_pop]] = True
                    pos, k, tid = pos[keep], k[keep], tid[keep]
                else:
                    raise ValueError(f"unknown population-cap mode {mode!r}")
    return BlockResult(death, early, counts, max_seen)


def _block_keys(rng, trials, block):
    keys = root_keys(rng, trials)
    return [keys[i:i + block] for i in range(0, trials, block)]


def _run_blocks(fn, key_blocks, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, key_blocks))
    return [fn(kb) for kb in key_blocks]


class _SurvivalTask:
    def __init__(self, model, barrier, n, max_pop, mode):
        self.args = (model, barrier, n, max_pop, mode)

    def __call__(self, keys):
        model, barrier, n, max_pop, mode = self.args
        r = _evolve(model, barrier, keys, np.zeros(keys.size), 0, n, max_pop, mode=mode)
        return r.death_gen, r.early_exit


@dataclass
class SurvivalRun:
    """Per-trial survival data from one call, usable for every horizon ``<= n``."""

    death_gen: np.ndarray
    early_exit: np.ndarray
    n: int
    keys: np.ndarray

    def survived(self, n: int | None = None) -> np.ndarray:
        n = self.n if n is None else n
        return self.early_exit | (self.death_gen > n)


def simulate_survival(model, barrier, n, trials, rng, max_pop=100_000, mode="declare",
                      block=256, workers=None, keys=None) -> SurvivalRun:
    if n < 1:
        raise ValueError("horizon must be at least 1")
    if keys is None:
        keys = root_keys(rng, trials)
    blocks = [keys[i:i + block] for i in range(0, keys.size, block)]
    out = _run_blocks(_SurvivalTask(model, barrier, n, max_pop, mode), blocks, workers)
    death = np.concatenate([o[0] for o in out])
    early = np.concatenate([o[1] for o in out])
    return SurvivalRun(death, early, n, keys)


def survival_prob(model, barrier: BarrierSpec, n: int, trials: int, rng, max_pop: int = 100_000,
                  mode: str = "declare", aux_trials: int = 0, aux_factor: int = 10,
                  workers=None, block: int = 256) -> Estimate:
    """Fraction of trees with a member at generation ``n`` that respected the barrier throughout.

    A tree whose population exceeds ``max_pop`` is declared surviving
    (``mode="declare"``, biased upward) or thinned (``"subsample"``, biased
    downward). With ``aux_trials > 0`` up to that many early-exit trees are
    re-run with ``aux_factor * max_pop``; the fraction that still dies, times
    the early-exit frequency, estimates the upward bias.
    """
    run = simulate_survival(model, barrier, n, trials, rng, max_pop, mode, block, workers)
    alive = run.survived()
    extra = {"early_exit": int(run.early_exit.sum()), "max_pop": max_pop, "mode": mode, "n": n}
    if aux_trials and run.early_exit.any() and mode == "declare":
        sel = run.keys[run.early_exit][:aux_trials]
        aux = simulate_survival(model, barrier, n, sel.size, None, max_pop * aux_factor, mode,
                                block, workers, keys=sel)
        died = int((~aux.survived()).sum())
        frac = died / sel.size
        extra.update(aux_trials=int(sel.size), aux_died=died,
                     bias_estimate=frac * run.early_exit.mean())
    return binomial_estimate(int(alive.sum()), trials, **extra)


@dataclass
class SurvivalCurve:
    a_grid: list
    n: int
    estimates: list
    trials: int
    max_pop: int

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    def rows(self) -> list[dict]:
        return [{"a": a, "n": self.n, "s": e.value, "stderr": e.std_error,
                 "trials": self.trials, "max_pop": self.max_pop}
                for a, e in zip(self.a_grid, self.estimates)]


def survival_curve(model, a_grid, n, trials, seed_rng, exponent=None, max_pop=100_000,
                   workers=None) -> SurvivalCurve:
    """Survival estimates on an ``a``-grid, all sharing the same trees."""
    exponent = 1.0 / (1.0 + model.alpha) if exponent is None else exponent
    keys = root_keys(seed_rng, trials)
    ests = []
    for a in a_grid:
        run = simulate_survival(model, BarrierSpec(a, exponent), n, trials, None, max_pop,
                                workers=workers, keys=keys)
        ests.append(binomial_estimate(int(run.survived().sum()), trials, a=a, n=n))
    return SurvivalCurve(list(a_grid), n, ests, trials, max_pop)


@dataclass
class CrossingEstimate:
    a_cross: float
    bracket: tuple
    widths: list
    n: int
    threshold: float
    evaluations: list

    def as_dict(self) -> dict:
        return {"a_cross": self.a_cross, "bracket": list(self.bracket), "widths": self.widths,
                "n": self.n, "threshold": self.threshold}


def critical_a_search(model, horizon: int, trials: int, bracket, threshold: float = 0.5,
                      rng=None, tol: float = 0.02, max_pop: int = 2000, max_iter: int = 30,
                      workers=None) -> CrossingEstimate:
    """Bisection for ``s(a, n) = threshold`` on the CRN-coupled survival curve.

    All evaluations reuse the same root keys, so ``s(., n)`` is exactly
    nondecreasing and the bisection is well defined.
    """
    a_lo, a_hi = map(float, bracket)
    if not a_lo < a_hi:
        raise ValueError("bracket must satisfy a_lo < a_hi")
    keys = root_keys(rng, trials)
    exponent = 1.0 / (1.0 + model.alpha)

    def s(a):
        run = simulate_survival(model, BarrierSpec(a, exponent), horizon, trials, None,
                                max_pop, workers=workers, keys=keys)
        return float(run.survived().mean())

    s_lo, s_hi = s(a_lo), s(a_hi)
    evals = [(a_lo, s_lo), (a_hi, s_hi)]
    if not s_lo < threshold < s_hi:
        raise ValueError(f"bracket does not straddle the threshold: s({a_lo})={s_lo}, "
                         f"s({a_hi})={s_hi}, threshold={threshold}")
    widths = [a_hi - a_lo]
    for _ in range(max_iter):
        if a_hi - a_lo <= tol:
            break
        mid = 0.5 * (a_lo + a_hi)
        sm = s(mid)
        evals.append((mid, sm))
        if sm < threshold:
            a_lo = mid
        else:
            a_hi = mid
        widths.append(a_hi - a_lo)
    return CrossingEstimate(0.5 * (a_lo + a_hi), (a_lo, a_hi), widths, horizon, threshold, evals)


# ---------------------------------------------------------------------------
# two-barrier corridor counts and Paley-Zygmund
# ---------------------------------------------------------------------------

def corridor_cap(l_k: int, c_exp: float) -> int:
    """``R_k = floor(exp(l_k**(1/c)))``."""
    return int(math.floor(math.exp(l_k ** (1.0 / c_exp))))


def _generations(lambda_: float, k: int, max_generation: int):
    base = math.exp(lambda_)
    N = round(base)
    if abs(base - N) > 1e-9 or N < 2:
        raise ValueError("exp(lambda) must be an integer >= 2")
    g0, g1 = N ** k, N ** (k + 1)
    if g1 > max_generation:
        raise OverflowError(f"generation {g1} exceeds the horizon budget {max_generation}")
    return g0, g1


def two_barrier_counts(model, a: float, b: float, lambda_: float, k: int, trials: int, rng,
                       cap: int | None = None, max_generation: int = 100_000,
                       block: int = 64, keys=None) -> np.ndarray:
    """``trials`` samples of ``Z_k``.

    One individual starts on the upper barrier, at ``a * N**(k/(1+alpha))`` in
    generation ``N**k`` with ``N = e**lambda``. The function returns the number
    of its descendants in generation ``N**(k+1)`` that stayed in
    ``[(a-b) i**(1/(1+alpha)), a i**(1/(1+alpha))]`` throughout. With ``cap``
    any individual whose brood exceeds ``cap`` loses all its descendants.
    """
    g0, g1 = _generations(lambda_, k, max_generation)
    exponent = 1.0 / (1.0 + model.alpha)
    if keys is None:
        keys = root_keys(rng, trials)
    if b >= a:
        # lower barrier at or above zero: still a valid corridor, simulate as is
        pass
    barrier = BarrierSpec(a, exponent, b=b)
    saved = model.cap
    model.cap = cap
    try:
        out = []
        for i in range(0, keys.size, block):
            kb = keys[i:i + block]
            start = np.full(kb.size, a * g0 ** exponent)
            r = _evolve(model, barrier, kb, start, g0, g1 - g0, None, record=(g1 - g0,))
            out.append(r.counts[g1 - g0])
    finally:
        model.cap = saved
    return np.concatenate(out)


def two_barrier_count(model, a, b, lambda_, k, rng, cap=None, max_generation=100_000) -> int:
    return int(two_barrier_counts(model, a, b, lambda_, k, 1, rng, cap, max_generation)[0])


@dataclass
class PaleyZygmundReport:
    theta: float
    mean: float
    second_moment: float
    T_k: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.T_k >= self.bound - 1e-12


def paley_zygmund_check(samples, theta: float = 0.5) -> PaleyZygmundReport:
    """Empirical ``T_k = P(Z >= theta E Z)`` against ``(1-theta)^2 (E Z)^2 / E Z^2``.

    Both sides use the empirical law of ``samples``; the inequality then holds
    exactly, so a violation signals a bookkeeping error.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    z = np.asarray(samples, dtype=float)
    m, m2 = float(z.mean()), float((z ** 2).mean())
    t_k = float((z >= theta * m).mean())
    bound = (1 - theta) ** 2 * m * m / m2 if m2 > 0 else 0.0
    return PaleyZygmundReport(theta, m, m2, t_k, bound)


# ---------------------------------------------------------------------------
# many-to-one
# ---------------------------------------------------------------------------

def _tube_indicator(paths, marks=None, half_width=2.0):
    return np.all(np.abs(paths) <= half_width, axis=1).astype(float)


def _exp_bounded(paths, marks=None):
    return np.exp(-np.abs(paths[:, -1]))


def _bivariate(paths, marks):
    return ((paths[:, 0] <= 0) & (marks <= 3)).astype(float)


def _constant_one(paths, marks=None):
    return np.ones(paths.shape[0])


def _nonpositive_first(paths, marks=None):
    return (paths[:, 0] <= 0).astype(float)


FUNCTIONALS = {
    "indicator_tube": _tube_indicator,
    "exp_bounded": _exp_bounded,
    "bivariate": _bivariate,
    "one": _constant_one,
    "nonpositive": _nonpositive_first,
}


@dataclass
class ManyToOneResult:
    left: Estimate
    right: Estimate
    bias: float
    functional: str
    n: int

    @property
    def overlap(self) -> bool:
        return self.left.overlaps(self.right, slack=self.bias)

    def as_dict(self) -> dict:
        return {"n": self.n, "functional": self.functional, "bias": self.bias,
                "overlap": self.overlap, "left": self.left.as_dict(), "right": self.right.as_dict()}


def _tree_functional(model, n, keys, fn):
    """Per-tree ``sum_{|u|=n} e^{-V(u)} F(V(u_1), ..., V(u_n); #T_1)`` without barrier."""
    nt = keys.size
    paths = np.zeros((nt, 0))
    pos = np.zeros(nt)
    k = keys.copy()
    tid = np.arange(nt)
    root_brood = None
    for g in range(1, n + 1):
        idx, disp, ck, size = model.children(pos, k, np.full(pos.size, np.inf))
        if model.cap is not None:
            keep = size[idx] <= model.cap
            idx, disp, ck = idx[keep], disp[keep], ck[keep]
        if g == 1:
            root_brood = size
        pos = pos[idx] + disp
        paths = np.column_stack([paths[idx], pos])
        k, tid = ck, tid[idx]
    marks = root_brood[tid]
    vals = np.exp(-pos) * fn(paths, marks)
    return np.bincount(tid, weights=vals, minlength=nt)


def many_to_one_check(model, n: int, functional: str, trials: int, rng,
                      block: int = 4096, spine_trials: int | None = None) -> ManyToOneResult:
    """Both sides of the many-to-one identity as independent Monte Carlo estimates.

    The left side sums ``e^{-V(u)} F`` over generation ``n`` of simulated
    trees. The right side averages ``F`` along a walk with the spine step law
    (with the size-biased brood mark for the bivariate functional). The right
    cut costs at most ``n * c * T**-alpha`` on the left; that is returned as
    ``bias`` and added as slack when comparing intervals.

    ``trials`` trees are simulated; the walk side uses ``spine_trials``
    (default ``trials``) samples. Per-tree sums are skewed and far noisier
    than the walk average, so a larger tree sample evens out the two widths.
    """
    if not 1 <= n <= 6:
        raise ValueError("many-to-one checks are limited to 1 <= n <= 6")
    fn = FUNCTIONALS[functional]
    keys = root_keys(rng, trials)
    left = np.concatenate([_tree_functional(model, n, keys[i:i + block], fn)
                           for i in range(0, trials, block)])
    steps, marks = model.sample_enriched(rng, (spine_trials or trials, n))
    walk = np.cumsum(steps, axis=1)
    right = fn(walk, marks[:, 0])
    bias = n * model.defect[0]
    return ManyToOneResult(mean_estimate(left, side="tree"), mean_estimate(right, side="spine"),
                           bias, functional, n)


def campbell_check(model: PoissonBoundaryModel, broods: int, rng) -> Estimate:
    """Monte Carlo ``E sum e^{-V}`` over full broods (compare with ``1 - c T**-alpha``)."""
    keys = root_keys(rng, broods)
    vals = _tree_functional(model, 1, keys, _constant_one)
    return mean_estimate(vals, target=1.0 - model.defect[0])


# ---------------------------------------------------------------------------
# population growth along the corridor
# ---------------------------------------------------------------------------

@dataclass
class BnReport:
    a: float
    r_a: float
    eps: float
    N: int
    k_max: int
    thresholds: list
    frequencies: list           # P(event holds for all k' <= k), k = 1..k_max
    estimate: Estimate
    counts_mean: list

    def as_dict(self) -> dict:
        return {"a": self.a, "r_a": self.r_a, "eps": self.eps, "N": self.N, "k_max": self.k_max,
                "thresholds": self.thresholds, "frequencies": self.frequencies,
                "counts_mean": self.counts_mean, **self.estimate.as_dict()}


def bn_experiment(model, a: float, N: int, k_max: int, trials: int, rng, cstar: float,
                  eps: float | None = None, max_generation: int = 5000,
                  block: int = 64, max_pop: int = 20_000) -> BnReport:
    """Frequency of ``#{corridor members at N**k} >= exp(N**(k/(1+alpha)) (r_a - eps) / 2)`` for all ``k <= k_max``.

    The corridor is ``[(a - r_a) i**(1/(1+alpha)), a i**(1/(1+alpha))]`` from
    generation 1. ``eps`` defaults to ``0.75 r_a``, which keeps the first
    threshold below the largest possible binary population at ``N = 4``.

    Trees larger than ``max_pop`` are thinned to ``max_pop`` members. The
    thinned tree is a subtree of the real one, so every recorded count is a
    pathwise lower bound and the reported frequency errs low.
    """
    alpha = model.alpha
    if not a > a_alpha(alpha, cstar):
        raise ValueError("a must exceed the critical coefficient")
    r = r_a(a, alpha, cstar)
    eps = 0.75 * r if eps is None else float(eps)
    if not 0 < eps < r:
        raise ValueError("eps must lie in (0, r_a)")
    if N ** k_max > max_generation:
        raise OverflowError(f"N**k_max = {N ** k_max} exceeds the generation budget {max_generation}")
    exponent = 1.0 / (1.0 + alpha)
    gens = [N ** k for k in range(1, k_max + 1)]
    thr = [math.exp(0.5 * g ** exponent * (r - eps)) for g in gens]
    barrier = BarrierSpec(a, exponent, b=r)
    keys = root_keys(rng, trials)
    ok = np.ones((trials, k_max), dtype=bool)
    means = np.zeros(k_max)
    for i in range(0, trials, block):
        kb = keys[i:i + block]
        res = _evolve(model, barrier, kb, np.zeros(kb.size), 0, gens[-1], max_pop,
                      record=gens, mode="subsample")
        for j, g in enumerate(gens):
            ok[i:i + block, j] = res.counts[g] >= thr[j]
            means[j] += res.counts[g].sum()
    nested = np.cumprod(ok, axis=1).astype(bool)
    freqs = [float(x) for x in nested.mean(axis=0)]
    succ = int(nested[:, -1].sum())
    est = binomial_estimate(succ, trials, level=0.95)
    return BnReport(a, r, eps, N, k_max, thr, freqs, est, list(means / trials))


def linear_barrier_check(model, eps: float, horizon: int, trials: int, rng,
                         max_pop: int = 1000) -> Estimate:
    """Survival frequency under the linear barrier ``phi(i) = eps * i``."""
    return survival_prob(model, BarrierSpec(linear_eps=eps), horizon, trials, rng, max_pop)


def galton_watson_survival(model, horizon: int, trials: int, rng, max_pop: int = 1000) -> Estimate:
    """Survival frequency with no barrier at all."""
    run = simulate_survival(model, None, horizon, trials, rng, max_pop)
    return binomial_estimate(int(run.survived().sum()), trials)
