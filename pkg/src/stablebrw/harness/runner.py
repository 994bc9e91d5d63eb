"""Experiment dispatch, persistence and reports.

Each experiment returns trial-level records (written to ``records.jsonl`` as
they are produced), summary rows (``summary.csv``) and report lines
(``report.txt``). Randomness for a stage comes from ``stream(seed, kind, stage)``
so stages never share a stream.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..branching import (BarrierSpec, critical_a_search, galton_watson_survival, make_binary_gaussian_model,
                         make_poisson_boundary_model, many_to_one_check, survival_curve,
                         survival_prob, bn_experiment)
from ..critical_ode import a_alpha, argmin_f, finite_variance_a_hat, r_a, solve_h
from ..spine_law import GaussianStepLaw, make_pareto_spine, validate_boundary_tail
from ..stable_process import (StableSpec, cstar_closed_form, estimate_cstar_mc,
                              estimate_cstar_spectral, extract_c0)
from ..streams import stream
from ..tube_prob import TubeSpec, empirical_rate
from .config import RunConfig


@dataclass
class RunRecord:
    config_hash: str
    kind: str
    seed: int
    version: str
    wall_time: float
    results: list
    summary: list
    report: list = field(default_factory=list)
    truncated: bool = False


class _Sink:
    """Appends JSON lines; every line carries the config hash."""

    def __init__(self, path, config_hash):
        self.fh = open(path, "w")
        self.hash = config_hash
        self.items = []

    def __call__(self, rec: dict):
        rec = {"config_hash": self.hash, **rec}
        self.items.append(rec)
        self.fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def build_model(cfg: RunConfig):
    if cfg.model == "binary_gaussian":
        return make_binary_gaussian_model(cap=cfg.cap_R)
    spine = make_pareto_spine(cfg.alpha, cfg.c, cfg.y0)
    return make_poisson_boundary_model(spine, cfg.cut_T, cap=cfg.cap_R)


def model_cstar(model, n_bins: int = 200, dt: float = 1e-3) -> tuple[float, float]:
    """``(C_*, std_error)`` for the model's spine.

    Gaussian spines use the closed form. Stable spines use the spectral
    estimate at ``c0 = 1`` scaled linearly in ``c0``.
    """
    if model.alpha == 2.0:
        return cstar_closed_form(math.sqrt(2.0 * model.stable_c0())), 0.0
    unit = estimate_cstar_spectral(StableSpec(model.alpha, 1.0), dt, n_bins)
    c0 = model.stable_c0()
    return c0 * unit.value, c0 * unit.std_error


def _cstar_for(cfg: RunConfig) -> float:
    if "cstar" in cfg.extra:
        return float(cfg.extra["cstar"])
    if cfg.alpha == 2.0:
        return cstar_closed_form(math.sqrt(cfg.sigma2))
    c0 = extract_c0(cfg.alpha, cfg.c).c0
    return c0 * estimate_cstar_spectral(StableSpec(cfg.alpha, 1.0), cfg.dt, cfg.n_bins).value


# ---------------------------------------------------------------------------
# experiments: each returns (summary rows, report lines) and emits records
# ---------------------------------------------------------------------------

def _calibrate(cfg, emit):
    lines = []
    if cfg.alpha == 2.0:
        law = GaussianStepLaw(cfg.sigma2)
        c0 = law.stable_c0()
        row = {"alpha": 2.0, "variance": cfg.sigma2, "c0": c0}
        lines.append(f"Gaussian spine: variance {cfg.sigma2:.6g}, c0 = variance/2 = {c0:.6g}")
    else:
        law = make_pareto_spine(cfg.alpha, cfg.c, cfg.y0)
        fit = extract_c0(cfg.alpha, cfg.c)
        tail = validate_boundary_tail(law, np.geomspace(cfg.y0, 1e3 * cfg.y0, 13),
                                      0.5 * law.left_rate)
        mean = law.moment_by_quadrature(lambda x: x)
        row = {"alpha": cfg.alpha, "c": cfg.c, "y0": cfg.y0, "left_weight": law.left_weight,
               "left_rate": law.left_rate, "mean": mean, "c0": fit.c0,
               "c0_residual": fit.residual}
        emit({"stage": "tail", "tail_deviation": tail.tail_deviation, "mean_abs": tail.mean_abs,
              "exp_moment": tail.exp_moment})
        lines += [f"Pareto spine alpha={cfg.alpha} c={cfg.c} y0={cfg.y0}",
                  f"  left weight {law.left_weight:.8g}, left rate {law.left_rate:.8g}, mean {mean:.3g}",
                  f"  stable c0 = {fit.c0:.8g} (fit residual {fit.residual:.2g})"]
    emit({"stage": "calibrate", **row})
    return [row], lines


def _cstar(cfg, emit):
    if cfg.alpha == 2.0:
        sigma = math.sqrt(cfg.sigma2) if cfg.sigma is not None else 1.0
        spec = StableSpec.gaussian(sigma)
        closed = cstar_closed_form(sigma)
    else:
        c0 = float(cfg.extra.get("c0", 0.0)) or extract_c0(cfg.alpha, cfg.c).c0
        spec = StableSpec(cfg.alpha, c0)
        closed = None
    spectral = estimate_cstar_spectral(spec, cfg.dt, cfg.n_bins)
    emit({"stage": "spectral", **spectral.record()})
    particles = max(cfg.trials, 1000)
    t_end = float(cfg.extra.get("t_end", 4.0))
    mc = estimate_cstar_mc(spec, cfg.dt, t_end, particles, stream(cfg.seed, "cstar", "mc"))
    emit({"stage": "mc", **mc.record()})
    rows = []
    lines = [f"confinement constant, alpha={spec.alpha}, c0={spec.c0:.6g}"]
    if closed is not None:
        lines.append(f"  closed form pi^2 sigma^2/2 = {closed:.4f}")
    for est in (spectral, mc):
        rel = (est.value / closed - 1.0) if closed else None
        rows.append({"method": est.method, "alpha": spec.alpha, "c0": spec.c0, "dt": est.dt,
                     "value": est.value, "std_error": est.std_error, "closed_form": closed,
                     "rel_error": rel})
        tail = f" (rel. error {rel:+.2%})" if rel is not None else ""
        lines.append(f"  {est.method:8s} {est.value:.4f} +- {est.std_error:.4f}{tail}")
    return rows, lines


def _tube(cfg, emit):
    law = GaussianStepLaw(cfg.sigma2) if cfg.alpha == 2.0 else make_pareto_spine(cfg.alpha, cfg.c, cfg.y0)
    width = cfg.b if cfg.b is not None else 1.0
    n_list = list(cfg.n) or [200, 400, 800]
    tube = TubeSpec.for_alpha(-width / 2, width / 2, n_list[0], cfg.alpha)
    cstar = _cstar_for(cfg) if cfg.alpha < 2.0 else cstar_closed_form(math.sqrt(cfg.sigma2))
    rep = empirical_rate(law, tube, n_list, cfg.trials, stream(cfg.seed, "tube", "rate"), cstar)
    rows = []
    for n, r, se, g in zip(rep.n_list, rep.rates, rep.rate_std_errors, rep.gaps):
        row = {"n": n, "rate": r, "std_error": se, "target": rep.target, "gap": g}
        emit({"stage": "rate", **row})
        rows.append(row)
    emit({"stage": "extrapolation", **rep.as_dict()})
    rows.append({"n": "inf", "rate": rep.extrapolated, "std_error": rep.extrapolated_std_error,
                 "target": rep.target, "gap": rep.extrapolated_gap})
    lines = [f"tube rate, width {width}, C_* = {cstar:.5g}, target {rep.target:.5g}"]
    lines += [f"  n={n:5d} rate {r:.4f} gap {g:.1%}" for n, r, g in zip(rep.n_list, rep.rates, rep.gaps)]
    lines.append(f"  extrapolated {rep.extrapolated:.4f} (gap {rep.extrapolated_gap:.1%})")
    return rows, lines


def _manytoone(cfg, emit):
    model = build_model(cfg)
    ns = list(cfg.n) or [1, 2, 3]
    funcs = cfg.extra.get("functionals", "indicator_tube,exp_bounded").split(",")
    rows, lines = [], ["many-to-one: tree sum vs spine walk"]
    for n in ns:
        for f in funcs:
            res = many_to_one_check(model, n, f, cfg.trials, stream(cfg.seed, "manytoone", n, f))
            emit({"stage": "pair", **res.as_dict()})
            rows.append({"n": n, "functional": f, "tree": res.left.value,
                         "tree_se": res.left.std_error, "spine": res.right.value,
                         "spine_se": res.right.std_error, "bias": res.bias, "overlap": res.overlap})
            lines.append(f"  n={n} {f:15s} tree {res.left.value:.4f}+-{res.left.std_error:.4f} "
                         f"spine {res.right.value:.4f}+-{res.right.std_error:.4f} "
                         f"{'overlap' if res.overlap else 'NO OVERLAP'}")
    return rows, lines


def _default_a_grid(cfg, aa):
    return list(cfg.a) or [round(f * aa, 6) for f in (0.3, 0.6, 0.9, 1.2, 1.5, 2.0)]


def _survival(cfg, emit):
    model = build_model(cfg)
    cstar, _ = model_cstar(model, cfg.n_bins, cfg.dt)
    aa = a_alpha(model.alpha, cstar)
    grid = _default_a_grid(cfg, aa)
    rows, lines = [], [f"survival, model {cfg.model}, a_alpha = {aa:.5g}"]
    for n in list(cfg.n) or [1000]:
        curve = survival_curve(model, grid, n, cfg.trials, stream(cfg.seed, "survival", n),
                               max_pop=cfg.max_pop, workers=cfg.workers)
        for row in curve.rows():
            row["a_over_a_alpha"] = row["a"] / aa
            emit({"stage": "curve", **row})
            rows.append(row)
            lines.append(f"  n={n} a={row['a']:.4f} ({row['a_over_a_alpha']:.2f} a_alpha) "
                         f"s={row['s']:.4f} +- {row['stderr']:.4f}")
    return rows, lines


def _critical(cfg, emit):
    cstar = _cstar_for(cfg)
    aa = a_alpha(cfg.alpha, cstar)
    rows, lines = [], [f"alpha={cfg.alpha} C_*={cstar:.6g} a_alpha={aa:.6g} argmin f={argmin_f(cfg.alpha, cstar):.6g}"]
    if cfg.alpha == 2.0:
        lines.append(f"  (3/2)(3 pi^2 sigma^2)^(1/3) = {finite_variance_a_hat(cfg.sigma2):.6g}")
    for a in list(cfg.a) or [0.5 * aa, 1.5 * aa]:
        row = {"alpha": cfg.alpha, "cstar": cstar, "a_alpha": aa, "a": a,
               "r_a": r_a(a, cfg.alpha, cstar) if a > aa else None, "t_max": None, "K": None}
        if a < aa:
            sol = solve_h(a, cfg.alpha, cstar)
            row["t_max"], row["K"] = sol.t_max, sol.K
        emit({"stage": "critical", **row})
        rows.append(row)
        lines.append("  " + ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                                      for k, v in row.items()))
    return rows, lines


def _ode(cfg, emit):
    cstar = _cstar_for(cfg)
    aa = a_alpha(cfg.alpha, cstar)
    rows, lines = [], [f"blow-down ODE, alpha={cfg.alpha}, C_*={cstar:.6g}, a_alpha={aa:.6g}"]
    for a in list(cfg.a) or [0.5 * aa]:
        sol = solve_h(a, cfg.alpha, cstar)
        for t, h in zip(sol.t_grid, sol.h_values):
            emit({"stage": "path", "a": a, "t": float(t), "h": float(h)})
        row = {"a": a, "t_max": sol.t_max, "K": sol.K, "residual": sol.conserved_residual,
               "blew_down": sol.blew_down}
        emit({"stage": "solution", **row})
        rows.append(row)
        lines.append(f"  a={a:.6g} t_max={sol.t_max:.6g} K={sol.K:.6g} residual={sol.conserved_residual:.2e}")
    return rows, lines


def _bn(cfg, emit):
    model = build_model(cfg)
    cstar, _ = model_cstar(model, cfg.n_bins, cfg.dt)
    aa = a_alpha(model.alpha, cstar)
    N = int(round(math.exp(cfg.lambda_)))
    rows, lines = [], [f"population growth along the corridor, N={N}, k_max={cfg.k_max}"]
    for a in list(cfg.a) or [1.5 * aa]:
        eps = float(cfg.extra["eps"]) if "eps" in cfg.extra else None
        rep = bn_experiment(model, a, N, cfg.k_max, cfg.trials, stream(cfg.seed, "bn", a), cstar,
                            eps=eps, max_pop=min(cfg.max_pop, 20_000))
        emit({"stage": "bn", **rep.as_dict()})
        for k, (thr, fr) in enumerate(zip(rep.thresholds, rep.frequencies), 1):
            rows.append({"a": a, "k": k, "threshold": thr, "frequency": fr})
        lines.append(f"  a={a:.4f} r_a={rep.r_a:.4f} eps={rep.eps:.4f} frequency {rep.estimate.value:.4f} "
                     f"[{rep.estimate.lower:.4f}, {rep.estimate.upper:.4f}]")
    return rows, lines


def _pipeline(cfg, emit):
    rep = pipeline_critical_comparison(cfg.alpha, cfg.c, cfg.y0, list(cfg.n) or [250, 500, 1000],
                                       trials=cfg.trials, seed=cfg.seed, max_pop=min(cfg.max_pop, 2000),
                                       cut_T=cfg.cut_T, emit=emit)
    rows = [{"n": n, "a_cross": x, "a_alpha": rep["a_alpha"], "a_alpha_se": rep["a_alpha_se"],
             "threshold": rep["threshold"]}
            for n, x in zip(rep["horizons"], rep["crossings"])]
    lines = [f"pipeline alpha={cfg.alpha}: c0={rep['c0']:.6g} C_*={rep['cstar']:.6g} "
             f"a_alpha={rep['a_alpha']:.5g} +- {rep['a_alpha_se']:.2g}"]
    lines.append(f"  crossing level s = {rep['threshold']:.4g} (half the barrier-free survival)")
    lines += [f"  n={r['n']} crossing: {r['a_cross']}" for r in rows]
    lines.append(f"  crossing trend with n: {rep['direction']}")
    return rows, lines


_DISPATCH = {"calibrate": _calibrate, "cstar": _cstar, "tube": _tube, "manytoone": _manytoone,
             "survival": _survival, "critical": _critical, "ode": _ode, "bn": _bn,
             "pipeline": _pipeline}


def pipeline_critical_comparison(alpha: float, c: float = 0.016, y0: float = 0.1,
                                 horizons=(250, 500, 1000), trials: int = 500, seed: int = 0,
                                 max_pop: int = 2000, cut_T: float | None = None,
                                 emit=None) -> dict:
    """Spine calibration -> C_* -> a_alpha -> survival curves -> finite-n crossings.

    ``alpha = 2`` uses the binary-Gaussian model, otherwise the Poisson model
    over a Pareto spine. Every stage has its own stream and a failure is
    re-raised with the stage name.
    """
    emit = emit or (lambda rec: None)
    out = {"alpha": alpha, "horizons": list(horizons), "stage_seeds": {}}

    def stage(name, fn):
        out["stage_seeds"][name] = [seed, "pipeline", name]
        try:
            val = fn(stream(seed, "pipeline", name))
        except Exception as exc:
            raise RuntimeError(f"pipeline stage '{name}' failed: {exc}") from exc
        emit({"stage": name, "result": val})
        return val

    if alpha == 2.0:
        model = make_binary_gaussian_model()
    else:
        model = make_poisson_boundary_model(make_pareto_spine(alpha, c, y0), cut_T)

    out["c0"] = stage("extract_c0", lambda r: model.stable_c0() if alpha == 2.0
                      else extract_c0(alpha, c).c0)

    def _cs(rng):
        if alpha == 2.0:
            spec = StableSpec(2.0, out["c0"])
            est = estimate_cstar_spectral(spec, 1e-3, 200)
            return {"spectral": est.value, "se": est.std_error,
                    "closed_form": cstar_closed_form(spec.scale * math.sqrt(2.0))}
        est = estimate_cstar_spectral(StableSpec(alpha, 1.0), 1e-3, 200)
        return {"spectral": out["c0"] * est.value, "se": out["c0"] * est.std_error}

    cs = stage("estimate_cstar", _cs)
    out["cstar"] = cs.get("closed_form", cs["spectral"])
    out["cstar_se"] = cs["se"]
    aa = stage("a_alpha", lambda r: a_alpha(alpha, out["cstar"]))
    out["a_alpha"] = aa
    out["a_alpha_se"] = aa / (1.0 + alpha) * out["cstar_se"] / out["cstar"]
    grid = [f * aa for f in (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0)]

    # binary trees never die without a barrier, Poisson trees can: the
    # crossing level is half the barrier-free survival probability
    def _gw(rng):
        if alpha == 2.0:
            return 1.0
        return galton_watson_survival(model, max(horizons), trials, rng, max_pop).value

    out["gw_survival"] = stage("galton_watson", _gw)
    level = 0.5 * out["gw_survival"]
    out["threshold"] = level

    def _curves(rng):
        res = {}
        for n in horizons:
            curve = survival_curve(model, grid, n, trials, rng, max_pop=max_pop)
            res[n] = curve.rows()
        return res

    out["curves"] = stage("survival_curves", _curves)

    def _cross(rng):
        res = []
        for n in horizons:
            s_vals = [row["s"] for row in out["curves"][n]]
            lo = max([a for a, s in zip(grid, s_vals) if s < level], default=None)
            hi = min([a for a, s in zip(grid, s_vals) if s > level], default=None)
            if lo is None or hi is None or lo >= hi:
                res.append(None)
                continue
            ce = critical_a_search(model, n, trials, (lo, hi), level, rng, tol=0.01 * aa,
                                   max_pop=max_pop)
            res.append(ce.a_cross)
        return res

    out["crossings"] = stage("critical_a_search", _cross)
    xs = [x for x in out["crossings"] if x is not None]
    out["direction"] = ("increasing" if all(b > a for a, b in zip(xs, xs[1:])) else
                        "decreasing" if all(b < a for a, b in zip(xs, xs[1:])) else "mixed")
    return out


def _write_summary(path, rows):
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})


def run(config: RunConfig) -> RunRecord:
    """Validate, run, and write ``records.jsonl``, ``summary.csv`` and ``report.txt``."""
    config.validate()
    os.makedirs(config.out, exist_ok=True)
    chash = config.hash()
    sink = _Sink(os.path.join(config.out, "records.jsonl"), chash)
    start = time.perf_counter()
    truncated = False
    rows, lines = [], []
    try:
        sink({"stage": "config", "config": config.as_dict(), "version": __version__})
        rows, lines = _DISPATCH[config.kind](config, sink)
    except KeyboardInterrupt:
        truncated = True
        sink({"stage": "truncated", "truncated": True})
    finally:
        sink.close()
    wall = time.perf_counter() - start
    _write_summary(os.path.join(config.out, "summary.csv"), rows)
    header = [f"experiment {config.kind}  config {chash}  seed {config.seed}  version {__version__}"]
    if truncated:
        header.append("RUN INTERRUPTED: outputs are partial")
    report = header + lines + [f"wall time {wall:.2f} s"]
    with open(os.path.join(config.out, "report.txt"), "w") as fh:
        fh.write("\n".join(report) + "\n")
    return RunRecord(chash, config.kind, config.seed, __version__, wall, sink.items, rows,
                     report, truncated)
