"""Command line entry point: ``python -m stablebrw <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import sys

from .config import KINDS, RunConfig, load_config_file
from .runner import run

_FLAGS = [
    ("--alpha", float, "stability index in (1, 2]"),
    ("--c", float, "Pareto tail constant of the spine"),
    ("--y0", float, "Pareto threshold of the spine"),
    ("--sigma", float, "spine standard deviation at alpha = 2"),
    ("--a", str, "barrier coefficient(s), comma separated"),
    ("--b", float, "lower-barrier offset, or tube width for 'tube'"),
    ("--lambda", float, "log N for the corridor experiments"),
    ("--n", str, "horizon(s), comma separated"),
    ("--trials", int, "Monte Carlo trials (particles for 'cstar')"),
    ("--seed", int, "master seed"),
    ("--out", str, "output directory"),
    ("--max-pop", int, "population cap (declared survival above it)"),
    ("--cap-R", int, "brood-size cap R"),
    ("--cut-T", float, "right cut T of the Poisson model"),
    ("--model", str, "binary_gaussian or poisson_boundary"),
    ("--dt", float, "time step for the C_* estimators"),
    ("--n-bins", int, "grid size for the spectral C_* estimator"),
    ("--k-max", int, "largest k in the corridor-growth experiment"),
    ("--workers", int, "worker processes for survival runs"),
    ("--cstar", float, "override C_*"),
    ("--eps", float, "slack in the corridor-growth threshold"),
]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stablebrw", description="Branching random walks with stable spines.")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", help="key = value file; command-line flags take precedence")
        for flag, typ, helptext in _FLAGS:
            sp.add_argument(flag, type=typ, default=None, help=helptext)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    values.update({k: v for k, v in vars(args).items() if v is not None and k not in ("kind", "config")})
    try:
        cfg = RunConfig.from_mapping(args.kind, values).validate()
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    rec = run(cfg)
    print("\n".join(rec.report))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
