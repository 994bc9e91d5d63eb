"""Branching random walks in the boundary case with stable spines.

Modules:

* :mod:`.spine_law` - boundary-calibrated step laws with Pareto right tails;
* :mod:`.stable_process` - stable sampling, Levy-exponent calibration and the
  confinement constant ``C_*``;
* :mod:`.tube_prob` - tube (small-deviation) probabilities and rates;
* :mod:`.branching` - offspring models, absorbing barriers, survival;
* :mod:`.critical_ode` - critical constants and the blow-down ODE;
* :mod:`.harness` - configuration, runner and CLI.
"""
try:
    from importlib.metadata import PackageNotFoundError, version

    __version__ = version("artifact")
except PackageNotFoundError:  # source checkout without installation
    __version__ = "0.1.0"
