"""Configuration, experiment runner and command line interface."""
from .config import RunConfig, load_config_file
from .runner import RunRecord, pipeline_critical_comparison, run

__all__ = ["RunConfig", "RunRecord", "load_config_file", "pipeline_critical_comparison", "run"]
