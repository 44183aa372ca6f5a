# src/migrantpop/harness/__init__.py
"""Experiment drivers, config parsing, reports, and the command-line front end."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config_text, reference_config
from .experiments import (
    run_analytic_table,
    run_convergence,
    run_density_match,
    run_fpe_residual,
    run_identity_suite,
    run_simulate,
)
from .reports import Check, Report, write_report

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config_text",
    "reference_config",
    "run_density_match",
    "run_fpe_residual",
    "run_convergence",
    "run_identity_suite",
    "run_simulate",
    "run_analytic_table",
    "Check",
    "Report",
    "write_report",
]
