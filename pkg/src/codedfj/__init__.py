"""Latency, decoding probability and peak age of information for coded multipath fork-join queues."""

__version__ = "0.1.0"

from .core import (UNBOUNDED, ConfigError, GridDistribution, QueueStateLaw, SystemConfig,
                   parse_queue_cap, poisson_pmf, subsets, validate_config)
from .path import (UnstableError, analyze_path, drop_prob, path_latency_conditional,
                   path_latency_infinite, path_latency_unconditional, sigma_root, steady_state,
                   transition_matrix)
from .block import (BlockAnalysis, InstanceTooLarge, StateSpaceTooLarge, block_latency,
                    block_latency_cdf_L1_closed, paoi_finite_smallinstance, paoi_infinite, paoi_L1)
from .simulator import Outcome, SimParams, SimulationResult, simulate_path, simulate_system
from .stats import EmpiricalCDF, MetricSummary, empirical_cdf, ks_distance, percentile, summarize

__all__ = [
    "UNBOUNDED", "ConfigError", "GridDistribution", "QueueStateLaw", "SystemConfig",
    "parse_queue_cap", "poisson_pmf", "subsets", "validate_config",
    "UnstableError", "analyze_path", "drop_prob", "path_latency_conditional",
    "path_latency_infinite", "path_latency_unconditional", "sigma_root", "steady_state",
    "transition_matrix",
    "BlockAnalysis", "InstanceTooLarge", "StateSpaceTooLarge", "block_latency",
    "block_latency_cdf_L1_closed", "paoi_finite_smallinstance", "paoi_infinite", "paoi_L1",
    "Outcome", "SimParams", "SimulationResult", "simulate_path", "simulate_system",
    "EmpiricalCDF", "MetricSummary", "empirical_cdf", "ks_distance", "percentile", "summarize",
]
