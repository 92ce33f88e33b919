"""Throughput analysis and spectrum-access optimisation for a cell shared by
LTE, D2D, LTE-U, D2D-U and Wi-Fi users."""

from .errors import ConfigError, NumericalFailure
from .model import DensityVector, NetworkConfig, ThroughputReport, dbm_to_watts, derived_quantities, watts_to_dbm
from .mac import MapSet, compute_maps, map_kernel
from .analytic import analytic_report, total_throughput, vartheta
from .sim import estimate_throughputs, empirical_map
from .optimize import P1Instance, P1Solution, baseline_equal_proportion, greedy_init, grid_search, solve_p1
from .region import RegionBoundary, solve_p3, sweep_region_C, sweep_region_D, sweep_region_system

__all__ = [
    "ConfigError", "NumericalFailure",
    "DensityVector", "NetworkConfig", "ThroughputReport", "dbm_to_watts", "watts_to_dbm", "derived_quantities",
    "MapSet", "compute_maps", "map_kernel",
    "analytic_report", "total_throughput", "vartheta",
    "estimate_throughputs", "empirical_map",
    "P1Instance", "P1Solution", "baseline_equal_proportion", "greedy_init", "grid_search", "solve_p1",
    "RegionBoundary", "solve_p3", "sweep_region_C", "sweep_region_D", "sweep_region_system",
]
