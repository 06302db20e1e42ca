"""Discretized simulated bifurcation solver and time-to-epsilon benchmarking."""

__version__ = "0.1.0"

from .engine import SbmParams, SolveOutcome, resolve_c0, run_replica, sbm_step, solve, ternary_sign
from .harness import (
    benchmark_instance,
    grid_search,
    median_with_bootstrap,
    success_probability,
    tt_epsilon,
)
from .instances import generate_sidon_instance, king_graph, load_instance, save_instance
from .ising import IsingModel, QuboProblem, energy, qubo_to_ising
from .oracle import brute_force_ground_state
from .scaling import PowerLawFit, alpha_vs_epsilon, fit_power_law, import_external_medians

__all__ = [
    "IsingModel", "QuboProblem", "energy", "qubo_to_ising",
    "generate_sidon_instance", "king_graph", "load_instance", "save_instance",
    "brute_force_ground_state",
    "SbmParams", "SolveOutcome", "resolve_c0", "ternary_sign", "sbm_step", "run_replica", "solve",
    "success_probability", "tt_epsilon", "benchmark_instance", "median_with_bootstrap", "grid_search",
    "PowerLawFit", "fit_power_law", "alpha_vs_epsilon", "import_external_medians",
]
