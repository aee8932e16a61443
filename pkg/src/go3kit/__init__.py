"""Desk-scale toolkit for the security-constrained AC unit-commitment market
problem: data model, evaluator, DC contingency analysis, equilibrium bound,
baseline solver and tournament harness."""
from .equilibrium import GapReport, bound_report, clear_market
from .evaluator import Evaluation, evaluate, evaluate_file, score
from .model import (Instance, Solution, load_instance, load_solution, save_instance, validate_instance)
from .solver import SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "GapReport", "bound_report", "clear_market", "Evaluation", "evaluate", "evaluate_file", "score",
    "Instance", "Solution", "load_instance", "load_solution", "save_instance", "validate_instance",
    "SolverConfig", "solve",
]
