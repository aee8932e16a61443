from .core import BudgetTooSmall, IncumbentWriter, SolverConfig, build_solution, polish, solve, trivial_solution
from .acrefine import ac_refine
from .dispatch import dispatch_phase
from .schedule import CandidateSchedule, batch_round, naive_round, ramp_windows, repair_schedule, uc_phase

__all__ = [
    "BudgetTooSmall", "CandidateSchedule", "IncumbentWriter", "SolverConfig", "ac_refine",
    "batch_round", "build_solution", "dispatch_phase", "naive_round", "polish", "ramp_windows",
    "repair_schedule", "solve", "trivial_solution", "uc_phase",
]
