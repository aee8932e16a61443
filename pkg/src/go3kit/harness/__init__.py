from .generate import PRESETS, ScenarioPreset, generate_scenario, get_preset
from .report import BreakdownReport, load_evaluations, report, write_report
from .tournament import (DEFAULT_COMMAND, ENSEMBLE, RankingTable, RunRecord, SolverSpec, TournamentResult,
                         build_ranking, load_limits, load_manifest, run_tournament, write_results)

__all__ = [
    "PRESETS", "ScenarioPreset", "generate_scenario", "get_preset",
    "BreakdownReport", "load_evaluations", "report", "write_report",
    "DEFAULT_COMMAND", "ENSEMBLE", "RankingTable", "RunRecord", "SolverSpec", "TournamentResult",
    "build_ranking", "load_limits", "load_manifest", "run_tournament", "write_results",
]
