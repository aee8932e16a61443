"""Penalty-breakdown reports: each penalty family as a percentage of |z_ms|,
value and cost shares, equilibrium gaps; CSV and JSON output."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

PENALTIES = ("p_imbalance", "q_imbalance", "base_overload", "ctg_worst", "ctg_avg",
             "reserve_shortage", "energy_limit")
_TERMS = {"p_imbalance": "z_p", "q_imbalance": "z_q", "base_overload": "z_s",
          "ctg_worst": "z_ctg_worst", "ctg_avg": "z_ctg_avg", "reserve_shortage": "z_rsv_zone",
          "energy_limit": "z_en"}
COLUMNS = (("instance", "solver", "score", "z_ms", "feasibility_class", "flagged")
           + tuple(f"pct_{k}" for k in PENALTIES)
           + ("pct_consumer_value", "pct_producer_cost", "gap_abs", "gap_rel_surplus", "gap_rel_cost"))


@dataclass
class BreakdownReport:
    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: "" if r.get(k) is None else r.get(k) for k in COLUMNS})

    def to_json(self, path=None) -> str:
        text = json.dumps(self.rows, indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def _pct(x: float, base: float) -> float | None:
    return None if base == 0 else 100.0 * x / base


def breakdown_row(instance: str, solver: str, evaluation: Mapping, gap: Mapping | None = None) -> dict:
    """One report row from an evaluation dict (``Evaluation.to_dict`` layout)."""
    obj = evaluation.get("objective")
    row = {"instance": instance, "solver": solver, "score": evaluation.get("score", 0.0),
           "feasibility_class": evaluation.get("feasibility_class"),
           "z_ms": None, "flagged": True}
    for k in PENALTIES:
        row[f"pct_{k}"] = None
    row.update(pct_consumer_value=None, pct_producer_cost=None)
    if obj is not None:
        z = float(obj["z_ms"])
        row["z_ms"] = z
        row["flagged"] = z == 0.0
        for k, term in _TERMS.items():
            row[f"pct_{k}"] = _pct(float(obj[term]), abs(z))
        row["pct_consumer_value"] = _pct(float(obj["energy_value"]), z)
        row["pct_producer_cost"] = _pct(float(obj["energy_cost"]), z)
    gap = gap or {}
    row["gap_abs"] = gap.get("abs_gap")
    row["gap_rel_surplus"] = gap.get("rel_gap_surplus")
    row["gap_rel_cost"] = gap.get("rel_gap_cost")
    return row


def report(evaluations: Iterable) -> BreakdownReport:
    """Rows from run records (objects with ``instance``, ``solver``, ``evaluation``, ``gap``)
    or from their dict form as written by the tournament."""
    rows = []
    for e in evaluations:
        if isinstance(e, Mapping):
            rows.append(breakdown_row(e["instance"], e["solver"], e["evaluation"], e.get("gap")))
        else:
            rows.append(breakdown_row(e.instance, e.solver, e.evaluation.to_dict(), e.gap))
    rows.sort(key=lambda r: (r["instance"], r["solver"]))
    return BreakdownReport(rows)


def load_evaluations(eval_dir) -> list[dict]:
    """Tournament run files; accepts a results directory or its ``evals`` subdirectory."""
    d = Path(eval_dir)
    if (d / "evals").is_dir():
        d = d / "evals"
    return [json.loads(p.read_text()) for p in sorted(d.glob("*.json"))]


def write_report(rep: BreakdownReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "breakdown.csv")
    rep.to_json(out / "breakdown.json")
