"""Multi-solver tournaments: one subprocess per (instance, solver) run with a
hard wall-clock kill, evaluation of the last file written, ensemble and
best-count ranking."""
from __future__ import annotations

import json
import logging
import os
import re
import shlex
import signal
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..equilibrium import bound_report
from ..evaluator import Evaluation, evaluate_file, malformed_evaluation
from ..model import Instance, load_instance, save_instance

log = logging.getLogger(__name__)

ENSEMBLE = "ensemble"
TIE_RTOL = 1e-9
DEFAULT_COMMAND = (f"{shlex.quote(sys.executable)} -m go3kit solve --instance {{instance}} "
                   "--out {out} --budget {budget} --seed {seed}")


@dataclass(frozen=True)
class SolverSpec:
    """A solver entry: ``command`` is a template over ``{instance}``, ``{out}``, ``{budget}``, ``{seed}``."""
    name: str
    command: str

    def argv(self, instance: Path, out: Path, budget: float, seed: int = 0) -> list[str]:
        text = self.command.format(instance=shlex.quote(str(instance)), out=shlex.quote(str(out)),
                                   budget=f"{budget:g}", seed=seed)
        return shlex.split(text)


@dataclass
class RunRecord:
    instance: str
    solver: str
    division: str
    limit: float
    elapsed: float
    killed: bool
    returncode: int | None
    evaluation: Evaluation
    gap: dict | None = None
    error: str = ""

    @property
    def score(self) -> float:
        return self.evaluation.score

    def to_dict(self) -> dict:
        return {
            "instance": self.instance, "solver": self.solver, "division": self.division,
            "limit": self.limit, "elapsed": self.elapsed, "killed": self.killed,
            "returncode": self.returncode, "error": self.error, "gap": self.gap,
            "evaluation": self.evaluation.to_dict(),
        }


@dataclass
class RankingTable:
    """Objective totals (Obj) and best-counts (NB) per row and division; ensemble row first."""
    divisions: list[str]
    rows: list[str]
    obj: dict[tuple[str, str], float] = field(default_factory=dict)
    nb: dict[tuple[str, str], int] = field(default_factory=dict)
    n_feasible: dict[str, int] = field(default_factory=dict)

    def total_obj(self, row: str) -> float:
        return sum(self.obj[row, d] for d in self.divisions)

    def total_nb(self, row: str) -> int:
        return sum(self.nb[row, d] for d in self.divisions)

    def to_dict(self) -> dict:
        return {
            "divisions": self.divisions,
            "n_feasible": self.n_feasible,
            "rows": [
                {"name": r,
                 "obj": {d: self.obj[r, d] for d in self.divisions},
                 "nb": {d: self.nb[r, d] for d in self.divisions},
                 "obj_total": self.total_obj(r), "nb_total": self.total_nb(r)}
                for r in self.rows
            ],
        }

    def format(self) -> str:
        head = ["solver"] + [f"{h} D{d}" for d in self.divisions for h in ("Obj", "NB")] + ["Obj", "NB"]
        lines = [head]
        for r in self.rows:
            cells = [r]
            for d in self.divisions:
                cells += [f"{self.obj[r, d]:.6g}", str(self.nb[r, d])]
            cells += [f"{self.total_obj(r):.6g}", str(self.total_nb(r))]
            lines.append(cells)
        widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in lines)


@dataclass
class TournamentResult:
    table: RankingTable
    runs: list[RunRecord]

    def evaluation(self, instance: str, solver: str) -> Evaluation:
        for r in self.runs:
            if r.instance == instance and r.solver == solver:
                return r.evaluation
        raise KeyError((instance, solver))


def division_of(name: str) -> str:
    """Division label parsed from an instance name like ``14-d2-s3``; ``"default"`` otherwise."""
    m = re.search(r"-d(\d+)", name)
    return m.group(1) if m else "default"


def limit_for(limits, division: str) -> float:
    if isinstance(limits, (int, float)):
        return float(limits)
    if division in limits:
        return float(limits[division])
    if "default" in limits:
        return float(limits["default"])
    raise KeyError(f"no time limit for division {division!r}")


def _scratch_root() -> Path:
    root = os.environ.get("GO3_TMPDIR")
    if root:
        Path(root).mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix="go3-", dir=root))


def run_one(inst: Instance, inst_path: Path, solver: SolverSpec, limit: float, workdir: Path,
            seed: int = 0) -> RunRecord:
    """Run ``solver`` on one instance under a hard kill at ``limit`` seconds, then evaluate."""
    name = inst.name or inst_path.stem
    div = division_of(name)
    rundir = workdir / name / solver.name
    rundir.mkdir(parents=True, exist_ok=True)
    out = rundir / "solution.json"
    env = dict(os.environ, GO3_TMPDIR=str(rundir / "tmp"))
    killed, rc, err = False, None, ""
    t0 = time.monotonic()
    try:
        with open(rundir / "log.txt", "wb") as logf:
            proc = subprocess.Popen(solver.argv(inst_path, out, limit, seed), stdout=logf,
                                    stderr=subprocess.STDOUT, env=env, start_new_session=True)
            try:
                rc = proc.wait(timeout=limit)
            except subprocess.TimeoutExpired:
                killed = True
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
                rc = proc.wait()
    except OSError as exc:
        err = f"launch failed: {exc}"
    elapsed = time.monotonic() - t0
    if out.exists():
        try:
            ev = evaluate_file(inst, out)
        except Exception as exc:  # evaluation must never abort the tournament
            ev = malformed_evaluation(f"evaluation error: {exc}")
    else:
        ev = malformed_evaluation("no solution file")
    gap = None
    if ev.feasible:
        try:
            gap = bound_report(inst, ev).to_dict()
            gap.pop("per_interval", None)
        except Exception as exc:
            log.warning("bound for %s/%s failed: %s", name, solver.name, exc)
    return RunRecord(name, solver.name, div, limit, elapsed, killed, rc, ev, gap, err)


def _tied(a: float, b: float) -> bool:
    return abs(a - b) <= TIE_RTOL * max(1.0, abs(a), abs(b))


def build_ranking(runs: Sequence[RunRecord], solvers: Sequence[str]) -> RankingTable:
    """Obj totals, ensemble (per-instance max) and NB with ties credited to every tied solver."""
    by_inst: dict[str, dict[str, RunRecord]] = {}
    for r in runs:
        by_inst.setdefault(r.instance, {})[r.solver] = r
    divisions = sorted({r.division for r in runs})
    rows = [ENSEMBLE] + list(solvers)
    table = RankingTable(divisions, rows)
    for row in rows:
        for d in divisions:
            table.obj[row, d] = 0.0
            table.nb[row, d] = 0
    for d in divisions:
        table.n_feasible[d] = 0
    for name in sorted(by_inst):
        recs = by_inst[name]
        d = next(iter(recs.values())).division
        for s in solvers:
            table.obj[s, d] += recs[s].score if s in recs else 0.0
        best = max((recs[s].score for s in solvers if s in recs), default=0.0)
        table.obj[ENSEMBLE, d] += best
        feas = [s for s in solvers if s in recs and recs[s].evaluation.feasible]
        if not feas:
            continue
        table.n_feasible[d] += 1
        table.nb[ENSEMBLE, d] += 1
        top = max(recs[s].score for s in feas)
        for s in feas:
            if _tied(recs[s].score, top):
                table.nb[s, d] += 1
    return table


def run_tournament(instances: Mapping[str, Instance | str | Path] | Sequence[Instance | str | Path],
                   solvers: Sequence[SolverSpec], limits, workdir=None, jobs: int | None = None,
                   seed: int = 0) -> TournamentResult:
    """Run every solver on every instance; runs are independent processes, ``jobs`` at a time."""
    workdir = Path(workdir) if workdir is not None else _scratch_root()
    workdir.mkdir(parents=True, exist_ok=True)
    items = instances.values() if isinstance(instances, Mapping) else instances
    staged: list[tuple[Instance, Path]] = []
    for it in items:
        if isinstance(it, Instance):
            path = workdir / "instances" / f"{it.name or f'inst{len(staged)}'}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_instance(it, path)
            staged.append((it, path))
        else:
            path = Path(it)
            staged.append((load_instance(path), path))
    names = [s.name for s in solvers]
    if len(set(names)) != len(names) or ENSEMBLE in names:
        raise ValueError("solver names must be unique and not 'ensemble'")
    tasks = [(inst, path, s) for inst, path in staged for s in solvers]
    jobs = jobs or os.cpu_count() or 1

    def go(task):
        inst, path, s = task
        try:
            return run_one(inst, path, s, limit_for(limits, division_of(inst.name or path.stem)),
                           workdir, seed)
        except Exception as exc:  # a broken run scores 0
            log.warning("run %s/%s failed: %s", inst.name, s.name, exc)
            name = inst.name or path.stem
            return RunRecord(name, s.name, division_of(name), 0.0, 0.0, False, None,
                             malformed_evaluation(str(exc)), None, str(exc))

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        runs = list(pool.map(go, tasks))
    runs.sort(key=lambda r: (r.instance, r.solver))
    return TournamentResult(build_ranking(runs, names), runs)


def load_manifest(path) -> list[SolverSpec]:
    """JSON list of ``[name, command]`` pairs or ``{"name", "command"}`` objects."""
    doc = json.loads(Path(path).read_text())
    out = []
    for e in doc:
        if isinstance(e, Mapping):
            out.append(SolverSpec(str(e["name"]), str(e["command"])))
        else:
            name, cmd = e
            out.append(SolverSpec(str(name), str(cmd)))
    return out


def load_limits(path_or_value):
    """A number of seconds, or a JSON file mapping division labels (and ``default``) to seconds."""
    try:
        return float(path_or_value)
    except (TypeError, ValueError):
        doc = json.loads(Path(path_or_value).read_text())
        return float(doc) if isinstance(doc, (int, float)) else {str(k): float(v) for k, v in doc.items()}


def write_results(result: TournamentResult, out_dir) -> None:
    """``ranking.json``, ``ranking.txt`` and one ``evals/<instance>__<solver>.json`` per run."""
    out = Path(out_dir)
    (out / "evals").mkdir(parents=True, exist_ok=True)
    (out / "ranking.json").write_text(json.dumps(result.table.to_dict(), indent=1, sort_keys=True))
    (out / "ranking.txt").write_text(result.table.format() + "\n")
    for r in result.runs:
        (out / "evals" / f"{r.instance}__{r.solver}.json").write_text(
            json.dumps(r.to_dict(), indent=1, sort_keys=True))
