"""Anytime decomposition solver: UC over the horizon, forward per-interval
dispatch with AC refinement, then evaluator-in-the-loop polishing.  Every
strict score improvement is written to disk atomically."""
from __future__ import annotations

import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..acpf import PowerFlowOptions, bus_imbalance
from ..contingency import BridgeOutage, SingularSystem, lodf_screen, solve_dc_base
from ..evaluator import Evaluation, check_schedule, evaluate
from ..model import Instance, Solution, build_topology, dumps_solution, n_components, validate_instance
from ..objective import reserve_terms, scheduling_costs
from .acrefine import _flat_state, ac_refine
from .dispatch import assign_reserves, dispatch_interval, initial_q, network_limits
from .schedule import (
    CandidateSchedule, batch_round, default_branch_status, ramp_windows, repair_device, step_window, u0_schedule,
    uc_phase,
)

log = logging.getLogger(__name__)


class BudgetTooSmall(RuntimeError):
    pass


@dataclass
class SolverConfig:
    wall_clock_budget: float = 60.0
    seed: int = 0
    enable_batch_rounding: bool = True
    enable_switch_search: bool = False
    enable_lodf_screen: bool = True
    newton: PowerFlowOptions = field(default_factory=PowerFlowOptions)
    polish_rounds: int | None = None  # iteration cap; None polishes until the clock runs out
    polish_width: int = 3
    loss_iters: int = 8
    ac: bool = True
    network_dispatch: bool = True
    support_width: int = 3

    def __post_init__(self):
        if not self.wall_clock_budget > 0:
            raise ValueError("wall_clock_budget must be positive")


# --------------------------------------------------------------------------- pipeline


def _finish_branches(inst: Instance, sol: Solution, ac_u=None) -> None:
    a = inst.arrays
    if ac_u is not None:
        sol.ac_u[:] = np.round(ac_u)
        prev = np.concatenate([a.ac_u0[:, None], sol.ac_u[:, :-1]], axis=1)
        sol.ac_su[:] = np.maximum(sol.ac_u - prev, 0.0)
        sol.ac_sd[:] = np.maximum(prev - sol.ac_u, 0.0)
    sol.tau[:] = np.clip(1.0, a.ac_tau_min, a.ac_tau_max)[:, None]
    sol.phi[:] = np.clip(0.0, a.ac_phi_min, a.ac_phi_max)[:, None]
    sol.dc_pfr[:] = 0.0
    sol.dc_qfr[:] = np.clip(0.0, a.dc_qmin_fr, a.dc_qmax_fr)[:, None]
    sol.dc_qto[:] = np.clip(0.0, a.dc_qmin_to, a.dc_qmax_to)[:, None]


def _set_schedule(inst: Instance, sol: Solution, u) -> None:
    s = CandidateSchedule.from_u(inst, np.round(u))
    sol.u[:], sol.u_su[:], sol.u_sd[:] = s.u, s.u_su, s.u_sd


def build_solution(inst: Instance, schedule: CandidateSchedule, cfg: SolverConfig | None = None) -> Solution:
    """Dispatch, AC-refine and reserve-assign every interval for a fixed schedule."""
    cfg = cfg or SolverConfig()
    a = inst.arrays
    sol = Solution.empty(inst)
    _set_schedule(inst, sol, schedule.u)
    _finish_branches(inst, sol, schedule.ac_u)
    sol.v[:] = np.clip(1.0, a.v_min, a.v_max)[:, None]
    lo_w, hi_w = ramp_windows(inst, sol.u)
    J = len(inst.devices)
    prev_p, prev_u = a.dev_p0.copy(), a.dev_u0.copy()
    loss = 0.0
    for t in range(inst.n_intervals):
        u = sol.u[:, t]
        lo, hi = np.zeros(J), np.zeros(J)
        for j in range(J):
            if u[j]:
                lo[j], hi[j] = step_window(inst, j, t, prev_u[j], prev_p[j], lo_w, hi_w)
        if t > 0:
            sol.v[:, t], sol.theta[:, t] = sol.v[:, t - 1], sol.theta[:, t - 1]
        for _ in range(max(1, cfg.loss_iters)):
            net = network_limits(inst, sol, t) if cfg.network_dispatch else None
            sol.p[:, t] = dispatch_interval(inst, t, u > 0, lo, hi, loss, net)
            sol.q[:, t] = initial_q(inst, t, u, sol.p[:, t])
            if not cfg.ac:
                break
            res = ac_refine(inst, sol, t, lo, hi, cfg.newton)
            if not res.converged or res.p_residual < 1e-10 or abs(res.loss - loss) < 1e-12:
                break
            loss = res.loss
        if not cfg.ac:
            _flat_state(inst, sol, t)
        sol.p_rsv[:, t] = assign_reserves(inst, t, u, sol.p[:, t])
        prev_p, prev_u = sol.p[:, t].copy(), u.copy()
    return sol


def trivial_solution(inst: Instance) -> Solution:
    """Initial-status schedule, outputs held as close to P^0 as ramps allow, flat voltages."""
    a = inst.arrays
    sol = Solution.empty(inst)
    _set_schedule(inst, sol, u0_schedule(inst))
    _finish_branches(inst, sol, default_branch_status(inst))
    sol.v[:] = np.clip(1.0, a.v_min, a.v_max)[:, None]
    lo_w, hi_w = ramp_windows(inst, sol.u)
    prev_p, prev_u = a.dev_p0.copy(), a.dev_u0.copy()
    for t in range(inst.n_intervals):
        u = sol.u[:, t]
        for j in range(len(inst.devices)):
            if u[j]:
                lo, hi = step_window(inst, j, t, prev_u[j], prev_p[j], lo_w, hi_w)
                sol.p[j, t] = min(max(prev_p[j], lo), hi)
        sol.q[:, t] = np.clip(0.0, a.q_min[:, t] * u, a.q_max[:, t] * u)
        prev_p, prev_u = sol.p[:, t].copy(), u.copy()
    return sol


# --------------------------------------------------------------------------- incumbent


class IncumbentWriter:
    """Tracks the best evaluated solution and writes strict improvements atomically."""

    def __init__(self, inst: Instance, out_path=None, trace: Callable | None = None):
        self.inst = inst
        self.out_path = Path(out_path) if out_path else None
        self.trace = trace
        self.best: Solution | None = None
        self.best_eval: Evaluation | None = None
        self.n_writes = 0

    def offer(self, sol: Solution, ev: Evaluation | None = None, label: str = "") -> bool:
        ev = ev or evaluate(self.inst, sol)
        if not ev.feasible:
            log.info("%s candidate infeasible: %s", label, sorted(ev.feasibility.families()))
            return False
        if self.best_eval is not None and not ev.score > self.best_eval.score:
            if not (self.best_eval.score == ev.score == 0.0
                    and ev.objective.z_ms > self.best_eval.objective.z_ms):
                return False
            # equal clipped score: keep the better z_ms in memory without writing
            self.best, self.best_eval = sol, ev
            return True
        self.best, self.best_eval = sol, ev
        text = dumps_solution(self.inst, sol)
        if self.out_path is not None:
            write_atomic(self.out_path, text)
        self.n_writes += 1
        if self.trace:
            self.trace({"label": label, "score": ev.score, "z_ms": ev.objective.z_ms,
                        "class": ev.feasibility_class, "text": text})
        return True


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------- polish


def _runs(row, value):
    out, t, T = [], 0, len(row)
    while t < T:
        if row[t] == value:
            s = t
            while t < T and row[t] == value:
                t += 1
            out.append((s, t))
        else:
            t += 1
    return out


def proxy_value(inst: Instance, u) -> float:
    """Lossless, network-free surplus of a schedule (screening only)."""
    a = inst.arrays
    u = np.round(u)
    lo_w, hi_w = ramp_windows(inst, u)
    J, T = u.shape
    D = a.duration
    prev_p, prev_u = a.dev_p0.copy(), a.dev_u0.copy()
    total = 0.0
    c_p = inst.penalties.c_p
    for t in range(T):
        lo, hi = np.zeros(J), np.zeros(J)
        for j in range(J):
            if u[j, t]:
                lo[j], hi[j] = step_window(inst, j, t, prev_u[j], prev_p[j], lo_w, hi_w)
        p = dispatch_interval(inst, t, u[:, t] > 0, lo, hi)
        val = sum(inst.devices[j].energy_curves[t].value(p[j]) * (-1 if a.is_prod[j] else 1)
                  for j in range(J))
        imb = abs(p[a.is_prod].sum() - p[~a.is_prod].sum())
        r = assign_reserves(inst, t, u[:, t], p)
        short = 0.0
        for zone in inst.zones:
            members = [inst.index.device[d] for d in zone.devices]
            req = zone.sigma * max((p[j] for j in members if a.is_prod[j]), default=0.0)
            short += zone.shortage_penalty * max(0.0, req - r[members].sum())
        total += D[t] * (val - c_p * imb - float(a.rsv_cost @ r) - short)
        prev_p, prev_u = p, u[:, t]
    for j, dev in enumerate(inst.devices):
        z_su, z_sd, z_on = scheduling_costs(dev, u[j], dev.u0, D)
        total -= z_su.sum() + z_sd.sum() + z_on.sum()
    return total


def commitment_moves(inst: Instance, u):
    """Drop-run and fill-run toggles per producer, repaired; deduplicated."""
    a = inst.arrays
    seen = set()
    for j, dev in enumerate(inst.devices):
        if not a.is_prod[j]:
            continue
        for value in (1, 0):
            for s, e in _runs(u[j], value):
                cand = u.copy()
                cand[j, s:e] = 1 - value
                cand[j] = repair_device(inst, j, cand[j])
                key = cand[j].tobytes()
                if np.array_equal(cand[j], u[j]) or (j, key) in seen:
                    continue
                seen.add((j, key))
                yield f"{dev.id}:{'drop' if value else 'fill'}:{s}-{e}", cand


SUPPORT_TOL = 1e-4  # per-interval residual (pu) that triggers voltage-support commitments


def support_moves(inst: Instance, sol: Solution, width: int = 3, tol: float = SUPPORT_TOL):
    """Commit an offline producer across the span of intervals left with a bus
    residual (widest reactive range first) or a zonal reserve shortfall (largest
    reserve capability first).  Merit screening sees neither, so these bypass the proxy.
    """
    a = inst.arrays
    T = inst.n_intervals
    bus_bad = np.abs(bus_imbalance(inst, sol)).max(axis=0) > tol
    rsv_bad = np.array([reserve_terms(inst, sol, t).shortfall.max(initial=0.0) > tol for t in range(T)])
    u = np.round(sol.u)
    seen = set()
    for bad, room in ((bus_bad, a.q_max - a.q_min), (rsv_bad, a.rsv_max)):
        idx = np.flatnonzero(bad)
        if not len(idx):
            continue
        s, e = int(idx[0]), int(idx[-1]) + 1
        prods = [j for j in range(len(inst.devices)) if a.is_prod[j] and not np.all(u[j, s:e] == 1)]
        prods.sort(key=lambda j: (-float(room[j, s:e].sum()), j))
        n = 0
        for j in prods:
            cand = u.copy()
            cand[j, s:e] = 1
            cand[j] = repair_device(inst, j, cand[j])
            key = (j, cand[j].tobytes())
            if np.array_equal(cand[j], u[j]) or key in seen:
                continue
            seen.add(key)
            yield f"{inst.devices[j].id}:support:{s}-{e}", cand
            n += 1
            if n >= width:
                break


def reinforce(inst: Instance, writer: IncumbentWriter, deadline: float, cfg: SolverConfig) -> None:
    """Greedy support commitments while they improve the evaluated score."""
    while time.monotonic() < deadline:
        cur = writer.best
        best = None
        for name, cand in support_moves(inst, cur, cfg.support_width):
            if time.monotonic() >= deadline:
                break
            sol = build_solution(inst, CandidateSchedule.from_u(inst, cand, cur.ac_u), cfg)
            ev = evaluate(inst, sol)
            if ev.feasible and ev.objective.z_ms > writer.best_eval.objective.z_ms \
                    and (best is None or ev.objective.z_ms > best[0].objective.z_ms):
                best = (ev, sol, name)
        if best is None or not writer.offer(best[1], best[0], label=best[2]):
            return


def _dc_overload(inst: Instance, sol: Solution, ac_u) -> float:
    """DC base plus post-contingency overload penalty (LODF or full solves)."""
    trial = sol.copy()
    trial.ac_u[:] = ac_u
    a = inst.arrays
    total = 0.0
    for t in range(inst.n_intervals):
        try:
            base = solve_dc_base(inst, trial, t)
        except SingularSystem:
            return -np.inf
        total += a.duration[t] * inst.penalties.c_s * np.maximum(0, np.abs(base.flow) - a.ac_smax).sum()
        for k in range(len(inst.contingencies)):
            try:
                flow = lodf_screen(inst, base, k)
            except BridgeOutage:
                return -np.inf
            total += a.duration[t] * inst.penalties.c_s * np.maximum(0, np.abs(flow) - a.ac_smax_ctg).sum()
    return -total


def switch_moves(inst: Instance, sol: Solution):
    """Open one closed branch for the whole horizon when connectivity survives."""
    T = inst.n_intervals
    for j, br in enumerate(inst.ac_branches):
        if not np.all(sol.ac_u[j] == 1):
            continue
        ac_u = sol.ac_u.copy()
        ac_u[j] = 0.0
        ok = all(
            n_components(build_topology(inst, ac_u[:, t])) == 1
            and all(n_components(build_topology(inst, ac_u[:, t], outage=c.branch)) == 1
                    for c in inst.contingencies)
            for t in range(T)
        )
        if ok:
            yield f"{br.id}:open", ac_u


def polish(inst: Instance, incumbent: Solution, budget: float, cfg: SolverConfig | None = None,
           writer: IncumbentWriter | None = None) -> Solution:
    """Best-improvement local search over commitment runs (and optionally branch opens)."""
    cfg = cfg or SolverConfig()
    writer = writer or IncumbentWriter(inst)
    if writer.best is None:
        writer.offer(incumbent, label="incumbent")
    deadline = time.monotonic() + budget
    rng = np.random.default_rng(cfg.seed)
    rounds = 0
    while cfg.polish_rounds is None or rounds < cfg.polish_rounds:
        if time.monotonic() >= deadline:
            break
        rounds += 1
        cur = writer.best
        u = np.round(cur.u)
        base_proxy = proxy_value(inst, u)
        scored = []
        for name, cand in commitment_moves(inst, u):
            gain = proxy_value(inst, cand) - base_proxy
            if gain > 1e-9:
                scored.append((gain, name, cand, cur.ac_u))
        if cfg.enable_switch_search:
            base_dc = _dc_overload(inst, cur, cur.ac_u)
            for name, ac_u in switch_moves(inst, cur):
                gain = _dc_overload(inst, cur, ac_u) - base_dc \
                    - inst.penalties.c_sw * inst.arrays.duration[0]
                if gain > 1e-9:
                    scored.append((gain, name, u, ac_u))
        if not scored:
            break
        order = rng.permutation(len(scored))
        scored = [scored[i] for i in order]
        scored.sort(key=lambda x: (-x[0], x[1]))
        best = None
        for gain, name, cand_u, ac_u in scored[: cfg.polish_width]:
            if time.monotonic() >= deadline:
                break
            sol = build_solution(inst, CandidateSchedule.from_u(inst, cand_u, ac_u), cfg)
            ev = evaluate(inst, sol)
            if not ev.feasible or ev.score <= writer.best_eval.score:
                continue
            if best is None or ev.score > best[0].score or (ev.score == best[0].score and name < best[2]):
                best = (ev, sol, name)
        if best is None:
            break
        writer.offer(best[1], best[0], label=f"polish:{best[2]}")
    return writer.best


# --------------------------------------------------------------------------- solve


def solve(inst: Instance, cfg: SolverConfig | None = None, out_path=None,
          trace: Callable | None = None) -> Solution:
    cfg = cfg or SolverConfig()
    problems = validate_instance(inst)
    if len(problems):
        raise ValueError(f"invalid instance: {list(problems)[:5]}")
    t0 = time.monotonic()
    deadline = t0 + cfg.wall_clock_budget
    writer = IncumbentWriter(inst, out_path, trace)

    writer.offer(trivial_solution(inst), label="fallback")
    if time.monotonic() < deadline:
        if cfg.enable_batch_rounding:
            sched = batch_round(inst, uc_phase(inst, fractional=True))
        else:
            sched = uc_phase(inst)
        rep = check_schedule(inst, sched.u, sched.u_su, sched.u_sd)
        if not rep.feasible:
            log.info("UC schedule not repairable: %s", sorted(rep.families()))
        sol = build_solution(inst, sched, cfg)
        if not writer.offer(sol, label="pipeline") and cfg.ac:
            writer.offer(build_solution(inst, sched, SolverConfig(cfg.wall_clock_budget, ac=False)),
                         label="pipeline-dc")
    if writer.best is None:
        raise BudgetTooSmall("no hard-feasible solution could be produced")
    reinforce(inst, writer, deadline, cfg)
    remaining = deadline - time.monotonic()
    if remaining > 0:
        polish(inst, writer.best, remaining, cfg, writer)
    return writer.best
