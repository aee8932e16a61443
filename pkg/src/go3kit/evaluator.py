"""Solution evaluation and scoring: hard-constraint gate, full objective,
score, and the infeasible / evaluation / physical / engineering taxonomy.

Soft constraints are the ones with a penalty term (power balance, base and
post-contingency line limits, zonal reserve shortage, multi-interval energy).
Everything else in the formulation is hard and checked here with an absolute
tolerance.  Once integrality passes, integer variables are snapped to the
nearest integer for all downstream checks and for the objective.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .acpf import bus_imbalance, network_flows
from .contingency import bus_injection, ctg_aggregate, dc_susceptance, system_slack
from .model import (
    Instance, MalformedSolution, Solution, build_topology, component_labels, load_solution,
    n_components, solution_from_dict,
)
from .objective import ObjectiveBreakdown, assemble_objective, reserve_terms, term_tables

DEFAULT_TOL = 1e-6

INFEASIBLE = "infeasible"
EVALUATION_FEASIBLE = "evaluation-feasible"
PHYSICALLY_FEASIBLE = "physically-feasible"
ENGINEERING_FEASIBLE = "engineering-feasible"
CLASS_RANK = {INFEASIBLE: 0, EVALUATION_FEASIBLE: 1, PHYSICALLY_FEASIBLE: 2,
              ENGINEERING_FEASIBLE: 3}


@dataclass
class Violation:
    family: str
    entity: str
    interval: int | None
    magnitude: float


@dataclass
class FeasibilityReport:
    hard_violations: list[Violation] = field(default_factory=list)
    max_violation_per_family: dict[str, float] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return not self.hard_violations

    def add(self, family: str, entity: str, interval: int | None, magnitude: float) -> None:
        self.hard_violations.append(Violation(family, entity, interval, float(magnitude)))
        prev = self.max_violation_per_family.get(family, 0.0)
        self.max_violation_per_family[family] = max(prev, float(magnitude))

    def families(self) -> set[str]:
        return {v.family for v in self.hard_violations}


@dataclass
class Evaluation:
    feasibility: FeasibilityReport
    objective: ObjectiveBreakdown | None
    score: float
    feasibility_class: str
    diagnostics: dict[str, float] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.feasibility.feasible

    def to_dict(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "feasible": self.feasible,
            "feasibility_class": self.feasibility_class,
            "objective": self.objective.to_dict() if self.objective else None,
            "max_violation_per_family": dict(sorted(self.feasibility.max_violation_per_family.items())),
            "hard_violations": [
                {"family": v.family, "entity": v.entity, "interval": v.interval,
                 "magnitude": v.magnitude}
                for v in self.feasibility.hard_violations[:200]
            ],
            "n_hard_violations": len(self.feasibility.hard_violations),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def score(ev: Evaluation) -> float:
    if not ev.feasible or ev.objective is None:
        return 0.0
    return max(0.0, ev.objective.z_ms)


# --------------------------------------------------------------------------- hard checks


def _flag(rep, family, ids, viol, tol):
    """Record every (entity, interval) cell of ``viol`` above ``tol``."""
    viol = np.atleast_2d(viol)
    rows, cols = np.nonzero(viol > tol)
    for r, c in zip(rows, cols):
        rep.add(family, ids[r], int(c), viol[r, c])


def _integrality(rep, family, ids, x, tol):
    _flag(rep, family, ids, np.abs(x - np.round(x)), tol)
    return np.round(x)


def check_schedule(inst: Instance, u, su, sd, tol: float = DEFAULT_TOL,
                   rep: FeasibilityReport | None = None) -> FeasibilityReport:
    """Commitment-only checks for producing/consuming devices.

    Covers binary domains, must-run / forced-outage, the startup/shutdown
    indicator identity, min up/down windows, and max startup/shutdown counts.
    """
    rep = rep or FeasibilityReport()
    if not inst.devices:
        return rep
    ids = [d.id for d in inst.devices]
    a = inst.arrays
    u = _integrality(rep, "u_integrality", ids, np.asarray(u, float), tol)
    su = _integrality(rep, "u_su_integrality", ids, np.asarray(su, float), tol)
    sd = _integrality(rep, "u_sd_integrality", ids, np.asarray(sd, float), tol)
    for name, x in (("u", u), ("u_su", su), ("u_sd", sd)):
        _flag(rep, f"{name}_domain", ids, np.maximum(-x, x - 1.0), tol)
    prev = np.concatenate([a.dev_u0[:, None], u[:, :-1]], axis=1)
    _flag(rep, "su_sd_consistency", ids, np.abs(u - prev - (su - sd)), tol)
    _flag(rep, "su_sd_exclusive", ids, su * sd, tol)
    for j, dev in enumerate(inst.devices):
        for t in sorted(dev.must_run):
            if u[j, t] < 1:
                rep.add("must_run", dev.id, t, 1 - u[j, t])
        for t in sorted(dev.forced_off):
            if u[j, t] > 0:
                rep.add("forced_off", dev.id, t, u[j, t])
        t_up, t_dn = inst.lookback[j]
        for t in range(inst.n_intervals):
            if t_dn[t]:
                over = su[j, t] + sum(sd[j, tp] for tp in t_dn[t]) - 1.0
                if over > tol:
                    rep.add("min_downtime", dev.id, t, over)
            if t_up[t]:
                over = sd[j, t] + sum(su[j, tp] for tp in t_up[t]) - 1.0
                if over > tol:
                    rep.add("min_uptime", dev.id, t, over)
        for c in dev.max_startups:
            over = sum(su[j, t] for t in c.intervals) - c.max_count
            if over > tol:
                rep.add("max_startups", dev.id, None, over)
        for c in dev.max_shutdowns:
            over = sum(sd[j, t] for t in c.intervals) - c.max_count
            if over > tol:
                rep.add("max_shutdowns", dev.id, None, over)
    return rep


def snapped(sol: Solution) -> Solution:
    """Copy with every integer variable rounded to the nearest integer."""
    out = sol.copy()
    for k in ("u", "u_su", "u_sd", "sh_u", "ac_u", "ac_su", "ac_sd"):
        setattr(out, k, np.round(getattr(out, k)))
    return out


def check_hard_constraints(inst: Instance, sol: Solution, tol: float = DEFAULT_TOL) -> FeasibilityReport:
    rep = FeasibilityReport()
    if not sol.is_finite():
        rep.add("finite", "solution", None, np.inf)
        return rep
    a = inst.arrays
    T = inst.n_intervals
    D = a.duration
    dev_ids = [d.id for d in inst.devices]
    ac_ids = [b.id for b in inst.ac_branches]
    dc_ids = [b.id for b in inst.dc_branches]
    sh_ids = [s.id for s in inst.shunts]
    bus_ids = [b.id for b in inst.buses]

    check_schedule(inst, sol.u, sol.u_su, sol.u_sd, tol, rep)
    u = np.round(sol.u)
    su = np.round(sol.u_su)
    sd = np.round(sol.u_sd)

    if inst.ac_branches:
        au = _integrality(rep, "ac_u_integrality", ac_ids, sol.ac_u, tol)
        asu = _integrality(rep, "ac_su_integrality", ac_ids, sol.ac_su, tol)
        asd = _integrality(rep, "ac_sd_integrality", ac_ids, sol.ac_sd, tol)
        for name, x in (("ac_u", au), ("ac_su", asu), ("ac_sd", asd)):
            _flag(rep, f"{name}_domain", ac_ids, np.maximum(-x, x - 1.0), tol)
        prev = np.concatenate([a.ac_u0[:, None], au[:, :-1]], axis=1)
        _flag(rep, "ac_su_sd_consistency", ac_ids, np.abs(au - prev - (asu - asd)), tol)
        _flag(rep, "ac_su_sd_exclusive", ac_ids, asu * asd, tol)
        _flag(rep, "tau_bounds", ac_ids,
              np.maximum(a.ac_tau_min[:, None] - sol.tau, sol.tau - a.ac_tau_max[:, None]), tol)
        _flag(rep, "phi_bounds", ac_ids,
              np.maximum(a.ac_phi_min[:, None] - sol.phi, sol.phi - a.ac_phi_max[:, None]), tol)

    if inst.shunts:
        shu = _integrality(rep, "shunt_integrality", sh_ids, sol.sh_u, tol)
        _flag(rep, "shunt_bounds", sh_ids,
              np.maximum(a.sh_umin[:, None] - shu, shu - a.sh_umax[:, None]), tol)

    if inst.dc_branches:
        pm = a.dc_pmax[:, None]
        _flag(rep, "dc_p_bounds", dc_ids, np.abs(sol.dc_pfr) - pm, tol)
        _flag(rep, "dc_q_bounds", dc_ids,
              np.maximum.reduce([a.dc_qmin_fr[:, None] - sol.dc_qfr, sol.dc_qfr - a.dc_qmax_fr[:, None],
                                 a.dc_qmin_to[:, None] - sol.dc_qto, sol.dc_qto - a.dc_qmax_to[:, None]]),
              tol)

    _flag(rep, "voltage_bounds", bus_ids,
          np.maximum(a.v_min[:, None] - sol.v, sol.v - a.v_max[:, None]), tol)

    if inst.devices:
        p, q, r = sol.p, sol.q, sol.p_rsv
        _flag(rep, "p_bounds", dev_ids, np.maximum(a.p_min * u - p, p - a.p_max * u), tol)
        _flag(rep, "q_bounds", dev_ids, np.maximum(a.q_min * u - q, q - a.q_max * u), tol)
        prev_p = np.concatenate([a.dev_p0[:, None], p[:, :-1]], axis=1)
        dp = p - prev_p
        up_lim = D * (a.ramp_up[:, None] * (u - su) + a.su_ramp[:, None] * su)
        dn_lim = D * (a.ramp_down[:, None] * u + a.sd_ramp[:, None] * sd)
        _flag(rep, "ramp_up", dev_ids, dp - up_lim, tol)
        _flag(rep, "ramp_down", dev_ids, -dp - dn_lim, tol)
        _flag(rep, "reserve_bounds", dev_ids, np.maximum(-r, r - a.rsv_max * u), tol)
        prod = a.is_prod[:, None]
        headroom = np.where(prod, p + r - a.p_max * u, a.p_min * u - (p - r))
        _flag(rep, "reserve_headroom", dev_ids, headroom, tol)
        width = np.array([[c.total_width for c in d.energy_curves] for d in inst.devices])
        _flag(rep, "energy_domain", dev_ids, np.maximum(-p, p - width), tol)

    ac_u = np.round(sol.ac_u)
    n = len(inst.buses)
    b_all = -inst.arrays.ac_ysr.imag
    for t in range(T):
        nc = n_components(build_topology(inst, ac_u[:, t]))
        if nc > 1:
            rep.add("connectivity_base", "network", t, nc - 1)
            continue
        for ctg in inst.contingencies:
            nc = n_components(build_topology(inst, ac_u[:, t], outage=ctg.branch))
            if nc > 1:
                rep.add("connectivity_ctg", ctg.id, t, nc - 1)
                continue
            on = (ac_u[:, t] == 1) & (b_all != 0)
            j = inst.index.ac.get(ctg.branch)
            if j is not None:
                on[j] = False
            if n_components(component_labels(n, a.ac_fr[on], a.ac_to[on])) > 1:
                rep.add("ctg_singular", ctg.id, t, 1.0)
    return rep


# --------------------------------------------------------------------------- contingencies


def contingency_table(inst: Instance, sol: Solution, q_fr: np.ndarray, q_to: np.ndarray):
    """``(z_ctg[T, K], max post-contingency overload)`` by batched exact DC solves."""
    a = inst.arrays
    T, K, n = inst.n_intervals, len(inst.contingencies), len(inst.buses)
    z = np.zeros((T, K))
    worst_over = 0.0
    if K == 0 or n == 0:
        return z, worst_over
    c_s = inst.penalties.c_s
    fr, to = a.ac_fr, a.ac_to
    qmax = np.maximum(np.abs(q_fr), np.abs(q_to))
    for t in range(T):
        b = dc_susceptance(inst, sol, t)
        phi = sol.phi[:, t]
        p_sl = system_slack(inst, sol, t)
        inj0 = bus_injection(inst, sol, t)
        bk = np.repeat(b[None, :], K, axis=0)
        rhs = np.repeat((inj0 - a.alpha * p_sl)[None, :], K, axis=0)
        for k, ctg in enumerate(inst.contingencies):
            j = inst.index.ac.get(ctg.branch)
            if j is not None:
                bk[k, j] = 0.0
            else:
                d = inst.index.dc[ctg.branch]
                rhs[k, a.dc_fr[d]] += sol.dc_pfr[d, t]
                rhs[k, a.dc_to[d]] -= sol.dc_pfr[d, t]
        B = np.zeros((K, n, n))
        kk = np.arange(K)[:, None]
        np.add.at(B, (kk, fr[None, :], fr[None, :]), bk)
        np.add.at(B, (kk, to[None, :], to[None, :]), bk)
        np.add.at(B, (kk, fr[None, :], to[None, :]), -bk)
        np.add.at(B, (kk, to[None, :], fr[None, :]), -bk)
        shift = np.zeros((K, n))
        np.add.at(shift, (kk, fr[None, :]), bk * phi)
        np.add.at(shift, (kk, to[None, :]), -bk * phi)
        theta = np.zeros((K, n))
        if n > 1:
            theta[:, 1:] = np.linalg.solve(B[:, 1:, 1:], (rhs + shift)[:, 1:, None])[..., 0]
        flow = bk * (theta[:, fr] - theta[:, to] - phi[None, :])
        q = np.repeat(qmax[None, :, t], K, axis=0)
        for k, ctg in enumerate(inst.contingencies):
            j = inst.index.ac.get(ctg.branch)
            if j is not None:
                q[k, j] = 0.0
        over = np.sqrt(flow ** 2 + q ** 2) - a.ac_smax_ctg[None, :]
        for k, ctg in enumerate(inst.contingencies):
            j = inst.index.ac.get(ctg.branch)
            if j is not None:
                over[k, j] = -np.inf
        worst_over = max(worst_over, float(over.max()))
        z[t] = a.duration[t] * c_s * np.maximum(0.0, over).sum(axis=1)
    return z, worst_over


# --------------------------------------------------------------------------- evaluate


def compute_objective(inst: Instance, sol: Solution):
    """Full objective breakdown plus soft-constraint diagnostics (no feasibility gate)."""
    s_bus = bus_imbalance(inst, sol)
    s_fr, s_to, _ = network_flows(inst, sol)
    tables = term_tables(inst, sol, s_bus, s_fr, s_to)
    z_ctg, ctg_over = contingency_table(inst, sol, s_fr.imag, s_to.imag)
    worst_t, avg_t, _, _ = ctg_aggregate(inst, z_ctg)
    obj = assemble_objective(tables, worst_t, avg_t)
    a = inst.arrays
    base_over = (np.maximum(np.abs(s_fr), np.abs(s_to)) - a.ac_smax[:, None]) if s_fr.size else np.zeros(1)
    shortfall = 0.0
    for t in range(inst.n_intervals):
        rt = reserve_terms(inst, sol, t)
        if rt.shortfall.size:
            shortfall = max(shortfall, float(rt.shortfall.max()))
    energy_over = max(
        (ec.a0 + sum(c * sol.p[j, int(t)] for t, c in sorted(ec.coeffs.items()))
         for j, d in enumerate(inst.devices) for ec in d.energy_constraints),
        default=-np.inf,
    )
    diag = {
        "max_p_imbalance": float(np.max(np.abs(s_bus.real))) if s_bus.size else 0.0,
        "max_q_imbalance": float(np.max(np.abs(s_bus.imag))) if s_bus.size else 0.0,
        "max_base_overload": float(np.max(base_over)) if base_over.size else -np.inf,
        "max_ctg_overload": float(ctg_over) if inst.contingencies else -np.inf,
        "max_reserve_shortfall": shortfall,
        "max_energy_violation": float(energy_over),
    }
    return obj, diag, z_ctg


def classify(diag: dict[str, float], tol: float) -> str:
    physical = diag["max_p_imbalance"] <= tol and diag["max_q_imbalance"] <= tol
    if not physical:
        return EVALUATION_FEASIBLE
    engineering = (
        diag["max_base_overload"] <= tol
        and diag["max_ctg_overload"] <= tol
        and diag["max_reserve_shortfall"] <= tol
        and diag["max_energy_violation"] <= tol
    )
    return ENGINEERING_FEASIBLE if engineering else PHYSICALLY_FEASIBLE


def malformed_evaluation(reason: str) -> Evaluation:
    rep = FeasibilityReport()
    rep.add("malformed", reason[:200], None, np.inf)
    return Evaluation(rep, None, 0.0, INFEASIBLE)


def evaluate(inst: Instance, sol: Solution | dict | None, tol: float = DEFAULT_TOL) -> Evaluation:
    """Gate on hard constraints, then compute the objective, score and class."""
    if sol is None:
        return malformed_evaluation("no solution")
    if not isinstance(sol, Solution):
        try:
            sol = solution_from_dict(inst, sol)
        except MalformedSolution as exc:
            return malformed_evaluation(str(exc))
    if any(getattr(sol, k).shape != getattr(Solution.empty(inst), k).shape for k in Solution.FIELDS):
        return malformed_evaluation("array shapes do not match instance")
    rep = check_hard_constraints(inst, sol, tol)
    if not rep.feasible:
        return Evaluation(rep, None, 0.0, INFEASIBLE)
    obj, diag, _ = compute_objective(inst, snapped(sol))
    ev = Evaluation(rep, obj, 0.0, classify(diag, tol), diag)
    ev.score = score(ev)
    return ev


def evaluate_file(inst: Instance, path, tol: float = DEFAULT_TOL) -> Evaluation:
    try:
        sol = load_solution(inst, path)
    except MalformedSolution as exc:
        return malformed_evaluation(str(exc))
    return evaluate(inst, sol, tol)
