"""AC refinement of one interval: Newton power flow around the dispatch,
reactive assignment with PV/PQ switching, slack absorption, shunt stepping
and voltage projection."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..acpf import NonConvergence, PowerFlowOptions, SingularJacobian, bus_imbalance, network_flows, solve_power_flow
from ..contingency import _solve_angles, bus_injection, dc_susceptance
from ..model import Instance, Solution

log = logging.getLogger(__name__)

PV_SETPOINT = 1.02
VSTEP = 0.01   # control-voltage search step
STATE = ("v", "theta", "p", "q", "sh_u")


@dataclass
class RefineResult:
    converged: bool
    loss: float
    p_residual: float
    q_residual: float
    voltage_violation: float


def _spread(delta, idx, lo, hi, cur):
    """Add ``delta`` over ``idx`` within ``[lo, hi]`` proportionally to available room."""
    out = cur.copy()
    if not len(idx):
        return out, delta
    room = (hi[idx] - cur[idx]) if delta > 0 else (cur[idx] - lo[idx])
    room = np.clip(room, 0.0, None)
    total = room.sum()
    if total <= 0:
        return out, delta
    frac = min(1.0, abs(delta) / total)
    out[idx] += np.sign(delta) * frac * room
    return out, delta - np.sign(delta) * frac * total


def _flat_state(inst: Instance, sol: Solution, t: int) -> None:
    """Flat magnitudes and DC angles (fallback after a failed power flow)."""
    a = inst.arrays
    n = len(inst.buses)
    sol.v[:, t] = np.clip(1.0, a.v_min, a.v_max)
    b = dc_susceptance(inst, sol, t)
    inj = bus_injection(inst, sol, t)
    try:
        sol.theta[:, t] = _solve_angles(n, a.ac_fr, a.ac_to, b, sol.phi[:, t], inj - a.alpha * inj.sum())
    except np.linalg.LinAlgError:
        sol.theta[:, t] = 0.0


def _solve_state(inst, sol, t, slack, pv, on, lo, hi, opts):
    """Power flow with PV->PQ switching at reactive limits; absorbs slack residuals.

    Real power the slack bus cannot take is spread over the other online
    devices and the flow re-solved. Returns (unassigned p, unassigned q).
    """
    a = inst.arrays
    J = len(inst.devices)
    prods = [j for j in range(J) if a.is_prod[j] and on[j]]
    at_slack = np.array([j for j in prods if a.dev_bus[j] == slack], dtype=int)
    others = np.array([j for j in prods if a.dev_bus[j] != slack], dtype=int)
    cons = np.array([j for j in range(J) if not a.is_prod[j] and on[j]], dtype=int)
    qlo, qhi = a.q_min[:, t] * on, a.q_max[:, t] * on
    pv0 = set(pv)
    for _ in range(3):
        pv = set(pv0)
        for _ in range(len(pv) + 2):
            st = solve_power_flow(inst, sol, t, slack, opts, pv_buses=sorted(pv))
            sol.v[:, t], sol.theta[:, t] = st.v, st.theta
            s = bus_imbalance(inst, sol, t)
            switched = False
            for i in sorted(pv | {slack}):
                idx = np.array([j for j in prods if a.dev_bus[j] == i], dtype=int)
                q_new, rest = _spread(s.imag[i], idx, qlo, qhi, sol.q[:, t])
                sol.q[:, t] = q_new
                if abs(rest) > 1e-9 and i in pv:
                    pv.discard(i)
                    switched = True
            if not switched:
                break
        s = bus_imbalance(inst, sol, t)
        p_new, p_rest = _spread(s.real[slack], at_slack, lo, hi, sol.p[:, t])
        sol.p[:, t] = p_new
        if abs(p_rest) <= 1e-9:
            break
        p_new, left = _spread(p_rest, others, lo, hi, sol.p[:, t])
        p_new, left = _spread(-left, cons, lo, hi, p_new)
        if np.array_equal(p_new, sol.p[:, t]):
            break
        sol.p[:, t] = p_new
    q_rest = float(np.abs(bus_imbalance(inst, sol, t).imag).sum())
    return float(abs(p_rest)), q_rest


def _voltage_violation(inst, sol, t):
    a = inst.arrays
    v = sol.v[:, t]
    return float(np.sum(np.maximum(0.0, v - a.v_max) + np.maximum(0.0, a.v_min - v)))


def choose_controls(inst: Instance, t: int, on, p, hi, n_slack: int = 3):
    """Candidate slack buses (most combined real and reactive room first) and PV buses."""
    a = inst.arrays
    prods = [j for j in range(len(inst.devices)) if a.is_prod[j] and on[j]]
    if not prods:
        return [0], []
    room = {}
    for j in prods:
        i = int(a.dev_bus[j])
        room[i] = room.get(i, 0.0) + (hi[j] - p[j]) + (a.q_max[j, t] - a.q_min[j, t])
    slacks = sorted(room, key=lambda i: (-room[i], i))[:n_slack]
    pv = sorted({int(a.dev_bus[j]) for j in prods if a.q_max[j, t] > a.q_min[j, t]})
    return slacks, pv


def _refine_with(inst, sol, t, lo, hi, opts, slack, pv, shunt_search):
    a = inst.arrays
    on = np.round(sol.u[:, t])
    pv = [i for i in pv if i != slack]
    setpoint = np.clip(PV_SETPOINT, a.v_min, a.v_max)
    ctrl = sorted(set(pv) | {slack})
    sol.v[ctrl, t] = setpoint[ctrl]
    saved = {k: getattr(sol, k)[:, t].copy() for k in ("v", "theta", "p", "q", "sh_u")}

    def attempt():
        for k, x in saved.items():
            getattr(sol, k)[:, t] = x
        return _solve_state(inst, sol, t, slack, pv, on, lo, hi, opts)

    p_rest, q_rest = attempt()

    def badness():
        return 10.0 * _voltage_violation(inst, sol, t) + q_rest + p_rest

    # greedy shunt steps and control-voltage shifts while voltages or reactive balance are off
    moves = [("sh_u", [k], step) for k in range(len(inst.shunts)) for step in (1, -1)]
    moves += [("v", [slack], dv) for dv in (VSTEP, -VSTEP)]
    moves += [("v", ctrl, dv) for dv in (VSTEP, -VSTEP)]
    for _ in range(shunt_search):
        base = badness()
        if base <= 1e-9:
            break
        best = None
        for key, idx, step in moves:
            x = saved[key][idx] + step
            if key == "sh_u":
                ok = np.all((a.sh_umin[idx] <= x) & (x <= a.sh_umax[idx]))
            else:
                ok = np.all((a.v_min[idx] <= x) & (x <= a.v_max[idx]))
            if not ok:
                continue
            old = saved[key][idx].copy()
            saved[key][idx] = x
            try:
                p_rest, q_rest = attempt()
                score = badness()
            except (NonConvergence, SingularJacobian):
                score = np.inf
            saved[key][idx] = old
            if score < base - 1e-9 and (best is None or score < best[0]):
                best = (score, key, idx, step)
        if best is None:
            break
        saved[best[1]][best[2]] += best[3]
    p_rest, q_rest = attempt()
    viol = _voltage_violation(inst, sol, t)
    if viol > 0:
        sol.v[:, t] = np.clip(sol.v[:, t], a.v_min, a.v_max)
        s = bus_imbalance(inst, sol, t)
        p_rest, q_rest = float(np.abs(s.real).sum()), float(np.abs(s.imag).sum())
    s_fr, s_to, s_sh = network_flows(inst, sol, t)
    loss = float((s_fr + s_to).real.sum() + s_sh.real.sum())
    return RefineResult(True, loss, p_rest, q_rest, viol)


def ac_refine(inst: Instance, sol: Solution, t: int, lo, hi, opts: PowerFlowOptions | None = None,
              shunt_search: int = 4) -> RefineResult:
    """Refine interval ``t`` of ``sol`` in place. ``lo``/``hi`` bound the slack adjustment.

    Each candidate slack bus is tried in turn until one leaves no residual;
    the state with the smallest residual is kept.
    """
    opts = opts or PowerFlowOptions()
    on = np.round(sol.u[:, t])
    slacks, pv = choose_controls(inst, t, on, sol.p[:, t], hi)
    start = {k: getattr(sol, k)[:, t].copy() for k in STATE}
    best = None
    for slack in slacks:
        for k, x in start.items():
            getattr(sol, k)[:, t] = x
        try:
            res = _refine_with(inst, sol, t, lo, hi, opts, slack, pv, shunt_search)
        except (NonConvergence, SingularJacobian) as exc:
            log.debug("interval %d slack %d: %s", t, slack, exc)
            continue
        bad = 10.0 * res.voltage_violation + res.p_residual + res.q_residual
        if best is None or bad < best[0]:
            best = (bad, res, {k: getattr(sol, k)[:, t].copy() for k in STATE})
        if bad <= 1e-9:
            break
    if best is None:
        log.debug("interval %d: no slack choice converged; using flat voltages", t)
        for k, x in start.items():
            getattr(sol, k)[:, t] = x
        _flat_state(inst, sol, t)
        s = bus_imbalance(inst, sol, t)
        return RefineResult(False, 0.0, float(np.abs(s.real).sum()), float(np.abs(s.imag).sum()), 0.0)
    for k, x in best[2].items():
        getattr(sol, k)[:, t] = x
    return best[1]
