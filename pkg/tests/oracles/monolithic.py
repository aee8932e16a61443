"""Single-pass reference evaluator written directly from the formulation with
scalar loops.  Shares only the data classes with the package."""
from __future__ import annotations

import cmath
import math

import numpy as np

TOL = 1e-6


def _pwl(blocks, p):
    total, left = 0.0, max(p, 0.0)
    for w, c in blocks:
        take = min(w, left)
        total += take * c
        left -= take
    return total


def _S(w, w2, y, y2):
    return y2.conjugate() * w * w.conjugate() + y.conjugate() * w * (w - w2).conjugate()


def _components(n, edges):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, k in edges:
        parent[find(i)] = find(k)
    return len({find(i) for i in range(n)})


def _windows(durations, min_time, t):
    start = [0.0]
    for d in durations:
        start.append(start[-1] + d)
    return [tp for tp in range(t) if start[t] - start[tp] < min_time - 1e-9]


def hard_feasible(inst, sol, tol=TOL) -> bool:
    bix = {b.id: i for i, b in enumerate(inst.buses)}
    T = len(inst.intervals)
    D = [iv.duration for iv in inst.intervals]
    for arr in (sol.v, sol.theta, sol.p, sol.q, sol.u, sol.u_su, sol.u_sd, sol.p_rsv, sol.sh_u,
                sol.ac_u, sol.ac_su, sol.ac_sd, sol.tau, sol.phi, sol.dc_pfr, sol.dc_qfr, sol.dc_qto):
        if not np.all(np.isfinite(arr)):
            return False

    def binary(x):
        return abs(x - round(x)) <= tol and -tol <= x <= 1 + tol

    for j, d in enumerate(inst.devices):
        prev_u, prev_p = d.u0, d.p0
        widths = [sum(w for w, _ in c.blocks) for c in d.energy_curves]
        for t in range(T):
            u, su, sd = sol.u[j, t], sol.u_su[j, t], sol.u_sd[j, t]
            if not (binary(u) and binary(su) and binary(sd)):
                return False
            u, su, sd = round(u), round(su), round(sd)
            if abs(u - prev_u - (su - sd)) > tol or su * sd > tol:
                return False
            if t in d.must_run and u != 1 or t in d.forced_off and u != 0:
                return False
            if su + sum(round(sol.u_sd[j, tp]) for tp in _windows(D, d.min_downtime, t)) > 1 + tol \
                    and _windows(D, d.min_downtime, t):
                return False
            if sd + sum(round(sol.u_su[j, tp]) for tp in _windows(D, d.min_uptime, t)) > 1 + tol \
                    and _windows(D, d.min_uptime, t):
                return False
            p, q, r = sol.p[j, t], sol.q[j, t], sol.p_rsv[j, t]
            if p < d.p_min[t] * u - tol or p > d.p_max[t] * u + tol:
                return False
            if q < d.q_min[t] * u - tol or q > d.q_max[t] * u + tol:
                return False
            if p - prev_p > D[t] * (d.ramp_up * (u - su) + d.startup_ramp * su) + tol:
                return False
            if prev_p - p > D[t] * (d.ramp_down * u + d.shutdown_ramp * sd) + tol:
                return False
            if r < -tol or r > d.reserve_max[t] * u + tol:
                return False
            if d.is_producer and p + r > d.p_max[t] * u + tol:
                return False
            if not d.is_producer and p - r < d.p_min[t] * u - tol:
                return False
            if p < -tol or p > widths[t] + tol:
                return False
            prev_u, prev_p = u, p
        for cc in d.max_startups:
            if sum(round(sol.u_su[j, t]) for t in cc.intervals) > cc.max_count + tol:
                return False
        for cc in d.max_shutdowns:
            if sum(round(sol.u_sd[j, t]) for t in cc.intervals) > cc.max_count + tol:
                return False

    for j, br in enumerate(inst.ac_branches):
        prev = br.u0
        for t in range(T):
            u, su, sd = sol.ac_u[j, t], sol.ac_su[j, t], sol.ac_sd[j, t]
            if not (binary(u) and binary(su) and binary(sd)):
                return False
            u, su, sd = round(u), round(su), round(sd)
            if abs(u - prev - (su - sd)) > tol or su * sd > tol:
                return False
            if not (br.tau_min - tol <= sol.tau[j, t] <= br.tau_max + tol):
                return False
            if not (br.phi_min - tol <= sol.phi[j, t] <= br.phi_max + tol):
                return False
            prev = u
    for j, sh in enumerate(inst.shunts):
        for t in range(T):
            x = sol.sh_u[j, t]
            if abs(x - round(x)) > tol or not (sh.u_min - tol <= x <= sh.u_max + tol):
                return False
    for j, br in enumerate(inst.dc_branches):
        for t in range(T):
            if abs(sol.dc_pfr[j, t]) > br.p_max + tol:
                return False
            if not (br.q_min_fr - tol <= sol.dc_qfr[j, t] <= br.q_max_fr + tol):
                return False
            if not (br.q_min_to - tol <= sol.dc_qto[j, t] <= br.q_max_to + tol):
                return False
    for i, b in enumerate(inst.buses):
        for t in range(T):
            if not (b.v_min - tol <= sol.v[i, t] <= b.v_max + tol):
                return False

    n = len(inst.buses)
    for t in range(T):
        closed = [(bix[br.from_bus], bix[br.to_bus], br.id, br.y_sr.imag)
                  for j, br in enumerate(inst.ac_branches) if round(sol.ac_u[j, t]) == 1]
        dce = [(bix[br.from_bus], bix[br.to_bus], br.id) for br in inst.dc_branches]
        if _components(n, [(i, k) for i, k, _, _ in closed] + [(i, k) for i, k, _ in dce]) > 1:
            return False
        for c in inst.contingencies:
            e = [(i, k) for i, k, bid, _ in closed if bid != c.branch] + \
                [(i, k) for i, k, bid in dce if bid != c.branch]
            if _components(n, e) > 1:
                return False
            if _components(n, [(i, k) for i, k, bid, b in closed if bid != c.branch and b != 0]) > 1:
                return False
    return True


def objective(inst, sol) -> dict:
    """Every breakdown component plus soft-limit diagnostics, from a snapped solution."""
    bix = {b.id: i for i, b in enumerate(inst.buses)}
    dix = {d.id: j for j, d in enumerate(inst.devices)}
    T = len(inst.intervals)
    D = [iv.duration for iv in inst.intervals]
    pen = inst.penalties
    n = len(inst.buses)
    K = len(inst.contingencies)
    out = dict(energy_value=0.0, energy_cost=0.0, z_rsv=0.0, z_su=0.0, z_sd=0.0, z_on=0.0,
               z_sw=0.0, z_s=0.0, z_rsv_zone=0.0, z_p=0.0, z_q=0.0, z_en=0.0, z_ctg_worst=0.0,
               z_ctg_avg=0.0)
    z_time = []
    diag = dict(p_imb=0.0, q_imb=0.0, base_over=-math.inf, ctg_over=-math.inf, shortfall=0.0,
                energy_over=-math.inf)
    u = np.round(sol.u)
    acu = np.round(sol.ac_u)
    shu = np.round(sol.sh_u)
    for t in range(T):
        zt = 0.0
        for j, d in enumerate(inst.devices):
            val = D[t] * _pwl(d.energy_curves[t].blocks, sol.p[j, t])
            if d.is_producer:
                out["energy_cost"] += val
                zt -= val
            else:
                out["energy_value"] += val
                zt += val
            prev = d.u0 if t == 0 else u[j, t - 1]
            su = d.startup_cost * max(0.0, u[j, t] - prev)
            sd = d.shutdown_cost * max(0.0, prev - u[j, t])
            on = D[t] * d.on_cost * u[j, t]
            rsv = D[t] * d.reserve_cost * sol.p_rsv[j, t]
            out["z_su"] += su
            out["z_sd"] += sd
            out["z_on"] += on
            out["z_rsv"] += rsv
            zt -= su + sd + on + rsv
        for z in inst.zones:
            members = [dix[x] for x in z.devices]
            top = max([sol.p[j, t] for j in members if inst.devices[j].is_producer], default=0.0)
            short = max(0.0, z.sigma * top - sum(sol.p_rsv[j, t] for j in members))
            diag["shortfall"] = max(diag["shortfall"], short)
            zz = D[t] * z.shortage_penalty * short
            out["z_rsv_zone"] += zz
            zt -= zz
        w = [cmath.rect(sol.v[i, t], sol.theta[i, t]) for i in range(n)]
        bal = [0j] * n
        for j, d in enumerate(inst.devices):
            s = complex(sol.p[j, t], sol.q[j, t])
            bal[bix[d.bus]] += -s if d.is_producer else s
        shunt_p = 0.0
        for j, sh in enumerate(inst.shunts):
            i = bix[sh.bus]
            s = sh.y_step.conjugate() * shu[j, t] * sol.v[i, t] ** 2
            bal[i] += s
            shunt_p += s.real
        qmax = []
        for j, br in enumerate(inst.ac_branches):
            prev = br.u0 if t == 0 else acu[j, t - 1]
            sw = D[t] * pen.c_sw * abs(acu[j, t] - prev)
            out["z_sw"] += sw
            zt -= sw
            i, k = bix[br.from_bus], bix[br.to_bus]
            nu = cmath.rect(sol.tau[j, t], sol.phi[j, t])
            sf = acu[j, t] * _S(w[i] / nu, w[k], br.y_sr, br.y_fr)
            st = acu[j, t] * _S(w[k], w[i] / nu, br.y_sr, br.y_to)
            bal[i] += sf
            bal[k] += st
            over = max(abs(sf), abs(st)) - br.s_max
            diag["base_over"] = max(diag["base_over"], over)
            zs = D[t] * pen.c_s * max(0.0, over)
            out["z_s"] += zs
            zt -= zs
            qmax.append(max(abs(sf.imag), abs(st.imag)))
        for j, br in enumerate(inst.dc_branches):
            bal[bix[br.from_bus]] += complex(sol.dc_pfr[j, t], sol.dc_qfr[j, t])
            bal[bix[br.to_bus]] += complex(-sol.dc_pfr[j, t], sol.dc_qto[j, t])
        for i in range(n):
            zp = D[t] * pen.c_p * abs(bal[i].real)
            zq = D[t] * pen.c_q * abs(bal[i].imag)
            diag["p_imb"] = max(diag["p_imb"], abs(bal[i].real))
            diag["q_imb"] = max(diag["q_imb"], abs(bal[i].imag))
            out["z_p"] += zp
            out["z_q"] += zq
            zt -= zp + zq
        z_time.append(zt)

        # post-contingency DC
        if K:
            p_sl = sum(sol.p[j, t] * (1 if d.is_producer else -1) for j, d in enumerate(inst.devices)) - shunt_p
            z_k = []
            for c in inst.contingencies:
                inj = [0.0] * n
                for j, d in enumerate(inst.devices):
                    inj[bix[d.bus]] += sol.p[j, t] if d.is_producer else -sol.p[j, t]
                for j, sh in enumerate(inst.shunts):
                    inj[bix[sh.bus]] -= (sh.y_step.conjugate() * shu[j, t] * sol.v[bix[sh.bus], t] ** 2).real
                for j, br in enumerate(inst.dc_branches):
                    if br.id == c.branch:
                        continue
                    inj[bix[br.from_bus]] -= sol.dc_pfr[j, t]
                    inj[bix[br.to_bus]] += sol.dc_pfr[j, t]
                B = np.zeros((n, n))
                rhs = np.array([inj[i] - p_sl / n for i in range(n)])
                surv = []
                for j, br in enumerate(inst.ac_branches):
                    if br.id == c.branch or acu[j, t] != 1:
                        continue
                    b = -br.y_sr.imag
                    i, k = bix[br.from_bus], bix[br.to_bus]
                    B[i, i] += b
                    B[k, k] += b
                    B[i, k] -= b
                    B[k, i] -= b
                    rhs[i] += b * sol.phi[j, t]
                    rhs[k] -= b * sol.phi[j, t]
                    surv.append((j, i, k, b))
                th = np.zeros(n)
                th[1:] = np.linalg.solve(B[1:, 1:], rhs[1:])
                z = 0.0
                for j, i, k, b in surv:
                    f = b * (th[i] - th[k] - sol.phi[j, t])
                    over = math.sqrt(f * f + qmax[j] ** 2) - inst.ac_branches[j].s_max_ctg
                    diag["ctg_over"] = max(diag["ctg_over"], over)
                    z += D[t] * pen.c_s * max(0.0, over)
                z_k.append(z)
            out["z_ctg_worst"] += max(z_k)
            out["z_ctg_avg"] += sum(z_k) / K
    for j, d in enumerate(inst.devices):
        for ec in d.energy_constraints:
            x = ec.a0 + sum(c * sol.p[j, int(t)] for t, c in ec.coeffs.items())
            diag["energy_over"] = max(diag["energy_over"], x)
            out["z_en"] += pen.c_en * max(0.0, x)
    out["z_base"] = sum(z_time) - out["z_en"]
    out["z_ms"] = out["z_base"] - out["z_ctg_worst"] - out["z_ctg_avg"]
    out["z_time"] = z_time
    out["diag"] = diag
    return out


def classify(obj: dict, tol=TOL) -> str:
    d = obj["diag"]
    if d["p_imb"] > tol or d["q_imb"] > tol:
        return "evaluation-feasible"
    if max(d["base_over"], d["ctg_over"], d["shortfall"], d["energy_over"]) > tol:
        return "physically-feasible"
    return "engineering-feasible"


def evaluate(inst, sol, tol=TOL) -> dict:
    if not hard_feasible(inst, sol, tol):
        return {"feasible": False, "score": 0.0}
    obj = objective(inst, sol)
    return {"feasible": True, "score": max(0.0, obj["z_ms"]), "objective": obj,
            "class": classify(obj, tol)}
