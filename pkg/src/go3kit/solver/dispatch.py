"""Per-interval merit-order dispatch and greedy reserve assignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ..model import Instance, PwlCurve

CONSUMER_PF = 0.1  # initial q/p ratio for consumers
LAZY_ROUNDS = 4    # constraint-generation passes for branch limits


def curve_segment(curve: PwlCurve, lo: float, hi: float) -> list[tuple[float, float]]:
    """Blocks of ``curve`` restricted to ``[lo, hi]``."""
    out, edge = [], 0.0
    for w, price in curve.blocks:
        a, b = max(edge, lo), min(edge + w, hi)
        if b > a:
            out.append((b - a, price))
        edge += w
    if hi > edge:  # past the curve's last breakpoint: extend at the final price
        out.append((hi - max(edge, lo), curve.blocks[-1][1] if curve.blocks else 0.0))
    return out


def clear_dispatch(inst: Instance, t: int, on, lo, hi, loss: float = 0.0) -> np.ndarray:
    """Surplus-maximizing p for committed devices inside ``[lo, hi]`` with a loss adder."""
    a = inst.arrays
    J = len(inst.devices)
    p = np.where(on, lo, 0.0).astype(float)
    s0 = float(p[a.is_prod].sum())
    d0 = float(p[~a.is_prod].sum()) + loss
    sup, dem = [], []
    for j in range(J):
        if not on[j] or hi[j] <= lo[j]:
            continue
        for w, price in curve_segment(inst.devices[j].energy_curves[t], lo[j], hi[j]):
            (sup if a.is_prod[j] else dem).append((price, j, w))
    sup.sort(key=lambda x: (x[0], x[1]))
    dem.sort(key=lambda x: (-x[0], x[1]))
    # net forced position: positive means forced supply must find demand
    excess = s0 - d0
    i = k = 0
    si = [w for _, _, w in sup]
    dk = [w for _, _, w in dem]
    while excess > 0 and k < len(dem):
        take = min(excess, dk[k])
        p[dem[k][1]] += take
        dk[k] -= take
        excess -= take
        if dk[k] <= 0:
            k += 1
    while excess < 0 and i < len(sup):
        take = min(-excess, si[i])
        p[sup[i][1]] += take
        si[i] -= take
        excess += take
        if si[i] <= 0:
            i += 1
    while i < len(sup) and k < len(dem) and dem[k][0] >= sup[i][0]:
        take = min(si[i], dk[k])
        p[sup[i][1]] += take
        p[dem[k][1]] += take
        si[i] -= take
        dk[k] -= take
        if si[i] <= 0:
            i += 1
        if dk[k] <= 0:
            k += 1
    return np.clip(p, np.where(on, lo, 0.0), np.where(on, hi, 0.0))


def assign_reserves(inst: Instance, t: int, u, p) -> np.ndarray:
    """Cheapest-first spinning reserve up to each zone's requirement."""
    a = inst.arrays
    r = np.zeros(len(inst.devices))
    room = np.where(a.is_prod, a.p_max[:, t] * u - p, p - a.p_min[:, t] * u)
    room = np.clip(np.minimum(room, a.rsv_max[:, t] * u), 0.0, None)
    for zone in inst.zones:
        members = [inst.index.device[d] for d in zone.devices]
        prods = [j for j in members if a.is_prod[j]]
        need = zone.sigma * max((p[j] for j in prods), default=0.0) - sum(r[j] for j in members)
        for j in sorted(members, key=lambda j: (a.rsv_cost[j], j)):
            if need <= 0:
                break
            take = min(need, room[j] - r[j])
            if take > 0:
                r[j] += take
                need -= take
    return r


def zone_shortfall(inst: Instance, t: int, p, r) -> float:
    a = inst.arrays
    total = 0.0
    for zone in inst.zones:
        members = [inst.index.device[d] for d in zone.devices]
        req = zone.sigma * max((p[j] for j in members if a.is_prod[j]), default=0.0)
        total += max(0.0, req - sum(r[j] for j in members))
    return total


@dataclass
class NetworkLimits:
    """Linearized DC flows ``H @ inj + c`` with soft limits ``lim`` priced at ``price``.

    Rows cover the intact network and every non-islanding contingency;
    ``inj_fixed`` is the non-device part of the bus injection.
    """
    H: np.ndarray
    c: np.ndarray
    lim: np.ndarray
    price: np.ndarray
    inj_fixed: np.ndarray

    def injection(self, inst: Instance, p) -> np.ndarray:
        a = inst.arrays
        inj = self.inj_fixed.copy()
        np.add.at(inj, a.dev_bus, np.where(a.is_prod, 1.0, -1.0) * p)
        return inj

    def excess(self, inst: Instance, p) -> np.ndarray:
        return np.abs(self.H @ self.injection(inst, p) + self.c) - self.lim

    def overload(self, inst: Instance, p) -> float:
        return float(np.clip(self.excess(inst, p), 0.0, None).sum())


def network_limits(inst: Instance, sol, t: int, margin: float = 0.95) -> NetworkLimits | None:
    """Soft DC limits for interval ``t``; None when the intact AC network does not span the buses."""
    from ..contingency import SingularSystem, bus_injection, dc_ptdf

    a = inst.arrays
    try:
        H, c = dc_ptdf(inst, sol, t)
    except SingularSystem:
        return None
    saved = sol.p[:, t].copy()
    sol.p[:, t] = 0.0
    inj_fixed = bus_injection(inst, sol, t)
    sol.p[:, t] = saved
    on = np.round(sol.ac_u[:, t])
    Hs, cs, lims, prices = [H], [c], [margin * a.ac_smax * on], [np.full(len(c), inst.penalties.c_s)]
    K = max(1, len(inst.contingencies))
    for ctg in inst.contingencies:
        if ctg.branch in inst.index.dc:
            j = inst.index.dc[ctg.branch]
            shift = np.zeros(len(inst.buses))
            shift[a.dc_fr[j]] += sol.dc_pfr[j, t]
            shift[a.dc_to[j]] -= sol.dc_pfr[j, t]
            Hk, ck, keep = H, c + H @ shift, on.copy()
        else:
            l = inst.index.ac[ctg.branch]
            if not on[l]:
                continue
            tr = H[:, a.ac_fr[l]] - H[:, a.ac_to[l]]
            denom = 1.0 - tr[l]
            if abs(denom) < 1e-9:
                continue
            lodf = tr / denom
            Hk, ck = H + np.outer(lodf, H[l]), c + lodf * c[l]
            keep = on.copy()
            keep[l] = 0.0
        Hs.append(Hk)
        cs.append(ck)
        lims.append(np.where(keep > 0, margin * a.ac_smax_ctg, np.inf))
        prices.append(np.full(len(ck), inst.penalties.c_s * (1.0 + 1.0 / K)))
    return NetworkLimits(np.vstack(Hs), np.concatenate(cs), np.concatenate(lims),
                         np.concatenate(prices), inj_fixed)


def reserve_redispatch(inst: Instance, t: int, on, lo, hi, loss: float = 0.0,
                       net: NetworkLimits | None = None, rows=None):
    """Joint energy/reserve dispatch LP for one interval; ``(p, r)`` or ``None`` on failure.

    Maximizes value minus cost, reserve cost, shortage and imbalance penalties
    with outputs inside ``[lo, hi]``; with ``net``, DC branch limits enter as
    soft constraints at the overload price.
    """
    a = inst.arrays
    J = len(inst.devices)
    cols, bounds, cost = [], [], []   # energy blocks: (device, sign)
    for j in range(J):
        if not on[j] or hi[j] <= lo[j]:
            continue
        for w, price in curve_segment(inst.devices[j].energy_curves[t], lo[j], hi[j]):
            cols.append(j)
            bounds.append((0.0, w))
            cost.append(price if a.is_prod[j] else -price)
    nb = len(cols)
    r_idx = {j: nb + k for k, j in enumerate(j for j in range(J) if on[j])}
    for j in r_idx:
        bounds.append((0.0, max(0.0, a.rsv_max[j, t])))
        cost.append(a.rsv_cost[j])
    zones = list(inst.zones)
    base = nb + len(r_idx)
    for z in zones:           # requirement R_n and shortfall s_n
        bounds += [(0.0, None), (0.0, None)]
        cost += [0.0, z.shortage_penalty]
    e = base + 2 * len(zones)  # imbalance e+, e-
    bounds += [(0.0, None), (0.0, None)]
    cost += [inst.penalties.c_p, inst.penalties.c_p]
    rows = np.zeros(0, dtype=int) if net is None or rows is None else np.asarray(rows, dtype=int)
    L = len(rows)
    sl = len(cost)             # branch slacks
    bounds += [(0.0, None)] * L
    if L:
        cost += list(net.price[rows])
    n = len(cost)
    A, b = [], []
    blocks_of = {}
    for k, j in enumerate(cols):
        blocks_of.setdefault(j, []).append(k)
    for j, rk in r_idx.items():
        row = np.zeros(n)
        for k in blocks_of.get(j, []):
            row[k] = 1.0 if a.is_prod[j] else -1.0
        row[rk] = 1.0
        A.append(row)
        b.append(a.p_max[j, t] - lo[j] if a.is_prod[j] else lo[j] - a.p_min[j, t])
    for zi, z in enumerate(zones):
        members = [inst.index.device[d] for d in z.devices]
        R, S = base + 2 * zi, base + 2 * zi + 1
        for j in members:
            if a.is_prod[j] and on[j]:
                row = np.zeros(n)
                for k in blocks_of.get(j, []):
                    row[k] = z.sigma
                row[R] = -1.0
                A.append(row)
                b.append(-z.sigma * lo[j])
        row = np.zeros(n)
        row[R] = 1.0
        row[S] = -1.0
        for j in members:
            if j in r_idx:
                row[r_idx[j]] = -1.0
        A.append(row)
        b.append(0.0)
    if L:
        Hr = net.H[rows]
        f0 = Hr @ net.injection(inst, np.where(on, lo, 0.0)) + net.c[rows]
        G = np.zeros((L, n))
        for k, j in enumerate(cols):
            G[:, k] = (1.0 if a.is_prod[j] else -1.0) * Hr[:, a.dev_bus[j]]
        G[:, sl:sl + L] = -np.eye(L)
        for sign in (1.0, -1.0):
            Gs = G.copy()
            Gs[:, :sl] *= sign
            A.extend(Gs)
            b.extend(net.lim[rows] - sign * f0)
    eq = np.zeros(n)
    for k, j in enumerate(cols):
        eq[k] = 1.0 if a.is_prod[j] else -1.0
    eq[e], eq[e + 1] = 1.0, -1.0
    fixed = sum(lo[j] * (1 if a.is_prod[j] else -1) for j in range(J) if on[j])
    res = linprog(np.array(cost), A_ub=np.array(A) if A else None, b_ub=np.array(b) if b else None,
                  A_eq=eq[None, :], b_eq=[loss - fixed], bounds=bounds, method="highs")
    if res.status != 0:
        return None
    p = np.where(on, lo, 0.0).astype(float)
    for k, j in enumerate(cols):
        p[j] += res.x[k]
    p = np.clip(p, np.where(on, lo, 0.0), np.where(on, hi, 0.0))
    r = np.zeros(J)
    for j, rk in r_idx.items():
        r[j] = res.x[rk]
    return p, r


def dispatch_interval(inst: Instance, t: int, on, lo, hi, loss: float = 0.0,
                      net: NetworkLimits | None = None) -> np.ndarray:
    """Merit-order clearing, falling back to the joint LP on reserve shortfall or congestion."""
    u = np.asarray(on, dtype=float)
    p = clear_dispatch(inst, t, on, lo, hi, loss)
    short = inst.zones and zone_shortfall(inst, t, p, assign_reserves(inst, t, u, p)) > 1e-9
    if not short and (net is None or net.overload(inst, p) <= 1e-9):
        return p
    rows = np.zeros(0, dtype=int)
    for _ in range(LAZY_ROUNDS):
        if net is not None:
            new = np.flatnonzero(net.excess(inst, p) > 1e-9)
            new = np.setdiff1d(new, rows)
            if len(rows) and not len(new):
                break
            rows = np.union1d(rows, new)
        out = reserve_redispatch(inst, t, on, lo, hi, loss, net, rows)
        if out is None:
            break
        p = out[0]
        if net is None:
            break
    return p


def initial_q(inst: Instance, t: int, u, p) -> np.ndarray:
    a = inst.arrays
    qlo, qhi = a.q_min[:, t] * u, a.q_max[:, t] * u
    target = np.where(a.is_prod, 0.0, CONSUMER_PF * p)
    return np.clip(target, qlo, qhi)


def dispatch_phase(inst: Instance, schedule, t: int, prev_p, windows=None, loss: float = 0.0,
                   prev_u=None):
    """``(p, q, p_rsv)`` at interval ``t`` for a binary schedule.

    ``windows`` is ``(lo, hi)`` from :func:`ramp_windows`; without it the
    window is the ramp range around ``prev_p`` intersected with the bounds.
    """
    from .schedule import ramp_windows, step_window

    a = inst.arrays
    u = np.round(schedule.u[:, t])
    if prev_u is None:
        prev_u = a.dev_u0 if t == 0 else np.round(schedule.u[:, t - 1])
    lo_w, hi_w = windows if windows is not None else ramp_windows(inst, schedule.u)
    J = len(inst.devices)
    lo, hi = np.zeros(J), np.zeros(J)
    for j in range(J):
        if u[j]:
            lo[j], hi[j] = step_window(inst, j, t, prev_u[j], prev_p[j], lo_w, hi_w)
    p = dispatch_interval(inst, t, u > 0, lo, hi, loss)
    q = initial_q(inst, t, u, p)
    r = assign_reserves(inst, t, u, p)
    return p, q, r
