"""Commitment: merit-order UC, iterative batch rounding, schedule repair and
ramp-feasible dispatch windows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..equilibrium import clear_interval
from ..model import Instance, build_topology, n_components

ROUND_UP_AT = 0.4


@dataclass
class CandidateSchedule:
    u: np.ndarray      # (J, T), fractional during relaxation
    u_su: np.ndarray
    u_sd: np.ndarray
    ac_u: np.ndarray   # (A, T)

    @classmethod
    def from_u(cls, inst: Instance, u, ac_u=None) -> "CandidateSchedule":
        u = np.asarray(u, dtype=float)
        prev = np.concatenate([inst.arrays.dev_u0[:, None], u[:, :-1]], axis=1)
        d = u - prev
        if ac_u is None:
            ac_u = default_branch_status(inst)
        return cls(u, np.maximum(d, 0.0), np.maximum(-d, 0.0), np.asarray(ac_u, dtype=float))

    @property
    def integral(self) -> bool:
        return bool(np.all(self.u == np.round(self.u)))

    def copy(self) -> "CandidateSchedule":
        return CandidateSchedule(self.u.copy(), self.u_su.copy(), self.u_sd.copy(), self.ac_u.copy())


def default_branch_status(inst: Instance) -> np.ndarray:
    """Initial branch statuses over the horizon, or all closed if those leave the
    network (or any contingency) disconnected."""
    u0 = inst.arrays.ac_u0.astype(float)
    ok = n_components(build_topology(inst, u0)) <= 1 and all(
        n_components(build_topology(inst, u0, outage=c.branch)) <= 1 for c in inst.contingencies)
    status = u0 if ok else np.ones_like(u0)
    return np.repeat(status[:, None], inst.n_intervals, axis=1)


def interval_starts(inst: Instance) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum([iv.duration for iv in inst.intervals])[:-1]])


# --------------------------------------------------------------------------- repair


def _gaps(row):
    """``(start, end)`` of interior off-runs bounded by on-intervals on both sides."""
    out, t, T = [], 0, len(row)
    while t < T:
        if row[t] == 0:
            s = t
            while t < T and row[t] == 0:
                t += 1
            if s > 0 and t < T:
                out.append((s, t))
        else:
            t += 1
    return out


def _fill_gaps(inst, j, row, starts):
    """Close off-gaps shorter than min downtime, then shortest gaps while startups exceed limits."""
    dev = inst.devices[j]
    row = row.copy()
    for s, e in _gaps(row):
        length = starts[e] - starts[s]
        if length < dev.min_downtime - 1e-9 and not (dev.forced_off & set(range(s, e))):
            row[s:e] = 1
    for cons, key in ((dev.max_startups, "su"), (dev.max_shutdowns, "sd")):
        for c in cons:
            window = set(c.intervals)
            while True:
                prev = np.concatenate([[dev.u0], row[:-1]])
                ev = (row > prev) if key == "su" else (row < prev)
                if sum(ev[t] for t in window) <= c.max_count:
                    break
                cand = [(starts[e] - starts[s], s, e) for s, e in _gaps(row)
                        if not (dev.forced_off & set(range(s, e)))]
                if not cand:
                    break
                _, s, e = min(cand)
                row[s:e] = 1
    return row


def repair_device(inst: Instance, j: int, desired) -> np.ndarray:
    """Forward greedy that follows ``desired`` whenever schedule rules allow."""
    dev = inst.devices[j]
    a = inst.arrays
    T = inst.n_intervals
    D = a.duration
    starts = interval_starts(inst)
    t_up, t_dn = inst.lookback[j]
    desired = np.asarray(desired, dtype=int).copy()
    desired[list(dev.must_run)] = 1
    desired[list(dev.forced_off)] = 0
    desired = _fill_gaps(inst, j, desired, starts)
    u = np.zeros(T, dtype=int)
    su = np.zeros(T, dtype=int)
    sd = np.zeros(T, dtype=int)
    prev_u = int(dev.u0)
    lo = float(dev.p0)  # lowest reachable output while on

    def count_ok(cons, events, t):
        return all(sum(events[x] for x in c.intervals if x < t) + 1 <= c.max_count
                   for c in cons if t in c.intervals)

    def window(t, span):
        return [x for x in range(t, T) if starts[x] - starts[t] < span - 1e-9]

    for t in range(T):
        want = desired[t]
        if prev_u == 1 and want == 0:
            allowed = (
                not any(su[x] for x in t_up[t])
                and count_ok(dev.max_shutdowns, sd, t)
                and lo <= D[t] * dev.shutdown_ramp + 1e-9
                and not (dev.must_run & set(window(t, dev.min_downtime)))
            )
            if not allowed and t not in dev.forced_off:
                want = 1
        elif prev_u == 0 and want == 1:
            allowed = (
                not any(sd[x] for x in t_dn[t])
                and count_ok(dev.max_startups, su, t)
                and dev.p_min[t] <= D[t] * dev.startup_ramp + 1e-9
                and not (dev.forced_off & set(window(t, dev.min_uptime)))
            )
            if not allowed and t not in dev.must_run:
                want = 0
        u[t] = want
        su[t] = int(want > prev_u)
        sd[t] = int(want < prev_u)
        if want:
            lo = dev.p_min[t] if su[t] else max(dev.p_min[t], lo - D[t] * dev.ramp_down)
        prev_u = want
    return u


def repair_schedule(inst: Instance, u) -> np.ndarray:
    u = np.round(np.asarray(u, dtype=float)).astype(int)
    return np.array([repair_device(inst, j, u[j]) for j in range(len(inst.devices))],
                    dtype=float).reshape(len(inst.devices), inst.n_intervals)


def u0_schedule(inst: Instance) -> np.ndarray:
    u = np.repeat(inst.arrays.dev_u0[:, None], inst.n_intervals, axis=1).astype(float)
    for j, dev in enumerate(inst.devices):
        u[j, list(dev.must_run)] = 1.0
        u[j, list(dev.forced_off)] = 0.0
    return u


# --------------------------------------------------------------------------- UC


def merit_keys(inst: Instance, t: int) -> np.ndarray:
    """Average cost per pu at P^max including no-load cost."""
    keys = np.full(len(inst.devices), np.inf)
    for j, dev in enumerate(inst.devices):
        pm = dev.p_max[t]
        if dev.is_producer:
            keys[j] = (dev.energy_curves[t].value(pm) + dev.on_cost) / pm if pm > 0 else np.inf
    return keys


def load_proxy(inst: Instance) -> np.ndarray:
    return np.array([clear_interval(inst, t).q_star for t in range(inst.n_intervals)])


def _reserve_position(inst, t, load, weights, keys):
    """``(capacity, deliverable reserve, requirement)`` after a merit-order dispatch of ``load``."""
    a = inst.arrays
    sigma = max((z.sigma for z in inst.zones), default=0.0)
    rest = 1.02 * load
    cap = deliver = big = 0.0
    for j in sorted(weights, key=lambda j: (keys[j], j)):
        w = weights[j]
        pm = w * a.p_max[j, t]
        p = min(pm, max(rest, w * a.p_min[j, t]))
        rest -= p
        cap += pm
        deliver += min(w * a.rsv_max[j, t], pm - p)
        big = max(big, p)
    return cap, deliver, sigma * big


def _fractional_fill(inst, t, load, weights, fixed, keys):
    """Merit-order fill of the devices not in ``fixed`` until the load is covered and
    the committed set can deliver the spinning-reserve requirement; marginal unit
    fractional.  ``weights`` maps already committed producers to their status.
    """
    a = inst.arrays
    weights = {j: w for j, w in weights.items() if w > 0}
    out = {}
    for j in np.argsort(keys, kind="stable"):
        if not a.is_prod[j] or j in fixed or not np.isfinite(keys[j]):
            continue
        if t in inst.devices[j].forced_off:
            out[j] = 0.0
            continue
        cap, deliver, req = _reserve_position(inst, t, load, weights, keys)
        if cap >= 1.02 * load and deliver >= 1.1 * req:
            out[j] = 0.0
            continue
        x = 1.0
        for frac in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9):
            c, dl, r = _reserve_position(inst, t, load, {**weights, j: frac}, keys)
            if c >= 1.02 * load and dl >= 1.1 * r:
                x = frac
                break
        out[j] = x
        weights[j] = x
    return out


def uc_phase(inst: Instance, fractional: bool = False) -> CandidateSchedule:
    """Merit-order commitment against the clearing-quantity load proxy.

    With ``fractional`` the marginal unit keeps its fractional commitment
    (relaxation proxy for batch rounding); otherwise it rounds up and the
    schedule is repaired.
    """
    a = inst.arrays
    T = inst.n_intervals
    J = len(inst.devices)
    u = np.zeros((J, T))
    need_t = load_proxy(inst)
    for t in range(T):
        keys = merit_keys(inst, t)
        fixed = set()
        for j, dev in enumerate(inst.devices):
            if not dev.is_producer:
                cheapest = np.min(keys) if np.isfinite(keys).any() else 0.0
                top = dev.energy_curves[t].blocks[0][1] if dev.energy_curves[t].blocks else 0.0
                u[j, t] = 0.0 if t in dev.forced_off else float(top > cheapest or not np.isfinite(cheapest))
                fixed.add(j)
            elif t in dev.must_run:
                u[j, t] = 1.0
                fixed.add(j)
        weights = {j: u[j, t] for j in fixed if a.is_prod[j]}
        for j, x in _fractional_fill(inst, t, need_t[t], weights, fixed, keys).items():
            u[j, t] = x
    if not fractional:
        u = repair_schedule(inst, np.ceil(u - 1e-12))
    return CandidateSchedule.from_u(inst, u)


def default_batches(inst: Instance, n_batches: int = 3) -> list[list[int]]:
    """Producers by total capacity (largest first) split into ``n_batches`` groups."""
    a = inst.arrays
    prods = [j for j in range(len(inst.devices)) if a.is_prod[j]]
    prods.sort(key=lambda j: (-a.p_max[j].sum(), j))
    size = max(1, -(-len(prods) // n_batches))
    return [prods[i:i + size] for i in range(0, len(prods), size)]


def batch_round(inst: Instance, fractional: CandidateSchedule, batches=None,
                threshold: float = ROUND_UP_AT) -> CandidateSchedule:
    """Round and fix one batch at a time, refilling the remaining fractional entries."""
    a = inst.arrays
    T = inst.n_intervals
    batches = default_batches(inst) if batches is None else batches
    u = fractional.u.copy()
    if fractional.integral:
        return CandidateSchedule.from_u(inst, repair_schedule(inst, u), fractional.ac_u)
    need_t = load_proxy(inst)
    free = {j for j in range(len(inst.devices)) if a.is_prod[j]
            for t in range(T) if u[j, t] != round(u[j, t])}
    done: set[int] = set()
    keys_t = [merit_keys(inst, t) for t in range(T)]

    def covered(t, weights):
        cap, deliver, req = _reserve_position(inst, t, need_t[t], weights, keys_t[t])
        return cap >= 1.02 * need_t[t] and deliver >= 1.1 * req

    def round_batch(batch, rest):
        for j in batch:
            for t in range(T):
                x = u[j, t]
                if x == round(x):
                    continue
                if x >= threshold:
                    u[j, t] = 1.0
                    continue
                # round down only if the devices still free can cover the gap
                # undecided fractional entries count as off unless they will round up
                trial = {k: (1.0 if k in rest else float(u[k, t] >= threshold))
                         for k in range(len(inst.devices)) if a.is_prod[k] and k != j}
                trial = {k: w for k, w in trial.items()
                         if w > 0 and t not in inst.devices[k].forced_off}
                u[j, t] = 0.0 if covered(t, trial) else 1.0

    for batch in batches:
        done.update(batch)
        rest = free - done
        round_batch(batch, rest)
        if not rest:
            continue
        # refill the fractional entries of devices not yet rounded
        for t in range(T):
            fixed = set(range(len(inst.devices))) - rest
            weights = {j: u[j, t] for j in fixed if a.is_prod[j]}
            fill = _fractional_fill(inst, t, need_t[t], weights, fixed, keys_t[t])
            for j, x in fill.items():
                if t not in inst.devices[j].must_run:
                    u[j, t] = x
    round_batch([j for j in range(len(inst.devices)) if a.is_prod[j]], set())
    return CandidateSchedule.from_u(inst, repair_schedule(inst, u), fractional.ac_u)


def naive_round(inst: Instance, fractional: CandidateSchedule) -> CandidateSchedule:
    """One-shot rounding at 0.5 followed by repair (baseline for batch rounding)."""
    return CandidateSchedule.from_u(inst, repair_schedule(inst, np.round(fractional.u)),
                                    fractional.ac_u)


# --------------------------------------------------------------------------- ramp windows


def energy_caps(inst: Instance):
    """Per-interval ``(floor, cap)`` implied by single-signed multi-interval energy constraints."""
    J, T = len(inst.devices), inst.n_intervals
    floor = np.zeros((J, T))
    cap = np.full((J, T), np.inf)
    for j, dev in enumerate(inst.devices):
        for ec in dev.energy_constraints:
            coeffs = np.array([c for _, c in sorted(ec.coeffs.items())])
            ts = [int(t) for t, _ in sorted(ec.coeffs.items())]
            if len(coeffs) == 0:
                continue
            if np.all(coeffs > 0) and ec.a0 < 0:
                cap[j, ts] = np.minimum(cap[j, ts], -ec.a0 / coeffs.sum())
            elif np.all(coeffs < 0) and ec.a0 > 0:
                floor[j, ts] = np.maximum(floor[j, ts], ec.a0 / -coeffs.sum())
    return floor, cap


def ramp_windows(inst: Instance, u) -> tuple[np.ndarray, np.ndarray]:
    """Backward-consistent dispatch windows ``(lo, hi)`` for a binary schedule.

    Any trajectory that stays inside the windows and respects the interval to
    interval ramp limits can be continued to the end of the horizon.
    """
    a = inst.arrays
    u = np.round(np.asarray(u, dtype=float))
    J, T = u.shape
    D = a.duration
    e_floor, e_cap = energy_caps(inst)
    lo = np.zeros((J, T))
    hi = np.zeros((J, T))
    for j in range(J):
        prev_u, rl, rh = a.dev_u0[j], a.dev_p0[j], a.dev_p0[j]
        for t in range(T):
            if u[j, t] == 0:
                lo[j, t] = hi[j, t] = rl = rh = 0.0
            else:
                pmin, pmax = a.p_min[j, t], a.p_max[j, t]
                if prev_u == 0:
                    l, h = pmin, min(pmax, D[t] * a.su_ramp[j])
                else:
                    l = max(pmin, rl - D[t] * a.ramp_down[j])
                    h = min(pmax, rh + D[t] * a.ramp_up[j])
                # soft energy limits narrow the window only when it stays nonempty
                l2, h2 = max(l, min(e_floor[j, t], h)), min(h, max(e_cap[j, t], l))
                l, h = (l2, h2) if l2 <= h2 else (l, h)
                if l > h:
                    l = h = min(max(l, pmin), pmax) if l > pmax else h
                lo[j, t], hi[j, t], rl, rh = l, h, l, h
            prev_u = u[j, t]
        for t in range(T - 2, -1, -1):
            if u[j, t] == 0:
                continue
            if u[j, t + 1] == 0:
                h = min(hi[j, t], D[t + 1] * a.sd_ramp[j])
                l = lo[j, t]
            else:
                l = max(lo[j, t], lo[j, t + 1] - D[t + 1] * a.ramp_up[j])
                h = min(hi[j, t], hi[j, t + 1] + D[t + 1] * a.ramp_down[j])
            if l <= h:
                lo[j, t], hi[j, t] = l, h
            else:
                lo[j, t] = hi[j, t] = min(max(l, lo[j, t]), hi[j, t])
    return lo, hi


def step_window(inst: Instance, j: int, t: int, u_prev, p_prev, lo, hi):
    """Window at ``t`` given the realized output at ``t-1``."""
    a = inst.arrays
    D = a.duration[t]
    l, h = lo[j, t], hi[j, t]
    if l == h == 0.0 or u_prev == 0:
        return l, h
    l2 = max(l, p_prev - D * a.ramp_down[j])
    h2 = min(h, p_prev + D * a.ramp_up[j])
    if l2 > h2:
        # realized output left the precomputed corridor; stay as close as ramps allow
        x = min(max(l2, l), h)
        return x, x
    return l2, h2
