"""Market-surplus objective: every base-case value, cost and penalty term,
composed with the contingency penalties into ``z_ms``.

Cost terms are kept as nonnegative magnitudes and signed only when assembled.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import AcBranch, Device, EnergyConstraint, Instance, PenaltyParams, Solution


class OutOfDomain(ValueError):
    def __init__(self, p: float, lo: float, hi: float):
        super().__init__(f"power {p} outside energy curve domain [{lo}, {hi}]")
        self.p = p


def energy_term(device: Device, p: float, duration: float, t: int = 0, tol: float = 0.0) -> float:
    curve = device.energy_curves[t]
    if p < -tol or p > curve.total_width + tol:
        raise OutOfDomain(p, 0.0, curve.total_width)
    return duration * curve.value(p)


def scheduling_costs(device: Device, u, u0, durations):
    """Per-interval ``(startup, shutdown, no-load)`` costs for a commitment sequence."""
    u = np.asarray(u, dtype=float)
    prev = np.concatenate([[float(u0)], u[:-1]])
    z_su = device.startup_cost * np.maximum(0.0, u - prev)
    z_sd = device.shutdown_cost * np.maximum(0.0, prev - u)
    z_on = np.asarray(durations, dtype=float) * device.on_cost * u
    return z_su, z_sd, z_on


@dataclass
class ReserveTerms:
    z_rsv_dev: np.ndarray
    requirement: np.ndarray
    shortfall: np.ndarray
    z_rsv_zone: np.ndarray


def reserve_terms(inst: Instance, sol: Solution, t: int) -> ReserveTerms:
    a = inst.arrays
    D = a.duration[t]
    z_dev = D * a.rsv_cost * sol.p_rsv[:, t]
    nz = len(inst.zones)
    req, short, z_zone = np.zeros(nz), np.zeros(nz), np.zeros(nz)
    for n, zone in enumerate(inst.zones):
        members = [inst.index.device[d] for d in zone.devices]
        prods = [j for j in members if a.is_prod[j]]
        # empty producer set: no endogenous requirement
        top = max((sol.p[j, t] for j in prods), default=0.0)
        req[n] = zone.sigma * top
        provided = float(np.sum(sol.p_rsv[members, t])) if members else 0.0
        short[n] = max(0.0, req[n] - provided)
        z_zone[n] = D * zone.shortage_penalty * short[n]
    return ReserveTerms(z_dev, req, short, z_zone)


def imbalance_penalties(s_it, duration, penalties: PenaltyParams):
    s_it = np.asarray(s_it, dtype=complex)
    return (duration * penalties.c_p * np.abs(s_it.real),
            duration * penalties.c_q * np.abs(s_it.imag))


def base_overload_penalty(br: AcBranch | float, s_fr, s_to, duration, c_s):
    s_max = br.s_max if isinstance(br, AcBranch) else br
    return duration * c_s * np.maximum(0.0, np.maximum(np.abs(s_fr), np.abs(s_to)) - s_max)


def switching_cost(u, u0, durations, c_sw):
    u = np.asarray(u, dtype=float)
    prev = np.concatenate([[float(u0)], u[:-1]])
    return np.asarray(durations, dtype=float) * c_sw * np.abs(u - prev)


def multi_interval_energy_penalty(ec: EnergyConstraint, p, c_en) -> float:
    p = np.asarray(p, dtype=float)
    total = ec.a0 + sum(coef * p[int(t)] for t, coef in sorted(ec.coeffs.items()))
    return c_en * max(0.0, total)


@dataclass
class TermTables:
    """Every per-entity, per-interval term, as nonnegative magnitudes."""

    is_prod: np.ndarray
    z_en_dev: np.ndarray        # (J, T) consumer value or producer cost
    z_rsv_dev: np.ndarray       # (J, T)
    z_su: np.ndarray            # (J, T)
    z_sd: np.ndarray            # (J, T)
    z_on: np.ndarray            # (J, T)
    z_sw: np.ndarray            # (A, T)
    z_s: np.ndarray             # (A, T)
    z_rsv_zone: np.ndarray      # (N, T)
    z_p: np.ndarray             # (I, T)
    z_q: np.ndarray             # (I, T)
    z_en_multi: np.ndarray      # one per energy constraint


@dataclass
class ObjectiveBreakdown:
    z_ms: float
    z_base: float
    z_ctg_worst: float
    z_ctg_avg: float
    z_time: list[float]
    energy_value: float
    energy_cost: float
    z_rsv: float
    z_su: float
    z_sd: float
    z_on: float
    z_sw: float
    z_s: float
    z_rsv_zone: float
    z_p: float
    z_q: float
    z_en: float

    COMPONENTS = (
        "z_ms", "z_base", "z_ctg_worst", "z_ctg_avg", "energy_value", "energy_cost",
        "z_rsv", "z_su", "z_sd", "z_on", "z_sw", "z_s", "z_rsv_zone", "z_p", "z_q", "z_en",
    )

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def penalties(self) -> dict[str, float]:
        """Soft-constraint penalty families by name."""
        return {
            "p_imbalance": self.z_p, "q_imbalance": self.z_q, "base_overload": self.z_s,
            "ctg_worst": self.z_ctg_worst, "ctg_avg": self.z_ctg_avg,
            "reserve_shortage": self.z_rsv_zone, "energy_limit": self.z_en,
        }


def _col_sum(x: np.ndarray, T: int) -> np.ndarray:
    return x.sum(axis=0) if x.size else np.zeros(T)


def assemble_objective(tables: TermTables, ctg_worst_t, ctg_avg_t) -> ObjectiveBreakdown:
    T = tables.z_en_dev.shape[1] if tables.z_en_dev.ndim == 2 else len(ctg_worst_t)
    prod = tables.is_prod
    value_t = _col_sum(tables.z_en_dev[~prod], T)
    cost_t = _col_sum(tables.z_en_dev[prod], T)
    rsv_t = _col_sum(tables.z_rsv_dev, T)
    su_t = _col_sum(tables.z_su, T)
    sd_t = _col_sum(tables.z_sd, T)
    on_t = _col_sum(tables.z_on, T)
    sw_t = _col_sum(tables.z_sw, T)
    s_t = _col_sum(tables.z_s, T)
    zone_t = _col_sum(tables.z_rsv_zone, T)
    p_t = _col_sum(tables.z_p, T)
    q_t = _col_sum(tables.z_q, T)
    z_time = (value_t - cost_t - (rsv_t + su_t + sd_t + on_t) - (sw_t + s_t) - zone_t
              - (p_t + q_t))
    z_en = float(np.sum(tables.z_en_multi))
    z_base = float(z_time.sum()) - z_en
    worst = float(np.sum(ctg_worst_t))
    avg = float(np.sum(ctg_avg_t))
    return ObjectiveBreakdown(
        z_ms=z_base - worst - avg, z_base=z_base, z_ctg_worst=worst, z_ctg_avg=avg,
        z_time=[float(x) for x in z_time],
        energy_value=float(value_t.sum()), energy_cost=float(cost_t.sum()),
        z_rsv=float(rsv_t.sum()), z_su=float(su_t.sum()), z_sd=float(sd_t.sum()),
        z_on=float(on_t.sum()), z_sw=float(sw_t.sum()), z_s=float(s_t.sum()),
        z_rsv_zone=float(zone_t.sum()), z_p=float(p_t.sum()), z_q=float(q_t.sum()), z_en=z_en,
    )


def term_tables(inst: Instance, sol: Solution, s_bus, s_fr, s_to) -> TermTables:
    """Evaluate every base-case term given recomputed bus imbalances and branch flows."""
    a = inst.arrays
    D = a.duration
    T = inst.n_intervals
    J = len(inst.devices)
    z_en = np.zeros((J, T))
    z_su, z_sd, z_on = np.zeros((J, T)), np.zeros((J, T)), np.zeros((J, T))
    for j, dev in enumerate(inst.devices):
        for t in range(T):
            z_en[j, t] = D[t] * dev.energy_curves[t].value(sol.p[j, t])
        z_su[j], z_sd[j], z_on[j] = scheduling_costs(dev, sol.u[j], dev.u0, D)
    z_rsv_dev = np.zeros((J, T))
    z_zone = np.zeros((len(inst.zones), T))
    for t in range(T):
        rt = reserve_terms(inst, sol, t)
        z_rsv_dev[:, t] = rt.z_rsv_dev
        z_zone[:, t] = rt.z_rsv_zone
    z_sw = np.zeros((len(inst.ac_branches), T))
    for j, br in enumerate(inst.ac_branches):
        z_sw[j] = switching_cost(sol.ac_u[j], br.u0, D, inst.penalties.c_sw)
    z_s = base_overload_penalty(a.ac_smax[:, None], s_fr, s_to, D[None, :], inst.penalties.c_s)
    z_p, z_q = imbalance_penalties(s_bus, D[None, :], inst.penalties)
    z_multi = np.array([
        multi_interval_energy_penalty(ec, sol.p[j], inst.penalties.c_en)
        for j, dev in enumerate(inst.devices) for ec in dev.energy_constraints
    ], dtype=float)
    return TermTables(
        is_prod=a.is_prod.copy(), z_en_dev=z_en, z_rsv_dev=z_rsv_dev, z_su=z_su, z_sd=z_sd,
        z_on=z_on, z_sw=z_sw, z_s=np.asarray(z_s, dtype=float).reshape(len(inst.ac_branches), T),
        z_rsv_zone=z_zone, z_p=z_p, z_q=z_q, z_en_multi=z_multi,
    )
