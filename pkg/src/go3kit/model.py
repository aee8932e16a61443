"""Instance and solution data model, JSON I/O, validation and index bookkeeping.

All powers are per-unit on ``Instance.base_mva``, costs in $, durations in hours.
Ids are strings in files and map to dense integer indices (``Instance.index``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

FORMAT_VERSION = "1"
PRODUCING = "producing"
CONSUMING = "consuming"


class MalformedSolution(ValueError):
    """Raised when a solution document cannot be parsed against an instance."""


class MalformedInstance(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    id: int
    duration: float


@dataclass(frozen=True)
class Bus:
    id: str
    v_min: float
    v_max: float
    alpha: float | None = None  # filled in by Instance


@dataclass(frozen=True)
class PwlCurve:
    """Piecewise-linear energy curve stored as ``(width, marginal_price)`` blocks from p = 0."""

    blocks: tuple[tuple[float, float], ...]

    @property
    def total_width(self) -> float:
        return float(sum(w for w, _ in self.blocks))

    def value(self, p: float) -> float:
        """Integral of the marginal price from 0 to ``p`` (p clamped at 0 below)."""
        remaining = max(p, 0.0)
        total = 0.0
        for width, price in self.blocks:
            take = min(width, remaining)
            total += take * price
            remaining -= take
            if remaining <= 0.0:
                break
        return total

    def is_convex(self) -> bool:
        prices = [c for _, c in self.blocks]
        return all(a <= b for a, b in zip(prices, prices[1:]))

    def is_concave(self) -> bool:
        prices = [c for _, c in self.blocks]
        return all(a >= b for a, b in zip(prices, prices[1:]))

    def truncated(self, p_max: float) -> list[tuple[float, float]]:
        """Blocks covering ``[0, p_max]``."""
        out = []
        remaining = p_max
        for width, price in self.blocks:
            if remaining <= 0.0:
                break
            take = min(width, remaining)
            out.append((take, price))
            remaining -= take
        return out


@dataclass(frozen=True)
class EnergyConstraint:
    """Soft constraint ``a0 + sum_t coeffs[t] * p_t <= 0``."""

    a0: float
    coeffs: Mapping[int, float]


@dataclass(frozen=True)
class CountConstraint:
    """At most ``max_count`` startups (or shutdowns) over ``intervals``."""

    intervals: tuple[int, ...]
    max_count: int


@dataclass(frozen=True)
class Device:
    id: str
    kind: str
    bus: str
    u0: int
    p0: float
    p_min: tuple[float, ...]
    p_max: tuple[float, ...]
    q_min: tuple[float, ...]
    q_max: tuple[float, ...]
    ramp_up: float
    ramp_down: float
    startup_ramp: float
    shutdown_ramp: float
    reserve_max: tuple[float, ...]
    reserve_cost: float
    startup_cost: float
    shutdown_cost: float
    on_cost: float
    energy_curves: tuple[PwlCurve, ...]
    must_run: frozenset[int] = frozenset()
    forced_off: frozenset[int] = frozenset()
    min_uptime: float = 0.0
    min_downtime: float = 0.0
    max_startups: tuple[CountConstraint, ...] = ()
    max_shutdowns: tuple[CountConstraint, ...] = ()
    energy_constraints: tuple[EnergyConstraint, ...] = ()

    @property
    def is_producer(self) -> bool:
        return self.kind == PRODUCING


@dataclass(frozen=True)
class Shunt:
    id: str
    bus: str
    y_step: complex
    u_min: int
    u_max: int


@dataclass(frozen=True)
class AcBranch:
    id: str
    from_bus: str
    to_bus: str
    y_sr: complex
    y_fr: complex
    y_to: complex
    tau_min: float
    tau_max: float
    phi_min: float
    phi_max: float
    s_max: float
    s_max_ctg: float
    u0: int = 1

    @property
    def b_sr(self) -> float:
        return self.y_sr.imag


@dataclass(frozen=True)
class DcBranch:
    id: str
    from_bus: str
    to_bus: str
    p_max: float
    q_min_fr: float
    q_max_fr: float
    q_min_to: float
    q_max_to: float


@dataclass(frozen=True)
class ReserveZone:
    id: str
    sigma: float
    shortage_penalty: float
    devices: tuple[str, ...]


@dataclass(frozen=True)
class Contingency:
    id: str
    branch: str


@dataclass(frozen=True)
class PenaltyParams:
    c_p: float
    c_q: float
    c_s: float
    c_sw: float
    c_en: float


@dataclass(frozen=True)
class Index:
    """Dense integer positions for every id space."""

    bus: dict[str, int]
    device: dict[str, int]
    shunt: dict[str, int]
    ac: dict[str, int]
    dc: dict[str, int]
    zone: dict[str, int]


@dataclass(frozen=True)
class Instance:
    buses: tuple[Bus, ...]
    devices: tuple[Device, ...]
    shunts: tuple[Shunt, ...]
    ac_branches: tuple[AcBranch, ...]
    dc_branches: tuple[DcBranch, ...]
    zones: tuple[ReserveZone, ...]
    contingencies: tuple[Contingency, ...]
    intervals: tuple[Interval, ...]
    penalties: PenaltyParams
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        n = len(self.buses)
        if n:
            share = 1.0 / n
            object.__setattr__(
                self, "buses", tuple(replace(b, alpha=share) for b in self.buses)
            )

    @cached_property
    def index(self) -> Index:
        return Index(
            bus={b.id: i for i, b in enumerate(self.buses)},
            device={d.id: i for i, d in enumerate(self.devices)},
            shunt={s.id: i for i, s in enumerate(self.shunts)},
            ac={b.id: i for i, b in enumerate(self.ac_branches)},
            dc={b.id: i for i, b in enumerate(self.dc_branches)},
            zone={z.id: i for i, z in enumerate(self.zones)},
        )

    @property
    def n_intervals(self) -> int:
        return len(self.intervals)

    @cached_property
    def arrays(self) -> "InstanceArrays":
        return InstanceArrays.build(self)

    @cached_property
    def lookback(self) -> list[tuple[list[frozenset[int]], list[frozenset[int]]]]:
        """Per device ``(T_up, T_dn)`` windows, computed once."""
        return [derive_lookback_windows(d, self.intervals) for d in self.devices]


@dataclass
class InstanceArrays:
    """Numpy views of an instance used by the numeric kernels."""

    duration: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    alpha: np.ndarray
    dev_bus: np.ndarray
    is_prod: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    rsv_max: np.ndarray
    rsv_cost: np.ndarray
    su_cost: np.ndarray
    sd_cost: np.ndarray
    on_cost: np.ndarray
    ramp_up: np.ndarray
    ramp_down: np.ndarray
    su_ramp: np.ndarray
    sd_ramp: np.ndarray
    dev_u0: np.ndarray
    dev_p0: np.ndarray
    sh_bus: np.ndarray
    sh_y: np.ndarray
    sh_umin: np.ndarray
    sh_umax: np.ndarray
    ac_fr: np.ndarray
    ac_to: np.ndarray
    ac_ysr: np.ndarray
    ac_yfr: np.ndarray
    ac_yto: np.ndarray
    ac_tau_min: np.ndarray
    ac_tau_max: np.ndarray
    ac_phi_min: np.ndarray
    ac_phi_max: np.ndarray
    ac_smax: np.ndarray
    ac_smax_ctg: np.ndarray
    ac_u0: np.ndarray
    dc_fr: np.ndarray
    dc_to: np.ndarray
    dc_pmax: np.ndarray
    dc_qmin_fr: np.ndarray
    dc_qmax_fr: np.ndarray
    dc_qmin_to: np.ndarray
    dc_qmax_to: np.ndarray

    @classmethod
    def build(cls, inst: Instance) -> "InstanceArrays":
        ix = inst.index
        f = lambda xs: np.array(list(xs), dtype=float)
        i = lambda xs: np.array(list(xs), dtype=int)
        c = lambda xs: np.array(list(xs), dtype=complex)
        devs, shs, acs, dcs = inst.devices, inst.shunts, inst.ac_branches, inst.dc_branches
        T = inst.n_intervals

        def per_t(attr):
            if not devs:
                return np.zeros((0, T))
            return np.array([getattr(d, attr) for d in devs], dtype=float)

        return cls(
            duration=f(t.duration for t in inst.intervals),
            v_min=f(b.v_min for b in inst.buses),
            v_max=f(b.v_max for b in inst.buses),
            alpha=f(b.alpha for b in inst.buses),
            dev_bus=i(ix.bus[d.bus] for d in devs),
            is_prod=np.array([d.is_producer for d in devs], dtype=bool),
            p_min=per_t("p_min"),
            p_max=per_t("p_max"),
            q_min=per_t("q_min"),
            q_max=per_t("q_max"),
            rsv_max=per_t("reserve_max"),
            rsv_cost=f(d.reserve_cost for d in devs),
            su_cost=f(d.startup_cost for d in devs),
            sd_cost=f(d.shutdown_cost for d in devs),
            on_cost=f(d.on_cost for d in devs),
            ramp_up=f(d.ramp_up for d in devs),
            ramp_down=f(d.ramp_down for d in devs),
            su_ramp=f(d.startup_ramp for d in devs),
            sd_ramp=f(d.shutdown_ramp for d in devs),
            dev_u0=f(d.u0 for d in devs),
            dev_p0=f(d.p0 for d in devs),
            sh_bus=i(ix.bus[s.bus] for s in shs),
            sh_y=c(s.y_step for s in shs),
            sh_umin=f(s.u_min for s in shs),
            sh_umax=f(s.u_max for s in shs),
            ac_fr=i(ix.bus[b.from_bus] for b in acs),
            ac_to=i(ix.bus[b.to_bus] for b in acs),
            ac_ysr=c(b.y_sr for b in acs),
            ac_yfr=c(b.y_fr for b in acs),
            ac_yto=c(b.y_to for b in acs),
            ac_tau_min=f(b.tau_min for b in acs),
            ac_tau_max=f(b.tau_max for b in acs),
            ac_phi_min=f(b.phi_min for b in acs),
            ac_phi_max=f(b.phi_max for b in acs),
            ac_smax=f(b.s_max for b in acs),
            ac_smax_ctg=f(b.s_max_ctg for b in acs),
            ac_u0=f(b.u0 for b in acs),
            dc_fr=i(ix.bus[b.from_bus] for b in dcs),
            dc_to=i(ix.bus[b.to_bus] for b in dcs),
            dc_pmax=f(b.p_max for b in dcs),
            dc_qmin_fr=f(b.q_min_fr for b in dcs),
            dc_qmax_fr=f(b.q_max_fr for b in dcs),
            dc_qmin_to=f(b.q_min_to for b in dcs),
            dc_qmax_to=f(b.q_max_to for b in dcs),
        )


@dataclass
class Solution:
    """Per-interval values of every decision variable, in dense index order.

    Arrays are shaped ``(n_entities, n_intervals)``.
    """

    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    u: np.ndarray
    u_su: np.ndarray
    u_sd: np.ndarray
    p_rsv: np.ndarray
    sh_u: np.ndarray
    ac_u: np.ndarray
    ac_su: np.ndarray
    ac_sd: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    dc_pfr: np.ndarray
    dc_qfr: np.ndarray
    dc_qto: np.ndarray

    FIELDS = (
        "v", "theta", "p", "q", "u", "u_su", "u_sd", "p_rsv", "sh_u",
        "ac_u", "ac_su", "ac_sd", "tau", "phi", "dc_pfr", "dc_qfr", "dc_qto",
    )

    @classmethod
    def empty(cls, inst: Instance) -> "Solution":
        T = inst.n_intervals
        nb, nd = len(inst.buses), len(inst.devices)
        ns, na, nc = len(inst.shunts), len(inst.ac_branches), len(inst.dc_branches)
        z = lambda n: np.zeros((n, T))
        return cls(
            v=np.ones((nb, T)), theta=z(nb), p=z(nd), q=z(nd), u=z(nd), u_su=z(nd),
            u_sd=z(nd), p_rsv=z(nd), sh_u=z(ns), ac_u=np.ones((na, T)), ac_su=z(na),
            ac_sd=z(na), tau=np.ones((na, T)), phi=z(na), dc_pfr=z(nc), dc_qfr=z(nc),
            dc_qto=z(nc),
        )

    def copy(self) -> "Solution":
        return Solution(**{k: getattr(self, k).copy() for k in self.FIELDS})

    @property
    def dc_pto(self) -> np.ndarray:
        return -self.dc_pfr

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, k))) for k in self.FIELDS)


# --------------------------------------------------------------------------- lookback


def derive_lookback_windows(
    device: Device, intervals: Sequence[Interval]
) -> tuple[list[frozenset[int]], list[frozenset[int]]]:
    """Return ``(T_up, T_dn)``: for each t the prior intervals whose startup
    (shutdown) would make the uptime (downtime) ending at the start of t
    shorter than the device minimum.

    A switch at t' takes effect at the start of t', so the run length before t is
    ``start[t] - start[t']``.
    """
    start = np.concatenate([[0.0], np.cumsum([iv.duration for iv in intervals])])
    t_up, t_dn = [], []
    for t in range(len(intervals)):
        t_up.append(frozenset(
            tp for tp in range(t) if start[t] - start[tp] < device.min_uptime - 1e-9
        ))
        t_dn.append(frozenset(
            tp for tp in range(t) if start[t] - start[tp] < device.min_downtime - 1e-9
        ))
    return t_up, t_dn


# --------------------------------------------------------------------------- topology


def build_topology(
    inst: Instance,
    branch_status: Mapping[str, int] | Sequence[float] | np.ndarray,
    outage: str | None = None,
    include_dc: bool = True,
) -> np.ndarray:
    """Connected-component label per bus.

    Edges are the DC branches plus AC branches with status 1, minus ``outage``.
    ``branch_status`` is either a mapping by AC branch id or an array in index order.
    """
    arr = inst.arrays
    if isinstance(branch_status, Mapping):
        status = np.array([branch_status[b.id] for b in inst.ac_branches], dtype=float)
    else:
        status = np.asarray(branch_status, dtype=float)
    ac_on = np.round(status) == 1
    dc_on = np.full(len(inst.dc_branches), include_dc, dtype=bool)
    if outage is not None:
        if outage in inst.index.ac:
            ac_on = ac_on.copy()
            ac_on[inst.index.ac[outage]] = False
        elif outage in inst.index.dc:
            dc_on[inst.index.dc[outage]] = False
    return component_labels(
        len(inst.buses),
        np.concatenate([arr.ac_fr[ac_on], arr.dc_fr[dc_on]]),
        np.concatenate([arr.ac_to[ac_on], arr.dc_to[dc_on]]),
    )


def component_labels(n: int, fr: np.ndarray, to: np.ndarray) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=int)
    g = coo_matrix((np.ones(len(fr)), (fr, to)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    return labels


def n_components(labels: np.ndarray) -> int:
    return int(labels.max()) + 1 if len(labels) else 0


# --------------------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.problems

    def __len__(self) -> int:
        return len(self.problems)

    def __iter__(self):
        return iter(self.problems)


def validate_instance(inst: Instance) -> ValidationReport:
    """List every broken type invariant; an empty report means well-formed."""
    rep = ValidationReport()
    bad = rep.problems.append
    T = inst.n_intervals
    if T == 0:
        bad("instance has no intervals")
    for k, iv in enumerate(inst.intervals):
        if iv.id != k:
            bad(f"interval ids not contiguous at position {k} (id {iv.id})")
        if not iv.duration > 0:
            bad(f"interval {iv.id}: duration {iv.duration} not positive")

    for name, coll in (
        ("bus", inst.buses), ("device", inst.devices), ("shunt", inst.shunts),
        ("ac_branch", inst.ac_branches), ("dc_branch", inst.dc_branches),
        ("zone", inst.zones), ("contingency", inst.contingencies),
    ):
        seen = set()
        for x in coll:
            if x.id in seen:
                bad(f"duplicate {name} id {x.id!r}")
            seen.add(x.id)

    bus_ids = {b.id for b in inst.buses}
    for b in inst.buses:
        if not (0 < b.v_min <= b.v_max):
            bad(f"bus {b.id}: voltage bounds [{b.v_min}, {b.v_max}] invalid")

    def ref(kind, eid, bus):
        if bus not in bus_ids:
            bad(f"{kind} {eid}: dangling bus reference {bus!r}")

    for d in inst.devices:
        ref("device", d.id, d.bus)
        if d.kind not in (PRODUCING, CONSUMING):
            bad(f"device {d.id}: unknown kind {d.kind!r}")
        for attr in ("p_min", "p_max", "q_min", "q_max", "reserve_max"):
            if len(getattr(d, attr)) != T:
                bad(f"device {d.id}: {attr} has {len(getattr(d, attr))} entries, expected {T}")
        if len(d.energy_curves) != T:
            bad(f"device {d.id}: {len(d.energy_curves)} energy curves, expected {T}")
        for t in range(min(T, len(d.p_min), len(d.p_max))):
            if d.p_min[t] > d.p_max[t]:
                bad(f"device {d.id} interval {t}: p_min {d.p_min[t]} > p_max {d.p_max[t]}")
        for t in range(min(T, len(d.q_min), len(d.q_max))):
            if d.q_min[t] > d.q_max[t]:
                bad(f"device {d.id} interval {t}: q_min {d.q_min[t]} > q_max {d.q_max[t]}")
        for t, r in enumerate(d.reserve_max):
            if r < 0:
                bad(f"device {d.id} interval {t}: negative reserve_max")
        for attr in ("ramp_up", "ramp_down", "startup_ramp", "shutdown_ramp"):
            if getattr(d, attr) < 0:
                bad(f"device {d.id}: negative {attr}")
        if d.min_uptime < 0 or d.min_downtime < 0:
            bad(f"device {d.id}: negative min up/down time")
        if d.must_run & d.forced_off:
            bad(f"device {d.id}: must_run and forced_off overlap at {sorted(d.must_run & d.forced_off)}")
        for t in d.must_run | d.forced_off:
            if not 0 <= t < T:
                bad(f"device {d.id}: must_run/forced_off interval {t} out of range")
        if d.u0 not in (0, 1):
            bad(f"device {d.id}: u0 {d.u0} not binary")
        if d.u0 == 0 and d.p0 != 0:
            bad(f"device {d.id}: offline initially but p0 = {d.p0}")
        for t, curve in enumerate(d.energy_curves):
            if any(w < 0 for w, _ in curve.blocks):
                bad(f"device {d.id} interval {t}: negative block width")
            shaped = curve.is_convex() if d.is_producer else curve.is_concave()
            if not shaped:
                bad(f"device {d.id} interval {t}: energy curve not "
                    f"{'convex' if d.is_producer else 'concave'}")
            if t < len(d.p_max) and curve.total_width < d.p_max[t] - 1e-9:
                bad(f"device {d.id} interval {t}: energy curve covers "
                    f"{curve.total_width} < p_max {d.p_max[t]}")
        for cc in d.max_startups + d.max_shutdowns:
            if any(not 0 <= t < T for t in cc.intervals) or cc.max_count < 0:
                bad(f"device {d.id}: malformed startup/shutdown count constraint")
        for ec in d.energy_constraints:
            if any(not 0 <= int(t) < T for t in ec.coeffs):
                bad(f"device {d.id}: energy constraint references interval outside horizon")

    for s in inst.shunts:
        ref("shunt", s.id, s.bus)
        if not (isinstance(s.u_min, int) and isinstance(s.u_max, int)) or s.u_min > s.u_max:
            bad(f"shunt {s.id}: step bounds [{s.u_min}, {s.u_max}] invalid")

    for br in inst.ac_branches:
        ref("ac_branch", br.id, br.from_bus)
        ref("ac_branch", br.id, br.to_bus)
        if br.from_bus == br.to_bus:
            bad(f"ac_branch {br.id}: from_bus equals to_bus")
        if not (0 < br.tau_min <= br.tau_max):
            bad(f"ac_branch {br.id}: tau bounds invalid")
        if br.phi_min > br.phi_max:
            bad(f"ac_branch {br.id}: phi bounds invalid")
        if not (br.s_max > 0 and br.s_max_ctg > 0):
            bad(f"ac_branch {br.id}: flow limits must be positive")
        if br.u0 not in (0, 1):
            bad(f"ac_branch {br.id}: u0 not binary")

    for br in inst.dc_branches:
        ref("dc_branch", br.id, br.from_bus)
        ref("dc_branch", br.id, br.to_bus)
        if br.p_max < 0:
            bad(f"dc_branch {br.id}: negative p_max")
        if br.q_min_fr > br.q_max_fr or br.q_min_to > br.q_max_to:
            bad(f"dc_branch {br.id}: reactive bounds invalid")

    dev_ids = {d.id for d in inst.devices}
    for z in inst.zones:
        if z.sigma < 0 or z.shortage_penalty < 0:
            bad(f"zone {z.id}: negative sigma or shortage penalty")
        for did in z.devices:
            if did not in dev_ids:
                bad(f"zone {z.id}: dangling device reference {did!r}")

    branch_ids = {b.id for b in inst.ac_branches} | {b.id for b in inst.dc_branches}
    for k in inst.contingencies:
        if k.branch not in branch_ids:
            bad(f"contingency {k.id}: dangling branch reference {k.branch!r}")

    pen = inst.penalties
    for name in ("c_p", "c_q", "c_s", "c_sw", "c_en"):
        if getattr(pen, name) < 0:
            bad(f"penalty {name} negative")
    return rep


# --------------------------------------------------------------------------- JSON


def _cx(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _fl(xs: Iterable[float]) -> list[float]:
    return [float(x) for x in xs]


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    def dev(d: Device) -> dict[str, Any]:
        return {
            "id": d.id, "kind": d.kind, "bus": d.bus, "u0": int(d.u0), "p0": float(d.p0),
            "p_min": _fl(d.p_min), "p_max": _fl(d.p_max),
            "q_min": _fl(d.q_min), "q_max": _fl(d.q_max),
            "ramp_up": float(d.ramp_up), "ramp_down": float(d.ramp_down),
            "startup_ramp": float(d.startup_ramp), "shutdown_ramp": float(d.shutdown_ramp),
            "reserve_max": _fl(d.reserve_max), "reserve_cost": float(d.reserve_cost),
            "startup_cost": float(d.startup_cost), "shutdown_cost": float(d.shutdown_cost),
            "on_cost": float(d.on_cost),
            "energy_curves": [[_fl(b) for b in c.blocks] for c in d.energy_curves],
            "must_run": sorted(d.must_run), "forced_off": sorted(d.forced_off),
            "min_uptime": float(d.min_uptime), "min_downtime": float(d.min_downtime),
            "max_startups": [{"intervals": list(c.intervals), "max": c.max_count}
                             for c in d.max_startups],
            "max_shutdowns": [{"intervals": list(c.intervals), "max": c.max_count}
                              for c in d.max_shutdowns],
            "energy_constraints": [
                {"a0": float(e.a0), "coeffs": {str(k): float(v) for k, v in sorted(e.coeffs.items())}}
                for e in d.energy_constraints
            ],
        }

    return {
        "format_version": FORMAT_VERSION,
        "name": inst.name,
        "base_mva": float(inst.base_mva),
        "intervals": [{"id": iv.id, "duration": float(iv.duration)} for iv in inst.intervals],
        "buses": [{"id": b.id, "v_min": float(b.v_min), "v_max": float(b.v_max)} for b in inst.buses],
        "devices": [dev(d) for d in inst.devices],
        "shunts": [{"id": s.id, "bus": s.bus, "y_step": _cx(s.y_step),
                    "u_min": int(s.u_min), "u_max": int(s.u_max)} for s in inst.shunts],
        "ac_branches": [
            {"id": b.id, "from_bus": b.from_bus, "to_bus": b.to_bus,
             "y_sr": _cx(b.y_sr), "y_fr": _cx(b.y_fr), "y_to": _cx(b.y_to),
             "tau_min": float(b.tau_min), "tau_max": float(b.tau_max),
             "phi_min": float(b.phi_min), "phi_max": float(b.phi_max),
             "s_max": float(b.s_max), "s_max_ctg": float(b.s_max_ctg), "u0": int(b.u0)}
            for b in inst.ac_branches
        ],
        "dc_branches": [
            {"id": b.id, "from_bus": b.from_bus, "to_bus": b.to_bus, "p_max": float(b.p_max),
             "q_min_fr": float(b.q_min_fr), "q_max_fr": float(b.q_max_fr),
             "q_min_to": float(b.q_min_to), "q_max_to": float(b.q_max_to)}
            for b in inst.dc_branches
        ],
        "zones": [{"id": z.id, "sigma": float(z.sigma), "shortage_penalty": float(z.shortage_penalty),
                   "devices": list(z.devices)} for z in inst.zones],
        "contingencies": [{"id": k.id, "branch": k.branch} for k in inst.contingencies],
        "penalties": {
            "c_p": float(inst.penalties.c_p), "c_q": float(inst.penalties.c_q),
            "c_s": float(inst.penalties.c_s), "c_sw": float(inst.penalties.c_sw),
            "c_en": float(inst.penalties.c_en),
        },
    }


def instance_from_dict(doc: Mapping[str, Any]) -> Instance:
    try:
        version = str(doc.get("format_version", ""))
        if version != FORMAT_VERSION:
            raise MalformedInstance(f"unsupported format_version {version!r}")
        cx = lambda a: complex(float(a[0]), float(a[1]))
        tup = lambda xs: tuple(float(x) for x in xs)
        devices = tuple(
            Device(
                id=str(d["id"]), kind=d["kind"], bus=str(d["bus"]), u0=int(d["u0"]),
                p0=float(d["p0"]), p_min=tup(d["p_min"]), p_max=tup(d["p_max"]),
                q_min=tup(d["q_min"]), q_max=tup(d["q_max"]),
                ramp_up=float(d["ramp_up"]), ramp_down=float(d["ramp_down"]),
                startup_ramp=float(d["startup_ramp"]), shutdown_ramp=float(d["shutdown_ramp"]),
                reserve_max=tup(d["reserve_max"]), reserve_cost=float(d["reserve_cost"]),
                startup_cost=float(d["startup_cost"]), shutdown_cost=float(d["shutdown_cost"]),
                on_cost=float(d["on_cost"]),
                energy_curves=tuple(
                    PwlCurve(tuple((float(w), float(c)) for w, c in blocks))
                    for blocks in d["energy_curves"]
                ),
                must_run=frozenset(int(t) for t in d.get("must_run", ())),
                forced_off=frozenset(int(t) for t in d.get("forced_off", ())),
                min_uptime=float(d.get("min_uptime", 0.0)),
                min_downtime=float(d.get("min_downtime", 0.0)),
                max_startups=tuple(CountConstraint(tuple(int(t) for t in c["intervals"]), int(c["max"]))
                                   for c in d.get("max_startups", ())),
                max_shutdowns=tuple(CountConstraint(tuple(int(t) for t in c["intervals"]), int(c["max"]))
                                    for c in d.get("max_shutdowns", ())),
                energy_constraints=tuple(
                    EnergyConstraint(float(e["a0"]), {int(k): float(v) for k, v in e["coeffs"].items()})
                    for e in d.get("energy_constraints", ())
                ),
            )
            for d in doc["devices"]
        )
        return Instance(
            name=str(doc.get("name", "")),
            base_mva=float(doc.get("base_mva", 100.0)),
            intervals=tuple(Interval(int(iv["id"]), float(iv["duration"])) for iv in doc["intervals"]),
            buses=tuple(Bus(str(b["id"]), float(b["v_min"]), float(b["v_max"])) for b in doc["buses"]),
            devices=devices,
            shunts=tuple(Shunt(str(s["id"]), str(s["bus"]), cx(s["y_step"]), int(s["u_min"]), int(s["u_max"]))
                         for s in doc.get("shunts", ())),
            ac_branches=tuple(
                AcBranch(
                    id=str(b["id"]), from_bus=str(b["from_bus"]), to_bus=str(b["to_bus"]),
                    y_sr=cx(b["y_sr"]), y_fr=cx(b["y_fr"]), y_to=cx(b["y_to"]),
                    tau_min=float(b["tau_min"]), tau_max=float(b["tau_max"]),
                    phi_min=float(b["phi_min"]), phi_max=float(b["phi_max"]),
                    s_max=float(b["s_max"]), s_max_ctg=float(b["s_max_ctg"]), u0=int(b.get("u0", 1)),
                )
                for b in doc.get("ac_branches", ())
            ),
            dc_branches=tuple(
                DcBranch(str(b["id"]), str(b["from_bus"]), str(b["to_bus"]), float(b["p_max"]),
                         float(b["q_min_fr"]), float(b["q_max_fr"]), float(b["q_min_to"]),
                         float(b["q_max_to"]))
                for b in doc.get("dc_branches", ())
            ),
            zones=tuple(ReserveZone(str(z["id"]), float(z["sigma"]), float(z["shortage_penalty"]),
                                    tuple(str(x) for x in z["devices"]))
                        for z in doc.get("zones", ())),
            contingencies=tuple(Contingency(str(k["id"]), str(k["branch"]))
                                for k in doc.get("contingencies", ())),
            penalties=PenaltyParams(**{k: float(doc["penalties"][k])
                                       for k in ("c_p", "c_q", "c_s", "c_sw", "c_en")}),
        )
    except MalformedInstance:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise MalformedInstance(f"cannot parse instance: {exc!r}") from exc


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), sort_keys=True, indent=1) + "\n"


def loads_instance(text: str) -> Instance:
    return instance_from_dict(json.loads(text))


def load_instance(path) -> Instance:
    with open(path) as fh:
        return loads_instance(fh.read())


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_instance(inst))


_SOL_LAYOUT = {
    "buses": ("buses", {"v": "v", "theta": "theta"}),
    "devices": ("devices", {"p": "p", "q": "q", "u": "u", "u_su": "u_su", "u_sd": "u_sd",
                            "p_rsv": "p_rsv"}),
    "shunts": ("shunts", {"u": "sh_u"}),
    "ac_branches": ("ac_branches", {"u": "ac_u", "u_su": "ac_su", "u_sd": "ac_sd",
                                    "tau": "tau", "phi": "phi"}),
    "dc_branches": ("dc_branches", {"p_fr": "dc_pfr", "q_fr": "dc_qfr", "q_to": "dc_qto"}),
}


def solution_to_dict(inst: Instance, sol: Solution) -> dict[str, Any]:
    doc: dict[str, Any] = {"format_version": FORMAT_VERSION}
    for key, (coll, fields) in _SOL_LAYOUT.items():
        entities = getattr(inst, coll)
        doc[key] = {
            e.id: {name: _fl(getattr(sol, attr)[n]) for name, attr in fields.items()}
            for n, e in enumerate(entities)
        }
    return doc


def solution_from_dict(inst: Instance, doc: Any) -> Solution:
    """Parse and completeness-check a solution document; raises MalformedSolution."""
    if not isinstance(doc, Mapping):
        raise MalformedSolution("solution document is not an object")
    if str(doc.get("format_version", "")) != FORMAT_VERSION:
        raise MalformedSolution("missing or unsupported format_version")
    sol = Solution.empty(inst)
    T = inst.n_intervals
    for key, (coll, fields) in _SOL_LAYOUT.items():
        section = doc.get(key)
        entities = getattr(inst, coll)
        if entities and not isinstance(section, Mapping):
            raise MalformedSolution(f"missing section {key!r}")
        for n, e in enumerate(entities):
            rec = section.get(e.id)
            if not isinstance(rec, Mapping):
                raise MalformedSolution(f"{key}: missing record for {e.id!r}")
            for name, attr in fields.items():
                vals = rec.get(name)
                if not isinstance(vals, list) or len(vals) != T:
                    raise MalformedSolution(f"{key}/{e.id}/{name}: expected {T} values")
                try:
                    row = np.array([float(x) for x in vals], dtype=float)
                except (TypeError, ValueError) as exc:
                    raise MalformedSolution(f"{key}/{e.id}/{name}: non-numeric value") from exc
                if not np.all(np.isfinite(row)):
                    raise MalformedSolution(f"{key}/{e.id}/{name}: non-finite value")
                getattr(sol, attr)[n] = row
    return sol


def dumps_solution(inst: Instance, sol: Solution) -> str:
    return json.dumps(solution_to_dict(inst, sol), sort_keys=True) + "\n"


def loads_solution(inst: Instance, text: str) -> Solution:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedSolution(f"not valid JSON: {exc}") from exc
    return solution_from_dict(inst, doc)


def load_solution(inst: Instance, path) -> Solution:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise MalformedSolution(f"cannot read {path}: {exc}") from exc
    return loads_solution(inst, text)
