"""Synthetic scenario generator.

Networks are a ring plus random chords, so every AC branch lies on a cycle
and single outages never island a bus.  Device mix, profiles and ratings are
drawn from a seeded generator; the same (preset, seed) always yields the same
instance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..model import (
    AcBranch, Bus, Contingency, CountConstraint, DcBranch, Device, EnergyConstraint, Instance,
    Interval, PenaltyParams, PwlCurve, ReserveZone, Shunt, CONSUMING, PRODUCING,
)

DIVISION_HORIZON_H = {1: (4.0, 8.0), 2: (24.0, 48.0), 3: (120.0, 240.0)}
DIVISION_STEP_H = {1: (0.25, 1.0), 2: (0.25, 2.0), 3: (1.0, 6.0)}

# desk-scale step and horizon choices per division
_STEP_CHOICES = {1: (0.25, 0.5, 1.0), 2: (1.0, 2.0), 3: (6.0,)}
_HORIZON_CHOICES = {1: (4.0, 6.0, 8.0), 2: (24.0, 36.0, 48.0), 3: (120.0, 144.0, 168.0)}
_MAX_INTERVALS = {1: 16, 2: 24, 3: 28}

SIZE_CLASSES = (14, 73, 617, 1576, 2000, 4224, 6049, 6708, 6717, 8316, 23643)


@dataclass(frozen=True)
class ScenarioPreset:
    size: int
    division: int
    n_intervals: int | None = None
    step_hours: float | None = None
    profile: str = "diurnal"
    stress: float = 1.0
    extreme_weather: bool = False

    @property
    def name(self) -> str:
        tag = f"{self.size}-d{self.division}"
        return tag + "-extreme" if self.extreme_weather else tag

    def durations(self, rng: np.random.Generator) -> list[float]:
        if self.n_intervals is not None and self.step_hours is not None:
            return [self.step_hours] * self.n_intervals
        d = self.division
        step = self.step_hours or float(rng.choice(_STEP_CHOICES[d]))
        horizons = [h for h in _HORIZON_CHOICES[d] if h / step <= _MAX_INTERVALS[d]]
        horizon = float(rng.choice(horizons)) if horizons else _HORIZON_CHOICES[d][0]
        n = self.n_intervals or int(round(horizon / step))
        return [step] * n


PRESETS = {
    f"{n}-d{d}": ScenarioPreset(n, d) for n in SIZE_CLASSES for d in (1, 2, 3)
}
PRESETS.update({
    f"{n}-d{d}-extreme": ScenarioPreset(n, d, stress=1.4, extreme_weather=True)
    for n in (14, 73) for d in (1, 2, 3)
})


def get_preset(name: str) -> ScenarioPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _ring_with_chords(rng, n):
    edges = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1), (0, 1)]
    n_chords = max(1, n // 2)
    seen = {tuple(sorted(e)) for e in edges}
    tries = 0
    while n_chords and tries < 50 * n:
        tries += 1
        i, j = sorted(rng.choice(n, size=2, replace=False))
        if (i, j) in seen or j - i in (1, n - 1):
            continue
        seen.add((i, j))
        edges.append((int(i), int(j)))
        n_chords -= 1
    return edges


def _load_shape(rng, hours, profile):
    if profile == "flat":
        return np.ones_like(hours)
    phase = rng.uniform(0, 2)
    daily = 0.8 + 0.2 * np.sin(2 * np.pi * (hours - 8.0 - phase) / 24.0)
    return daily * (1.0 + 0.03 * rng.standard_normal(len(hours)))


def _renewable_shape(rng, hours, solar):
    if solar:
        day = np.clip(np.sin(np.pi * ((hours % 24.0) - 6.0) / 12.0), 0.0, None)
        return 0.05 + 0.95 * day
    walk = np.cumsum(rng.normal(0, 0.08, len(hours)))
    return np.clip(0.55 + walk, 0.1, 1.0)


def _producer(rng, pid, bus, kind, scale, steps, hours, extreme):
    T = len(steps)
    d_min = min(steps)
    if kind == "base":
        pmax = scale * rng.uniform(1.5, 3.0)
        pmin_frac, cost, ramp_h = rng.uniform(0.3, 0.4), rng.uniform(1e3, 2e3), 0.4
        min_up, min_dn, su, sd, on = rng.uniform(4, 8), rng.uniform(2, 6), 2e4, 5e3, 500.0
    elif kind == "mid":
        pmax = scale * rng.uniform(0.8, 1.5)
        pmin_frac, cost, ramp_h = rng.uniform(0.2, 0.3), rng.uniform(3e3, 5e3), 0.8
        min_up, min_dn, su, sd, on = rng.uniform(1, 3), rng.uniform(1, 2), 5e3, 1e3, 200.0
    elif kind == "peaker":
        pmax = scale * rng.uniform(0.4, 0.9)
        pmin_frac, cost, ramp_h = rng.uniform(0.1, 0.2), rng.uniform(6e3, 9e3), 2.0
        min_up, min_dn, su, sd, on = 0.0, 0.0, 1e3, 200.0, 50.0
    else:
        pmax = scale * rng.uniform(0.6, 1.2)
        pmin_frac, cost, ramp_h = 0.0, rng.uniform(0.0, 200.0), 4.0
        min_up, min_dn, su, sd, on = 0.0, 0.0, 0.0, 0.0, 0.0
    if kind == "renewable":
        shape = _renewable_shape(rng, hours, solar=bool(rng.random() < 0.5))
        if extreme:
            shape = 0.5 * shape
        pmax_t = pmax * shape
    else:
        pmax_t = np.full(T, pmax)
    pmin_t = pmin_frac * pmax_t
    # three convex blocks spanning [0, pmax]
    fr = np.array([0.5, 0.3, 0.2])
    incr = np.array([1.0, 1.1, 1.25])
    curves = tuple(
        PwlCurve(tuple((float(w), float(cost * k)) for w, k in zip(fr * pm, incr)))
        for pm in pmax_t
    )
    ramp = ramp_h * pmax
    trans = max(ramp, 1.2 * pmin_frac * pmax / d_min)
    q_cap = 0.6 * pmax
    if kind == "renewable":
        u0 = 1
    elif kind == "base":
        u0 = 1
    else:
        u0 = int(rng.random() < 0.4)
    p0 = float(u0 * (pmin_t[0] + 0.5 * (pmax_t[0] - pmin_t[0]))) if kind != "renewable" else float(0.5 * pmax_t[0])
    p0 = min(p0, pmax_t[0])
    max_su = ()
    if kind == "peaker":
        max_su = (CountConstraint(tuple(range(T)), int(rng.integers(2, 5))),)
    return Device(
        id=pid, kind=PRODUCING, bus=bus, u0=u0, p0=p0,
        p_min=tuple(float(x) for x in pmin_t), p_max=tuple(float(x) for x in pmax_t),
        q_min=tuple([-0.5 * q_cap] * T), q_max=tuple([q_cap] * T),
        ramp_up=float(ramp), ramp_down=float(ramp), startup_ramp=float(trans),
        shutdown_ramp=float(trans),
        reserve_max=tuple(float(0.3 * x) for x in pmax_t) if kind != "renewable" else tuple([0.0] * T),
        reserve_cost=float(rng.uniform(50, 300)), startup_cost=float(su), shutdown_cost=float(sd),
        on_cost=float(on), energy_curves=curves,
        min_uptime=float(min_up), min_downtime=float(min_dn), max_startups=max_su,
    )


def _consumer(rng, cid, bus, peak, shape, steps):
    T = len(steps)
    vals = (rng.uniform(4e4, 5e4), rng.uniform(2e4, 3e4), rng.uniform(4e3, 1e4))
    fr = np.array([0.6, 0.25, 0.15])
    pmax_t = peak * shape
    curves = tuple(
        PwlCurve(tuple((float(w), float(v)) for w, v in zip(fr * pm, vals))) for pm in pmax_t
    )
    return Device(
        id=cid, kind=CONSUMING, bus=bus, u0=1, p0=float(0.8 * pmax_t[0]),
        p_min=tuple([0.0] * T), p_max=tuple(float(x) for x in pmax_t),
        q_min=tuple([0.0] * T), q_max=tuple(float(0.2 * x) for x in pmax_t),
        ramp_up=float(2.0 * peak), ramp_down=float(2.0 * peak),
        startup_ramp=float(2.0 * peak), shutdown_ramp=float(2.0 * peak),
        reserve_max=tuple([0.0] * T), reserve_cost=0.0, startup_cost=0.0, shutdown_cost=0.0,
        on_cost=0.0, energy_curves=curves,
    )


def _rate_branches(inst, rng, n_patterns=8):
    """Ratings from DC flows (intact and post-outage) under several dispatch patterns."""
    from ..contingency import lodf_screen, solve_dc_base
    from ..model import Solution

    a = inst.arrays
    sol = Solution.empty(inst)
    peak = np.zeros(len(inst.ac_branches))
    peak_ctg = np.zeros(len(inst.ac_branches))
    T = inst.n_intervals
    for k in range(n_patterns):
        t = int(rng.integers(T))
        load = a.p_max[~a.is_prod, t]
        prod = np.where(a.is_prod)[0]
        weights = rng.uniform(0.2, 1.0, len(prod)) * a.p_max[prod, t]
        share = weights / weights.sum() if weights.sum() > 0 else weights
        sol.p[:, t] = 0.0
        sol.p[~a.is_prod, t] = 0.9 * load
        sol.p[prod, t] = share * 0.9 * load.sum()
        base = solve_dc_base(inst, sol, t)
        peak = np.maximum(peak, np.abs(base.flow))
        for c in range(len(inst.contingencies)):
            peak_ctg = np.maximum(peak_ctg, np.abs(lodf_screen(inst, base, c)))
    s_max = 2.0 * peak + 0.5
    s_ctg = np.maximum(2.0 * peak_ctg + 0.5, s_max)
    return tuple(
        replace(br, s_max=float(s_max[j]), s_max_ctg=float(s_ctg[j]))
        for j, br in enumerate(inst.ac_branches)
    )


def generate_scenario(preset: ScenarioPreset | str, seed: int) -> Instance:
    if isinstance(preset, str):
        preset = get_preset(preset)
    rng = np.random.default_rng([int(seed), preset.size, preset.division, int(preset.extreme_weather)])
    n = preset.size
    steps = preset.durations(rng)
    T = len(steps)
    hours = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    buses = tuple(Bus(f"bus{i}", 0.9, 1.1) for i in range(n))

    edges = _ring_with_chords(rng, n)
    ac = []
    n_xf = max(1, len(edges) // 8)
    xf_set = set(rng.choice(len(edges), size=n_xf, replace=False).tolist())
    ps_idx = min(xf_set)
    x_scale = np.sqrt(14.0 / max(n, 14))  # stiffer lines as the system grows
    for j, (i, k) in enumerate(edges):
        x = x_scale * rng.uniform(0.04, 0.12)
        r = x * rng.uniform(0.08, 0.2)
        y = 1.0 / complex(r, x)
        bc = 0.0 if j in xf_set else rng.uniform(0.01, 0.04)
        tau_rng = (0.95, 1.05) if j in xf_set else (1.0, 1.0)
        phi_rng = (-0.5, 0.5) if j == ps_idx else (0.0, 0.0)
        ac.append(AcBranch(
            id=f"ln{j}", from_bus=f"bus{i}", to_bus=f"bus{k}", y_sr=y,
            y_fr=complex(0.0, bc / 2), y_to=complex(0.0, bc / 2),
            tau_min=tau_rng[0], tau_max=tau_rng[1], phi_min=phi_rng[0], phi_max=phi_rng[1],
            s_max=1e3, s_max_ctg=1e3,
        ))
    i, k = sorted(rng.choice(n, size=2, replace=False).tolist())
    dc = (DcBranch("dc0", f"bus{i}", f"bus{k}", p_max=float(rng.uniform(0.5, 1.5)),
                   q_min_fr=-0.3, q_max_fr=0.3, q_min_to=-0.3, q_max_to=0.3),)

    # devices
    n_prod = max(6, int(round(0.3 * n)))
    n_cons = max(3, int(round(0.5 * n)))
    prod_bus = rng.choice(n, size=n_prod, replace=n_prod > n)
    cons_bus = rng.choice(n, size=n_cons, replace=n_cons > n)
    load_shape = _load_shape(rng, hours, preset.profile) * preset.stress
    peaks = rng.uniform(0.5, 1.5, n_cons)
    consumers = [
        _consumer(rng, f"ld{c}", f"bus{cons_bus[c]}", peaks[c], load_shape, steps) for c in range(n_cons)
    ]
    total_peak = float(peaks.sum() * load_shape.max())
    kinds = ["base", "mid", "peaker", "renewable"]
    mix = [kinds[m % 4] for m in range(n_prod)]
    # capacity around 1.8x peak load before weather effects
    scale = 1.8 * total_peak / (n_prod * 1.3)
    producers = [
        _producer(rng, f"gen{g}", f"bus{prod_bus[g]}", mix[g], scale, steps, hours,
                  preset.extreme_weather)
        for g in range(n_prod)
    ]
    # one must-run base unit over the horizon, one mid unit on outage for a stretch
    base_ids = [g for g, m in enumerate(mix) if m == "base"]
    producers[base_ids[0]] = replace(producers[base_ids[0]], must_run=frozenset(range(T)))
    mids = [g for g, m in enumerate(mix) if m == "mid" and producers[g].u0 == 0]
    if mids and T >= 4:
        start = int(rng.integers(0, T // 2))
        producers[mids[0]] = replace(producers[mids[0]], forced_off=frozenset(range(start, start + T // 4)))
    # multi-interval energy cap on the first mid unit
    ec_dev = next(g for g, m in enumerate(mix) if m in ("mid", "base") and g != base_ids[0]) \
        if len(base_ids) > 1 or any(m == "mid" for m in mix) else base_ids[0]
    cap = 0.7 * sum(d * p for d, p in zip(steps, producers[ec_dev].p_max))
    producers[ec_dev] = replace(producers[ec_dev], energy_constraints=(
        EnergyConstraint(-cap, {t: float(steps[t]) for t in range(T)}),
    ))
    devices = tuple(producers + consumers)

    shunt_bus = rng.choice(n, size=max(1, n // 7), replace=False)
    shunts = tuple(
        Shunt(f"sh{s}", f"bus{b}", complex(0.0, float(rng.uniform(0.05, 0.15))), 0, 2)
        for s, b in enumerate(shunt_bus)
    )
    zone = ReserveZone("z0", float(rng.uniform(0.1, 0.2)), 2e5,
                       tuple(d.id for d in devices if d.kind == PRODUCING))
    m = len(ac)
    n_ctg = max(1, m - n + 1)
    picks = sorted(rng.choice(m, size=min(m, n_ctg), replace=False).tolist())
    ctgs = [Contingency(f"ctg{c}", f"ln{j}") for c, j in enumerate(picks)]
    ctgs.append(Contingency(f"ctg{len(ctgs)}", "dc0"))
    inst = Instance(
        buses=buses, devices=devices, shunts=shunts, ac_branches=tuple(ac), dc_branches=dc,
        zones=(zone,), contingencies=tuple(ctgs),
        intervals=tuple(Interval(t, float(d)) for t, d in enumerate(steps)),
        penalties=PenaltyParams(c_p=1e6, c_q=1e6, c_s=5e5, c_sw=1e3, c_en=1e5),
        name=f"{preset.name}-s{seed}",
    )
    return replace(inst, ac_branches=_rate_branches(inst, rng))


def horizon_hours(inst: Instance) -> float:
    return float(math.fsum(iv.duration for iv in inst.intervals))
