"""Exhaustive optimum of a one-producer, one-consumer, two-interval instance.

Enumerates every commitment pattern and a quantity grid for each interval.
The line is lossless and the producer's reactive range absorbs the line's
reactive draw, so delivered quantity equals both outputs.
"""
from __future__ import annotations

import itertools

import numpy as np

STEP = 0.005


def _pwl(blocks, x):
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    left = x.copy()
    for w, c in blocks:
        take = np.minimum(w, left)
        total += take * c
        left -= take
    return total


def _ramp_ok(prev, cur, u_prev, u, D, dev):
    su = max(0, u - u_prev)
    sd = max(0, u_prev - u)
    up = D * (dev.ramp_up * (u - su) + dev.startup_ramp * su)
    dn = D * (dev.ramp_down * u + dev.shutdown_ramp * sd)
    return (cur - prev <= up + 1e-9) & (prev - cur <= dn + 1e-9)


def optimum(inst) -> float:
    g, d = inst.devices
    D = [iv.duration for iv in inst.intervals]
    zone = inst.zones[0] if inst.zones else None
    top = max(max(g.p_max), max(d.p_max))
    grid = np.round(np.arange(0.0, top + STEP / 2, STEP), 9)
    best = -np.inf
    for ug0, ug1, ud0, ud1 in itertools.product((0, 1), repeat=4):
        ug, ud = (ug0, ug1), (ud0, ud1)
        if any(t in g.must_run and not ug[t] for t in range(2)):
            continue
        fixed = 0.0
        for dev, u in ((g, ug), (d, ud)):
            prev = dev.u0
            for t in range(2):
                fixed += dev.startup_cost * max(0, u[t] - prev) + dev.shutdown_cost * max(0, prev - u[t])
                fixed += D[t] * dev.on_cost * u[t]
                prev = u[t]
        x0, x1 = np.meshgrid(grid, grid, indexing="ij")
        ok = np.ones_like(x0, dtype=bool)
        total = -fixed * np.ones_like(x0)
        for t, x in ((0, x0), (1, x1)):
            for dev, u in ((g, ug), (d, ud)):
                ok &= (x >= dev.p_min[t] * u[t] - 1e-12) & (x <= dev.p_max[t] * u[t] + 1e-12)
            value = _pwl(d.energy_curves[t].blocks, x) - _pwl(g.energy_curves[t].blocks, x)
            if zone is not None:
                req = zone.sigma * x * ug[t]
                room = np.minimum(g.reserve_max[t] * ug[t], g.p_max[t] * ug[t] - x)
                r = np.clip(np.minimum(req, room), 0.0, None)
                value = value - g.reserve_cost * r - zone.shortage_penalty * (req - r)
            total += D[t] * value
        for dev, u in ((g, ug), (d, ud)):
            ok &= _ramp_ok(dev.p0, x0, dev.u0, u[0], D[0], dev)
            ok &= _ramp_ok(x0, x1, u[0], u[1], D[1], dev)
        if ok.any():
            best = max(best, float(total[ok].max()))
    return best
