"""Crude convex market-clearing bound.

Per interval, all producer offer blocks (truncated at P^max) form a supply
step curve and all consumer bid blocks a demand step curve.  Commitment,
ramping, the network, losses, reactive power and voltage are ignored.
Surplus is the area between the curves left of their intersection.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Instance

SUPPLY = "supply"
DEMAND = "demand"


@dataclass(frozen=True)
class StepCurve:
    kind: str
    blocks: tuple[tuple[float, float], ...]  # (width, price), sorted by price

    def __post_init__(self):
        prices = [p for _, p in self.blocks]
        pairs = list(zip(prices, prices[1:]))
        ok = all(a <= b for a, b in pairs) if self.kind == SUPPLY else all(a >= b for a, b in pairs)
        if not ok:
            raise ValueError(f"{self.kind} curve prices are not monotone")
        if any(w < 0 for w, _ in self.blocks):
            raise ValueError("negative block width")

    @classmethod
    def from_blocks(cls, kind: str, blocks) -> "StepCurve":
        """Sort blocks and merge equal prices (widths summed exactly)."""
        widths = defaultdict(list)
        for w, p in blocks:
            if w > 0:
                widths[float(p)].append(float(w))
        prices = sorted(widths, reverse=(kind == DEMAND))
        return cls(kind, tuple((math.fsum(widths[p]), p) for p in prices))

    @property
    def total(self) -> float:
        return math.fsum(w for w, _ in self.blocks)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum([w for w, _ in self.blocks])

    def price_at(self, q: float) -> float:
        """Price of the block containing quantity ``q`` (blocks are half-open on the left)."""
        edge = 0.0
        for w, p in self.blocks:
            edge += w
            if q <= edge:
                return p
        return math.inf if self.kind == SUPPLY else -math.inf


@dataclass
class ClearingResult:
    q_star: float
    price_range: tuple[float, float]
    surplus: float
    gen_cost: float


def aggregate_curves(inst: Instance, t: int) -> tuple[StepCurve, StepCurve]:
    sup, dem = [], []
    for dev in inst.devices:
        blocks = dev.energy_curves[t].truncated(dev.p_max[t])
        (sup if dev.is_producer else dem).extend(blocks)
    return StepCurve.from_blocks(SUPPLY, sup), StepCurve.from_blocks(DEMAND, dem)


def clear_market(supply: StepCurve, demand: StepCurve) -> ClearingResult:
    S = [list(b) for b in supply.blocks if b[0] > 0]
    D = [list(b) for b in demand.blocks if b[0] > 0]
    i = j = 0
    q = surplus = cost = 0.0
    last = None
    while i < len(S) and j < len(D) and D[j][1] >= S[i][1]:
        take = min(S[i][0], D[j][0])
        q += take
        surplus += take * (D[j][1] - S[i][1])
        cost += take * S[i][1]
        last = (S[i][1], D[j][1])
        S[i][0] -= take
        D[j][0] -= take
        if S[i][0] <= 0:
            i += 1
        if D[j][0] <= 0:
            j += 1
    if last is None:
        if S and D:
            last = (D[0][1], S[0][1])
        else:
            last = (0.0, 0.0)
    return ClearingResult(q_star=q, price_range=last, surplus=surplus, gen_cost=cost)


def clear_interval(inst: Instance, t: int) -> ClearingResult:
    return clear_market(*aggregate_curves(inst, t))


@dataclass
class GapReport:
    equilibrium_surplus: float
    equilibrium_gen_cost: float
    z_ms: float
    abs_gap: float
    rel_gap_surplus: float | None
    rel_gap_cost: float | None
    negative_gap: bool
    per_interval: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def equilibrium_totals(inst: Instance):
    """``(D-weighted surplus, D-weighted gen cost, per-interval clearings)``."""
    res = [clear_interval(inst, t) for t in range(inst.n_intervals)]
    dur = [iv.duration for iv in inst.intervals]
    surplus = math.fsum(d * r.surplus for d, r in zip(dur, res))
    cost = math.fsum(d * r.gen_cost for d, r in zip(dur, res))
    return surplus, cost, res


def gap_report(surplus: float, gen_cost: float, z_ms: float, per_interval=()) -> GapReport:
    gap = surplus - z_ms
    return GapReport(
        equilibrium_surplus=surplus, equilibrium_gen_cost=gen_cost, z_ms=z_ms, abs_gap=gap,
        rel_gap_surplus=gap / surplus if surplus != 0 else None,
        rel_gap_cost=gap / gen_cost if gen_cost != 0 else None,
        negative_gap=gap < 0, per_interval=list(per_interval),
    )


def bound_report(inst: Instance, ev) -> GapReport:
    if not ev.feasible or ev.objective is None:
        raise ValueError("gap report needs a feasible evaluation")
    surplus, cost, res = equilibrium_totals(inst)
    rows = [
        {"interval": t, "q_star": r.q_star, "price_lo": r.price_range[0],
         "price_hi": r.price_range[1], "surplus": r.surplus, "gen_cost": r.gen_cost}
        for t, r in enumerate(res)
    ]
    return gap_report(surplus, cost, ev.objective.z_ms, rows)


def curve_dump(supply: StepCurve, demand: StepCurve) -> dict[str, list[list[float]]]:
    """Staircase vertices ``[quantity, price]`` for plotting both curves."""

    def steps(c: StepCurve):
        pts, q = [], 0.0
        for w, p in c.blocks:
            pts.append([q, p])
            q += w
            pts.append([q, p])
        return pts

    return {SUPPLY: steps(supply), DEMAND: steps(demand)}
