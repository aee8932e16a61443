import dataclasses
import itertools

import numpy as np
import pytest

from builders import balanced_toy, device, line, micro_instance, two_bus
from go3kit.acpf import bus_imbalance, network_flows
from go3kit.equilibrium import StepCurve, clear_market, equilibrium_totals
from go3kit.evaluator import ENGINEERING_FEASIBLE, check_hard_constraints, check_schedule, evaluate
from go3kit.harness.generate import generate_scenario
from go3kit.model import (
    Bus, CONSUMING, Instance, Interval, PRODUCING, Solution, dumps_solution,
)
from go3kit.solver import SolverConfig, solve
from go3kit.solver.core import build_solution, polish, support_moves, switch_moves, trivial_solution
from go3kit.solver.dispatch import dispatch_interval, dispatch_phase
from go3kit.solver.schedule import CandidateSchedule, batch_round, naive_round, uc_phase
from oracles.micro import optimum

QUICK = dict(polish_rounds=0)


# ---------------------------------------------------------------- end to end

def test_toy_reaches_equilibrium_surplus():
    inst = two_bus()
    sol = solve(inst, SolverConfig(wall_clock_budget=20, polish_rounds=5))
    ev = evaluate(inst, sol)
    surplus = equilibrium_totals(inst)[0]
    assert ev.feasibility_class == ENGINEERING_FEASIBLE
    assert surplus == pytest.approx(50.0)
    assert ev.objective.z_ms >= 0.95 * surplus


def test_minimal_budget_returns_fallback():
    inst = generate_scenario("14-d1", 3)
    sol = solve(inst, SolverConfig(wall_clock_budget=1e-6))
    ev = evaluate(inst, sol)
    assert ev.feasible and ev.score >= 0


def test_trivial_solution_is_hard_feasible_on_generated_cases():
    for name in ("14-d1", "14-d2", "73-d3"):
        inst = generate_scenario(name, 1)
        assert check_hard_constraints(inst, trivial_solution(inst)).feasible, name


def test_iteration_capped_runs_are_identical():
    inst = generate_scenario("14-d1", 2)
    cfg = lambda: SolverConfig(wall_clock_budget=120, seed=5, polish_rounds=2)
    a = dumps_solution(inst, solve(inst, cfg()))
    b = dumps_solution(inst, solve(inst, cfg()))
    assert a == b


@pytest.mark.parametrize("name,seed", [("14-d1", 0), ("14-d2", 4), ("14-d3", 1)])
def test_pipeline_output_is_feasible_with_legal_schedule(name, seed):
    inst = generate_scenario(name, seed)
    sol = solve(inst, SolverConfig(wall_clock_budget=60, **QUICK))
    assert evaluate(inst, sol).feasible
    assert check_schedule(inst, sol.u, sol.u_su, sol.u_sd).feasible


@pytest.mark.parametrize("seed", range(20))
def test_micro_instance_reaches_exhaustive_optimum(seed):
    inst = micro_instance(seed)
    ev = evaluate(inst, solve(inst, SolverConfig(wall_clock_budget=10, polish_rounds=20)))
    assert ev.score >= 0.99 * max(0.0, optimum(inst)) - 1e-9


# ---------------------------------------------------------------- commitment

def _stack(T, load_max, producers, load_price=100.0):
    load = device("d", CONSUMING, "b2", T, p_max=tuple(load_max), q_min=0.0, q_max=0.0,
                  blocks=[(max(load_max), load_price)])
    return dataclasses.replace(two_bus(T=T), devices=tuple(producers) + (load,))


def test_must_run_unit_committed_throughout():
    g = device("g", PRODUCING, "b1", 3, blocks=[(2.0, 500.0)], u0=0, must_run=frozenset(range(3)))
    inst = dataclasses.replace(two_bus(T=3), devices=(g, device("d", CONSUMING, "b2", 3, q_min=0, q_max=0)))
    assert np.all(uc_phase(inst).u[0] == 1)


def test_long_min_uptime_never_shuts_down():
    g = dataclasses.replace(device("g", PRODUCING, "b1", 4, u0=0, blocks=[(2.0, 5.0)]), min_uptime=100.0)
    inst = _stack(4, [2.0, 0.0, 0.0, 0.0], [g])
    u = batch_round(inst, uc_phase(inst, fractional=True)).u
    assert u[0, 0] == 1 and np.all(u[0] == 1)


def _welfare(inst, u):
    """Network-free optimum for a fixed commitment: clearing surplus less commitment costs."""
    total = 0.0
    D = [iv.duration for iv in inst.intervals]
    for t in range(inst.n_intervals):
        sup, dem = [], []
        for j, d in enumerate(inst.devices):
            if u[j, t]:
                (sup if d.is_producer else dem).extend(d.energy_curves[t].truncated(d.p_max[t]))
        total += D[t] * clear_market(StepCurve.from_blocks("supply", sup),
                                     StepCurve.from_blocks("demand", dem)).surplus
    for j, d in enumerate(inst.devices):
        prev = d.u0
        for t in range(inst.n_intervals):
            total -= d.startup_cost * max(0, u[j, t] - prev) + D[t] * d.on_cost * u[j, t]
            prev = u[j, t]
    return total


def test_merit_commitment_matches_exhaustive_search():
    prods = [device("a", PRODUCING, "b1", 4, p_max=1.0, blocks=[(1.0, 10.0)], u0=0, on=5.0, su=20.0),
             device("b", PRODUCING, "b1", 4, p_max=1.0, blocks=[(1.0, 20.0)], u0=0, on=5.0, su=20.0),
             device("c", PRODUCING, "b1", 4, p_max=1.0, blocks=[(1.0, 40.0)], u0=0, on=5.0, su=20.0)]
    inst = _stack(4, [0.5, 1.4, 2.5, 0.9], prods)
    best = -np.inf
    for bits in itertools.product((0, 1), repeat=12):
        u = np.vstack([np.array(bits).reshape(3, 4), np.ones((1, 4))])
        best = max(best, _welfare(inst, u))
    u = batch_round(inst, uc_phase(inst, fractional=True)).u
    assert _welfare(inst, u) == pytest.approx(best, rel=1e-9)


def test_integral_schedule_unchanged_by_rounding():
    inst = two_bus(T=3)
    sched = CandidateSchedule.from_u(inst, np.array([[1, 0, 1], [1, 1, 1]], dtype=float))
    np.testing.assert_array_equal(batch_round(inst, sched).u, sched.u)


def test_half_commitment_rounds_up():
    inst = two_bus(T=3)
    sched = CandidateSchedule.from_u(inst, np.array([[0.5] * 3, [1.0] * 3]))
    assert np.all(batch_round(inst, sched).u[0] == 1)


def _four_device_case(seed):
    rng = np.random.default_rng(seed)
    T = 4
    load_max = rng.uniform(0.5, 3.0, T)
    prods = [device(f"g{k}", PRODUCING, "b1", T, p_max=float(cap), p_min=float(0.3 * cap),
                    blocks=[(float(cap), float(price))], u0=int(rng.random() < 0.5),
                    on=float(rng.uniform(0, 20)), su=float(rng.uniform(0, 40)), ramp=10.0)
             for k, (cap, price) in enumerate(zip(rng.uniform(0.5, 1.5, 3), rng.uniform(5, 40, 3)))]
    prods = [dataclasses.replace(p, p0=p.p_min[0] * p.u0) for p in prods]
    return _stack(T, load_max, prods, load_price=float(rng.uniform(45, 80)))


def test_batch_rounding_beats_naive_rounding():
    wins = 0
    cfg = SolverConfig(wall_clock_budget=30, ac=False, network_dispatch=False)
    for seed in range(50):
        inst = _four_device_case(seed)
        frac = uc_phase(inst, fractional=True)
        score_b = evaluate(inst, build_solution(inst, batch_round(inst, frac), cfg)).score
        score_n = evaluate(inst, build_solution(inst, naive_round(inst, frac), cfg)).score
        wins += score_b >= score_n - 1e-9
    assert wins >= 40


# ---------------------------------------------------------------- dispatch

def test_balanced_pair_dispatch():
    inst = two_bus()
    sched = CandidateSchedule.from_u(inst, np.ones((2, 1)))
    p, _, _ = dispatch_phase(inst, sched, 0, prev_p=np.zeros(2))
    assert p[0] == p[1] == 2.0


def test_ramp_limited_producer_leaves_imbalance():
    g = device("g", PRODUCING, "b1", 1, p0=0.5, ramp=0.3)
    d = device("d", CONSUMING, "b2", 1, p_min=1.5, p_max=1.5, q_min=0, q_max=0, blocks=[(1.5, 50.0)])
    inst = two_bus(gen=g, load=d)
    sched = CandidateSchedule.from_u(inst, np.ones((2, 1)))
    p, _, _ = dispatch_phase(inst, sched, 0, prev_p=np.array([0.5, 1.5]))
    assert p[0] == pytest.approx(0.8, abs=1e-12)
    assert p[1] - p[0] == pytest.approx(0.7, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_stack_dispatch_matches_block_lp(seed):
    rng = np.random.default_rng(seed)
    devs = []
    for k in range(5):
        kind = PRODUCING if k < 3 else CONSUMING
        w = rng.uniform(0.2, 1.0, 2)
        c = np.sort(rng.uniform(5, 60, 2))
        c = c if kind == PRODUCING else c[::-1]
        devs.append(device(f"x{k}", kind, "b1", 1, p_max=float(w.sum()), blocks=list(zip(w, c))))
    inst = dataclasses.replace(two_bus(), devices=tuple(devs))
    hi = np.array([d.p_max[0] for d in devs])
    p = dispatch_interval(inst, 0, np.ones(5, bool), np.zeros(5), hi)
    # staircase walk: cheapest offer against dearest bid until they cross
    offers = sorted((c, w) for k, d in enumerate(devs) if d.is_producer for w, c in d.energy_curves[0].blocks)
    bids = sorted(((c, w) for k, d in enumerate(devs) if not d.is_producer for w, c in d.energy_curves[0].blocks),
                  reverse=True)
    want, i, k = 0.0, 0, 0
    (so, wo), (sb, wb) = offers[0], bids[0]
    while sb >= so:
        q = min(wo, wb)
        want += q * (sb - so)
        wo, wb = wo - q, wb - q
        if wo <= 0:
            i += 1
            if i == len(offers):
                break
            so, wo = offers[i]
        if wb <= 0:
            k += 1
            if k == len(bids):
                break
            sb, wb = bids[k]
    welfare = sum(d.energy_curves[0].value(p[k]) * (-1 if d.is_producer else 1) for k, d in enumerate(devs))
    assert welfare == pytest.approx(want, rel=1e-9, abs=1e-9)
    assert p[:3].sum() == pytest.approx(p[3:].sum(), abs=1e-12)


# ---------------------------------------------------------------- AC refinement

def _refined(inst):
    sched = CandidateSchedule.from_u(inst, np.ones((len(inst.devices), inst.n_intervals)))
    return build_solution(inst, sched)


def test_lossless_toy_balances():
    inst = two_bus()
    sol = _refined(inst)
    assert np.max(np.abs(bus_imbalance(inst, sol))) < 1e-6


def test_lossy_toy_covers_series_loss():
    inst = two_bus(y=1 / (0.02 + 0.1j))
    sol = _refined(inst)
    s_fr, s_to, _ = network_flows(inst, sol, 0)
    loss = float((s_fr + s_to).real.sum())
    assert loss > 1e-3
    assert sol.p[0, 0] - sol.p[1, 0] == pytest.approx(loss, abs=1e-4)


def test_low_voltage_cap_projects_and_leaves_reactive_imbalance():
    d = device("d", CONSUMING, "b2", 1, q_min=0.5, q_max=0.5, p_min=0.0)
    base = two_bus(load=d)
    g = device("g", PRODUCING, "b1", 1, q_min=0.0, q_max=0.0)
    inst = dataclasses.replace(base, devices=(g, d), buses=(Bus("b1", 0.80, 0.85), Bus("b2", 0.80, 0.85)),
                               ac_branches=(line("l1", "b1", "b2", y_fr=0.2j, y_to=0.2j),))
    sol = _refined(inst)
    ev = evaluate(inst, sol)
    assert np.all(sol.v <= 0.85 + 1e-12) and np.isclose(sol.v.max(), 0.85)
    assert ev.objective.z_q > 0


# ---------------------------------------------------------------- polish

def test_polish_keeps_optimal_incumbent():
    inst = micro_instance(2)
    sol = solve(inst, SolverConfig(wall_clock_budget=10, polish_rounds=20))
    before = dumps_solution(inst, sol)
    after = polish(inst, sol, 5.0, SolverConfig(wall_clock_budget=10, polish_rounds=20))
    assert dumps_solution(inst, after) == before


def test_polish_decommits_redundant_expensive_unit():
    cheap = device("cheap", PRODUCING, "b1", 2, p_max=2.0, blocks=[(2.0, 10.0)])
    dear = device("dear", PRODUCING, "b1", 2, p_max=2.0, blocks=[(2.0, 40.0)], on=30.0)
    load = device("d", CONSUMING, "b2", 2, p_max=1.0, q_min=0, q_max=0, blocks=[(1.0, 50.0)])
    inst = dataclasses.replace(two_bus(T=2), devices=(cheap, dear, load))
    cfg = SolverConfig(wall_clock_budget=20, polish_rounds=5)
    heavy = build_solution(inst, CandidateSchedule.from_u(inst, np.ones((3, 2))), cfg)
    start = evaluate(inst, heavy).score
    # exhaustive check over the expensive unit's four patterns
    scores = {}
    for bits in itertools.product((0, 1), repeat=2):
        u = np.ones((3, 2))
        u[1] = bits
        scores[bits] = evaluate(inst, build_solution(inst, CandidateSchedule.from_u(inst, u), cfg)).score
    assert max(scores, key=scores.get) == (0, 0)
    out = polish(inst, heavy, 10.0, cfg)
    assert np.all(out.u[1] == 0)
    assert evaluate(inst, out).score > start


def test_branch_open_that_disconnects_is_never_proposed():
    inst = Instance(
        buses=tuple(Bus(f"b{i}", 0.9, 1.1) for i in range(3)), devices=(), shunts=(),
        ac_branches=(line("l0", "b0", "b1"), line("l1", "b1", "b2")), dc_branches=(), zones=(),
        contingencies=(), intervals=(Interval(0, 1.0),), penalties=two_bus().penalties,
    )
    assert list(switch_moves(inst, Solution.empty(inst))) == []


# ---------------------------------------------------------------- support commitments

def test_balanced_solution_needs_no_support():
    inst, sol = balanced_toy(0.8)
    assert list(support_moves(inst, sol)) == []


def test_reactive_deficit_triggers_support_commitment():
    # merit order leaves too few units online for the evening reactive demand
    inst = generate_scenario("14-d2", 47)
    ev = evaluate(inst, solve(inst, SolverConfig(wall_clock_budget=60, **QUICK)))
    assert ev.feasibility_class == ENGINEERING_FEASIBLE
    assert ev.objective.z_q < 1.0


def test_reserve_shortfall_triggers_support_commitment():
    inst = generate_scenario("14-d2", 35)
    ev = evaluate(inst, solve(inst, SolverConfig(wall_clock_budget=60, **QUICK)))
    assert ev.diagnostics["max_reserve_shortfall"] <= 1e-6
