import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from builders import device, line, random_instance, random_solution, two_bus
from go3kit.acpf import (
    NonConvergence, PowerFlowOptions, branch_flow, branch_flows, bus_imbalance, complex_voltage,
    mismatch_vector, newton_jacobian, s_function, shunt_flow, solve_power_flow,
)
from go3kit.model import CONSUMING, Shunt, Solution
from oracles import acflow

finite = dict(allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- kernels

def test_complex_voltage_unit_angles():
    assert complex_voltage(1.0, 0.0) == 1 + 0j
    w = complex_voltage(1.0, math.pi / 2)
    assert abs(w - 1j) < 1e-16


def test_complex_voltage_extended_precision():
    assert abs(complex_voltage(1.05, 0.1) - acflow.voltage(1.05, 0.1)) < 1e-14


def test_s_function_matches_polar_oracle():
    w = complex_voltage(1.02, 0.05)
    w2 = complex_voltage(0.98, -0.02)
    y, y2 = 4 - 10j, 0.03j
    assert abs(s_function(w, w2, y, y2) - acflow.s_value(w, w2, y, y2)) < 1e-12


def test_s_function_equal_voltages_no_shunt_is_zero():
    w = complex_voltage(1.01, 0.3)
    assert s_function(w, w, 2 - 7j, 0j) == 0


def test_open_branch_carries_nothing():
    r = branch_flow(line("l", "a", "b", 1 - 5j), 0, 1.02, 0.03, 1.0 + 0j, 0.9 + 0.1j)
    assert r.s_fr == 0 and r.s_to == 0


def test_flat_untapped_branch_carries_nothing():
    w = complex_voltage(1.03, -0.2)
    r = branch_flow(line("l", "a", "b", 1 - 5j), 1, 1.0, 0.0, w, w)
    assert abs(r.s_fr) == 0 and abs(r.s_to) == 0


def test_tapped_phase_shifted_branch_matches_oracle():
    br = line("l", "a", "b", 1 - 5j, y_fr=0.01j, y_to=0.01j)
    v1, t1, v2, t2 = 1.03, 0.07, 0.97, -0.05
    r = branch_flow(br, 1, 1.02, 0.03, complex_voltage(v1, t1), complex_voltage(v2, t2))
    o_fr, o_to = acflow.branch(br.y_sr, br.y_fr, br.y_to, 1.02, 0.03, v1, t1, v2, t2)
    assert abs(r.s_fr - o_fr) < 1e-12 and abs(r.s_to - o_to) < 1e-12


def test_shunt_flow_values():
    assert shunt_flow(Shunt("s", "b", 0.1 + 0.2j, 0, 3), 0, 1.0) == 0
    assert abs(shunt_flow(0.1 + 0.2j, 2, 1.0) - (0.2 - 0.4j)) < 1e-15
    assert abs(shunt_flow(0.05 - 0.3j, 3, 1.04) - acflow.shunt(0.05 - 0.3j, 3, 1.04)) < 1e-12


# ---------------------------------------------------------------- branch invariants

angles = st.floats(-1.0, 1.0, **finite)
mags = st.floats(0.8, 1.2, **finite)


@given(b=st.floats(0.5, 50, **finite), v1=mags, v2=mags, t1=angles, t2=angles)
def test_lossless_branch_conserves_real_power(b, v1, v2, t1, t2):
    s_fr, s_to = branch_flows(-1j * b, 0j, 0j, 1, 1.0, 0.0, complex_voltage(v1, t1), complex_voltage(v2, t2))
    assert abs(s_fr.real + s_to.real) < 1e-10


@given(g=st.floats(1e-3, 20, **finite), b=st.floats(-50, 50, **finite), v1=mags, v2=mags, t1=angles,
       t2=angles, tau=st.floats(0.9, 1.1, **finite), phi=st.floats(-0.5, 0.5, **finite))
def test_series_losses_nonnegative(g, b, v1, v2, t1, t2, tau, phi):
    s_fr, s_to = branch_flows(complex(g, b), 0j, 0j, 1, tau, phi, complex_voltage(v1, t1), complex_voltage(v2, t2))
    assert s_fr.real + s_to.real >= -1e-12


@given(v1=mags, v2=mags, t1=angles, t2=angles)
def test_open_branch_exactly_zero(v1, v2, t1, t2):
    s_fr, s_to = branch_flows(3 - 9j, 0.02j, 0.02j, 0, 1.05, 0.1, complex_voltage(v1, t1), complex_voltage(v2, t2))
    assert s_fr == 0 and s_to == 0


# ---------------------------------------------------------------- bus balance

def test_balanced_single_bus_is_zero():
    inst = two_bus()
    sol = Solution.empty(inst)
    sol.ac_u[:] = 0
    sol.u[:] = 1
    sol.p[:] = 1.0
    s = bus_imbalance(inst, sol, 0)
    assert s[0] == -1 and s[1] == 1
    sol.p[1] = 0.0
    sol.p[0] = 0.0
    assert np.all(bus_imbalance(inst, sol, 0) == 0)


# ---------------------------------------------------------------- Newton solve

def _two_bus_state(load_p, y=-10j):
    d = device("d", CONSUMING, "b2", 1, p_max=10.0, q_min=0.0, q_max=0.0)
    inst = two_bus(y=y, load=d)
    sol = Solution.empty(inst)
    sol.u[:] = 1
    sol.p[1, 0] = load_p
    return inst, sol


def test_zero_injection_flat_start_needs_no_iterations():
    inst, sol = _two_bus_state(0.0)
    st_ = solve_power_flow(inst, sol, 0, slack_bus=0)
    assert st_.iterations == 0
    np.testing.assert_array_equal(st_.v, [1.0, 1.0])
    np.testing.assert_array_equal(st_.theta, [0.0, 0.0])


def test_two_bus_closed_form():
    inst, sol = _two_bus_state(0.1)
    st_ = solve_power_flow(inst, sol, 0, slack_bus=0, opts=PowerFlowOptions(tol=1e-13))
    # 10 v sin(th) = -0.1 and v = cos(th) on the upper branch of the nose curve
    th = -0.5 * math.asin(0.02)
    assert abs(st_.theta[1] - th) < 1e-8
    assert abs(st_.v[1] - math.cos(th)) < 1e-8


def test_load_past_nose_point_does_not_converge():
    # maximum deliverable real power over a pure susceptance of 10 from a 1.0 pu source is 5
    inst, sol = _two_bus_state(6.0)
    with pytest.raises(NonConvergence):
        solve_power_flow(inst, sol, 0, slack_bus=0)


def test_converged_state_balances_non_slack_buses():
    inst, sol = _two_bus_state(0.8, y=1 / (0.02 + 0.1j))
    st_ = solve_power_flow(inst, sol, 0, slack_bus=0)
    sol.v[:, 0], sol.theta[:, 0] = st_.v, st_.theta
    s = bus_imbalance(inst, sol, 0)
    assert abs(s[1]) < 1e-8
    assert s[0].real > 0.8  # residual at the slack is load plus series loss


@pytest.mark.parametrize("seed", range(20))
def test_jacobian_matches_finite_differences(seed):
    inst = random_instance(seed)
    sol = random_solution(inst, seed)
    n = len(inst.buses)
    v, th = sol.v[:, 0].copy(), sol.theta[:, 0].copy()
    pv = [n - 1] if n > 2 else []
    J = newton_jacobian(inst, sol, 0, 0, v, th, pv)
    ang = [i for i in range(n) if i != 0]
    mag = [i for i in range(n) if i != 0 and i not in pv]
    h = 1e-6
    cols = []
    for i in ang:
        e = np.zeros(n); e[i] = h
        cols.append((mismatch_vector(inst, sol, 0, 0, v, th + e, pv)
                     - mismatch_vector(inst, sol, 0, 0, v, th - e, pv)) / (2 * h))
    for i in mag:
        e = np.zeros(n); e[i] = h
        cols.append((mismatch_vector(inst, sol, 0, 0, v + e, th, pv)
                     - mismatch_vector(inst, sol, 0, 0, v - e, th, pv)) / (2 * h))
    fd = np.array(cols).T
    scale = max(1.0, np.max(np.abs(J)))
    assert np.max(np.abs(J - fd)) / scale < 1e-5
