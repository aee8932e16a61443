"""AC power-flow arithmetic: complex voltages, branch and shunt flows, bus
imbalance residuals, and a Newton-Raphson power flow.

Sign conventions: producer power is an injection; consumer, shunt and
branch flows are withdrawals from the bus.  A bus imbalance ``s_i`` is the net
excess withdrawal, so a balanced bus has ``s_i == 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import AcBranch, Instance, Shunt, Solution

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, final_mismatch: float):
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(max mismatch {final_mismatch:.3e})"
        )
        self.iterations = iterations
        self.final_mismatch = final_mismatch


class SingularJacobian(RuntimeError):
    pass


@dataclass
class BranchFlowResult:
    s_fr: complex
    s_to: complex

    @property
    def p_fr(self) -> float:
        return self.s_fr.real

    @property
    def q_fr(self) -> float:
        return self.s_fr.imag

    @property
    def p_to(self) -> float:
        return self.s_to.real

    @property
    def q_to(self) -> float:
        return self.s_to.imag


@dataclass
class ComplexVoltageState:
    v: np.ndarray
    theta: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0

    @property
    def w(self) -> np.ndarray:
        return complex_voltage(self.v, self.theta)


@dataclass
class PowerFlowOptions:
    tol: float = 1e-8
    max_iter: int = 30
    max_halvings: int = 4


def complex_voltage(v, theta):
    return v * (np.cos(theta) + 1j * np.sin(theta))


def s_function(w, w2, y, y2):
    """Complex power into a branch end: ``conj(y2)|w|^2 + conj(y) w conj(w - w2)``."""
    return np.conj(y2) * w * np.conj(w) + np.conj(y) * w * np.conj(w - w2)


def branch_flow(br: AcBranch, u, tau, phi, w_fr, w_to) -> BranchFlowResult:
    if u == 0:
        return BranchFlowResult(0j, 0j)
    nu = complex_voltage(tau, phi)
    s_fr = u * s_function(w_fr / nu, w_to, br.y_sr, br.y_fr)
    s_to = u * s_function(w_to, w_fr / nu, br.y_sr, br.y_to)
    return BranchFlowResult(complex(s_fr), complex(s_to))


def branch_flows(y_sr, y_fr, y_to, u, tau, phi, w_fr, w_to):
    """Vectorized branch flows; every argument broadcasts."""
    nu = complex_voltage(tau, phi)
    wf = w_fr / nu
    s_fr = u * s_function(wf, w_to, y_sr, y_fr)
    s_to = u * s_function(w_to, wf, y_sr, y_to)
    return s_fr, s_to


def shunt_flow(sh: Shunt | complex, u_steps, v):
    y = sh.y_step if isinstance(sh, Shunt) else sh
    return np.conj(y) * u_steps * v ** 2


def network_flows(inst: Instance, sol: Solution, t=slice(None)):
    """AC branch flows ``(s_fr, s_to)`` and shunt flows recomputed from voltages."""
    a = inst.arrays
    w = complex_voltage(sol.v[:, t], sol.theta[:, t])
    if a.ac_fr.size:
        col = (lambda x: x[:, None]) if w.ndim == 2 else (lambda x: x)
        s_fr, s_to = branch_flows(
            col(a.ac_ysr), col(a.ac_yfr), col(a.ac_yto),
            sol.ac_u[:, t], sol.tau[:, t], sol.phi[:, t], w[a.ac_fr], w[a.ac_to],
        )
    else:
        s_fr = s_to = np.zeros((0,) + w.shape[1:], dtype=complex)
    if a.sh_bus.size:
        y = a.sh_y[:, None] if w.ndim == 2 else a.sh_y
        s_sh = shunt_flow(y, sol.sh_u[:, t], np.abs(w[a.sh_bus]))
    else:
        s_sh = np.zeros((0,) + w.shape[1:], dtype=complex)
    return s_fr, s_to, s_sh


def bus_imbalance(inst: Instance, sol: Solution, t=slice(None)) -> np.ndarray:
    """Complex imbalance per bus (and interval when ``t`` is a slice)."""
    a = inst.arrays
    s_fr, s_to, s_sh = network_flows(inst, sol, t)
    shape = (len(inst.buses),) + np.shape(sol.v[:, t])[1:]
    s = np.zeros(shape, dtype=complex)
    s_dev = sol.p[:, t] + 1j * sol.q[:, t]
    sign = np.where(a.is_prod, -1.0, 1.0)
    if s.ndim == 2:
        sign = sign[:, None]
    np.add.at(s, a.dev_bus, sign * s_dev)
    np.add.at(s, a.sh_bus, s_sh)
    np.add.at(s, a.ac_fr, s_fr)
    np.add.at(s, a.ac_to, s_to)
    np.add.at(s, a.dc_fr, sol.dc_pfr[:, t] + 1j * sol.dc_qfr[:, t])
    np.add.at(s, a.dc_to, -sol.dc_pfr[:, t] + 1j * sol.dc_qto[:, t])
    return s


# --------------------------------------------------------------------------- Newton


def build_ybus(inst: Instance, ac_u, tau, phi, sh_u) -> np.ndarray:
    """Dense bus admittance matrix for one interval."""
    a = inst.arrays
    n = len(inst.buses)
    Y = np.zeros((n, n), dtype=complex)
    on = np.round(ac_u) != 0
    nu = complex_voltage(tau, phi)
    ysr = a.ac_ysr * on
    yff = (ysr + a.ac_yfr * on) / tau ** 2
    yft = -ysr / np.conj(nu)
    ytf = -ysr / nu
    ytt = ysr + a.ac_yto * on
    np.add.at(Y, (a.ac_fr, a.ac_fr), yff)
    np.add.at(Y, (a.ac_fr, a.ac_to), yft)
    np.add.at(Y, (a.ac_to, a.ac_fr), ytf)
    np.add.at(Y, (a.ac_to, a.ac_to), ytt)
    np.add.at(Y, (a.sh_bus, a.sh_bus), a.sh_y * sh_u)
    return Y


def fixed_withdrawal(inst: Instance, sol: Solution, t: int) -> np.ndarray:
    """Per-bus device and DC-branch withdrawal (network-independent part of the balance)."""
    a = inst.arrays
    s = np.zeros(len(inst.buses), dtype=complex)
    sign = np.where(a.is_prod, -1.0, 1.0)
    np.add.at(s, a.dev_bus, sign * (sol.p[:, t] + 1j * sol.q[:, t]))
    np.add.at(s, a.dc_fr, sol.dc_pfr[:, t] + 1j * sol.dc_qfr[:, t])
    np.add.at(s, a.dc_to, -sol.dc_pfr[:, t] + 1j * sol.dc_qto[:, t])
    return s


def power_flow_jacobian(Y: np.ndarray, w: np.ndarray):
    """``(dS/dtheta, dS/dv)`` of ``S = w * conj(Y w)``."""
    ibus = Y @ w
    wn = w / np.abs(w)
    dS_dth = 1j * w[:, None] * np.conj(np.diag(ibus) - Y * w[None, :])
    dS_dv = w[:, None] * np.conj(Y * wn[None, :]) + np.diag(np.conj(ibus) * wn)
    return dS_dth, dS_dv


def solve_power_flow(
    inst: Instance,
    fixed: Solution,
    t: int,
    slack_bus: int,
    opts: PowerFlowOptions | None = None,
    pv_buses=(),
) -> ComplexVoltageState:
    """Newton-Raphson power flow for interval ``t``.

    Device p/q, shunt steps and branch settings are read from ``fixed``; its
    voltages are the starting point.  The slack bus holds (v, theta=0) and
    absorbs the residual; ``pv_buses`` hold their starting magnitude and
    absorb reactive residual.  On return every other bus balances to ``opts.tol``.
    """
    opts = opts or PowerFlowOptions()
    n = len(inst.buses)
    Y = build_ybus(inst, fixed.ac_u[:, t], fixed.tau[:, t], fixed.phi[:, t], fixed.sh_u[:, t])
    s_fix = fixed_withdrawal(inst, fixed, t)
    v = fixed.v[:, t].astype(float).copy()
    th = fixed.theta[:, t].astype(float).copy()
    th -= th[slack_bus]
    pv = set(int(b) for b in pv_buses) - {slack_bus}
    ang = np.array([i for i in range(n) if i != slack_bus], dtype=int)
    mag = np.array([i for i in range(n) if i != slack_bus and i not in pv], dtype=int)
    na = len(ang)

    def mismatch(v, th):
        w = complex_voltage(v, th)
        s = w * np.conj(Y @ w) + s_fix
        return np.concatenate([s.real[ang], s.imag[mag]]), w

    F, w = mismatch(v, th)
    err = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while err >= opts.tol:
        if it >= opts.max_iter:
            raise NonConvergence(it, err)
        dth, dv = power_flow_jacobian(Y, w)
        J = np.block([
            [dth.real[np.ix_(ang, ang)], dv.real[np.ix_(ang, mag)]],
            [dth.imag[np.ix_(mag, ang)], dv.imag[np.ix_(mag, mag)]],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian("non-finite Newton step")
        norm0 = np.linalg.norm(F)
        step = 1.0
        for _ in range(opts.max_halvings + 1):
            th_new = th.copy()
            v_new = v.copy()
            th_new[ang] += step * dx[:na]
            v_new[mag] += step * dx[na:]
            F_new, w_new = mismatch(v_new, th_new)
            if np.all(np.isfinite(F_new)) and np.linalg.norm(F_new) <= norm0:
                break
            step *= 0.5
        th, v, F, w = th_new, v_new, F_new, w_new
        it += 1
        err = float(np.max(np.abs(F))) if np.all(np.isfinite(F)) else np.inf
        if not np.isfinite(err) or np.any(v <= 0):
            raise NonConvergence(it, err)
    return ComplexVoltageState(v=v, theta=th, iterations=it, mismatch=err)


def mismatch_vector(inst, fixed, t, slack_bus, v, theta, pv_buses=()):
    """Newton residual at a given state (angles at non-slack buses, magnitudes at PQ buses)."""
    n = len(inst.buses)
    Y = build_ybus(inst, fixed.ac_u[:, t], fixed.tau[:, t], fixed.phi[:, t], fixed.sh_u[:, t])
    w = complex_voltage(v, theta)
    s = w * np.conj(Y @ w) + fixed_withdrawal(inst, fixed, t)
    pv = set(pv_buses) - {slack_bus}
    ang = [i for i in range(n) if i != slack_bus]
    mag = [i for i in range(n) if i != slack_bus and i not in pv]
    return np.concatenate([s.real[ang], s.imag[mag]])


def newton_jacobian(inst, fixed, t, slack_bus, v, theta, pv_buses=()):
    """Analytic Jacobian of :func:`mismatch_vector` with respect to (angles, magnitudes)."""
    n = len(inst.buses)
    Y = build_ybus(inst, fixed.ac_u[:, t], fixed.tau[:, t], fixed.phi[:, t], fixed.sh_u[:, t])
    pv = set(pv_buses) - {slack_bus}
    ang = np.array([i for i in range(n) if i != slack_bus], dtype=int)
    mag = np.array([i for i in range(n) if i != slack_bus and i not in pv], dtype=int)
    dth, dv = power_flow_jacobian(Y, complex_voltage(v, theta))
    return np.block([
        [dth.real[np.ix_(ang, ang)], dv.real[np.ix_(ang, mag)]],
        [dth.imag[np.ix_(mag, ang)], dv.imag[np.ix_(mag, mag)]],
    ])
