"""Post-contingency lossless DC model, connectivity checks and LODF screening.

After the outage of one branch, device and DC-branch real power stays at
its base-case value and AC branch flows follow
``p_j = -u_j * B_j * (theta_fr - theta_to - phi_j)``.  The base-case system
mismatch ``p_sl`` (the AC losses) is spread over buses with shares alpha.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acpf import network_flows
from .model import Instance, Solution, build_topology, component_labels, n_components


class Disconnected(RuntimeError):
    def __init__(self, components: int):
        super().__init__(f"network splits into {components} components")
        self.components = components


class SingularSystem(RuntimeError):
    pass


class BridgeOutage(RuntimeError):
    pass


@dataclass
class DcContingencyResult:
    theta: np.ndarray
    flow: np.ndarray  # per AC branch; zero for the outaged and open branches
    p_sl: float
    residual: float
    t: int = 0
    outaged: str | None = None
    z_ctg: float | None = None


@dataclass
class DcBaseState:
    """Intact-network DC solution plus the reduced-matrix inverse used by LODF screening."""

    t: int
    theta: np.ndarray
    flow: np.ndarray
    b: np.ndarray
    injection: np.ndarray
    p_sl: float
    x_inv: np.ndarray  # inverse of the reduced B matrix, reference bus 0 removed
    dc_pfr: np.ndarray


@dataclass
class ConnectivityReport:
    base: list[tuple[int, int]] = field(default_factory=list)
    contingency: list[tuple[int, str, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.base and not self.contingency

    def __bool__(self) -> bool:
        return self.ok


def system_slack(inst: Instance, sol: Solution, t: int) -> float:
    a = inst.arrays
    _, _, s_sh = network_flows(inst, sol, t)
    p = sol.p[:, t]
    return float(p[a.is_prod].sum() - p[~a.is_prod].sum() - s_sh.real.sum())


def bus_injection(inst: Instance, sol: Solution, t: int, dc_out: int | None = None) -> np.ndarray:
    """Fixed real injection per bus: producers minus consumers, shunts and DC withdrawals."""
    a = inst.arrays
    inj = np.zeros(len(inst.buses))
    sign = np.where(a.is_prod, 1.0, -1.0)
    np.add.at(inj, a.dev_bus, sign * sol.p[:, t])
    _, _, s_sh = network_flows(inst, sol, t)
    np.add.at(inj, a.sh_bus, -s_sh.real)
    keep = np.ones(len(inst.dc_branches), dtype=bool)
    if dc_out is not None:
        keep[dc_out] = False
    np.add.at(inj, a.dc_fr[keep], -sol.dc_pfr[keep, t])
    np.add.at(inj, a.dc_to[keep], sol.dc_pfr[keep, t])
    return inj


def dc_susceptance(inst: Instance, sol: Solution, t: int) -> np.ndarray:
    """Per-branch ``-u * B`` (positive for inductive branches)."""
    return -np.round(sol.ac_u[:, t]) * inst.arrays.ac_ysr.imag


def dc_ptdf(inst: Instance, sol: Solution, t: int):
    """``(H, c)`` with intact-network DC flows ``H @ inj + c`` under distributed slack."""
    a = inst.arrays
    n = len(inst.buses)
    b = dc_susceptance(inst, sol, t)
    _check_solvable(n, a.ac_fr, a.ac_to, b)
    phi = sol.phi[:, t]
    c = b * (-phi)
    if n > 1:
        th0 = _solve_angles(n, a.ac_fr, a.ac_to, b, phi, np.zeros(n))
        c = b * (th0[a.ac_fr] - th0[a.ac_to] - phi)
    E = np.eye(n) - np.outer(a.alpha, np.ones(n))
    B = np.zeros((n, n))
    np.add.at(B, (a.ac_fr, a.ac_fr), b)
    np.add.at(B, (a.ac_to, a.ac_to), b)
    np.add.at(B, (a.ac_fr, a.ac_to), -b)
    np.add.at(B, (a.ac_to, a.ac_fr), -b)
    X = np.zeros((n, n))
    if n > 1:
        X[1:, :] = np.linalg.solve(B[1:, 1:], E[1:, :])
    H = b[:, None] * (X[a.ac_fr] - X[a.ac_to])
    return H, c


def _solve_angles(n, fr, to, b, phi, rhs):
    B = np.zeros((n, n))
    np.add.at(B, (fr, fr), b)
    np.add.at(B, (to, to), b)
    np.add.at(B, (fr, to), -b)
    np.add.at(B, (to, fr), -b)
    shift = np.zeros(n)
    np.add.at(shift, fr, b * phi)
    np.add.at(shift, to, -b * phi)
    theta = np.zeros(n)
    if n > 1:
        theta[1:] = np.linalg.solve(B[1:, 1:], (rhs + shift)[1:])
    return theta


def _check_solvable(n, fr, to, b):
    on = np.abs(b) > 0
    labels = component_labels(n, fr[on], to[on])
    if n_components(labels) > 1:
        raise SingularSystem(
            "surviving AC branches with nonzero susceptance do not span the network"
        )


def dc_balance_residual(inst, res: DcContingencyResult, sol: Solution) -> np.ndarray:
    """Per-bus outflow + alpha * p_sl - injection for a post-contingency result."""
    a = inst.arrays
    dc_out = inst.index.dc.get(res.outaged) if res.outaged is not None else None
    inj = bus_injection(inst, sol, res.t, dc_out)
    out = np.zeros(len(inst.buses))
    np.add.at(out, a.ac_fr, res.flow)
    np.add.at(out, a.ac_to, -res.flow)
    return out + a.alpha * res.p_sl - inj


def _contingency(inst: Instance, k):
    if isinstance(k, (int, np.integer)):
        return inst.contingencies[int(k)]
    for c in inst.contingencies:
        if c.id == k:
            return c
    raise KeyError(f"unknown contingency {k!r}")


def solve_dc_contingency(inst: Instance, sol: Solution, t: int, k) -> DcContingencyResult:
    """Post-contingency DC angles and flows for contingency ``k`` (id or position)."""
    ctg = _contingency(inst, k)
    a = inst.arrays
    n = len(inst.buses)
    labels = build_topology(inst, sol.ac_u[:, t], outage=ctg.branch)
    if n_components(labels) > 1:
        raise Disconnected(n_components(labels))
    b = dc_susceptance(inst, sol, t)
    ac_out = inst.index.ac.get(ctg.branch)
    dc_out = inst.index.dc.get(ctg.branch)
    if ac_out is not None:
        b = b.copy()
        b[ac_out] = 0.0
    _check_solvable(n, a.ac_fr, a.ac_to, b)
    p_sl = system_slack(inst, sol, t)
    inj = bus_injection(inst, sol, t, dc_out)
    phi = sol.phi[:, t]
    theta = _solve_angles(n, a.ac_fr, a.ac_to, b, phi, inj - a.alpha * p_sl)
    flow = b * (theta[a.ac_fr] - theta[a.ac_to] - phi)
    res = DcContingencyResult(theta=theta, flow=flow, p_sl=p_sl, residual=0.0, t=t,
                              outaged=ctg.branch)
    res.residual = float(np.max(np.abs(dc_balance_residual(inst, res, sol)))) if n else 0.0
    return res


def contingency_overload_penalty(
    inst: Instance, dc: DcContingencyResult, sol: Solution, t: int, k=None, q_fr=None, q_to=None
):
    """Return ``(z_ctg_tk, per-branch z_s_jtk)``.

    Reactive flows default to base-case values recomputed from the solution
    voltages; loading uses ``max(|q_fr|, |q_to|)``.
    """
    a = inst.arrays
    if q_fr is None or q_to is None:
        s_fr, s_to, _ = network_flows(inst, sol, t)
        q_fr, q_to = s_fr.imag, s_to.imag
    q = np.maximum(np.abs(q_fr), np.abs(q_to))
    out = inst.index.ac.get(dc.outaged) if dc.outaged is not None else None
    if out is not None:
        q = q.copy()
        q[out] = 0.0
    load = np.sqrt(dc.flow ** 2 + q ** 2)
    z = a.duration[t] * inst.penalties.c_s * np.maximum(0.0, load - a.ac_smax_ctg)
    if out is not None:
        z[out] = 0.0
    total = float(z.sum())
    dc.z_ctg = total
    return total, z


def ctg_aggregate(inst: Instance, z_ctg: np.ndarray):
    """Worst and average penalties per interval and their totals from a ``(T, K)`` table."""
    z_ctg = np.asarray(z_ctg, dtype=float)
    T = inst.n_intervals
    if z_ctg.size == 0 or z_ctg.shape[-1] == 0:
        zeros = np.zeros(T)
        return zeros, zeros.copy(), 0.0, 0.0
    worst_t = z_ctg.max(axis=1)
    avg_t = z_ctg.sum(axis=1) / z_ctg.shape[1]
    return worst_t, avg_t, float(worst_t.sum()), float(avg_t.sum())


def check_connectivity(inst: Instance, sol: Solution) -> ConnectivityReport:
    rep = ConnectivityReport()
    for t in range(inst.n_intervals):
        nc = n_components(build_topology(inst, sol.ac_u[:, t]))
        if nc > 1:
            rep.base.append((t, nc))
            continue
        for ctg in inst.contingencies:
            nc = n_components(build_topology(inst, sol.ac_u[:, t], outage=ctg.branch))
            if nc > 1:
                rep.contingency.append((t, ctg.id, nc))
    return rep


# --------------------------------------------------------------------------- screening


def solve_dc_base(inst: Instance, sol: Solution, t: int) -> DcBaseState:
    a = inst.arrays
    n = len(inst.buses)
    b = dc_susceptance(inst, sol, t)
    _check_solvable(n, a.ac_fr, a.ac_to, b)
    p_sl = system_slack(inst, sol, t)
    inj = bus_injection(inst, sol, t)
    phi = sol.phi[:, t]
    theta = _solve_angles(n, a.ac_fr, a.ac_to, b, phi, inj - a.alpha * p_sl)
    B = np.zeros((n, n))
    np.add.at(B, (a.ac_fr, a.ac_fr), b)
    np.add.at(B, (a.ac_to, a.ac_to), b)
    np.add.at(B, (a.ac_fr, a.ac_to), -b)
    np.add.at(B, (a.ac_to, a.ac_fr), -b)
    x_inv = np.linalg.inv(B[1:, 1:]) if n > 1 else np.zeros((0, 0))
    flow = b * (theta[a.ac_fr] - theta[a.ac_to] - phi)
    return DcBaseState(t=t, theta=theta, flow=flow, b=b, injection=inj, p_sl=p_sl,
                       x_inv=x_inv, dc_pfr=sol.dc_pfr[:, t].copy())


def _transfer_flows(inst: Instance, base: DcBaseState, i_from: int, i_to: int) -> np.ndarray:
    """Branch flow change per unit injected at ``i_from`` and withdrawn at ``i_to``."""
    a = inst.arrays
    e = np.zeros(len(inst.buses))
    e[i_from] += 1.0
    e[i_to] -= 1.0
    dth = np.zeros(len(inst.buses))
    dth[1:] = base.x_inv @ e[1:]
    return base.b * (dth[a.ac_fr] - dth[a.ac_to])


def lodf_screen(inst: Instance, base: DcBaseState, k) -> np.ndarray:
    """Post-contingency AC flows by a rank-1 update of the intact-network solution."""
    ctg = _contingency(inst, k)
    a = inst.arrays
    if ctg.branch in inst.index.dc:
        j = inst.index.dc[ctg.branch]
        return base.flow + _transfer_flows(inst, base, a.dc_fr[j], a.dc_to[j]) * base.dc_pfr[j]
    l = inst.index.ac[ctg.branch]
    if base.b[l] == 0.0:
        return base.flow.copy()
    ptdf = _transfer_flows(inst, base, a.ac_fr[l], a.ac_to[l])
    denom = 1.0 - ptdf[l]
    if abs(denom) < 1e-9:
        raise BridgeOutage(f"outage of {ctg.branch} islands the network")
    flow = base.flow + ptdf * (base.flow[l] / denom)
    flow[l] = 0.0
    return flow
