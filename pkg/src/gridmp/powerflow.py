"""Y-bus assembly and a polar Newton-Raphson AC power flow (slack + PQ buses)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, GridError


class SingularBranchError(GridError):
    pass


@dataclass
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    mismatch_history: list[float] = field(default_factory=list)
    message: str = ""

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


def branch_admittance(br) -> np.ndarray:
    """2x2 primitive admittance [[Yff, Yft], [Ytf, Ytt]] of one branch."""
    if br.r_pu == 0 and br.x_pu == 0:
        raise SingularBranchError(f"branch {br.id} has zero impedance")
    y = 1.0 / br.z
    shift = np.exp(1j * br.shift_rad)
    return np.array([[y, -y / np.conj(shift)], [-y / shift, y]])


def build_admittance(grid: Grid) -> np.ndarray:
    n = grid.n_buses
    Y = np.zeros((n, n), dtype=complex)
    for br in grid.closed_branches():
        yb = branch_admittance(br)
        f, t = br.from_bus, br.to_bus
        Y[f, f] += yb[0, 0]
        Y[f, t] += yb[0, 1]
        Y[t, f] += yb[1, 0]
        Y[t, t] += yb[1, 1]
    return Y


def power_injections(Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    return V * np.conj(Y @ V)


def branch_flows(grid: Grid, V: np.ndarray) -> dict[int, tuple[complex, complex]]:
    """Complex power entering each closed branch at its from- and to-end."""
    flows = {}
    for br in grid.closed_branches():
        yb = branch_admittance(br)
        vf, vt = V[br.from_bus], V[br.to_bus]
        i_f = yb[0, 0] * vf + yb[0, 1] * vt
        i_t = yb[1, 0] * vf + yb[1, 1] * vt
        flows[br.id] = (vf * np.conj(i_f), vt * np.conj(i_t))
    return flows


def _jacobian(Y: np.ndarray, V: np.ndarray, pq: np.ndarray) -> np.ndarray:
    Ibus = Y @ V
    diagV = np.diag(V)
    Vnorm = V / np.abs(V)
    dS_dth = 1j * diagV @ np.conj(np.diag(Ibus) - Y @ diagV)
    dS_dvm = diagV @ np.conj(Y @ np.diag(Vnorm)) + np.conj(np.diag(Ibus)) @ np.diag(Vnorm)
    J11 = dS_dth[np.ix_(pq, pq)].real
    J12 = dS_dvm[np.ix_(pq, pq)].real
    J21 = dS_dth[np.ix_(pq, pq)].imag
    J22 = dS_dvm[np.ix_(pq, pq)].imag
    return np.block([[J11, J12], [J21, J22]])


def solve_power_flow(grid: Grid, p_load, q_load, tol: float = 1e-8, max_iter: int = 30) -> PowerFlowSolution:
    """Flat-start Newton-Raphson; ``converged=False`` instead of raising on failure."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not grid.is_connected():
        raise GridError("power flow needs a connected grid")
    n = grid.n_buses
    p_load = np.asarray(p_load, dtype=float)
    q_load = np.asarray(q_load, dtype=float)
    Y = build_admittance(grid)
    pq = np.array([i for i in range(n) if i != grid.slack], dtype=np.int64)
    s_spec = -(p_load + 1j * q_load)

    vm = np.ones(n)
    va = np.zeros(n)
    history: list[float] = []
    message = ""
    converged = False
    it = 0
    while True:
        V = vm * np.exp(1j * va)
        mis = power_injections(Y, V) - s_spec
        f = np.concatenate([mis.real[pq], mis.imag[pq]])
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        history.append(norm)
        if not np.isfinite(norm):
            message = "mismatch became non-finite"
            break
        if norm < tol:
            converged = True
            break
        if it >= max_iter:
            message = f"no convergence in {max_iter} iterations"
            break
        J = _jacobian(Y, V, pq)
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            message = f"singular Jacobian: {exc}"
            break
        k = len(pq)
        va[pq] += dx[:k]
        vm[pq] += dx[k:]
        it += 1

    V = vm * np.exp(1j * va)
    s = power_injections(Y, V)
    return PowerFlowSolution(vm.copy(), va.copy(), s.real.copy(), s.imag.copy(), converged, it,
                             history[-1] if history else 0.0, history, message)
