"""Power flow: exact Newton AC solution, flat-start linearization, branch
flows, frequency arithmetic and security-limit evaluation.

Injection interfaces take MW / MVAr per bus; internally everything runs in
per-unit on the network base.  Branch limits are enforced per component:
|P| <= s_max and |Q| <= s_max, the same convention used by the linear
restoration models, so checks and models agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import Generator, PowerNetwork, SecurityLimits, WindFarm


class SingularJacobian(RuntimeError):
    pass


class NoRespondingGenerators(RuntimeError):
    pass


@dataclass
class PFSolution:
    v: np.ndarray  # per-bus voltage magnitude, p.u.
    theta: np.ndarray  # per-bus angle, rad
    branch_p: np.ndarray  # (n_branch, 2): from-side, to-side MW flow
    branch_q: np.ndarray  # (n_branch, 2): MVAr
    converged: bool
    iterations: int


@dataclass
class Violation:
    kind: str  # voltage_low | voltage_high | branch_p | branch_q | gen_p | gen_q | frequency
    index: int
    value: float
    limit: float

    @property
    def margin(self) -> float:
        return abs(self.value - self.limit)


@dataclass
class ViolationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)


def admittance_matrix(net: PowerNetwork) -> np.ndarray:
    n = net.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        y = complex(br.g, br.b)
        f, t = br.from_bus, br.to_bus
        Y[f, f] += y
        Y[t, t] += y
        Y[f, t] -= y
        Y[t, f] -= y
    for bus in net.buses:
        Y[bus.id, bus.id] += 1j * bus.shunt_susceptance
    return Y


def _injections(net: PowerNetwork, v: np.ndarray, theta: np.ndarray,
                Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Calculated per-bus P, Q injections (p.u.) at a voltage state."""
    V = v * np.exp(1j * theta)
    S = V * np.conj(Y @ V)
    return S.real, S.imag


def _jacobian(v, theta, Y):
    """Standard polar power-flow Jacobian blocks dP/dθ, dP/dV, dQ/dθ, dQ/dV."""
    n = len(v)
    V = v * np.exp(1j * theta)
    I = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(I)
    diagVnorm = np.diag(V / np.abs(V))
    dS_dth = 1j * diagV @ np.conj(diagI - Y @ diagV)
    dS_dv = diagV @ np.conj(Y @ diagVnorm) + np.conj(diagI) @ diagVnorm
    return dS_dth.real, dS_dv.real, dS_dth.imag, dS_dv.imag


def ac_power_flow(net: PowerNetwork, p_inj, q_inj, tol: float = 1e-8,
                  max_iter: int = 25, v_slack: float = 1.0) -> PFSolution:
    """Full Newton AC power flow with given injections at every non-slack bus.

    All non-slack buses are treated as PQ; the slack bus holds v_slack at
    angle zero and absorbs the imbalance.  Non-convergence is reported via
    the flag, not raised.
    """
    n = net.n_bus
    base = net.base_mva
    p = np.asarray(p_inj, float) / base
    q = np.asarray(q_inj, float) / base
    if len(p) != n or len(q) != n:
        raise ValueError("injection vectors must have one entry per bus")
    Y = admittance_matrix(net)
    slack = net.slack
    pq = np.array([i for i in range(n) if i != slack])

    v = np.ones(n)
    v[slack] = v_slack
    theta = np.zeros(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Pc, Qc = _injections(net, v, theta, Y)
        mis = np.concatenate([(p - Pc)[pq], (q - Qc)[pq]])
        if np.max(np.abs(mis)) <= tol:
            converged = True
            break
        J11, J12, J21, J22 = _jacobian(v, theta, Y)
        J = np.block([[J11[np.ix_(pq, pq)], J12[np.ix_(pq, pq)]],
                      [J21[np.ix_(pq, pq)], J22[np.ix_(pq, pq)]]])
        try:
            dx = np.linalg.solve(J, mis)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian("non-finite Newton step")
        theta[pq] += dx[: len(pq)]
        v[pq] += dx[len(pq):]
    else:
        Pc, Qc = _injections(net, v, theta, Y)
        mis = np.concatenate([(p - Pc)[pq], (q - Qc)[pq]])
        converged = bool(np.max(np.abs(mis)) <= tol)

    bp, bq = branch_flows(net, v, theta)
    return PFSolution(v=v, theta=theta, branch_p=bp, branch_q=bq,
                      converged=converged, iterations=it)


def linearized_power_flow(net: PowerNetwork, p_inj, q_inj,
                          v_slack: float = 1.0) -> PFSolution:
    """One-shot linear PF: first-order expansion of the AC equations around
    the flat profile (v=1, theta=0).  Exactly affine in the injections."""
    n = net.n_bus
    base = net.base_mva
    p = np.asarray(p_inj, float) / base
    q = np.asarray(q_inj, float) / base
    Y = admittance_matrix(net)
    slack = net.slack
    pq = np.array([i for i in range(n) if i != slack])

    v0 = np.ones(n)
    v0[slack] = v_slack
    th0 = np.zeros(n)
    P0, Q0 = _injections(net, v0, th0, Y)
    J11, J12, J21, J22 = _jacobian(v0, th0, Y)
    J = np.block([[J11[np.ix_(pq, pq)], J12[np.ix_(pq, pq)]],
                  [J21[np.ix_(pq, pq)], J22[np.ix_(pq, pq)]]])
    rhs = np.concatenate([(p - P0)[pq], (q - Q0)[pq]])
    try:
        dx = np.linalg.solve(J, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian(str(exc)) from exc
    v = v0.copy()
    theta = th0.copy()
    theta[pq] += dx[: len(pq)]
    v[pq] += dx[len(pq):]
    bp, bq = branch_flows(net, v, theta)
    return PFSolution(v=v, theta=theta, branch_p=bp, branch_q=bq,
                      converged=True, iterations=1)


def branch_flows(net: PowerNetwork, v, theta) -> tuple[np.ndarray, np.ndarray]:
    """Per-branch (P, Q) flows in MW / MVAr, evaluated exactly from the
    series-element equations; column 0 is the from-side, column 1 the
    to-side."""
    v = np.asarray(v, float)
    theta = np.asarray(theta, float)
    if len(v) != net.n_bus or len(theta) != net.n_bus:
        raise ValueError("v, theta must have one entry per bus")
    nbr = len(net.branches)
    P = np.zeros((nbr, 2))
    Q = np.zeros((nbr, 2))
    for k, br in enumerate(net.branches):
        for col, (a, bb) in enumerate([(br.from_bus, br.to_bus),
                                       (br.to_bus, br.from_bus)]):
            dth = theta[a] - theta[bb]
            P[k, col] = v[a] ** 2 * br.g - v[a] * v[bb] * (
                br.g * np.cos(dth) + br.b * np.sin(dth))
            Q[k, col] = -v[a] ** 2 * br.b - v[a] * v[bb] * (
                br.g * np.sin(dth) - br.b * np.cos(dth))
    return P * net.base_mva, Q * net.base_mva


def frequency_deviation(total_new_load: float, total_wind_delta: float,
                        gens: list[Generator]) -> float:
    """Quasi-steady-state frequency deviation (per-unit of nominal) for a net
    load increment, with the largest unit held out as reserve."""
    resp = _response_sum(gens)
    if resp <= 0:
        raise NoRespondingGenerators("no frequency-responsive capacity")
    return (total_new_load - total_wind_delta) / resp


def load_pickup_upper_bound(limits: SecurityLimits, gens: list[Generator],
                            winds: list[WindFarm]) -> float:
    """Frequency-derived cap (MW) on total new pickup in one step."""
    if not gens:
        raise ValueError("at least one generator required")
    resp = _response_sum(gens)
    wind_growth = sum(w.expected_output - w.initial_output for w in winds)
    return limits.delta_f_max * resp + wind_growth


def _response_sum(gens: list[Generator]) -> float:
    if not gens:
        return 0.0
    big = max(range(len(gens)), key=lambda j: gens[j].capacity)
    return sum(g.capacity / g.freq_response_rate
               for j, g in enumerate(gens) if j != big)


def check_security(net: PowerNetwork, pf: PFSolution, dispatch,
                   limits: SecurityLimits,
                   v_margin: float = 0.0, s_margin: float = 0.0) -> ViolationReport:
    """Evaluate every voltage, branch and generator limit at a PF state.

    dispatch may be None, or a mapping with 'p_g', 'q_g' (MW / MVAr per
    generator) and optionally 't' (minutes) for ramp-limited capability.
    Margins tighten the limits; used by surrogate-side checks.
    """
    rep = ViolationReport()
    lo, hi = limits.v_min + v_margin, limits.v_max - v_margin
    for i, vi in enumerate(pf.v):
        if vi < lo:
            rep.violations.append(Violation("voltage_low", i, float(vi), lo))
        elif vi > hi:
            rep.violations.append(Violation("voltage_high", i, float(vi), hi))
    for k, br in enumerate(net.branches):
        cap = br.s_max * (1.0 - s_margin)
        pk = float(np.max(np.abs(pf.branch_p[k])))
        qk = float(np.max(np.abs(pf.branch_q[k])))
        if pk > cap:
            rep.violations.append(Violation("branch_p", k, pk, cap))
        if qk > cap:
            rep.violations.append(Violation("branch_q", k, qk, cap))
    if dispatch is not None:
        p_g = np.asarray(dispatch["p_g"], float)
        q_g = np.asarray(dispatch["q_g"], float)
        t = dispatch.get("t")
        for j, g in enumerate(net.generators):
            p_cap = g.p_available(t) if t is not None else g.p_max
            if p_g[j] > p_cap + 1e-9 or p_g[j] < g.p_min - 1e-9:
                rep.violations.append(Violation("gen_p", j, float(p_g[j]),
                                                p_cap if p_g[j] > p_cap else g.p_min))
            if q_g[j] > g.q_max + 1e-9 or q_g[j] < g.q_min - 1e-9:
                rep.violations.append(Violation("gen_q", j, float(q_g[j]),
                                                g.q_max if q_g[j] > g.q_max else g.q_min))
    return rep
