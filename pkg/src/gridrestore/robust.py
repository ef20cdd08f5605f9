"""Two-stage robust restoration models: canonical single-step model,
dualized inner worst-case MILP with vertex binaries, the column-and-
constraint generation loop, and the brute-force vertex oracle.

Canonical form (per-unit throughout):

    equalities    C Y + sum_i d_i p_i + F = 0          (multipliers mu)
    inequalities  H Y + I <= 0                          (multipliers lam >= 0)
    cost          c^T Y  (+ sum of wind output, which is uncertain)

Y = [p_G | q_G | theta | v | sP+ | sP- | sQ+ | sQ-| s_freq | s_over].
Power-balance rows are elastic (penalized slack pairs) and the frequency
row carries a penalized overrun slack, so the recourse problem is feasible
for every decision and uncertainty realization; infeasibility surfaces as
penalty cost.  The elastic columns also bound every coupled dual by the
penalty weight, which fixes the big-M constant of the inner MILP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import PowerNetwork, SecurityLimits
from .pf import _jacobian, admittance_matrix, _injections
from .solver import (LinearProgram, MixedIntegerProgram, linearize_bilinear,
                     solve_lp, solve_milp)

PENALTY = 100.0  # per-unit cost on elastic slack; >> any physical marginal cost
# the frequency row is penalized much harder: one p.u. of load is worth at
# most ~priority_weight in the objective, while the frequency sensitivity of
# a load is tiny (1/response-sum), so the overrun penalty must out-scale the
# pickup reward through that small factor
FREQ_PENALTY = 2.0e4
SLACK_TOL = 1e-6  # p.u.; slack use above this marks the point infeasible


class DimensionTooLarge(ValueError):
    pass


@dataclass
class UncertaintySet:
    """Per-node interval bounds (MW) on load amount and wind output."""
    load_low: np.ndarray
    load_up: np.ndarray
    wind_low: np.ndarray
    wind_up: np.ndarray

    def __post_init__(self):
        for name in ("load", "wind"):
            lo = np.asarray(getattr(self, name + "_low"), float)
            up = np.asarray(getattr(self, name + "_up"), float)
            setattr(self, name + "_low", lo)
            setattr(self, name + "_up", up)
            if np.any(lo > up + 1e-12):
                raise ValueError(f"{name} bounds must satisfy low <= up")

    @classmethod
    def from_network(cls, net: PowerNetwork, load_dev: float = 0.10,
                     wind_dev: float = 0.20) -> "UncertaintySet":
        el = np.array([l.expected_amount for l in net.load_blocks])
        ew = np.array([w.expected_output for w in net.wind_farms])
        return cls(load_low=el * (1 - load_dev), load_up=el * (1 + load_dev),
                   wind_low=ew * (1 - wind_dev), wind_up=ew * (1 + wind_dev))

    @property
    def n_dims(self) -> int:
        return len(self.load_low) + len(self.wind_low)


@dataclass
class WorstCase:
    p_l: np.ndarray  # MW per load block; zero where unpicked
    p_w: np.ndarray  # MW per wind farm
    p_g: np.ndarray  # MW per generator (minimizing dispatch)
    q_g: np.ndarray  # MVAr per generator
    objective: float  # MW-scale dispatch cost sum(p_G)+sum(p_W), incl. penalty


@dataclass
class SecondStage:
    p_g: np.ndarray
    q_g: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    cost: float  # MW scale, includes sum(p_W) and penalty
    slack_use: float  # p.u., max elastic slack magnitude
    status: str  # 'optimal' | 'infeasible' (slack in use) | solver status
    w_del: np.ndarray | None = None  # MW delivered (post-curtailment) wind


@dataclass
class RestorationModel:
    net: PowerNetwork
    limits: SecurityLimits
    t: float
    c_y: np.ndarray
    c_mat: np.ndarray  # equality coefficient matrix over Y
    f_vec: np.ndarray
    d0: np.ndarray  # (n_eq, n_load) per-load coupling columns (before x)
    e_mat: np.ndarray  # (n_eq, n_wind)
    h_mat: np.ndarray
    i_vec: np.ndarray
    idx: dict  # variable-slice map
    penalty_idx: np.ndarray  # Y indices carrying the elastic penalty
    dual_cap: np.ndarray | None = None  # per-equality-row bound on |mu|

    @property
    def n_y(self):
        return len(self.c_y)

    @property
    def n_eq(self):
        return self.c_mat.shape[0]

    @property
    def n_ineq(self):
        return self.h_mat.shape[0]


def assemble_canonical(net: PowerNetwork, limits: SecurityLimits,
                       t: float | None = 30.0,
                       fixed_p: np.ndarray | None = None,
                       fixed_q: np.ndarray | None = None,
                       freq_loads=None, gen_cost=None) -> RestorationModel:
    """Build the canonical single-step model around the flat-profile
    linearization of the AC equations.

    t is the step time (minutes) fixing ramp-limited generator capability;
    None means full nameplate capability.  fixed_p / fixed_q (MW / MVAr per
    bus) are already-restored demand carried as certain load.  freq_loads
    optionally restricts which load blocks couple into the frequency row
    (multi-step runs pass only the newly picked blocks; already-carried
    load no longer moves the frequency).  gen_cost optionally replaces the
    unit marginal cost on each generator (default 1.0 each); slightly
    staggered costs make the otherwise-degenerate dispatch unique.
    """
    n = net.n_bus
    ng = len(net.generators)
    nl = len(net.load_blocks)
    nw = len(net.wind_farms)
    base = net.base_mva

    sizes = [("p_g", ng), ("q_g", ng), ("theta", n), ("v", n),
             ("w_del", nw), ("s_curt", nw),
             ("sp_pos", n), ("sp_neg", n), ("sq_pos", n), ("sq_neg", n),
             ("s_freq", 1), ("s_over", 1)]
    idx, off = {}, 0
    for name, size in sizes:
        idx[name] = slice(off, off + size)
        off += size
    n_y = off

    Y0 = admittance_matrix(net)
    v0 = np.ones(n)
    th0 = np.zeros(n)
    P0, Q0 = _injections(net, v0, th0, Y0)
    J11, J12, J21, J22 = _jacobian(v0, th0, Y0)

    fixed_p = np.zeros(n) if fixed_p is None else np.asarray(fixed_p, float) / base
    fixed_q = np.zeros(n) if fixed_q is None else np.asarray(fixed_q, float) / base

    # P, Q balance per bus + reference angle + frequency + wind curtailment
    n_eq = 2 * n + 2 + nw
    C = np.zeros((n_eq, n_y))
    F = np.zeros(n_eq)
    D0 = np.zeros((n_eq, nl))
    E = np.zeros((n_eq, nw))

    rowP = lambda i: i
    rowQ = lambda i: n + i
    row_ref = 2 * n
    row_freq = 2 * n + 1
    row_curt = lambda w: 2 * n + 2 + w

    for i in range(n):
        C[rowP(i), idx["theta"]] = J11[i]
        C[rowP(i), idx["v"]] = J12[i]
        C[rowQ(i), idx["theta"]] = J21[i]
        C[rowQ(i), idx["v"]] = J22[i]
        F[rowP(i)] = P0[i] - J12[i].sum() + fixed_p[i]
        F[rowQ(i)] = Q0[i] - J22[i].sum() + fixed_q[i]
        C[rowP(i), idx["sp_pos"].start + i] = 1.0
        C[rowP(i), idx["sp_neg"].start + i] = -1.0
        C[rowQ(i), idx["sq_pos"].start + i] = 1.0
        C[rowQ(i), idx["sq_neg"].start + i] = -1.0
    for j, g in enumerate(net.generators):
        C[rowP(g.bus), idx["p_g"].start + j] = -1.0
        C[rowQ(g.bus), idx["q_g"].start + j] = -1.0
    for k, l in enumerate(net.load_blocks):
        D0[rowP(l.bus), k] = 1.0
        D0[rowQ(l.bus), k] = l.tan_phi
    # wind enters through a delivered-power variable with free curtailment:
    # w_del + s_curt = p_w, both nonnegative, so 0 <= w_del <= p_w
    for w, wf in enumerate(net.wind_farms):
        C[rowP(wf.bus), idx["w_del"].start + w] = -1.0
        C[row_curt(w), idx["w_del"].start + w] = 1.0
        C[row_curt(w), idx["s_curt"].start + w] = 1.0
        E[row_curt(w), w] = -1.0

    C[row_ref, idx["theta"].start + net.slack] = 1.0

    kf = 1.0 / (net.freq_response_sum() / base)  # response sum in p.u.
    freq_mask = np.zeros(nl) if freq_loads is not None else np.ones(nl)
    if freq_loads is not None:
        freq_mask[list(freq_loads)] = 1.0
    D0[row_freq, :] = kf * freq_mask
    C[row_freq, idx["w_del"]] = -kf
    C[row_freq, idx["s_freq"]] = 1.0
    C[row_freq, idx["s_over"]] = -1.0
    wind_ini = np.array([w.initial_output for w in net.wind_farms]) / base
    F[row_freq] = kf * wind_ini.sum() - limits.delta_f_max

    # inequalities: generator boxes, reserve, voltage boxes, slack signs,
    # linearized branch-flow limits (both signs of P and Q, from-side)
    rows, rhs = [], []

    def add(row, b):
        rows.append(row)
        rhs.append(b)

    p_avail = np.array([g.p_max if t is None else g.p_available(t)
                        for g in net.generators]) / base
    p_min = np.array([min(g.p_min / base, p_avail[j])
                      for j, g in enumerate(net.generators)])
    for j, g in enumerate(net.generators):
        r = np.zeros(n_y)
        r[idx["p_g"].start + j] = 1.0
        add(r, p_avail[j])
        r = np.zeros(n_y)
        r[idx["p_g"].start + j] = -1.0
        add(r, -p_min[j])
        r = np.zeros(n_y)
        r[idx["q_g"].start + j] = 1.0
        add(r, g.q_max / base)
        r = np.zeros(n_y)
        r[idx["q_g"].start + j] = -1.0
        add(r, -g.q_min / base)
    for j in range(ng):
        # spinning reserve: headroom covers the loss of any single unit
        r = np.zeros(n_y)
        r[idx["p_g"]] = 1.0
        r[idx["p_g"].start + j] += 1.0
        add(r, p_avail.sum())
    for i in range(n):
        r = np.zeros(n_y)
        r[idx["v"].start + i] = 1.0
        add(r, limits.v_max)
        r = np.zeros(n_y)
        r[idx["v"].start + i] = -1.0
        add(r, -limits.v_min)
    for name in ("w_del", "s_curt", "sp_pos", "sp_neg", "sq_pos", "sq_neg",
                 "s_freq", "s_over"):
        sl = idx[name]
        for i in range(sl.start, sl.stop):
            r = np.zeros(n_y)
            r[i] = -1.0
            add(r, 0.0)
    for br in net.branches:
        # flat-point linearization: P ~ -b dth + g dv, Q ~ -g dth - b dv
        cap = br.s_max / base
        for cth, cv in ((-br.b, br.g), (-br.g, -br.b)):
            for s in (1.0, -1.0):
                r = np.zeros(n_y)
                r[idx["theta"].start + br.from_bus] = s * cth
                r[idx["theta"].start + br.to_bus] = -s * cth
                r[idx["v"].start + br.from_bus] = s * cv
                r[idx["v"].start + br.to_bus] = -s * cv
                add(r, cap)

    H = np.array(rows)
    I_vec = -np.array(rhs)  # stored so that H Y + I <= 0

    c_y = np.zeros(n_y)
    c_y[idx["p_g"]] = 1.0 if gen_cost is None else np.asarray(gen_cost, float)
    penalty_idx = np.concatenate([
        np.arange(idx[nm].start, idx[nm].stop)
        for nm in ("sp_pos", "sp_neg", "sq_pos", "sq_neg", "s_over")])
    c_y[penalty_idx] = PENALTY
    c_y[idx["s_over"]] = FREQ_PENALTY

    # multiplier bounds implied by the elastic columns, per equality row;
    # the curtailment-row dual is itself bounded through the P-balance and
    # frequency duals (stationarity of the delivered-wind column)
    dual_cap = np.full(n_eq, PENALTY)
    dual_cap[row_ref] = np.inf  # reference row has no elastic column
    dual_cap[row_freq] = FREQ_PENALTY
    for w in range(nw):
        dual_cap[row_curt(w)] = 2.0 * PENALTY + kf * FREQ_PENALTY

    return RestorationModel(net=net, limits=limits, t=t, c_y=c_y, c_mat=C,
                            f_vec=F, d0=D0, e_mat=E, h_mat=H, i_vec=I_vec,
                            idx=idx, penalty_idx=penalty_idx, dual_cap=dual_cap)


def _uncertain_vector(model, x, p_l_mw, p_w_mw):
    """Right-hand sides for a fixed realization: b_eq, b_ub of the dispatch LP."""
    base = model.net.base_mva
    xl = np.asarray(x, float)
    pl = np.asarray(p_l_mw, float) / base
    pw = np.asarray(p_w_mw, float) / base
    b_eq = -(model.d0 @ (xl * pl) + model.e_mat @ pw + model.f_vec)
    return b_eq, -model.i_vec


def evaluate_second_stage(model: RestorationModel, x, p_l_mw, p_w_mw) -> SecondStage:
    """Minimum-generation dispatch at a fixed decision and uncertainty point."""
    b_eq, b_ub = _uncertain_vector(model, x, p_l_mw, p_w_mw)
    lp = LinearProgram(c=model.c_y, a_eq=model.c_mat, b_eq=b_eq,
                       a_ub=model.h_mat, b_ub=b_ub)
    sol = solve_lp(lp)
    base = model.net.base_mva
    if sol.status != "optimal":
        ng = len(model.net.generators)
        nan = np.full(ng, np.nan)
        return SecondStage(nan, nan, np.full(model.net.n_bus, np.nan),
                           np.full(model.net.n_bus, np.nan), np.nan, np.nan,
                           sol.status)
    y = sol.primal
    slack = float(np.max(np.abs(y[model.penalty_idx]))) if len(model.penalty_idx) else 0.0
    cost = (sol.objective_value + float(np.sum(p_w_mw)) / base) * base
    return SecondStage(p_g=y[model.idx["p_g"]] * base,
                       q_g=y[model.idx["q_g"]] * base,
                       theta=y[model.idx["theta"]].copy(),
                       v=y[model.idx["v"]].copy(),
                       cost=cost, slack_use=slack,
                       status="optimal" if slack <= SLACK_TOL else "infeasible",
                       w_del=y[model.idx["w_del"]] * base)


def build_inner_milp(model: RestorationModel, x_star, phi: UncertaintySet,
                     M: float | None = None):
    """Dualized inner worst-case problem as a MILP.

    Returns (MixedIntegerProgram, meta); meta maps vertex binaries back to
    uncertain dimensions for solution extraction.  Only loads picked in
    x_star couple into the model; every wind farm always does.
    """
    base = model.net.base_mva
    xl = np.asarray(x_star, float)
    n_eq, n_ineq = model.n_eq, model.n_ineq
    picked = [i for i in range(len(xl)) if xl[i] > 0.5]
    nw = len(phi.wind_low)

    dims = []  # (kind, index, p_low_pu, p_up_pu, d_col)
    for i in picked:
        dims.append(("load", i, phi.load_low[i] / base, phi.load_up[i] / base,
                     model.d0[:, i]))
    for w in range(nw):
        dims.append(("wind", w, phi.wind_low[w] / base, phi.wind_up[w] / base,
                     model.e_mat[:, w]))

    n_base = n_eq + n_ineq
    mu_forms = [np.concatenate([d, np.zeros(n_ineq)]) for *_, d in dims]
    cap = model.dual_cap if model.dual_cap is not None else np.full(n_eq, PENALTY)
    if M is None:
        # bound |d^T mu| per dimension through the per-row multiplier caps
        # (only the equality part of d is nonzero for uncertain dimensions)
        capM = np.where(np.isfinite(cap), cap, 0.0)  # d is zero on uncapped rows
        M = [1.05 * max(1.0, np.abs(d[:n_eq]) @ capM) for *_, d in dims]
    elif np.isscalar(M):
        M = [float(M)] * len(dims)
    blk = linearize_bilinear(mu_forms, M, n_base) if dims else None

    n_vars = blk.n_vars if blk else n_base
    # dual feasibility: C^T mu + H^T lam = -c
    a_eq = np.zeros((model.n_y, n_vars))
    a_eq[:, :n_eq] = model.c_mat.T
    a_eq[:, n_eq:n_base] = model.h_mat.T
    b_eq = -model.c_y
    rows_eq = [a_eq]
    rhs_eq = [b_eq]
    a_ub = None
    b_ub = None
    if blk:
        rows_eq.append(blk.a_eq)
        rhs_eq.append(blk.b_eq)
        a_ub, b_ub = blk.a_ub, blk.b_ub
    a_eq = np.vstack(rows_eq)
    b_eq = np.concatenate(rhs_eq)

    c = np.zeros(n_vars)
    c[:n_eq] = model.f_vec  # F mu
    c[n_eq:n_base] = model.i_vec  # I lam
    if blk:
        for k, (kind, _, plo, pup, _) in enumerate(dims):
            c[blk.a_plus(k)] = pup
            c[blk.a_minus(k)] = plo
            if kind == "wind":  # the sum(p_W) part of the inner objective
                c[blk.b_plus(k)] += pup
                c[blk.b_minus(k)] += plo
                # the wind coordinate is objective-flat whenever no energy
                # is curtailed; bias ties toward the low (conservative) end
                c[blk.b_plus(k)] -= 1e-7

    # multiplier bounds from the elastic columns keep the relaxation tight
    bounds = [(-r, r) if np.isfinite(r) else (None, None) for r in cap]
    bounds += [(0.0, None)] * n_ineq
    int_vars = []
    if blk:
        bounds += [(-Mi, Mi) for Mi in M] * 2 + [(0.0, 1.0)] * (2 * blk.k)
        int_vars = [blk.b_plus(k) for k in range(blk.k)] + \
                   [blk.b_minus(k) for k in range(blk.k)]
    lp = LinearProgram(c=c, sense="max", a_eq=a_eq, b_eq=b_eq,
                       a_ub=a_ub, b_ub=b_ub, bounds=bounds)
    meta = {"dims": dims, "blk": blk, "picked": picked, "M": M}
    return MixedIntegerProgram(base=lp, integer_vars=int_vars), meta


def extract_vertex(sol_primal, meta, phi: UncertaintySet, x_star):
    """Vertex (MW arrays over all loads and winds) from inner-MILP binaries.

    Uncoupled dimensions default to the adversarial direction: upper bound
    for loads, lower for wind.
    """
    nl, nw = len(phi.load_low), len(phi.wind_low)
    p_l = phi.load_up.copy()
    p_w = phi.wind_low.copy()
    blk = meta["blk"]
    if blk is not None:
        for k, (kind, i, *_ ) in enumerate(meta["dims"]):
            up = sol_primal[blk.b_plus(k)] > 0.5
            if kind == "load":
                p_l[i] = phi.load_up[i] if up else phi.load_low[i]
            else:
                p_w[i] = phi.wind_up[i] if up else phi.wind_low[i]
    return p_l, p_w


def solve_worst_case(model: RestorationModel, x_star, phi: UncertaintySet,
                     M: float | None = None, gap_tol: float = 1e-9):
    """Inner worst case for a fixed decision: MILP solve, vertex extraction,
    and exact re-evaluation of the dispatch at that vertex."""
    mip, meta = build_inner_milp(model, x_star, phi, M)
    msol = solve_milp(mip, gap_tol)
    if msol.status != "optimal":
        raise RuntimeError(f"inner worst-case MILP: {msol.status}")
    p_l, p_w = extract_vertex(msol.primal, meta, phi, x_star)
    stage = evaluate_second_stage(model, x_star, p_l, p_w)
    base = model.net.base_mva
    wc = WorstCase(p_l=p_l * np.asarray(x_star, float), p_w=p_w,
                   p_g=stage.p_g, q_g=stage.q_g, objective=stage.cost)
    return wc, (p_l, p_w), msol.objective_value * base, stage


def worst_case_windenum(model: RestorationModel, x, phi: UncertaintySet,
                        max_wind_dims: int = 10):
    """Fast exact worst case for models whose dispatch cost is monotone
    increasing in every picked load (generation cost ~uniform and elastic
    penalties dominating): loads sit at their upper bounds and only the
    wind vertices need enumeration.  Ties prefer lower wind (conservative
    for frequency).  Equivalence with the general MILP is covered by tests
    on the models that use this path.
    """
    nw = len(phi.wind_low)
    if nw > max_wind_dims:
        raise DimensionTooLarge(f"{nw} wind dimensions > {max_wind_dims}")
    xl = np.asarray(x, float)
    p_l = phi.load_up.copy()
    best = None
    for mask in sorted(range(1 << nw), key=lambda m: (bin(m).count("1"), m)):
        p_w = np.where([(mask >> w) & 1 for w in range(nw)],
                       phi.wind_up, phi.wind_low)
        stage = evaluate_second_stage(model, xl, p_l, p_w)
        if best is None or stage.cost > best[0] + 1e-9:
            best = (stage.cost, p_w, stage)
    cost, p_w, stage = best
    wc = WorstCase(p_l=p_l * xl, p_w=p_w, p_g=stage.p_g, q_g=stage.q_g,
                   objective=cost)
    return wc, stage


def worst_case_bruteforce(model: RestorationModel, x, phi: UncertaintySet,
                          max_dims: int = 12, groups=None) -> WorstCase:
    """Exhaustive vertex enumeration oracle.

    groups optionally maps uncertain dimensions into move-together clusters
    (list of lists of ('load'|'wind', index)); without it every picked load
    and every wind farm is its own dimension.
    """
    xl = np.asarray(x, float)
    if groups is None:
        groups = [[("load", i)] for i in range(len(phi.load_low)) if xl[i] > 0.5]
        groups += [[("wind", w)] for w in range(len(phi.wind_low))]
    if len(groups) > max_dims:
        raise DimensionTooLarge(f"{len(groups)} vertex dimensions > {max_dims}")

    best = None
    for mask in range(1 << len(groups)):
        p_l = phi.load_low.copy()
        p_w = phi.wind_low.copy()
        for gi, members in enumerate(groups):
            hi = bool(mask >> gi & 1)
            for kind, i in members:
                if kind == "load":
                    p_l[i] = phi.load_up[i] if hi else phi.load_low[i]
                else:
                    p_w[i] = phi.wind_up[i] if hi else phi.wind_low[i]
        stage = evaluate_second_stage(model, xl, p_l, p_w)
        if best is None or stage.cost > best[0]:
            best = (stage.cost, p_l.copy(), p_w.copy(), stage)
    cost, p_l, p_w, stage = best
    return WorstCase(p_l=p_l * xl, p_w=p_w, p_g=stage.p_g, q_g=stage.q_g,
                     objective=cost)


@dataclass
class CCGResult:
    decision: np.ndarray  # binary per load block
    worst_case: WorstCase
    dispatch: SecondStage
    lower_bounds: list[float]  # MW-scale objective trace
    upper_bounds: list[float]
    iterations: int
    converged: bool
    restored_mw: float


def solve_ccg(net: PowerNetwork, limits: SecurityLimits, phi: UncertaintySet,
              gap_tol: float = 1e-4, t: float = 30.0,
              fixed_p=None, fixed_q=None, fixed_ones=None, exclude=None,
              pickup_cap_mw: float | None = None, max_iter: int = 50,
              model: RestorationModel | None = None) -> CCGResult:
    """Column-and-constraint generation over the master decision problem and
    the dualized inner worst case.

    gap_tol is absolute on the MW-scale objective.  fixed_ones lists load
    blocks that must stay picked (multi-step monotonicity); exclude lists
    blocks removed from the decision (already restored and carried through
    fixed_p instead); pickup_cap_mw caps the expected amount of *new*
    pickup (frequency-derived bound).
    """
    if model is None:
        model = assemble_canonical(net, limits, t=t, fixed_p=fixed_p, fixed_q=fixed_q)
    base = net.base_mva
    nl = len(net.load_blocks)
    e_l = np.array([l.expected_amount for l in net.load_blocks]) / base
    weights = np.array([l.priority_weight for l in net.load_blocks])
    fixed_ones = set(fixed_ones or [])
    exclude = set(exclude or [])
    if fixed_ones & exclude:
        raise ValueError("a load cannot be both fixed-on and excluded")

    # scenario pool starts at the expectation point (midpoint of the set)
    scen = [((phi.load_low + phi.load_up) / 2.0, (phi.wind_low + phi.wind_up) / 2.0)]
    seen = set()

    lb_trace, ub_trace = [], []
    ub = np.inf
    incumbent = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_sol, theta_val, master_obj = _solve_master(
            model, scen, e_l, weights, fixed_ones, exclude, pickup_cap_mw)
        lb = master_obj * base
        wc, vertex, inner_val, stage = solve_worst_case(model, x_sol, phi)
        cand = (-(weights * e_l) @ x_sol) * base + max(inner_val, stage.cost)
        if cand < ub - 1e-12:
            ub = cand
            incumbent = (x_sol, wc, stage)
        lb_trace.append(lb)
        ub_trace.append(ub)
        if ub - lb <= gap_tol:
            converged = True
            break
        key = (tuple(np.round(vertex[0], 9)), tuple(np.round(vertex[1], 9)))
        if key in seen:  # vertex pool exhausted for this trajectory
            converged = ub - lb <= max(gap_tol, 1e-6 * (1 + abs(ub)))
            break
        seen.add(key)
        scen.append(vertex)

    x_best, wc_best, stage_best = incumbent
    restored = float(np.sum(np.array([l.expected_amount for l in net.load_blocks]) * x_best))
    return CCGResult(decision=x_best, worst_case=wc_best, dispatch=stage_best,
                     lower_bounds=lb_trace, upper_bounds=ub_trace,
                     iterations=it, converged=converged, restored_mw=restored)


def _solve_master(model, scenarios, e_l, weights, fixed_ones, exclude,
                  pickup_cap_mw):
    """Master MILP over x and one recourse copy per accumulated scenario."""
    net = model.net
    base = net.base_mva
    nl = len(e_l)
    n_y = model.n_y
    L = len(scenarios)
    n_vars = nl + 1 + L * n_y  # x | theta_cost | Y^1..Y^L
    th = nl

    def ysl(l):
        return slice(nl + 1 + l * n_y, nl + 1 + (l + 1) * n_y)

    c = np.zeros(n_vars)
    c[:nl] = -weights * e_l
    c[th] = 1.0

    rows_eq, rhs_eq, rows_ub, rhs_ub = [], [], [], []
    for l, (p_l_mw, p_w_mw) in enumerate(scenarios):
        pl = np.asarray(p_l_mw, float) / base
        pw = np.asarray(p_w_mw, float) / base
        blk_eq = np.zeros((model.n_eq, n_vars))
        blk_eq[:, :nl] = model.d0 * pl[None, :]
        blk_eq[:, ysl(l)] = model.c_mat
        rows_eq.append(blk_eq)
        rhs_eq.append(-(model.e_mat @ pw + model.f_vec))
        blk_ub = np.zeros((model.n_ineq, n_vars))
        blk_ub[:, ysl(l)] = model.h_mat
        rows_ub.append(blk_ub)
        rhs_ub.append(-model.i_vec)
        cut = np.zeros(n_vars)
        cut[ysl(l)] = model.c_y
        cut[th] = -1.0
        rows_ub.append(cut[None, :])
        rhs_ub.append(np.array([-pw.sum()]))

    if pickup_cap_mw is not None:
        row = np.zeros(n_vars)
        for i in range(nl):
            if i not in fixed_ones:
                row[i] = e_l[i]
        rows_ub.append(row[None, :])
        rhs_ub.append(np.array([pickup_cap_mw / base]))

    bounds = [(0.0, 1.0)] * nl + [(0.0, None)] + [(None, None)] * (L * n_y)
    for i in fixed_ones:
        bounds[i] = (1.0, 1.0)
    for i in exclude:
        bounds[i] = (0.0, 0.0)

    lp = LinearProgram(c=c, a_eq=np.vstack(rows_eq), b_eq=np.concatenate(rhs_eq),
                       a_ub=np.vstack(rows_ub), b_ub=np.concatenate(rhs_ub),
                       bounds=bounds)
    sol = solve_milp(MixedIntegerProgram(base=lp, integer_vars=list(range(nl))),
                     gap_tol=1e-9)
    if sol.status != "optimal":
        raise RuntimeError(f"CCG master: {sol.status}")
    x = np.round(sol.primal[:nl])
    return x, float(sol.primal[th]), float(sol.objective_value)
