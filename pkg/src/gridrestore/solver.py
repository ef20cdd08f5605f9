"""LP / MILP solving layer with dual values, plus the exact big-M encoding
of binary-times-continuous products.

Backed by scipy's HiGHS interface.  Dual conventions (minimization form):

    L = c x + mu^T (A_eq x - b_eq) + lam^T (A_ub x - b_ub)
        + l^T (lo - x) + u^T (x - hi),    lam, l, u >= 0

so stationarity reads c + A_eq^T mu + A_ub^T lam - l + u = 0 and strong
duality is  c x* = -mu b_eq - lam b_ub + l lo - u hi.

Every solve increments a module-level counter; the online strategy path is
required to leave it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp
from scipy.sparse import csr_matrix

# counts every LP/MILP solve; see reset_solve_counter / solve_count
_SOLVE_COUNT = 0


def reset_solve_counter() -> None:
    global _SOLVE_COUNT
    _SOLVE_COUNT = 0


def solve_count() -> int:
    return _SOLVE_COUNT


def _bump():
    global _SOLVE_COUNT
    _SOLVE_COUNT += 1


@dataclass
class LinearProgram:
    c: np.ndarray
    sense: str = "min"  # or "max"
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_ub: np.ndarray | None = None  # rows in <= form
    b_ub: np.ndarray | None = None
    bounds: list[tuple[float | None, float | None]] | None = None  # default x >= 0 is NOT assumed; default is free

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, float))
        n = len(self.c)
        for attr in ("a_eq", "a_ub"):
            m = getattr(self, attr)
            if m is not None:
                m = np.atleast_2d(np.asarray(m, float))
                setattr(self, attr, m)
                if m.shape[1] != n:
                    raise ValueError(f"{attr} column count != len(c)")
        if self.bounds is None:
            self.bounds = [(None, None)] * n
        if len(self.bounds) != n:
            raise ValueError("bounds length != len(c)")
        for lo, hi in self.bounds:
            if lo is not None and hi is not None and lo > hi:
                raise ValueError("variable bound lo > hi")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")

    @property
    def n_vars(self) -> int:
        return len(self.c)


@dataclass
class LPSolution:
    primal: np.ndarray
    objective_value: float
    duals_eq: np.ndarray
    duals_ineq: np.ndarray  # >= 0
    duals_lb: np.ndarray  # >= 0
    duals_ub: np.ndarray  # >= 0
    status: str  # optimal | infeasible | unbounded | error


@dataclass
class MixedIntegerProgram:
    base: LinearProgram
    integer_vars: list[int] = field(default_factory=list)

    def __post_init__(self):
        n = self.base.n_vars
        for i in self.integer_vars:
            if not 0 <= i < n:
                raise ValueError("integer var index out of range")
            lo, hi = self.base.bounds[i]
            if lo is None or hi is None or lo < -1e-9 or hi > 1 + 1e-9:
                raise ValueError("integer vars must be binaries with bounds in [0,1]")


@dataclass
class MILPSolution:
    primal: np.ndarray
    objective_value: float
    status: str
    node_count: int
    gap: float


_STATUS = {0: "optimal", 1: "error", 2: "infeasible", 3: "unbounded", 4: "error"}


def solve_lp(lp: LinearProgram) -> LPSolution:
    """Solve an LP; on optimality the duals satisfy the module's stationarity
    and strong-duality identities to solver tolerance."""
    _bump()
    sign = 1.0 if lp.sense == "min" else -1.0
    a_ub = csr_matrix(lp.a_ub) if lp.a_ub is not None else None
    a_eq = csr_matrix(lp.a_eq) if lp.a_eq is not None else None
    res = linprog(sign * lp.c, A_ub=a_ub, b_ub=lp.b_ub,
                  A_eq=a_eq, b_eq=lp.b_eq, bounds=lp.bounds,
                  method="highs")
    status = _STATUS.get(res.status, "error")
    n = lp.n_vars
    if status != "optimal":
        z = np.zeros(0)
        return LPSolution(np.full(n, np.nan), np.nan, z, z, z, z, status)
    # scipy marginals are d(obj)/d(rhs); convert to Lagrangian multipliers
    mu = -res.eqlin.marginals if lp.a_eq is not None else np.zeros(0)
    lam = -res.ineqlin.marginals if lp.a_ub is not None else np.zeros(0)
    lb = res.lower.marginals.copy()
    ub = -res.upper.marginals
    return LPSolution(primal=res.x, objective_value=sign * res.fun,
                      duals_eq=mu, duals_ineq=np.maximum(lam, 0.0),
                      duals_lb=np.maximum(lb, 0.0), duals_ub=np.maximum(ub, 0.0),
                      status="optimal")


def dual_objective(lp: LinearProgram, sol: LPSolution) -> float:
    """Dual objective of the minimization form, for strong-duality checks."""
    val = 0.0
    if lp.a_eq is not None:
        val -= sol.duals_eq @ lp.b_eq
    if lp.a_ub is not None:
        val -= sol.duals_ineq @ lp.b_ub
    for i, (lo, hi) in enumerate(lp.bounds):
        if lo is not None:
            val += sol.duals_lb[i] * lo
        if hi is not None:
            val -= sol.duals_ub[i] * hi
    return val if lp.sense == "min" else -val


def solve_milp(mip: MixedIntegerProgram, gap_tol: float = 1e-6) -> MILPSolution:
    """Branch-and-bound solve of a binary MILP to the given relative gap."""
    _bump()
    lp = mip.base
    sign = 1.0 if lp.sense == "min" else -1.0
    integrality = np.zeros(lp.n_vars)
    integrality[list(mip.integer_vars)] = 1
    constraints = []
    if lp.a_eq is not None:
        constraints.append(LinearConstraint(csr_matrix(lp.a_eq), lp.b_eq, lp.b_eq))
    if lp.a_ub is not None:
        constraints.append(LinearConstraint(csr_matrix(lp.a_ub), -np.inf, lp.b_ub))
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in lp.bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in lp.bounds])
    res = milp(sign * lp.c, constraints=constraints,
               bounds=Bounds(lo, hi), integrality=integrality,
               options={"mip_rel_gap": gap_tol})
    status = _STATUS.get(res.status, "error")
    if status != "optimal" or res.x is None:
        return MILPSolution(np.full(lp.n_vars, np.nan), np.nan, status,
                            int(getattr(res, "mip_node_count", 0) or 0), np.inf)
    x = res.x.copy()
    x[list(mip.integer_vars)] = np.round(x[list(mip.integer_vars)])
    return MILPSolution(primal=x, objective_value=float(sign * res.fun),
                        status="optimal",
                        node_count=int(res.mip_node_count or 0),
                        gap=float(res.mip_gap if res.mip_gap is not None else 0.0))


# ---------------------------------------------------------------------------
# big-M linearization of binary * continuous products
# ---------------------------------------------------------------------------

@dataclass
class BigMBlock:
    """Constraint rows (over an extended variable vector) that pin each
    auxiliary pair (A+, A-) to the product of its binary selector and a
    continuous linear form w = d^T x_base.

    Extended layout: [x_base (n_base) | A+ (k) | A- (k) | B+ (k) | B- (k)].
    """
    n_base: int
    k: int
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.n_base + 4 * self.k

    def a_plus(self, i: int) -> int:
        return self.n_base + i

    def a_minus(self, i: int) -> int:
        return self.n_base + self.k + i

    def b_plus(self, i: int) -> int:
        return self.n_base + 2 * self.k + i

    def b_minus(self, i: int) -> int:
        return self.n_base + 3 * self.k + i


def linearize_bilinear(mu_forms, M, n_base: int) -> BigMBlock:
    """Emit the exact big-M rows for products of a vertex-selection binary
    pair with continuous forms.

    mu_forms: sequence of length-n_base coefficient vectors d_i defining
    w_i = d_i^T x_base.  M is a scalar or per-term sequence with
    M_i >= max attainable |w_i|; for every binary assignment the feasible
    (A+, A-) is then the singleton (B+ w, B- w).  The redundant-but-tight
    identity A+ + A- = w is emitted as well to strengthen the relaxation.
    """
    k = len(mu_forms)
    Ms = np.full(k, float(M)) if np.isscalar(M) else np.asarray(M, float)
    if len(Ms) != k or np.any(Ms <= 0):
        raise ValueError("need one positive big-M constant per term")
    n = n_base + 4 * k
    blk = BigMBlock(n_base, k, None, None, None, None)
    rows_ub, rhs_ub = [], []
    rows_eq, rhs_eq = [], []
    for i, d in enumerate(mu_forms):
        d = np.asarray(d, float)
        Mi = Ms[i]
        for a_idx, b_idx in ((blk.a_plus(i), blk.b_plus(i)),
                             (blk.a_minus(i), blk.b_minus(i))):
            # A - M B <= 0   and   -A - M B <= 0
            for s in (1.0, -1.0):
                r = np.zeros(n)
                r[a_idx] = s
                r[b_idx] = -Mi
                rows_ub.append(r)
                rhs_ub.append(0.0)
            # +-(A - w) + M B <= M
            for s in (1.0, -1.0):
                r = np.zeros(n)
                r[a_idx] = s
                r[:n_base] -= s * d
                r[b_idx] = Mi
                rows_ub.append(r)
                rhs_ub.append(Mi)
        r = np.zeros(n)
        r[blk.b_plus(i)] = 1.0
        r[blk.b_minus(i)] = 1.0
        rows_eq.append(r)
        rhs_eq.append(1.0)
        # A+ + A- = w  (implied at integer points, tightens the relaxation)
        r = np.zeros(n)
        r[blk.a_plus(i)] = 1.0
        r[blk.a_minus(i)] = 1.0
        r[:n_base] -= d
        rows_eq.append(r)
        rhs_eq.append(0.0)
    blk.a_eq = np.array(rows_eq)
    blk.b_eq = np.array(rhs_eq)
    blk.a_ub = np.array(rows_ub)
    blk.b_ub = np.array(rhs_ub)
    return blk


def write_lp_text(lp: LinearProgram, path: str | Path) -> None:
    """Dump a model in the plain LP text format for external cross-checks."""
    lines = ["Minimize" if lp.sense == "min" else "Maximize",
             " obj: " + _expr(lp.c), "Subject To"]
    if lp.a_eq is not None:
        for i, (row, b) in enumerate(zip(lp.a_eq, lp.b_eq)):
            lines.append(f" e{i}: {_expr(row)} = {b:.12g}")
    if lp.a_ub is not None:
        for i, (row, b) in enumerate(zip(lp.a_ub, lp.b_ub)):
            lines.append(f" i{i}: {_expr(row)} <= {b:.12g}")
    lines.append("Bounds")
    for j, (lo, hi) in enumerate(lp.bounds):
        lo_s = "-inf" if lo is None else f"{lo:.12g}"
        hi_s = "+inf" if hi is None else f"{hi:.12g}"
        lines.append(f" {lo_s} <= x{j} <= {hi_s}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def _expr(coeffs) -> str:
    terms = [f"{c:+.12g} x{j}" for j, c in enumerate(coeffs) if c != 0]
    return " ".join(terms) if terms else "0 x0"
