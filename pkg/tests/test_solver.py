"""LP/MILP layer tests against an independent interior-point oracle (cvxopt)
and exhaustive enumeration."""

import itertools

import numpy as np
import pytest

from gridrestore.solver import (LinearProgram, MixedIntegerProgram,
                                dual_objective, linearize_bilinear,
                                reset_solve_counter, solve_count, solve_lp,
                                solve_milp, write_lp_text)


def _random_feasible_lp(rng, n=6, m_eq=2, m_ub=4):
    """LP built around a known feasible point so feasibility is guaranteed."""
    x0 = rng.uniform(-1.0, 1.0, n)
    c = rng.uniform(-1.0, 1.0, n)
    a_eq = rng.uniform(-1.0, 1.0, (m_eq, n))
    b_eq = a_eq @ x0
    a_ub = rng.uniform(-1.0, 1.0, (m_ub, n))
    b_ub = a_ub @ x0 + rng.uniform(0.1, 1.0, m_ub)
    bounds = [(-5.0, 5.0)] * n  # compact, so never unbounded
    return LinearProgram(c=c, a_eq=a_eq, b_eq=b_eq, a_ub=a_ub, b_ub=b_ub,
                         bounds=bounds)


def _cvxopt_solve(lp: LinearProgram):
    """Independent oracle: cvxopt's conelp on the same data."""
    from cvxopt import matrix, solvers
    n = lp.n_vars
    lo = np.array([b[0] for b in lp.bounds], float)
    hi = np.array([b[1] for b in lp.bounds], float)
    G = np.vstack([lp.a_ub if lp.a_ub is not None else np.zeros((0, n)),
                   np.eye(n), -np.eye(n)])
    h = np.concatenate([lp.b_ub if lp.b_ub is not None else np.zeros(0),
                        hi, -lo])
    kw = {}
    if lp.a_eq is not None:
        kw = {"A": matrix(lp.a_eq), "b": matrix(lp.b_eq)}
    solvers.options["show_progress"] = False
    sol = solvers.lp(matrix(lp.c), matrix(G), matrix(h), **kw)
    assert sol["status"] == "optimal"
    return float(sol["primal objective"]), np.array(sol["x"]).ravel()


class TestLPAgainstOracle:
    @pytest.mark.parametrize("seed", range(12))
    def test_objective_matches_cvxopt(self, seed):
        lp = _random_feasible_lp(np.random.default_rng(seed))
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        obj_oracle, _ = _cvxopt_solve(lp)
        assert sol.objective_value == pytest.approx(obj_oracle, rel=1e-5,
                                                    abs=1e-5)

    @pytest.mark.parametrize("seed", range(8))
    def test_duals_satisfy_stationarity(self, seed):
        lp = _random_feasible_lp(np.random.default_rng(100 + seed))
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        # c + A_eq^T mu + A_ub^T lam - l + u = 0
        resid = (lp.c + lp.a_eq.T @ sol.duals_eq + lp.a_ub.T @ sol.duals_ineq
                 - sol.duals_lb + sol.duals_ub)
        np.testing.assert_allclose(resid, 0.0, atol=1e-7)

    @pytest.mark.parametrize("seed", range(8))
    def test_strong_duality(self, seed):
        lp = _random_feasible_lp(np.random.default_rng(200 + seed))
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert dual_objective(lp, sol) == pytest.approx(sol.objective_value,
                                                        abs=1e-7)

    def test_max_sense(self):
        lp = LinearProgram(c=[1.0, 2.0], sense="max", a_ub=[[1.0, 1.0]],
                           b_ub=[3.0], bounds=[(0, None), (0, None)])
        sol = solve_lp(lp)
        assert sol.objective_value == pytest.approx(6.0)
        np.testing.assert_allclose(sol.primal, [0.0, 3.0], atol=1e-8)

    def test_infeasible_status(self):
        lp = LinearProgram(c=[1.0], a_eq=[[1.0]], b_eq=[2.0],
                           bounds=[(0.0, 1.0)])
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded_status(self):
        lp = LinearProgram(c=[-1.0], bounds=[(0.0, None)])
        assert solve_lp(lp).status == "unbounded"

    def test_validation_errors(self):
        with pytest.raises(ValueError):
            LinearProgram(c=[1.0, 1.0], a_eq=[[1.0]], b_eq=[0.0])
        with pytest.raises(ValueError):
            LinearProgram(c=[1.0], bounds=[(2.0, 1.0)])
        with pytest.raises(ValueError):
            LinearProgram(c=[1.0], sense="sideways")


class TestMILP:
    @pytest.mark.parametrize("seed", range(8))
    def test_knapsack_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        n = 8
        value = rng.uniform(1.0, 10.0, n)
        weight = rng.uniform(1.0, 5.0, n)
        cap = 0.4 * weight.sum()
        lp = LinearProgram(c=value, sense="max", a_ub=[weight], b_ub=[cap],
                           bounds=[(0.0, 1.0)] * n)
        mip = MixedIntegerProgram(base=lp, integer_vars=list(range(n)))
        sol = solve_milp(mip)
        assert sol.status == "optimal"
        best = max(value @ np.array(bits)
                   for bits in itertools.product([0, 1], repeat=n)
                   if weight @ np.array(bits) <= cap)
        assert sol.objective_value == pytest.approx(best, rel=1e-9)
        np.testing.assert_allclose(sol.primal, np.round(sol.primal))

    def test_integer_bounds_validated(self):
        lp = LinearProgram(c=[1.0], bounds=[(0.0, 2.0)])
        with pytest.raises(ValueError):
            MixedIntegerProgram(base=lp, integer_vars=[0])


class TestBigMBlock:
    @pytest.mark.parametrize("seed", range(6))
    def test_products_pinned_at_every_binary_assignment(self, seed):
        """For every binary assignment with B+ + B- = 1, the rows force
        (A+, A-) = (B+ w, B- w); verified by LP maximization of +-A."""
        rng = np.random.default_rng(seed)
        n_base, k = 3, 2
        forms = [rng.uniform(-1.0, 1.0, n_base) for _ in range(k)]
        M = 50.0
        blk = linearize_bilinear(forms, M, n_base)
        x_base = rng.uniform(-2.0, 2.0, n_base)
        for bits in itertools.product([0, 1], repeat=k):
            # fix x_base and binaries, check each A variable is forced
            for i in range(k):
                w = float(forms[i] @ x_base)
                expect = {blk.a_plus(i): bits[i] * w,
                          blk.a_minus(i): (1 - bits[i]) * w}
                for a_idx, val in expect.items():
                    for sense in ("min", "max"):
                        c = np.zeros(blk.n_vars)
                        c[a_idx] = 1.0
                        bounds = [(xv, xv) for xv in x_base]
                        bounds += [(-M, M)] * (2 * k)
                        bset = []
                        for j in range(k):
                            bset += [(float(bits[j]), float(bits[j]))]
                        bset2 = [(1.0 - float(bits[j]), 1.0 - float(bits[j]))
                                 for j in range(k)]
                        bounds += bset + bset2
                        lp = LinearProgram(c=c, sense=sense, a_eq=blk.a_eq,
                                           b_eq=blk.b_eq, a_ub=blk.a_ub,
                                           b_ub=blk.b_ub, bounds=bounds)
                        sol = solve_lp(lp)
                        assert sol.status == "optimal"
                        assert sol.primal[a_idx] == pytest.approx(val, abs=1e-6)

    def test_per_term_big_m(self):
        forms = [np.array([1.0, 0.0]), np.array([0.0, 2.0])]
        blk = linearize_bilinear(forms, [3.0, 7.0], 2)
        assert blk.k == 2
        with pytest.raises(ValueError):
            linearize_bilinear(forms, [3.0], 2)
        with pytest.raises(ValueError):
            linearize_bilinear(forms, [3.0, -1.0], 2)


class TestCounterAndDump:
    def test_solve_counter_counts(self):
        reset_solve_counter()
        lp = LinearProgram(c=[1.0], bounds=[(0.0, 1.0)])
        solve_lp(lp)
        solve_lp(lp)
        mip = MixedIntegerProgram(base=lp, integer_vars=[0])
        solve_milp(mip)
        assert solve_count() == 3

    def test_lp_text_dump(self, tmp_path):
        lp = LinearProgram(c=[1.0, -2.0], a_eq=[[1.0, 1.0]], b_eq=[1.0],
                           a_ub=[[1.0, 0.0]], b_ub=[0.7],
                           bounds=[(0.0, None), (None, 1.0)])
        path = tmp_path / "model.lp"
        write_lp_text(lp, path)
        text = path.read_text()
        assert "Minimize" in text and "Subject To" in text and "Bounds" in text
