"""Robust-optimization tests: the dualized inner problem against exhaustive
vertex enumeration, the fast wind-enumeration labeler against the general
MILP, and the outer loop against double brute force on a small instance."""

import itertools

import numpy as np
import pytest

from gridrestore.net import SecurityLimits
from gridrestore.pf import load_pickup_upper_bound
from gridrestore.robust import (DimensionTooLarge, UncertaintySet,
                                assemble_canonical, evaluate_second_stage,
                                solve_ccg, solve_worst_case,
                                worst_case_bruteforce, worst_case_windenum)
from gridrestore.worstcase_dnn import training_model

from conftest import toy_limits, toy_network


def _toy_model(seed, n_bus=4, n_gen=2, n_wind=1, n_load=3, **kw):
    net = toy_network(n_bus=n_bus, n_gen=n_gen, n_wind=n_wind, n_load=n_load,
                      seed=seed, **kw)
    limits = toy_limits()
    model = assemble_canonical(net, limits, t=30.0)
    phi = UncertaintySet.from_network(net, 0.10, 0.20)
    return net, limits, model, phi


class TestSecondStage:
    def test_ample_capacity_serves_exactly(self):
        net, limits, model, phi = _toy_model(0)
        x = np.ones(len(net.load_blocks))
        p_l = np.array([l.expected_amount for l in net.load_blocks])
        p_w = np.array([w.expected_output for w in net.wind_farms])
        st = evaluate_second_stage(model, x, p_l, p_w)
        assert st.status == "optimal"
        assert st.slack_use <= 1e-6
        # generation + delivered wind covers the load (losses are zero in
        # the flat linearization)
        assert st.p_g.sum() + st.w_del.sum() == pytest.approx(p_l.sum(),
                                                              abs=1e-5)

    def test_cost_monotone_in_load_level(self):
        """The labeling shortcut rests on this: raising any picked load's
        realization never lowers the dispatch cost."""
        net, limits, model, phi = _toy_model(1)
        x = np.ones(len(net.load_blocks))
        p_w = phi.wind_low.copy()
        lo = evaluate_second_stage(model, x, phi.load_low, p_w).cost
        hi = evaluate_second_stage(model, x, phi.load_up, p_w).cost
        assert hi >= lo - 1e-9
        # one-coordinate flip is also monotone
        p_mid = phi.load_low.copy()
        p_mid[0] = phi.load_up[0]
        mid = evaluate_second_stage(model, x, p_mid, p_w).cost
        assert lo - 1e-9 <= mid <= hi + 1e-9

    def test_zero_pickup_cost_is_wind_sum(self):
        net, limits, model, phi = _toy_model(2)
        x = np.zeros(len(net.load_blocks))
        p_w = phi.wind_low.copy()
        st = evaluate_second_stage(model, x, phi.load_up, p_w)
        assert st.status == "optimal"
        assert st.cost == pytest.approx(p_w.sum(), abs=1e-6)


class TestInnerProblem:
    @pytest.mark.parametrize("seed", range(10))
    def test_milp_equals_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        net, limits, model, phi = _toy_model(
            seed, n_bus=int(rng.integers(3, 6)), n_gen=int(rng.integers(2, 4)),
            n_wind=int(rng.integers(1, 3)), n_load=int(rng.integers(2, 5)))
        x = (rng.random(len(net.load_blocks)) < 0.7).astype(float)
        wc, vertex, inner_val, stage = solve_worst_case(model, x, phi)
        brute = worst_case_bruteforce(model, x, phi)
        scale = max(1.0, abs(brute.objective))
        assert abs(stage.cost - brute.objective) / scale < 1e-5
        assert abs(inner_val - brute.objective) / scale < 1e-4

    def test_inner_value_matches_reevaluation(self):
        net, limits, model, phi = _toy_model(3)
        x = np.ones(len(net.load_blocks))
        wc, vertex, inner_val, stage = solve_worst_case(model, x, phi)
        # strong duality: dualized MILP optimum == primal dispatch cost
        assert inner_val == pytest.approx(stage.cost, abs=1e-4)

    def test_vertex_on_bounds(self):
        net, limits, model, phi = _toy_model(4)
        x = np.ones(len(net.load_blocks))
        wc, (p_l, p_w), _, _ = solve_worst_case(model, x, phi)
        for i in range(len(p_l)):
            assert p_l[i] in (phi.load_low[i], phi.load_up[i])
        for w in range(len(p_w)):
            assert p_w[w] in (phi.wind_low[w], phi.wind_up[w])


class TestWindEnumLabeler:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_general_milp_on_training_model(self, seed):
        """The fast labeler must agree with the dualized MILP on the merit-
        cost dispatch model it is used with (agreement measured on the exact
        re-evaluated stage cost; the raw MILP objective carries its own
        big-M / tie-break slop of ~1e-4)."""
        rng = np.random.default_rng(seed)
        net = toy_network(n_bus=5, n_gen=3, n_wind=2, n_load=4, seed=seed)
        model = training_model(net, toy_limits())
        phi = UncertaintySet.from_network(net, 0.10, 0.20)
        x = (rng.random(len(net.load_blocks)) < 0.7).astype(float)
        wc_fast, stage_fast = worst_case_windenum(model, x, phi)
        wc_milp, vertex, inner_val, stage_milp = solve_worst_case(model, x, phi)
        # same optimum; the vertices themselves may differ when curtailment
        # makes the load direction objective-flat
        assert wc_fast.objective == pytest.approx(stage_milp.cost, abs=1e-4)
        assert wc_fast.objective >= stage_milp.cost - 1e-4

    def test_loads_fixed_at_upper(self):
        net = toy_network(n_bus=4, seed=9)
        model = training_model(net, toy_limits())
        phi = UncertaintySet.from_network(net, 0.10, 0.20)
        x = np.ones(len(net.load_blocks))
        wc, _ = worst_case_windenum(model, x, phi)
        np.testing.assert_allclose(wc.p_l, phi.load_up * x, atol=0)

    def test_dimension_guard(self):
        net = toy_network(n_bus=4, n_wind=3, seed=10)
        model = training_model(net, toy_limits())
        phi = UncertaintySet.from_network(net, 0.10, 0.20)
        with pytest.raises(DimensionTooLarge):
            worst_case_windenum(model, np.ones(3), phi, max_wind_dims=2)


class TestCCG:
    def test_matches_double_bruteforce_on_toy(self):
        """Exhaustive optimality check: every decision x, each evaluated at
        its exact brute-force worst case."""
        net = toy_network(n_bus=4, n_gen=2, n_wind=1, n_load=4, seed=20,
                          load_mw=(4.0, 9.0))
        limits = toy_limits(delta_f_max=0.008)
        phi = UncertaintySet.from_network(net, 0.10, 0.20)
        model = assemble_canonical(net, limits, t=30.0)
        e_l = np.array([l.expected_amount for l in net.load_blocks])
        wgt = np.array([l.priority_weight for l in net.load_blocks])

        best = None
        for bits in itertools.product([0, 1], repeat=len(e_l)):
            x = np.array(bits, float)
            wc = worst_case_bruteforce(model, x, phi)
            obj = -(wgt * e_l) @ x + wc.objective
            if best is None or obj < best[0] - 1e-9:
                best = (obj, x)

        res = solve_ccg(net, limits, phi, t=30.0)
        np.testing.assert_array_equal(res.decision, best[1])
        assert res.converged

    def test_bounds_monotone_and_bracketing(self):
        net = toy_network(n_bus=5, n_gen=3, n_wind=2, n_load=5, seed=21)
        res = solve_ccg(net, toy_limits(), UncertaintySet.from_network(net),
                        t=30.0)
        lb, ub = np.array(res.lower_bounds), np.array(res.upper_bounds)
        assert np.all(np.diff(lb) >= -1e-7)
        assert np.all(np.diff(ub) <= 1e-7)
        assert np.all(ub - lb >= -1e-6)
        assert res.converged

    def test_fixed_and_excluded_respected(self):
        net = toy_network(n_bus=4, n_gen=2, n_wind=1, n_load=4, seed=22)
        phi = UncertaintySet.from_network(net)
        res = solve_ccg(net, toy_limits(), phi, t=30.0, fixed_ones=[0],
                        exclude=[1])
        assert res.decision[0] == 1.0
        assert res.decision[1] == 0.0
        with pytest.raises(ValueError):
            solve_ccg(net, toy_limits(), phi, fixed_ones=[2], exclude=[2])

    def test_pickup_cap_enforced(self):
        net = toy_network(n_bus=4, n_gen=2, n_wind=1, n_load=4, seed=23)
        e_l = np.array([l.expected_amount for l in net.load_blocks])
        cap = 0.6 * e_l.sum()
        res = solve_ccg(net, toy_limits(), UncertaintySet.from_network(net),
                        t=30.0, pickup_cap_mw=cap)
        assert res.restored_mw <= cap + 1e-6


class TestCase30Robust:
    def test_frequency_limits_first_step(self, net30, limits30):
        """On the real case the first-step pickup saturates the frequency
        bound under worst-case load (+10%)."""
        phi = UncertaintySet.from_network(net30, 0.10, 0.20)
        lupp = load_pickup_upper_bound(limits30, net30.generators,
                                       net30.wind_farms)
        res = solve_ccg(net30, limits30, phi, t=30.0, pickup_cap_mw=lupp)
        assert res.converged
        assert res.dispatch.status == "optimal"
        resp = net30.freq_response_sum()
        wind_worst_growth = phi.wind_low.sum() - sum(
            w.initial_output for w in net30.wind_farms)
        cap = (limits30.delta_f_max * resp + wind_worst_growth) / 1.10
        assert res.restored_mw == pytest.approx(cap, rel=1e-3)
