"""Online strategy-generation tests on toy instances with quickly trained
surrogates: solver-call isolation, checklist-order acceptance, fallback
behavior and the benchmark plumbing."""

import numpy as np
import pytest

from gridrestore import solver
from gridrestore.checklist import generate_lpc
from gridrestore.net import SecurityLimits
from gridrestore.nn import TrainingConfig
from gridrestore.pf_cnn import generate_cnn_dataset, train_pf_cnn
from gridrestore.robust import UncertaintySet
from gridrestore.strategy import (BenchmarkReport, _capability_fit,
                                  compare_with_ccg, multi_step_ccg,
                                  multi_step_restore, run_osg)
from gridrestore.worstcase_dnn import (generate_dnn_dataset,
                                       train_worstcase_dnn, training_model)

from conftest import toy_limits, toy_network


@pytest.fixture(scope="module")
def trained():
    """A toy instance with surrogates trained well enough to be meaningful."""
    net = toy_network(n_bus=5, n_gen=3, n_wind=2, n_load=5, seed=50,
                      load_mw=(3.0, 8.0))
    limits = toy_limits(delta_f_max=0.02)
    lpc = generate_lpc(net, limits, i_max=8)
    dnn_ds = generate_dnn_dataset(net, lpc, 120, seed=7, limits=limits)
    model = training_model(net, limits)
    cnn_ds = generate_cnn_dataset(net, dnn_ds, model)
    dnn, _ = train_worstcase_dnn(
        dnn_ds, TrainingConfig(learning_rate=0.02, epochs=250, seed=1,
                               batch_size=16), hidden=(128, 128))
    cnn, _ = train_pf_cnn(
        cnn_ds, TrainingConfig(learning_rate=0.02, epochs=250, seed=2,
                               batch_size=16), fc_width=200)
    return net, limits, lpc, dnn, cnn


class TestSingleStep:
    def test_no_solver_calls_online(self, trained):
        net, limits, lpc, dnn, cnn = trained
        phi = UncertaintySet.from_network(net)
        solver.reset_solve_counter()
        before = solver.solve_count()
        strat, log = run_osg(lpc, dnn, cnn, net, limits, phi, t=30.0)
        assert solver.solve_count() == before
        assert log.solver_calls == 0

    def test_loose_limits_accept_first_entry(self, trained):
        net, _, lpc, dnn, cnn = trained
        loose = SecurityLimits(v_min=0.5, v_max=1.5, delta_f_max=10.0)
        phi = UncertaintySet.from_network(net)
        strat, log = run_osg(lpc, dnn, cnn, net, loose, phi, t=1e6)
        assert strat.accepted
        assert log.accepted_index == 0
        np.testing.assert_array_equal(strat.decision, lpc.decisions[0])
        assert strat.restored_mw == pytest.approx(lpc.amounts[0])

    def test_impossible_limits_fall_back_to_zero(self, trained):
        net, _, lpc, dnn, cnn = trained
        hopeless = SecurityLimits(v_min=1.4, v_max=1.5, delta_f_max=1e-9)
        phi = UncertaintySet.from_network(net)
        strat, log = run_osg(lpc, dnn, cnn, net, hopeless, phi, t=30.0)
        assert not strat.accepted
        assert strat.new_mw == 0.0
        assert np.all(strat.decision == 0)
        assert log.accepted_index is None
        # every entry was rejected somewhere: frequency or the limit scan
        assert len(log.frequency_rejected) + len(log.rejections) > 0

    def test_frequency_filter_bookkeeping(self, trained):
        net, limits, lpc, dnn, cnn = trained
        phi = UncertaintySet.from_network(net)
        _, log = run_osg(lpc, dnn, cnn, net, limits, phi, t=30.0)
        assert log.lpc_size == len(lpc.decisions)
        assert log.lpc2_size + len(log.frequency_rejected) == log.lpc_size

    def test_fixed_blocks_ride_along(self, trained):
        net, limits, lpc, dnn, cnn = trained
        loose = SecurityLimits(v_min=0.5, v_max=1.5, delta_f_max=10.0)
        phi = UncertaintySet.from_network(net)
        strat, _ = run_osg(lpc, dnn, cnn, net, loose, phi, t=1e6, fixed=[0])
        assert strat.decision[0] == 1.0
        assert strat.new_decision[0] == 0.0

    def test_online_time_recorded(self, trained):
        net, limits, lpc, dnn, cnn = trained
        phi = UncertaintySet.from_network(net)
        strat, _ = run_osg(lpc, dnn, cnn, net, limits, phi, t=30.0)
        assert strat.online_seconds > 0


class TestCapabilityFit:
    """Folding a predicted per-unit dispatch onto capability boxes."""

    def test_conserves_total_and_respects_box(self):
        lo = np.zeros(4)
        hi = np.array([10.0, 5.0, 0.0, 8.0])
        pred = np.array([4.0, 3.0, 6.0, 1.0])  # unit 2 cannot deliver
        out = _capability_fit(pred, lo, hi)
        assert out is not None
        assert out.sum() == pytest.approx(pred.sum())
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)
        assert out[2] == 0.0

    def test_inside_box_unchanged(self):
        lo, hi = np.zeros(3), np.full(3, 10.0)
        pred = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(_capability_fit(pred, lo, hi), pred)

    def test_low_side_redistribution(self):
        lo = np.array([2.0, 0.0])
        hi = np.array([10.0, 10.0])
        pred = np.array([1.0, 5.0])  # unit 0 below its minimum
        out = _capability_fit(pred, lo, hi)
        assert out.sum() == pytest.approx(6.0)
        assert out[0] >= 2.0 - 1e-12

    def test_infeasible_totals_rejected(self):
        lo, hi = np.zeros(2), np.array([3.0, 4.0])
        assert _capability_fit(np.array([5.0, 4.0]), lo, hi) is None
        assert _capability_fit(np.array([-1.0, 0.5]), lo, hi) is None


class TestMultiStep:
    def test_progress_and_monotone_restoration(self, trained):
        net, limits, _, dnn, cnn = trained
        result = multi_step_restore(net, limits, dnn, cnn, max_steps=4,
                                    i_max=8)
        assert len(result.strategies) >= 1
        trace = result.restored_trace
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))

    def test_stall_detection(self, trained):
        net, _, _, dnn, cnn = trained
        # voltage band no predicted state can reach -> nothing is accepted
        hopeless = SecurityLimits(v_min=1.4, v_max=1.5, delta_f_max=1e-9)
        result = multi_step_restore(net, hopeless, dnn, cnn, max_steps=6,
                                    i_max=8)
        assert result.stalled
        assert len(result.strategies) == 2  # two no-progress steps, then stop

    def test_reference_trajectory_monotone(self):
        net = toy_network(n_bus=5, n_gen=3, n_wind=2, n_load=5, seed=50,
                          load_mw=(3.0, 8.0))
        results, times = multi_step_ccg(net, toy_limits(delta_f_max=0.02),
                                        max_steps=3)
        restored = [r[2] for r in results]
        assert all(b >= a - 1e-9 for a, b in zip(restored, restored[1:]))
        assert all(t > 0 for t in times)


class TestBenchmark:
    def test_compare_report_complete(self, trained, tmp_path):
        net, limits, _, dnn, cnn = trained
        report = compare_with_ccg(net, limits, dnn, cnn, max_steps=3, i_max=8)
        assert isinstance(report, BenchmarkReport)
        assert report.total_load_mw == pytest.approx(
            sum(l.expected_amount for l in net.load_blocks))
        assert report.steps
        for s in report.steps:
            assert s["osg"] is not None or s["ccg"] is not None
        assert report.speedup > 0
        # artifacts round-trip
        report.to_json(tmp_path / "bench.json")
        report.save_csv(tmp_path / "bench.csv")
        rows = (tmp_path / "bench.csv").read_text().strip().splitlines()
        assert rows[0] == "method,step,restored_mw,restored_pct,blocks,time_s"
        assert len(rows) > 1
