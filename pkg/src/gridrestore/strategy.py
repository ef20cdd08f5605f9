"""Online strategy generation: scan the pickup checklist with the trained
surrogates (worst-case DNN + power-flow CNN), accept the first entry that
passes frequency, voltage, branch-flow and generator checks, and orchestrate
multi-step restoration plus the benchmark against the model-based optimizer.

The online scan makes no optimization-solver calls; everything it needs was
prepared offline (checklist, trained networks).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checklist import Checklist, generate_lpc
from .net import PowerNetwork, SecurityLimits, WindFarm
from .pf import frequency_deviation, load_pickup_upper_bound
from .pf_cnn import PFCNN, predict_pf, security_check_surrogate
from .robust import UncertaintySet, WorstCase, solve_ccg
from .worstcase_dnn import WorstCaseDNN, correct_to_vertices, predict_raw


class Stalled(RuntimeError):
    """Two consecutive steps made no restoration progress."""


@dataclass
class RestorationStrategy:
    decision: np.ndarray  # cumulative binary pickup vector
    new_decision: np.ndarray  # blocks newly picked this step
    p_g: np.ndarray  # surrogate dispatch, MW
    q_g: np.ndarray
    worst_case: WorstCase | None
    restored_mw: float  # cumulative expected amount
    new_mw: float
    step_index: int
    online_seconds: float
    v_margin: float = 0.0
    s_margin: float = 0.0
    accepted: bool = True  # False -> zero decision fallback


@dataclass
class StepLog:
    lpc_size: int
    lpc2_size: int
    accepted_index: int | None  # index into LPC2; None when nothing passed
    rejections: dict = field(default_factory=dict)  # entry index -> reasons
    frequency_rejected: list = field(default_factory=list)
    solver_calls: int = 0  # must stay 0 for the online phase


def _capability_fit(pred, lo, hi, tol: float = 1e-9):
    """Fold a predicted per-unit vector onto the box [lo, hi] while keeping
    its total: coordinates are clipped and the clipped-off amount is spread
    over units with remaining headroom, proportionally to that headroom.

    Returns None when the box cannot carry the total at all.  One pass is
    exact: the residual after clipping never exceeds the total headroom.
    """
    pred = np.asarray(pred, float)
    total = float(pred.sum())
    if total < lo.sum() - tol or total > hi.sum() + tol:
        return None
    out = np.clip(pred, lo, hi)
    gap = total - out.sum()
    if gap > tol:
        room = hi - out
        out = out + gap * room / room.sum()
    elif gap < -tol:
        room = out - lo
        out = out + gap * room / room.sum()
    return np.clip(out, lo, hi)


def run_osg(lpc: Checklist, dnn: WorstCaseDNN, cnn: PFCNN,
            net: PowerNetwork, limits: SecurityLimits,
            phi: UncertaintySet, t: float = 30.0, fixed=None,
            step_index: int = 1, v_margin: float = 0.0,
            s_margin: float = 0.0):
    """One online strategy selection.

    S1 filters on quasi-steady-state frequency: over the uncertainty set the
    worst case for frequency is every newly picked load at its upper bound
    and wind at its lower bound, so the filter is exact and needs no
    network evaluation.  Survivors are then processed lazily, in checklist
    (descending-amount) order and in small chunks, so the expensive
    surrogate passes only run until the first acceptance:
    S2 batch-predicts each chunk's worst case and snaps it to
    uncertainty-set vertices, then folds the predicted dispatch onto the
    minute-t ramp-limited capability boxes (the surrogate is trained on
    the step-agnostic model with full capability, so its per-unit split
    must be re-fitted to what the units can deliver this step; entries
    whose required totals exceed the aggregate capability are rejected);
    S3 batch-predicts power-flow states for the chunk; S4 scans the chunk
    against voltage, branch and generator limits; S5 returns the first
    survivor.  fixed lists load blocks restored in earlier steps (their
    expected demand is part of every candidate input; only new pickup
    counts against frequency).
    """
    from . import solver

    calls_before = solver.solve_count()
    t0 = time.perf_counter()
    nl = len(net.load_blocks)
    e_l = np.array([l.expected_amount for l in net.load_blocks])
    tan_phi = np.array([l.tan_phi for l in net.load_blocks])
    e_w = np.array([w.expected_output for w in net.wind_farms])
    wind_ini = np.array([w.initial_output for w in net.wind_farms])
    fixed_x = np.zeros(nl)
    for i in (fixed or ()):
        fixed_x[i] = 1.0
    ng = len(net.generators)

    # S1: exact frequency filter over the whole checklist (vectorized)
    entries = [np.maximum(d, fixed_x) for d in lpc.decisions]
    new_masks = np.array([(x > 0.5) & (fixed_x < 0.5) for x in entries])
    worst_new_load = new_masks @ phi.load_up
    wind_delta = float(phi.wind_low.sum() - wind_ini.sum())
    dfs = np.array([frequency_deviation(float(m), wind_delta, net.generators)
                    for m in worst_new_load])
    keep = dfs <= limits.delta_f_max + 1e-12
    lpc2 = [k for k in range(len(entries)) if keep[k]]
    freq_rejected = [k for k in range(len(entries)) if not keep[k]]

    log = StepLog(lpc_size=len(lpc.decisions), lpc2_size=len(lpc2),
                  accepted_index=None, frequency_rejected=freq_rejected)

    p_lo = np.array([g.p_min for g in net.generators])
    p_hi = np.array([g.p_available(t) if t is not None else g.p_max
                     for g in net.generators])
    p_hi = np.maximum(p_hi, p_lo)
    q_lo = np.array([g.q_min for g in net.generators])
    q_hi = np.array([g.q_max for g in net.generators])
    gen_bus = np.array([g.bus for g in net.generators])
    wind_bus = np.array([w.bus for w in net.wind_farms])
    load_bus = np.array([l.bus for l in net.load_blocks])

    accepted = None
    worst: dict[int, WorstCase] = {}
    chunk = 16
    for c0 in range(0, len(lpc2), chunk):
        if accepted is not None:
            break
        ks = lpc2[c0:c0 + chunk]

        # S2: worst-case prediction for the chunk, vertex correction, and
        # the capability fold
        inputs = np.array([np.concatenate([entries[k] * e_l, e_w])
                           for k in ks])
        raw = predict_raw(dnn, inputs)
        scan = []
        for row, k in zip(raw, ks):
            wc = WorstCase(p_l=row[:nl], p_w=row[nl:nl + dnn.nw],
                           p_g=row[nl + dnn.nw:nl + dnn.nw + ng],
                           q_g=row[nl + dnn.nw + ng:], objective=float("nan"))
            wc = correct_to_vertices(wc, phi, entries[k])
            p_fit = _capability_fit(wc.p_g, p_lo, p_hi)
            q_fit = _capability_fit(wc.q_g, q_lo, q_hi)
            reasons = [name for name, fit in
                       (("gen_p", p_fit), ("gen_q", q_fit)) if fit is None]
            if reasons:
                log.rejections[k] = reasons
            else:
                worst[k] = dataclasses.replace(wc, p_g=p_fit, q_g=q_fit)
                scan.append(k)
        if not scan:
            continue

        # S3: surrogate power-flow states for the chunk
        P = np.zeros((len(scan), net.n_bus))
        Q = np.zeros((len(scan), net.n_bus))
        for r, k in enumerate(scan):
            x, wc = entries[k], worst[k]
            np.add.at(P[r], gen_bus, wc.p_g)
            np.add.at(Q[r], gen_bus, wc.q_g)
            np.add.at(P[r], load_bus, -x * wc.p_l)
            np.add.at(Q[r], load_bus, -x * wc.p_l * tan_phi)
            np.add.at(P[r], wind_bus, wc.p_w)
        theta, v = predict_pf(cnn, P, Q, net)

        # S4: sequential limit scan, first pass wins
        for r, k in enumerate(scan):
            wc = worst[k]
            rep = security_check_surrogate(
                net, theta[r], v[r], {"p_g": wc.p_g, "q_g": wc.q_g},
                limits, t=t, v_margin=v_margin, s_margin=s_margin)
            if rep.feasible:
                accepted = (r, k)
                break
            log.rejections[k] = sorted({vi.kind for vi in rep.violations})

    elapsed = time.perf_counter() - t0
    log.solver_calls = solver.solve_count() - calls_before

    # S5
    if accepted is None:
        strategy = RestorationStrategy(
            decision=fixed_x.copy(), new_decision=np.zeros(nl),
            p_g=np.zeros(ng), q_g=np.zeros(ng), worst_case=None,
            restored_mw=float(e_l @ fixed_x), new_mw=0.0,
            step_index=step_index, online_seconds=elapsed,
            v_margin=v_margin, s_margin=s_margin, accepted=False)
        return strategy, log
    _, k = accepted
    log.accepted_index = lpc2.index(k)
    x = entries[k]
    new = x - fixed_x
    strategy = RestorationStrategy(
        decision=x, new_decision=new, p_g=worst[k].p_g.copy(),
        q_g=worst[k].q_g.copy(), worst_case=worst[k],
        restored_mw=float(e_l @ x), new_mw=float(e_l @ new),
        step_index=step_index, online_seconds=elapsed,
        v_margin=v_margin, s_margin=s_margin, accepted=True)
    return strategy, log


def _step_network(net: PowerNetwork, step: int) -> PowerNetwork:
    """Advance wind farms between steps: last step's expectation becomes the
    new baseline output."""
    if step <= 1:
        return net
    return dataclasses.replace(net, wind_farms=[
        WindFarm(bus=w.bus, expected_output=w.expected_output,
                 initial_output=w.expected_output) for w in net.wind_farms])


@dataclass
class MultiStepResult:
    strategies: list
    logs: list
    checklists: list
    offline_seconds: float  # per-run checklist generation time
    stalled: bool = False

    @property
    def restored_trace(self):
        return [s.restored_mw for s in self.strategies]


def multi_step_restore(net: PowerNetwork, limits: SecurityLimits,
                       dnn: WorstCaseDNN, cnn: PFCNN,
                       load_dev: float = 0.10, wind_dev: float = 0.20,
                       step_minutes: float = 30.0, max_steps: int = 8,
                       i_max: int = 300, l_pick_low_frac: float = 0.1,
                       v_margin: float = 0.0, s_margin: float = 0.0):
    """Run restoration steps until all load is picked up or progress stalls.

    Between steps the generator capability advances by ramping (through the
    step time), wind baselines move to the previous expectations, and
    restored blocks stay on (their demand rides along in every candidate).
    """
    nl = len(net.load_blocks)
    total = sum(l.expected_amount for l in net.load_blocks)
    fixed: set[int] = set()
    strategies, logs, checklists = [], [], []
    offline = 0.0
    no_progress = 0
    stalled = False
    for step in range(1, max_steps + 1):
        net_s = _step_network(net, step)
        t = step_minutes * step
        lupp = load_pickup_upper_bound(limits, net_s.generators, net_s.wind_farms)
        phi = UncertaintySet.from_network(net_s, load_dev, wind_dev)
        avail = [i for i in range(nl) if i not in fixed]
        # the pickup floor keeps steps substantial, but never above what is
        # left -- the final blocks must stay reachable
        remaining = sum(net_s.load_blocks[i].expected_amount for i in avail)
        floor = min(l_pick_low_frac * lupp, remaining)
        t0 = time.perf_counter()
        lpc = generate_lpc(net_s, limits, i_max=i_max,
                           l_pick_low=floor, l_upp=lupp,
                           available=avail)
        offline += time.perf_counter() - t0
        strat, log = run_osg(lpc, dnn, cnn, net_s, limits, phi, t=t,
                             fixed=fixed, step_index=step,
                             v_margin=v_margin, s_margin=s_margin)
        strategies.append(strat)
        logs.append(log)
        checklists.append(lpc)
        if strat.new_mw <= 0:
            no_progress += 1
            if no_progress >= 2:
                stalled = True
                break
        else:
            no_progress = 0
        fixed = set(np.nonzero(strat.decision)[0].tolist())
        if strat.restored_mw >= total - 1e-9:
            break
    return MultiStepResult(strategies=strategies, logs=logs,
                           checklists=checklists, offline_seconds=offline,
                           stalled=stalled)


def multi_step_ccg(net: PowerNetwork, limits: SecurityLimits,
                   load_dev: float = 0.10, wind_dev: float = 0.20,
                   step_minutes: float = 30.0, max_steps: int = 8,
                   gap_tol: float = 1e-4):
    """Model-based reference trajectory: one robust solve per step, restored
    blocks carried as certain fixed demand."""
    nl = len(net.load_blocks)
    e_l = np.array([l.expected_amount for l in net.load_blocks])
    tan_phi = np.array([l.tan_phi for l in net.load_blocks])
    total = e_l.sum()
    fixed: set[int] = set()
    fixed_p = np.zeros(net.n_bus)
    fixed_q = np.zeros(net.n_bus)
    results, times = [], []
    restored = 0.0
    for step in range(1, max_steps + 1):
        net_s = _step_network(net, step)
        t = step_minutes * step
        lupp = load_pickup_upper_bound(limits, net_s.generators, net_s.wind_farms)
        phi = UncertaintySet.from_network(net_s, load_dev, wind_dev)
        t0 = time.perf_counter()
        res = solve_ccg(net_s, limits, phi, gap_tol=gap_tol, t=t,
                        fixed_p=fixed_p, fixed_q=fixed_q,
                        exclude=sorted(fixed), pickup_cap_mw=lupp)
        times.append(time.perf_counter() - t0)
        new = set(np.nonzero(res.decision)[0].tolist()) - fixed
        for i in new:
            fixed_p[net.load_blocks[i].bus] += e_l[i]
            fixed_q[net.load_blocks[i].bus] += e_l[i] * tan_phi[i]
        fixed |= new
        restored = float(e_l[sorted(fixed)].sum())
        results.append((res, sorted(fixed), restored))
        if not new or restored >= total - 1e-9:
            break
    return results, times


@dataclass
class BenchmarkReport:
    steps: list  # per-step dicts
    speedup: float
    osg_online_seconds: float
    osg_offline_seconds: float
    ccg_seconds: float
    decision_diff_blocks: int  # symmetric difference at the final step
    total_load_mw: float

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=1))

    def csv_rows(self):
        head = ["method", "step", "restored_mw", "restored_pct", "blocks",
                "time_s"]
        rows = [head]
        for s in self.steps:
            for m in ("osg", "ccg"):
                if s.get(m) is None:
                    continue
                d = s[m]
                rows.append([m, s["step"], f"{d['restored_mw']:.4f}",
                             f"{d['restored_pct']:.2f}", d["blocks"],
                             f"{d['time_s']:.6f}"])
        return rows

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for row in self.csv_rows():
                fh.write(",".join(str(c) for c in row) + "\n")


def compare_with_ccg(net: PowerNetwork, limits: SecurityLimits,
                     dnn: WorstCaseDNN, cnn: PFCNN,
                     load_dev: float = 0.10, wind_dev: float = 0.20,
                     step_minutes: float = 30.0, max_steps: int = 8,
                     i_max: int = 300, v_margin: float = 0.0,
                     s_margin: float = 0.0) -> BenchmarkReport:
    """Run both pipelines on identical inputs and tabulate per-step restored
    amounts and timing.  Offline preparation (checklists, training) is kept
    separate from the online scan; the speedup ratio compares the online
    scan against the per-step robust solve."""
    osg = multi_step_restore(net, limits, dnn, cnn, load_dev, wind_dev,
                             step_minutes, max_steps, i_max=i_max,
                             v_margin=v_margin, s_margin=s_margin)
    ccg_results, ccg_times = multi_step_ccg(net, limits, load_dev, wind_dev,
                                            step_minutes, max_steps)
    total = sum(l.expected_amount for l in net.load_blocks)
    steps = []
    n_steps = max(len(osg.strategies), len(ccg_results))
    for k in range(n_steps):
        entry = {"step": k + 1, "osg": None, "ccg": None}
        if k < len(osg.strategies):
            s = osg.strategies[k]
            entry["osg"] = {"restored_mw": s.restored_mw,
                            "restored_pct": 100.0 * s.restored_mw / total,
                            "blocks": int(s.decision.sum()),
                            "time_s": s.online_seconds}
        if k < len(ccg_results):
            res, blocks, restored = ccg_results[k]
            entry["ccg"] = {"restored_mw": restored,
                            "restored_pct": 100.0 * restored / total,
                            "blocks": len(blocks),
                            "time_s": ccg_times[k]}
        steps.append(entry)
    osg_online = sum(s.online_seconds for s in osg.strategies)
    ccg_total = sum(ccg_times)
    final_osg = set(np.nonzero(osg.strategies[-1].decision)[0].tolist()) \
        if osg.strategies else set()
    final_ccg = set(ccg_results[-1][1]) if ccg_results else set()
    return BenchmarkReport(
        steps=steps,
        speedup=ccg_total / osg_online if osg_online > 0 else float("inf"),
        osg_online_seconds=osg_online,
        osg_offline_seconds=osg.offline_seconds,
        ccg_seconds=ccg_total,
        decision_diff_blocks=len(final_osg ^ final_ccg),
        total_load_mw=total)
