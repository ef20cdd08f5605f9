"""Command-line harness: each subcommand runs one pipeline stage against a
JSON run configuration (with flag overrides) and writes its artifacts to the
output directory.  `reproduce` chains every stage into the full benchmark
bundle, separating deterministic metrics from wall-clock timings.

Exit codes: 0 success, 1 domain error (solver/data failures), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import report, solver
from .checklist import Checklist, generate_lpc
from .config import RunConfig
from .net import NetworkError
from .nn import TrainingConfig
from .pf import ac_power_flow, load_pickup_upper_bound
from .pf_cnn import CnnDataset, PFCNN, generate_cnn_dataset, train_pf_cnn
from .robust import UncertaintySet, solve_ccg
from .strategy import compare_with_ccg, multi_step_restore
from .worstcase_dnn import (DnnDataset, WorstCaseDNN, generate_dnn_dataset,
                            train_worstcase_dnn, training_model)


def _build_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {
        "network": "case_path", "overlay": "overlay_path",
        "output_dir": "output_dir", "seed": "seed", "samples": "dnn_samples",
        "max_steps": "max_steps", "step_minutes": "step_minutes",
    }
    for flag, field in overrides.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, field, val)
    if getattr(args, "epochs", None) is not None:
        cfg.dnn_train = dataclasses.replace(cfg.dnn_train, epochs=args.epochs)
        cfg.cnn_train = dataclasses.replace(cfg.cnn_train, epochs=args.epochs)
    if getattr(args, "i_max", None) is not None:
        cfg.lpc.i_max = args.i_max
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _expected_injections(net):
    """Bus injections with every load at expectation, wind at its baseline
    and generation shared in proportion to capability."""
    n = net.n_bus
    P, Q = np.zeros(n), np.zeros(n)
    for l in net.load_blocks:
        P[l.bus] -= l.expected_amount
        Q[l.bus] -= l.expected_amount * l.tan_phi
    for w in net.wind_farms:
        P[w.bus] += w.initial_output
    need_p, need_q = -P.sum(), -Q.sum()
    cap_p = np.array([g.p_max for g in net.generators])
    cap_q = np.array([g.q_max for g in net.generators])
    pg = need_p * cap_p / cap_p.sum()
    qg = need_q * cap_q / cap_q.sum()
    for j, g in enumerate(net.generators):
        P[g.bus] += pg[j]
        Q[g.bus] += qg[j]
    return P, Q


def cmd_pf(cfg: RunConfig, args) -> int:
    net = cfg.network()
    out = _outdir(cfg)
    P, Q = _expected_injections(net)
    sol = ac_power_flow(net, P, Q)
    doc = {"converged": bool(sol.converged), "iterations": sol.iterations,
           "v": sol.v.tolist(), "theta": sol.theta.tolist(),
           "branch_p_mw": sol.branch_p.tolist(),
           "branch_q_mvar": sol.branch_q.tolist(),
           "p_injection_mw": P.tolist(), "q_injection_mvar": Q.tolist()}
    report.write_json(doc, out / "pf.json")
    print(f"power flow {'converged' if sol.converged else 'FAILED'} in "
          f"{sol.iterations} iterations -> {out / 'pf.json'}")
    return 0 if sol.converged else 1


def cmd_solve_robust(cfg: RunConfig, args) -> int:
    net = cfg.network()
    out = _outdir(cfg)
    limits = cfg.limits
    phi = UncertaintySet.from_network(net, cfg.load_dev, cfg.wind_dev)
    lupp = load_pickup_upper_bound(limits, net.generators, net.wind_farms)
    res = solve_ccg(net, limits, phi, t=cfg.step_minutes, pickup_cap_mw=lupp)
    doc = {"decision": res.decision.tolist(), "restored_mw": res.restored_mw,
           "iterations": res.iterations, "converged": res.converged,
           "lower_bounds": res.lower_bounds, "upper_bounds": res.upper_bounds,
           "dispatch_status": res.dispatch.status,
           "p_g_mw": res.dispatch.p_g.tolist(),
           "q_g_mvar": res.dispatch.q_g.tolist(),
           "worst_p_l_mw": res.worst_case.p_l.tolist(),
           "worst_p_w_mw": res.worst_case.p_w.tolist()}
    report.write_json(doc, out / "robust.json")
    report.plot_bounds_trace(res.lower_bounds, res.upper_bounds,
                             out / "robust_bounds.png")
    print(f"robust solve: {res.restored_mw:.2f} MW restored in "
          f"{res.iterations} iterations (converged={res.converged})")
    if not res.converged:
        print("error: optimality gap not closed", file=sys.stderr)
        return 1
    return 0


def cmd_gen_lpc(cfg: RunConfig, args) -> int:
    net = cfg.network()
    out = _outdir(cfg)
    limits = cfg.limits
    lupp = load_pickup_upper_bound(limits, net.generators, net.wind_farms)
    lpc = generate_lpc(net, limits, i_max=cfg.lpc.i_max,
                       l_pick_low=cfg.lpc.l_pick_low_frac * lupp,
                       sigma=cfg.lpc.sigma, l_upp=lupp)
    lpc.save(out / "checklist.json")
    with open(out / "checklist.csv", "w") as fh:
        fh.write("index,amount_mw,blocks\n")
        for i, (d, a) in enumerate(zip(lpc.decisions, lpc.amounts)):
            fh.write(f"{i},{a:.6f},{int(d.sum())}\n")
    print(f"checklist: {len(lpc)} entries, {lpc.amounts[0]:.2f} MW down to "
          f"{lpc.amounts[-1]:.2f} MW")
    return 0


def _dataset_paths(out: Path):
    return (out / "dnn_dataset.csv", out / "cnn_dataset.csv",
            out / "dataset_meta.json")


def cmd_gen_data(cfg: RunConfig, args) -> int:
    net = cfg.network()
    out = _outdir(cfg)
    limits = cfg.limits
    lupp = load_pickup_upper_bound(limits, net.generators, net.wind_farms)
    lpc = generate_lpc(net, limits, i_max=cfg.lpc.i_max,
                       l_pick_low=cfg.lpc.l_pick_low_frac * lupp,
                       sigma=cfg.lpc.sigma, l_upp=lupp)
    model = training_model(net, limits)
    ds = generate_dnn_dataset(net, lpc, cfg.dnn_samples, seed=cfg.seed,
                              load_dev=cfg.load_dev, wind_dev=cfg.wind_dev,
                              limits=limits, model=model)
    cds = generate_cnn_dataset(net, ds, model)
    dnn_path, cnn_path, meta_path = _dataset_paths(out)
    ds.save_csv(dnn_path)
    cds.save_csv(cnn_path)
    report.write_json({"nl": ds.nl, "nw": ds.nw, "ng": ds.ng,
                       "n_bus": cds.n_bus, "dnn_samples": len(ds),
                       "cnn_samples": len(cds), "dnn_skipped": ds.skipped,
                       "cnn_skipped": cds.skipped}, meta_path)
    print(f"datasets: {len(ds)} worst-case samples, {len(cds)} PF samples "
          f"({ds.skipped}/{cds.skipped} skipped)")
    return 0


def _load_meta(out: Path) -> dict:
    meta_path = _dataset_paths(out)[2]
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found; run gen-data first")
    return json.loads(meta_path.read_text())


def cmd_train_dnn(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    meta = _load_meta(out)
    ds = DnnDataset.load_csv(_dataset_paths(out)[0], meta["nl"], meta["nw"],
                             meta["ng"])
    dnn, history = train_worstcase_dnn(ds, cfg.dnn_train,
                                       hidden=tuple(cfg.dnn_hidden),
                                       test_fraction=cfg.test_fraction)
    dnn.save(out / "dnn.json")
    report.write_history_csv({"dnn": history}, out / "dnn_history.csv")
    report.write_json(dnn.metrics, out / "dnn_metrics.json")
    acc = dnn.metrics["test"].get("overall", float("nan"))
    print(f"worst-case network: test accuracy {100 * acc:.2f}%, "
          f"final loss {history[-1]:.3g}")
    return 0


def cmd_train_cnn(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    meta = _load_meta(out)
    cds = CnnDataset.load_csv(_dataset_paths(out)[1], meta["n_bus"])
    cnn, history = train_pf_cnn(cds, cfg.cnn_train, fc_width=cfg.cnn_fc_width,
                                test_fraction=cfg.test_fraction)
    cnn.save(out / "cnn.json")
    report.write_history_csv({"cnn": history}, out / "cnn_history.csv")
    report.write_json(cnn.metrics, out / "cnn_metrics.json")
    acc = cnn.metrics["test"].get("overall", float("nan"))
    print(f"power-flow network: test accuracy {100 * acc:.2f}%, "
          f"final loss {history[-1]:.3g}")
    return 0


def _load_surrogates(out: Path):
    for name in ("dnn.json", "cnn.json"):
        if not (out / name).exists():
            raise FileNotFoundError(f"{out / name} not found; train first")
    return WorstCaseDNN.load(out / "dnn.json"), PFCNN.load(out / "cnn.json")


def cmd_restore(cfg: RunConfig, args) -> int:
    net = cfg.network()
    out = _outdir(cfg)
    dnn, cnn = _load_surrogates(out)
    solver.reset_solve_counter()
    result = multi_step_restore(net, cfg.limits, dnn, cnn,
                                load_dev=cfg.load_dev, wind_dev=cfg.wind_dev,
                                step_minutes=cfg.step_minutes,
                                max_steps=cfg.max_steps,
                                i_max=cfg.lpc.i_max,
                                l_pick_low_frac=cfg.lpc.l_pick_low_frac,
                                v_margin=cfg.v_margin, s_margin=cfg.s_margin)
    total = sum(l.expected_amount for l in net.load_blocks)
    doc = {"total_load_mw": total, "stalled": result.stalled,
           "offline_seconds": result.offline_seconds, "steps": []}
    for s, log in zip(result.strategies, result.logs):
        doc["steps"].append({
            "step": s.step_index, "accepted": s.accepted,
            "restored_mw": s.restored_mw,
            "restored_pct": 100.0 * s.restored_mw / total,
            "new_mw": s.new_mw, "blocks": int(s.decision.sum()),
            "decision": s.decision.tolist(),
            "online_seconds": s.online_seconds,
            "solver_calls": log.solver_calls,
            "checklist_size": log.lpc_size,
            "frequency_feasible": log.lpc2_size})
    report.write_json(doc, out / "restore.json")
    last = result.strategies[-1]
    print(f"restored {last.restored_mw:.2f} of {total:.2f} MW "
          f"({100 * last.restored_mw / total:.1f}%) in "
          f"{len(result.strategies)} steps"
          + (" [stalled]" if result.stalled else ""))
    return 1 if result.stalled else 0


def cmd_compare(cfg: RunConfig, args) -> int:
    net = cfg.network()
    out = _outdir(cfg)
    dnn, cnn = _load_surrogates(out)
    bench = compare_with_ccg(net, cfg.limits, dnn, cnn,
                             load_dev=cfg.load_dev, wind_dev=cfg.wind_dev,
                             step_minutes=cfg.step_minutes,
                             max_steps=cfg.max_steps, i_max=cfg.lpc.i_max,
                             v_margin=cfg.v_margin, s_margin=cfg.s_margin)
    bench.to_json(out / "benchmark.json")
    bench.save_csv(out / "benchmark.csv")
    report.plot_restoration(bench, out / "restoration.png")
    print(f"online scan {bench.osg_online_seconds:.3f} s vs robust solve "
          f"{bench.ccg_seconds:.1f} s (speedup {bench.speedup:.0f}x); "
          f"final decisions differ in {bench.decision_diff_blocks} blocks")
    return 0


def cmd_reproduce(cfg: RunConfig, args) -> int:
    """Full offline + online pipeline producing the benchmark bundle.

    metrics.json holds only deterministic quantities (seed-reproducible);
    wall-clock measurements go to timings.json.
    """
    out = _outdir(cfg)
    cfg.save(out / "run_config.json")
    net = cfg.network()
    limits = cfg.limits
    metrics: dict = {}
    timings: dict = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            raise RuntimeError(f"stage '{name}' failed: {exc}") from exc
        timings[name + "_seconds"] = time.perf_counter() - t0
        return result

    lupp = load_pickup_upper_bound(limits, net.generators, net.wind_farms)
    lpc = stage("checklist", lambda: generate_lpc(
        net, limits, i_max=cfg.lpc.i_max,
        l_pick_low=cfg.lpc.l_pick_low_frac * lupp, sigma=cfg.lpc.sigma,
        l_upp=lupp))
    lpc.save(out / "checklist.json")
    metrics["checklist"] = {"entries": len(lpc),
                            "first_mw": lpc.amounts[0],
                            "last_mw": lpc.amounts[-1]}

    model = training_model(net, limits)
    ds = stage("dnn_dataset", lambda: generate_dnn_dataset(
        net, lpc, cfg.dnn_samples, seed=cfg.seed, load_dev=cfg.load_dev,
        wind_dev=cfg.wind_dev, limits=limits, model=model))
    ds.save_csv(out / "dnn_dataset.csv")
    dnn, dnn_hist = stage("dnn_training", lambda: train_worstcase_dnn(
        ds, cfg.dnn_train, hidden=tuple(cfg.dnn_hidden),
        test_fraction=cfg.test_fraction))
    dnn.save(out / "dnn.json")
    metrics["dnn"] = {"samples": len(ds), "skipped": ds.skipped,
                      "final_loss": dnn_hist[-1],
                      "train_accuracy": dnn.metrics["train"],
                      "test_accuracy": dnn.metrics["test"]}

    cds = stage("cnn_dataset", lambda: generate_cnn_dataset(net, ds, model))
    cds.save_csv(out / "cnn_dataset.csv")
    cnn, cnn_hist = stage("cnn_training", lambda: train_pf_cnn(
        cds, cfg.cnn_train, fc_width=cfg.cnn_fc_width,
        test_fraction=cfg.test_fraction))
    cnn.save(out / "cnn.json")
    metrics["cnn"] = {"samples": len(cds), "skipped": cds.skipped,
                      "final_loss": cnn_hist[-1],
                      "train_accuracy": cnn.metrics["train"],
                      "test_accuracy": cnn.metrics["test"]}
    report.write_history_csv({"dnn": dnn_hist, "cnn": cnn_hist},
                             out / "loss_curves.csv")
    report.plot_loss_curves({"worst-case net": dnn_hist,
                             "power-flow net": cnn_hist},
                            out / "loss_curves.png")

    bench = stage("benchmark", lambda: compare_with_ccg(
        net, limits, dnn, cnn, load_dev=cfg.load_dev, wind_dev=cfg.wind_dev,
        step_minutes=cfg.step_minutes, max_steps=cfg.max_steps,
        i_max=cfg.lpc.i_max, v_margin=cfg.v_margin, s_margin=cfg.s_margin))
    bench.to_json(out / "benchmark.json")
    bench.save_csv(out / "benchmark.csv")
    report.plot_restoration(bench, out / "restoration.png")
    metrics["benchmark"] = {
        "total_load_mw": bench.total_load_mw,
        "decision_diff_blocks": bench.decision_diff_blocks,
        "steps": [{"step": s["step"],
                   "osg": None if s["osg"] is None else
                   {k: s["osg"][k] for k in
                    ("restored_mw", "restored_pct", "blocks")},
                   "ccg": None if s["ccg"] is None else
                   {k: s["ccg"][k] for k in
                    ("restored_mw", "restored_pct", "blocks")}}
                  for s in bench.steps]}
    timings["benchmark_online_seconds"] = bench.osg_online_seconds
    timings["benchmark_robust_seconds"] = bench.ccg_seconds
    timings["benchmark_speedup"] = bench.speedup

    report.write_json(metrics, out / "metrics.json")
    report.write_json(timings, out / "timings.json")
    print(f"bundle written to {out}/ "
          f"(dnn {100 * metrics['dnn']['test_accuracy']['overall']:.2f}%, "
          f"cnn {100 * metrics['cnn']['test_accuracy']['overall']:.2f}%, "
          f"speedup {bench.speedup:.0f}x)")
    return 0


_COMMANDS = {
    "pf": cmd_pf,
    "solve-robust": cmd_solve_robust,
    "gen-lpc": cmd_gen_lpc,
    "gen-data": cmd_gen_data,
    "train-dnn": cmd_train_dnn,
    "train-cnn": cmd_train_cnn,
    "restore": cmd_restore,
    "compare": cmd_compare,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridrestore",
        description="Robust load-restoration pipeline: offline robust "
                    "optimization and surrogate training, online strategy "
                    "selection.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    help_text = {
        "pf": "solve AC power flow at the expected operating point",
        "solve-robust": "one-step two-stage robust pickup optimization",
        "gen-lpc": "generate the ordered load-pickup checklist",
        "gen-data": "label worst-case and power-flow training datasets",
        "train-dnn": "train the worst-case prediction network",
        "train-cnn": "train the power-flow regression network",
        "restore": "multi-step restoration with the trained surrogates",
        "compare": "benchmark surrogate restoration against robust solves",
        "reproduce": "run the whole pipeline and write the metrics bundle",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=help_text[name])
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--network", help="case file (.m or .json)")
        p.add_argument("--overlay", help="restoration overlay JSON")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int, help="training sample count")
        p.add_argument("--epochs", type=int, help="override training epochs")
        p.add_argument("--i-max", dest="i_max", type=int,
                       help="checklist length cap")
        p.add_argument("--max-steps", dest="max_steps", type=int)
        p.add_argument("--step-minutes", dest="step_minutes", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required "
              f"(one of: {', '.join(_COMMANDS)})", file=sys.stderr)
        return 2
    try:
        cfg = _build_config(args)
        return _COMMANDS[args.command](cfg, args)
    except (NetworkError, ValueError, RuntimeError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
