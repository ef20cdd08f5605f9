"""Dense surrogate for the inner worst case: maps expected pickup and wind
profiles to the worst-case uncertainty realization and its dispatch.

Training labels come from exact optimization (worst-case MILP + dispatch
LP); predictions are snapped back onto uncertainty-set vertices before use.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .net import PowerNetwork, SecurityLimits
from .nn import NeuralNet, Scaler, TrainingConfig, mlp
from .robust import (RestorationModel, UncertaintySet, WorstCase,
                     assemble_canonical, worst_case_windenum)

# Staggered marginal costs make the otherwise-degenerate dispatch unique and
# ordered by unit index.  The step is kept far below the smallest load-bound
# width so the dispatch cost stays strictly increasing in every picked load
# (which is what lets the labeler fix loads at their upper bounds).
MERIT_COST_STEP = 1e-5


@dataclass
class DnnDataset:
    inputs: np.ndarray  # (n, nl + nw): picked expected load, expected wind
    targets: np.ndarray  # (n, nl + nw + 2 ng): worst p_L, p_W and dispatch
    nl: int
    nw: int
    ng: int
    skipped: int = 0  # samples dropped due to infeasible labeling

    def __len__(self):
        return len(self.inputs)

    @property
    def group_slices(self):
        nl, nw, ng = self.nl, self.nw, self.ng
        return {"p_l": slice(0, nl), "p_w": slice(nl, nl + nw),
                "p_g": slice(nl + nw, nl + nw + ng),
                "q_g": slice(nl + nw + ng, nl + nw + 2 * ng)}

    def loss_weights(self):
        """Per-column weights realizing the group-averaged MSE: the loss is
        the mean of the four per-group mean-squared errors."""
        slices = self.group_slices
        w = np.empty(self.targets.shape[1])
        for sl in slices.values():
            w[sl] = 1.0 / (len(slices) * (sl.stop - sl.start))
        return w

    def save_csv(self, path: str | Path) -> None:
        cols = ([f"in_e_l_{i}" for i in range(self.nl)]
                + [f"in_e_w_{i}" for i in range(self.nw)]
                + [f"t_p_l_{i}" for i in range(self.nl)]
                + [f"t_p_w_{i}" for i in range(self.nw)]
                + [f"t_p_g_{i}" for i in range(self.ng)]
                + [f"t_q_g_{i}" for i in range(self.ng)])
        data = np.hstack([self.inputs, self.targets])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="")

    @classmethod
    def load_csv(cls, path: str | Path, nl: int, nw: int, ng: int) -> "DnnDataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n_in = nl + nw
        return cls(inputs=data[:, :n_in], targets=data[:, n_in:],
                   nl=nl, nw=nw, ng=ng)


def training_model(net: PowerNetwork, limits: SecurityLimits) -> RestorationModel:
    """Dispatch model used for surrogate labeling: full generator capability
    and an inactive frequency row.  Step-specific ramping and frequency are
    enforced online by the strategy loop, not by the surrogate, so one
    network serves every restoration step."""
    loose = dataclasses.replace(limits, delta_f_max=10.0)
    ng = len(net.generators)
    merit = 1.0 + MERIT_COST_STEP * np.arange(ng)
    return assemble_canonical(net, loose, t=None, gen_cost=merit)


def _sample_decision(rng, lpc, nl):
    """Decision pool for training: checklist entries, checklist entries with
    extra already-restored load (later-step cumulative patterns), and random
    subsets for coverage."""
    entry = lpc.decisions[rng.integers(len(lpc.decisions))].copy()
    r = rng.random()
    if r < 0.45:
        return entry
    q = rng.uniform(0.2, 0.8)
    extra = (rng.random(nl) < q).astype(float)
    if r < 0.90:
        return np.maximum(entry, extra)
    return extra


def generate_dnn_dataset(net: PowerNetwork, lpc, n_samples: int, seed: int,
                         load_dev: float = 0.10, wind_dev: float = 0.20,
                         limits: SecurityLimits | None = None,
                         model: RestorationModel | None = None) -> DnnDataset:
    """Label n_samples decisions with their exact worst case and dispatch.

    Wind expectations are resampled uniformly within +-wind_dev of the case
    values per sample; the uncertainty set of each sample is built around
    its own expectations.
    """
    if len(lpc.decisions) == 0:
        raise ValueError("checklist must be nonempty")
    limits = limits or SecurityLimits()
    if model is None:
        model = training_model(net, limits)
    nl = len(net.load_blocks)
    nw = len(net.wind_farms)
    ng = len(net.generators)
    e_l = np.array([l.expected_amount for l in net.load_blocks])
    e_w_base = np.array([w.expected_output for w in net.wind_farms])
    rng = np.random.default_rng(seed)

    inputs, targets = [], []
    skipped = 0
    attempts = 0
    while len(inputs) < n_samples and attempts < 2 * n_samples + 10:
        attempts += 1
        x = _sample_decision(rng, lpc, nl)
        e_w = e_w_base * rng.uniform(1 - wind_dev, 1 + wind_dev, size=nw)
        phi = UncertaintySet(load_low=e_l * (1 - load_dev),
                             load_up=e_l * (1 + load_dev),
                             wind_low=e_w * (1 - wind_dev),
                             wind_up=e_w * (1 + wind_dev))
        try:
            wc, stage = worst_case_windenum(model, x, phi)
        except RuntimeError:
            skipped += 1
            continue
        if stage.status != "optimal":
            skipped += 1
            continue
        inputs.append(np.concatenate([x * e_l, e_w]))
        targets.append(np.concatenate([wc.p_l, wc.p_w, wc.p_g, wc.q_g]))
    if len(inputs) < n_samples:
        raise RuntimeError(f"could only label {len(inputs)} of {n_samples} samples")
    return DnnDataset(inputs=np.array(inputs), targets=np.array(targets),
                      nl=nl, nw=nw, ng=ng, skipped=skipped)


@dataclass
class WorstCaseDNN:
    net: NeuralNet
    in_scaler: Scaler
    out_scaler: Scaler
    nl: int
    nw: int
    ng: int
    metrics: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = self.net.to_dict()
        doc["scalers"] = {"in": self.in_scaler.to_dict(),
                          "out": self.out_scaler.to_dict()}
        doc["dims"] = {"nl": self.nl, "nw": self.nw, "ng": self.ng}
        doc["metrics"] = self.metrics
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "WorstCaseDNN":
        doc = json.loads(Path(path).read_text())
        dims = doc["dims"]
        return cls(net=NeuralNet.from_dict(doc),
                   in_scaler=Scaler.from_dict(doc["scalers"]["in"]),
                   out_scaler=Scaler.from_dict(doc["scalers"]["out"]),
                   nl=dims["nl"], nw=dims["nw"], ng=dims["ng"],
                   metrics=doc.get("metrics", {}))


def split_dataset(dataset: DnnDataset, test_fraction: float, seed: int):
    """Deterministic shuffled train/test split."""
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    test, train = order[:n_test], order[n_test:]
    return (dataset.inputs[train], dataset.targets[train],
            dataset.inputs[test], dataset.targets[test])


def train_worstcase_dnn(dataset: DnnDataset, cfg: TrainingConfig,
                        hidden=(1000, 1000, 1000),
                        test_fraction: float = 0.25):
    """Fit the dense worst-case surrogate; returns (WorstCaseDNN, history)."""
    xin_tr, yt_tr, xin_te, yt_te = split_dataset(dataset, test_fraction, cfg.seed)
    in_s = Scaler().fit(xin_tr)
    out_s = Scaler().fit(yt_tr)
    rng = np.random.default_rng(cfg.seed)
    net = mlp([dataset.inputs.shape[1], *hidden, dataset.targets.shape[1]], rng)
    w = dataset.loss_weights()
    history = net.train(in_s.transform(xin_tr), out_s.transform(yt_tr), cfg,
                        loss_weights=w)
    dnn = WorstCaseDNN(net=net, in_scaler=in_s, out_scaler=out_s,
                       nl=dataset.nl, nw=dataset.nw, ng=dataset.ng)
    metrics = {
        "final_loss": history[-1],
        "epochs_run": len(history),
        "train": accuracy(dnn, xin_tr, yt_tr, dataset.group_slices),
        "test": accuracy(dnn, xin_te, yt_te, dataset.group_slices),
        "n_train": len(xin_tr), "n_test": len(xin_te),
        "test_loss": dnn.net.evaluate_loss(in_s.transform(xin_te),
                                           out_s.transform(yt_te), w)
        if len(xin_te) else None,
    }
    dnn.metrics = metrics
    return dnn, history


def predict_raw(dnn: WorstCaseDNN, inputs: np.ndarray) -> np.ndarray:
    """Batch prediction in engineering units; rows are [E_L picked ; E_W]."""
    inputs = np.atleast_2d(np.asarray(inputs, float))
    if inputs.shape[1] != dnn.nl + dnn.nw:
        raise ValueError("input width does not match the trained network")
    return dnn.out_scaler.inverse(dnn.net.forward(dnn.in_scaler.transform(inputs)))


def predict_worst_case(dnn: WorstCaseDNN, e_l_picked, e_w) -> WorstCase:
    """Single-input prediction partitioned into (p_L, p_W, p_G, q_G)."""
    out = predict_raw(dnn, np.concatenate([e_l_picked, e_w]))[0]
    nl, nw, ng = dnn.nl, dnn.nw, dnn.ng
    return WorstCase(p_l=out[:nl], p_w=out[nl:nl + nw],
                     p_g=out[nl + nw:nl + nw + ng],
                     q_g=out[nl + nw + ng:], objective=float("nan"))


def correct_to_vertices(raw: WorstCase, phi: UncertaintySet, decision) -> WorstCase:
    """Project a predicted worst case onto the vertices of the uncertainty
    set.  The dispatch cost is monotone increasing in every picked load
    (the structural fact the labeler exploits), so the exact worst case
    always sits at the load upper bounds; picked loads snap there directly.
    Wind coordinates go to the nearer bound, midpoint ties to the lower
    bound (conservative for frequency).  Unpicked loads go to 0."""
    x = np.asarray(decision, float)
    p_l = phi.load_up * x
    lo, up = phi.wind_low, phi.wind_up
    p_w = np.where(raw.p_w - lo < up - raw.p_w, lo, up)
    p_w = np.where(raw.p_w - lo == up - raw.p_w, lo, p_w)  # ties -> lower
    return WorstCase(p_l=p_l, p_w=p_w, p_g=raw.p_g.copy(), q_g=raw.q_g.copy(),
                     objective=raw.objective)


def accuracy(dnn: WorstCaseDNN, inputs, targets, group_slices=None) -> dict:
    """1 - mean absolute error in scaled [0,1] space, overall and per group.
    Constant target columns are excluded from the averages."""
    if len(inputs) == 0:
        return {}
    pred = dnn.net.forward(dnn.in_scaler.transform(np.atleast_2d(inputs)))
    truth = dnn.out_scaler.transform(np.atleast_2d(targets))
    err = np.abs(pred - truth)
    keep = ~dnn.out_scaler.constant_mask
    out = {"overall": float(1.0 - err[:, keep].mean())}
    if group_slices:
        for name, sl in group_slices.items():
            k = keep[sl]
            if k.any():
                out[name] = float(1.0 - err[:, sl][:, k].mean())
    return out
