"""Convolutional surrogate for AC power flow: regresses bus angles and
voltage magnitudes from the injection image [P; Q; diag(B)], so security
can be screened without running a power-flow solve online.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .net import PowerNetwork, SecurityLimits
from .nn import ConvLayer, DenseLayer, Flatten, NeuralNet, Scaler, TrainingConfig
from .pf import PFSolution, ac_power_flow, admittance_matrix, branch_flows, check_security
from .robust import RestorationModel, evaluate_second_stage
from .worstcase_dnn import DnnDataset


@dataclass
class CnnDataset:
    inputs: np.ndarray  # (n, 3*N): rows [P ; Q ; diag(B)] flattened, p.u.
    targets: np.ndarray  # (n, 2*N): [theta ; v]
    n_bus: int
    skipped: int = 0

    def __len__(self):
        return len(self.inputs)

    @property
    def group_slices(self):
        return {"theta": slice(0, self.n_bus),
                "v": slice(self.n_bus, 2 * self.n_bus)}

    def loss_weights(self):
        # mean of the two per-group MSEs (angles, voltages)
        return np.full(2 * self.n_bus, 1.0 / (2 * self.n_bus))

    def save_csv(self, path: str | Path) -> None:
        n = self.n_bus
        cols = ([f"in_p_{i}" for i in range(n)] + [f"in_q_{i}" for i in range(n)]
                + [f"in_b_{i}" for i in range(n)]
                + [f"t_theta_{i}" for i in range(n)] + [f"t_v_{i}" for i in range(n)])
        np.savetxt(path, np.hstack([self.inputs, self.targets]),
                   delimiter=",", header=",".join(cols), comments="")

    @classmethod
    def load_csv(cls, path: str | Path, n_bus: int) -> "CnnDataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(inputs=data[:, :3 * n_bus], targets=data[:, 3 * n_bus:],
                   n_bus=n_bus)


def injections_from_state(net: PowerNetwork, decision, p_l, p_w_delivered,
                          p_g, q_g, fixed_p=None, fixed_q=None):
    """Per-bus MW / MVAr injections implied by a dispatch and realization."""
    n = net.n_bus
    P = np.zeros(n) if fixed_p is None else -np.asarray(fixed_p, float).copy()
    Q = np.zeros(n) if fixed_q is None else -np.asarray(fixed_q, float).copy()
    for j, g in enumerate(net.generators):
        P[g.bus] += p_g[j]
        Q[g.bus] += q_g[j]
    x = np.asarray(decision, float)
    for k, l in enumerate(net.load_blocks):
        P[l.bus] -= x[k] * p_l[k]
        Q[l.bus] -= x[k] * p_l[k] * l.tan_phi
    for w, wf in enumerate(net.wind_farms):
        P[wf.bus] += p_w_delivered[w]
    return P, Q


def generate_cnn_dataset(net: PowerNetwork, dnn_dataset: DnnDataset,
                         model: RestorationModel,
                         residual_tol: float = 1e-8) -> CnnDataset:
    """Exact-PF labels for every worst-case scenario in a DNN dataset.

    The dispatch is re-evaluated once per scenario to recover delivered
    (post-curtailment) wind; the AC solution then defines the targets.
    Non-converged cases are skipped and counted.
    """
    nl, nw, ng = dnn_dataset.nl, dnn_dataset.nw, dnn_dataset.ng
    base = net.base_mva
    bdiag = np.diag(admittance_matrix(net).imag)
    inputs, targets = [], []
    skipped = 0
    for k in range(len(dnn_dataset)):
        row_in = dnn_dataset.inputs[k]
        row_t = dnn_dataset.targets[k]
        x = (row_in[:nl] > 0).astype(float)
        p_l = row_t[:nl]
        p_w = row_t[nl:nl + nw]
        stage = evaluate_second_stage(model, x, p_l, p_w)
        if stage.status != "optimal":
            skipped += 1
            continue
        P, Q = injections_from_state(net, x, p_l, stage.w_del,
                                     stage.p_g, stage.q_g)
        pf = ac_power_flow(net, P, Q, tol=residual_tol)
        if not pf.converged:
            skipped += 1
            continue
        inputs.append(np.concatenate([P / base, Q / base, bdiag]))
        targets.append(np.concatenate([pf.theta, pf.v]))
    return CnnDataset(inputs=np.array(inputs), targets=np.array(targets),
                      n_bus=net.n_bus, skipped=skipped)


@dataclass
class PFCNN:
    net: NeuralNet
    in_scaler: Scaler
    out_scaler: Scaler
    n_bus: int
    metrics: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = self.net.to_dict()
        doc["scalers"] = {"in": self.in_scaler.to_dict(),
                          "out": self.out_scaler.to_dict()}
        doc["n_bus"] = self.n_bus
        doc["metrics"] = self.metrics
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "PFCNN":
        doc = json.loads(Path(path).read_text())
        return cls(net=NeuralNet.from_dict(doc),
                   in_scaler=Scaler.from_dict(doc["scalers"]["in"]),
                   out_scaler=Scaler.from_dict(doc["scalers"]["out"]),
                   n_bus=doc["n_bus"], metrics=doc.get("metrics", {}))


def build_cnn(n_bus: int, rng, fc_width: int = 3000) -> NeuralNet:
    """Two 3x3 conv layers (12, 24 channels), a wide dense layer, and a
    linear head over [theta ; v]."""
    layers = [ConvLayer.init(3, 3, 1, 12, rng),
              ConvLayer.init(3, 3, 12, 24, rng),
              Flatten(),
              DenseLayer.init(3 * n_bus * 24, fc_width, rng),
              DenseLayer.init(fc_width, 2 * n_bus, rng, activation="identity")]
    return NeuralNet(layers, input_shape=(3, n_bus, 1))


def train_pf_cnn(dataset: CnnDataset, cfg: TrainingConfig,
                 fc_width: int = 3000, test_fraction: float = 0.25):
    """Fit the PF surrogate; returns (PFCNN, history)."""
    n = len(dataset)
    order = np.random.default_rng(cfg.seed).permutation(n)
    n_test = int(round(n * test_fraction))
    te, tr = order[:n_test], order[n_test:]
    in_s = Scaler().fit(dataset.inputs[tr])
    out_s = Scaler().fit(dataset.targets[tr])
    rng = np.random.default_rng(cfg.seed)
    net = build_cnn(dataset.n_bus, rng, fc_width)
    w = dataset.loss_weights()
    history = net.train(in_s.transform(dataset.inputs[tr]),
                        out_s.transform(dataset.targets[tr]), cfg,
                        loss_weights=w)
    cnn = PFCNN(net=net, in_scaler=in_s, out_scaler=out_s, n_bus=dataset.n_bus)
    cnn.metrics = {
        "final_loss": history[-1],
        "epochs_run": len(history),
        "train": cnn_accuracy(cnn, dataset.inputs[tr], dataset.targets[tr],
                              dataset.group_slices),
        "test": cnn_accuracy(cnn, dataset.inputs[te], dataset.targets[te],
                             dataset.group_slices),
        "n_train": len(tr), "n_test": len(te),
    }
    return cnn, history


def predict_pf(cnn: PFCNN, p_mw, q_mw, net: PowerNetwork):
    """Surrogate PF states for a batch of MW / MVAr injection vectors;
    returns (theta, v) arrays of shape (m, N)."""
    p = np.atleast_2d(np.asarray(p_mw, float)) / net.base_mva
    q = np.atleast_2d(np.asarray(q_mw, float)) / net.base_mva
    bdiag = np.diag(admittance_matrix(net).imag)
    bim = np.tile(bdiag, (len(p), 1))
    out = cnn.out_scaler.inverse(
        cnn.net.forward(cnn.in_scaler.transform(np.hstack([p, q, bim]))))
    n = cnn.n_bus
    return out[:, :n], out[:, n:]


def cnn_accuracy(cnn: PFCNN, inputs, targets, group_slices=None) -> dict:
    """1 - mean absolute error in scaled space, constant columns excluded."""
    if len(inputs) == 0:
        return {}
    pred = cnn.net.forward(cnn.in_scaler.transform(np.atleast_2d(inputs)))
    truth = cnn.out_scaler.transform(np.atleast_2d(targets))
    err = np.abs(pred - truth)
    keep = ~cnn.out_scaler.constant_mask
    out = {"overall": float(1.0 - err[:, keep].mean())}
    if group_slices:
        for name, sl in group_slices.items():
            k = keep[sl]
            if k.any():
                out[name] = float(1.0 - err[:, sl][:, k].mean())
    return out


def security_check_surrogate(net: PowerNetwork, theta, v, dispatch,
                             limits: SecurityLimits, t: float | None = None,
                             v_margin: float = 0.0, s_margin: float = 0.0):
    """Voltage / branch / generator checks at a surrogate-predicted state."""
    bp, bq = branch_flows(net, v, theta)
    pf = PFSolution(v=np.asarray(v, float), theta=np.asarray(theta, float),
                    branch_p=bp, branch_q=bq, converged=True, iterations=0)
    d = dict(dispatch)
    if t is not None:
        d["t"] = t
    return check_security(net, pf, d, limits, v_margin=v_margin,
                          s_margin=s_margin)
