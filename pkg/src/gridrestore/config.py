"""Run configuration: one JSON-serializable object collecting every knob of
the pipeline (case data, uncertainty deviations, security limits, checklist
parameters, surrogate training settings, seeds, output locations).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .net import SecurityLimits
from .nn import TrainingConfig


def packaged_case(name: str = "ieee30"):
    """Paths of a case file and overlay shipped with the package."""
    root = resources.files("gridrestore") / "cases"
    return str(root / f"{name}.m"), str(root / f"{name}_overlay.json")


@dataclass
class LpcConfig:
    i_max: int = 300
    l_pick_low_frac: float = 0.1  # of the frequency-derived upper bound
    sigma: float = 1e-4


@dataclass
class RunConfig:
    case_path: str = ""
    overlay_path: str | None = None
    load_dev: float = 0.10
    wind_dev: float = 0.20
    v_min: float = 0.95
    v_max: float = 1.05
    delta_f_max: float = 0.005
    step_minutes: float = 30.0
    max_steps: int = 8
    lpc: LpcConfig = field(default_factory=LpcConfig)
    dnn_samples: int = 2000  # split 3:1 into train/test
    dnn_train: TrainingConfig = field(default_factory=lambda: TrainingConfig(
        learning_rate=0.08, epochs=500, seed=1, batch_size=16,
        lr_decay=0.9926))
    dnn_hidden: tuple = (1000, 1000, 1000)
    cnn_train: TrainingConfig = field(default_factory=lambda: TrainingConfig(
        learning_rate=0.04, epochs=1000, seed=2, batch_size=16,
        lr_decay=0.9963))
    cnn_fc_width: int = 3000
    test_fraction: float = 0.25
    v_margin: float = 0.0
    s_margin: float = 0.0
    seed: int = 7
    output_dir: str = "artifacts"

    def __post_init__(self):
        if not self.case_path:
            self.case_path, overlay = packaged_case()
            if self.overlay_path is None:
                self.overlay_path = overlay

    @property
    def limits(self) -> SecurityLimits:
        return SecurityLimits(v_min=self.v_min, v_max=self.v_max,
                              delta_f_max=self.delta_f_max)

    def network(self):
        from .net import load_matpower_case, load_network_json
        if self.case_path.endswith(".json"):
            return load_network_json(self.case_path)
        return load_matpower_case(self.case_path, self.overlay_path)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        d = json.loads(Path(path).read_text())
        for key in ("dnn_train", "cnn_train"):
            if key in d:
                d[key] = TrainingConfig(**d[key])
        if "lpc" in d:
            d["lpc"] = LpcConfig(**d["lpc"])
        if "dnn_hidden" in d:
            d["dnn_hidden"] = tuple(d["dnn_hidden"])
        return cls(**d)
