"""Physical network model: buses, branches, generators, wind farms, load blocks.

All electrical quantities on the wire format are in engineering units
(MW / MVAr / MVA); per-unit conversion happens at the point of use with
``PowerNetwork.base_mva``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path


class BusType(Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


class NetworkError(ValueError):
    """Raised for structurally invalid network data."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: BusType = BusType.PQ
    shunt_susceptance: float = 0.0  # p.u. at V=1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    g: float  # series conductance, p.u.
    b: float  # series susceptance, p.u.
    s_max: float  # MVA

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"branch endpoints coincide at bus {self.from_bus}")
        if self.s_max <= 0:
            raise NetworkError("branch s_max must be positive")


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float  # MW
    p_max: float  # MW
    q_min: float  # MVAr
    q_max: float  # MVAr
    ramp_rate: float  # MW per minute
    capacity: float  # MVA
    freq_response_rate: float  # dimensionless
    started_at: float = 0.0  # minutes since restoration start

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise NetworkError("generator p_min > p_max")
        if self.capacity <= 0 or self.freq_response_rate <= 0:
            raise NetworkError("generator capacity and response rate must be positive")

    def p_available(self, t: float) -> float:
        """Active power capability at minute t, limited by ramping since start."""
        if t <= self.started_at:
            return 0.0
        return min(self.p_max, self.ramp_rate * (t - self.started_at))


@dataclass(frozen=True)
class WindFarm:
    bus: int
    expected_output: float  # MW, current step
    initial_output: float = 0.0  # MW, previous step

    def __post_init__(self):
        if self.expected_output < 0 or self.initial_output < 0:
            raise NetworkError("wind outputs must be nonnegative")


@dataclass(frozen=True)
class LoadBlock:
    bus: int
    expected_amount: float  # MW
    power_factor: float = 0.95
    priority_weight: float = 1.0

    def __post_init__(self):
        if self.expected_amount < 0:
            raise NetworkError("load expected_amount must be nonnegative")
        if not (0.0 < self.power_factor <= 1.0):
            raise NetworkError("power_factor must lie in (0, 1]")

    @property
    def tan_phi(self) -> float:
        pf = self.power_factor
        return (1.0 - pf * pf) ** 0.5 / pf


@dataclass(frozen=True)
class SecurityLimits:
    v_min: float = 0.95
    v_max: float = 1.05
    delta_f_max: float = 0.005  # per-unit frequency

    def __post_init__(self):
        if not (0 < self.v_min < self.v_max):
            raise NetworkError("need 0 < v_min < v_max")
        if self.delta_f_max <= 0:
            raise NetworkError("delta_f_max must be positive")


@dataclass
class PowerNetwork:
    buses: list[Bus]
    branches: list[Branch]
    generators: list[Generator]
    wind_farms: list[WindFarm] = field(default_factory=list)
    load_blocks: list[LoadBlock] = field(default_factory=list)
    base_mva: float = 100.0

    def __post_init__(self):
        n = len(self.buses)
        ids = [b.id for b in self.buses]
        if ids != list(range(n)):
            raise NetworkError("bus ids must be dense 0..N-1 in order")
        if sum(1 for b in self.buses if b.type is BusType.SLACK) != 1:
            raise NetworkError("exactly one slack bus required")
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise NetworkError("branch references unknown bus")
        for coll in (self.generators, self.wind_farms, self.load_blocks):
            for item in coll:
                if not 0 <= item.bus < n:
                    raise NetworkError(f"{type(item).__name__} references unknown bus")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.type is BusType.SLACK)

    def largest_generator(self) -> int:
        """Index of the unit excluded from frequency response (reserve rule)."""
        return max(range(len(self.generators)),
                   key=lambda j: self.generators[j].capacity)

    def freq_response_sum(self) -> float:
        """Sum of s_j / eps_j (MVA) over all responding units, excluding the
        largest one as reserve against its loss."""
        big = self.largest_generator() if self.generators else -1
        return sum(g.capacity / g.freq_response_rate
                   for j, g in enumerate(self.generators) if j != big)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def network_to_dict(net: PowerNetwork) -> dict:
    d = {
        "base_mva": net.base_mva,
        "buses": [{**asdict(b), "type": b.type.value} for b in net.buses],
        "branches": [asdict(b) for b in net.branches],
        "generators": [asdict(g) for g in net.generators],
        "wind_farms": [asdict(w) for w in net.wind_farms],
        "load_blocks": [asdict(l) for l in net.load_blocks],
    }
    return d


def network_from_dict(d: dict) -> PowerNetwork:
    return PowerNetwork(
        buses=[Bus(id=b["id"], type=BusType(b.get("type", "pq")),
                   shunt_susceptance=b.get("shunt_susceptance", 0.0))
               for b in d["buses"]],
        branches=[Branch(**br) for br in d["branches"]],
        generators=[Generator(**g) for g in d["generators"]],
        wind_farms=[WindFarm(**w) for w in d.get("wind_farms", [])],
        load_blocks=[LoadBlock(**l) for l in d.get("load_blocks", [])],
        base_mva=d.get("base_mva", 100.0),
    )


def load_network_json(path: str | Path) -> PowerNetwork:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network_json(net: PowerNetwork, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=1)


# ---------------------------------------------------------------------------
# MATPOWER-style case import
# ---------------------------------------------------------------------------

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([\d.eE+-]+)\s*;")


def _parse_matrix(text: str) -> list[list[float]]:
    rows = []
    for line in text.strip().splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if not line:
            continue
        rows.append([float(tok) for tok in line.replace(",", " ").split()])
    return rows


def load_matpower_case(path: str | Path, overlay: str | Path | None = None) -> PowerNetwork:
    """Parse a MATPOWER-format text case into a PowerNetwork.

    Bus numbering in the file is 1-based and may be sparse; buses are
    renumbered densely in file order.  Line charging is lumped onto the
    terminal buses as shunt susceptance (b/2 each side).  Restoration
    metadata that the case format does not carry (wind farms, load blocks,
    generator ramping and frequency-response data) comes from a companion
    JSON overlay; without an overlay, generators get permissive defaults
    and each nonzero bus demand becomes one load block.
    """
    text = Path(path).read_text()
    m = _SCALAR_RE.search(text)
    base_mva = float(m.group(1)) if m else 100.0
    mats = {name: _parse_matrix(body) for name, body in _MATRIX_RE.findall(text)}
    if "bus" not in mats or "branch" not in mats:
        raise NetworkError(f"{path}: missing mpc.bus or mpc.branch")

    id_map = {int(row[0]): i for i, row in enumerate(mats["bus"])}
    n = len(id_map)
    shunt = [0.0] * n
    buses_raw = []
    for row in mats["bus"]:
        i = id_map[int(row[0])]
        btype = {3: BusType.SLACK, 2: BusType.PV, 1: BusType.PQ}.get(int(row[1]), BusType.PQ)
        shunt[i] += row[5] / base_mva  # Bs column, MVAr at V=1
        buses_raw.append((i, btype, row[2], row[3]))  # keep Pd, Qd for defaults

    branches = []
    for row in mats["branch"]:
        f, t = id_map[int(row[0])], id_map[int(row[1])]
        r, x, bch = row[2], row[3], row[4]
        y = complex(r, x)
        if abs(y) == 0:
            raise NetworkError(f"branch {row[0]}-{row[1]} has zero impedance")
        ys = 1.0 / y
        s_max = row[5] if len(row) > 5 and row[5] > 0 else 10.0 * base_mva
        shunt[f] += bch / 2.0
        shunt[t] += bch / 2.0
        branches.append(Branch(from_bus=f, to_bus=t, g=ys.real, b=ys.imag, s_max=s_max))

    gens = []
    for row in mats.get("gen", []):
        bus = id_map[int(row[0])]
        p_max = row[8] if len(row) > 8 else max(row[1], 1.0)
        p_min = row[9] if len(row) > 9 else 0.0
        gens.append(Generator(
            bus=bus, p_min=p_min, p_max=p_max,
            q_min=row[4], q_max=row[3],
            ramp_rate=max(p_max, 1.0) / 30.0,  # default: full range in 30 min
            capacity=max(p_max, 1.0) * 1.1,
            freq_response_rate=0.05,
        ))

    overlay_data = {}
    if overlay is not None:
        with open(overlay) as fh:
            overlay_data = json.load(fh)

    if "generators" in overlay_data:
        gens = [Generator(**g) for g in overlay_data["generators"]]
    winds = [WindFarm(**w) for w in overlay_data.get("wind_farms", [])]
    if "load_blocks" in overlay_data:
        loads = [LoadBlock(**l) for l in overlay_data["load_blocks"]]
    else:
        loads = [LoadBlock(bus=i, expected_amount=pd,
                           power_factor=_pf_from_pq(pd, qd))
                 for i, _, pd, qd in buses_raw if pd > 0]

    buses = [Bus(id=i, type=btype, shunt_susceptance=shunt[i])
             for i, btype, _, _ in buses_raw]
    return PowerNetwork(buses=buses, branches=branches, generators=gens,
                        wind_farms=winds, load_blocks=loads, base_mva=base_mva)


def _pf_from_pq(p: float, q: float) -> float:
    s = (p * p + q * q) ** 0.5
    return min(max(p / s, 0.05), 1.0) if s > 0 else 1.0
