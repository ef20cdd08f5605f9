"""Shared fixtures: the packaged 30-bus case and randomized toy networks
small enough for exhaustive oracles."""

from __future__ import annotations

import numpy as np
import pytest

from gridrestore.config import packaged_case
from gridrestore.net import (Branch, Bus, BusType, Generator, LoadBlock,
                             PowerNetwork, SecurityLimits, WindFarm,
                             load_matpower_case)


def toy_network(n_bus=4, n_gen=2, n_wind=1, n_load=3, seed=0,
                load_mw=(3.0, 10.0), branch_limit_mva=500.0,
                delta_f_max=0.01) -> PowerNetwork:
    """Random connected network with ample generation, sized so brute-force
    vertex enumeration stays cheap."""
    rng = np.random.default_rng(seed)
    buses = [Bus(id=0, type=BusType.SLACK)] + \
            [Bus(id=i) for i in range(1, n_bus)]
    branches = []
    for i in range(n_bus):  # ring keeps it connected
        j = (i + 1) % n_bus
        r, x = rng.uniform(0.02, 0.08), rng.uniform(0.06, 0.2)
        y = 1.0 / complex(r, x)
        branches.append(Branch(from_bus=i, to_bus=j, g=y.real, b=y.imag,
                               s_max=branch_limit_mva))
    gens = []
    for j in range(n_gen):
        p_max = rng.uniform(25.0, 60.0)
        gens.append(Generator(bus=int(rng.integers(n_bus)), p_min=0.0,
                              p_max=p_max, q_min=-0.75 * p_max,
                              q_max=0.75 * p_max, ramp_rate=p_max / 20.0,
                              capacity=1.1 * p_max, freq_response_rate=0.04))
    winds = [WindFarm(bus=int(rng.integers(n_bus)),
                      expected_output=float(rng.uniform(3.0, 10.0)),
                      initial_output=float(rng.uniform(0.0, 2.0)))
             for _ in range(n_wind)]
    loads = [LoadBlock(bus=int(rng.integers(n_bus)),
                       expected_amount=float(rng.uniform(*load_mw)),
                       power_factor=float(rng.uniform(0.85, 0.98)),
                       priority_weight=float(rng.choice([2.0, 3.0, 5.0])))
             for _ in range(n_load)]
    return PowerNetwork(buses=buses, branches=branches, generators=gens,
                        wind_farms=winds, load_blocks=loads)


def toy_limits(delta_f_max=0.01) -> SecurityLimits:
    return SecurityLimits(v_min=0.9, v_max=1.1, delta_f_max=delta_f_max)


@pytest.fixture(scope="session")
def net30():
    case, overlay = packaged_case()
    return load_matpower_case(case, overlay)


@pytest.fixture(scope="session")
def limits30():
    return SecurityLimits()
