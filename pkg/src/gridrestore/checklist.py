"""Load pickup checklist generation: the frequency-bounded first decision
and the descending-amount enumeration of candidate pickup combinations.

Each decision is a binary vector over load blocks; the checklist stores
decisions in strictly decreasing order of expected pickup amount, to be
scanned online by the strategy-selection loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .net import PowerNetwork, SecurityLimits
from .pf import load_pickup_upper_bound
from .solver import LinearProgram, MixedIntegerProgram, solve_milp

SIGMA_DEFAULT = 1e-4
# deterministic tie-break between equal-amount combinations: a tiny
# index-weighted cost prefers the lexicographically smallest selection
_TIE_EPS = 1e-9


class Exhausted(Exception):
    """No pickup combination remains in the requested amount band."""


@dataclass
class Checklist:
    decisions: list[np.ndarray]  # binary vectors over load blocks
    amounts: list[float]  # expected pickup MW, strictly decreasing
    params: dict = field(default_factory=dict)  # l_upp, l_pick_low, sigma, i_max

    def __len__(self):
        return len(self.decisions)

    def __iter__(self):
        return iter(self.decisions)

    def save(self, path: str | Path) -> None:
        doc = {"params": self.params, "amounts": self.amounts,
               "decisions": [d.astype(int).tolist() for d in self.decisions]}
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Checklist":
        doc = json.loads(Path(path).read_text())
        return cls(decisions=[np.array(d, float) for d in doc["decisions"]],
                   amounts=doc["amounts"], params=doc["params"])


def _amount_milp(amounts, target, low=None, upp=None, forced_zero=()):
    """argmin |sum(a x) - target| over binary x, optionally band-restricted.

    The scalar distance is linearized with an auxiliary deviation variable;
    returns (x, amount) or raises Exhausted on an empty band.
    """
    a = np.asarray(amounts, float)
    nl = len(a)
    n = nl + 1  # x | t
    c = np.zeros(n)
    c[:nl] = _TIE_EPS * (np.arange(nl) + 1)
    c[nl] = 1.0
    rows, rhs = [], []
    for s in (1.0, -1.0):  # t >= +-(a x - target)
        r = np.zeros(n)
        r[:nl] = s * a
        r[nl] = -1.0
        rows.append(r)
        rhs.append(s * target)
    if upp is not None:
        r = np.zeros(n)
        r[:nl] = a
        rows.append(r)
        rhs.append(upp)
    if low is not None:
        r = np.zeros(n)
        r[:nl] = -a
        rows.append(r)
        rhs.append(-low)
    bounds = [(0.0, 1.0)] * nl + [(0.0, None)]
    for i in forced_zero:
        bounds[i] = (0.0, 0.0)
    lp = LinearProgram(c=c, a_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds)
    sol = solve_milp(MixedIntegerProgram(base=lp, integer_vars=list(range(nl))))
    if sol.status == "infeasible":
        raise Exhausted(f"no combination in band [{low}, {upp}]")
    if sol.status != "optimal":
        raise RuntimeError(f"checklist MILP: {sol.status}")
    x = np.round(sol.primal[:nl])
    return x, float(a @ x)


def initial_decision(net: PowerNetwork, l_upp: float, available=None):
    """First checklist entry: the combination whose expected amount comes
    closest to the pickup upper bound without exceeding it."""
    amounts = [l.expected_amount for l in net.load_blocks]
    forced = _forced_zero(len(amounts), available)
    return _amount_milp(amounts, l_upp, upp=l_upp, forced_zero=forced)


def next_decision(net: PowerNetwork, l_pick_upp: float, l_pick_low: float,
                  sigma: float = SIGMA_DEFAULT, available=None):
    """Best combination strictly below the previous amount: maximizes the
    expected amount inside [l_pick_low, l_pick_upp - sigma]."""
    if l_pick_low >= l_pick_upp:
        raise Exhausted("band is empty")
    amounts = [l.expected_amount for l in net.load_blocks]
    forced = _forced_zero(len(amounts), available)
    return _amount_milp(amounts, l_pick_upp - sigma,
                        low=l_pick_low, upp=l_pick_upp - sigma,
                        forced_zero=forced)


def _forced_zero(nl, available):
    if available is None:
        return ()
    avail = set(available)
    return tuple(i for i in range(nl) if i not in avail)


def generate_lpc(net: PowerNetwork, limits: SecurityLimits,
                 l_pick_low: float | None = None, i_max: int = 60,
                 sigma: float = SIGMA_DEFAULT, l_upp: float | None = None,
                 available=None) -> Checklist:
    """Generate the ordered checklist of pickup decisions.

    l_upp defaults to the frequency-derived bound; l_pick_low to half of
    it.  available optionally restricts the candidate load blocks (blocks
    already restored in earlier steps are not re-decided).  Generation
    stops at i_max entries, on a repeated decision, or when the band is
    exhausted.
    """
    if i_max < 1:
        raise ValueError("i_max must be >= 1")
    if l_upp is None:
        l_upp = load_pickup_upper_bound(limits, net.generators, net.wind_farms)
    if l_pick_low is None:
        l_pick_low = 0.5 * l_upp
    params = {"l_upp": l_upp, "l_pick_low": l_pick_low,
              "sigma": sigma, "i_max": i_max}

    x, amount = initial_decision(net, l_upp, available)
    decisions, amounts = [x], [amount]
    while len(decisions) < i_max:
        try:
            x, amount = next_decision(net, amounts[-1], l_pick_low, sigma,
                                      available)
        except Exhausted:
            break
        if np.array_equal(x, decisions[-1]):
            break
        decisions.append(x)
        amounts.append(amount)
    return Checklist(decisions=decisions, amounts=amounts, params=params)
