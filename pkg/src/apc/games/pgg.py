"""Iterated public goods game and its graded-contribution variant."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from apc.env.core import GameSpec, MarkovGame


@dataclass(frozen=True)
class IpggParams:
    n: int = 5
    e: float = 1.0
    r: float = 3.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if self.e <= 0:
            raise ValueError(f"endowment e must be positive, got {self.e}")
        if not 1 < self.r < self.n:
            raise ValueError(f"dilemma needs 1 < r < n, got r={self.r}, n={self.n}")


@dataclass(frozen=True)
class ContributionLevel:
    label: str
    fraction: float


IPGG_LEVELS = (ContributionLevel("C", 1.0), ContributionLevel("D", 0.0))
# "C-x" contributes the fraction x of the endowment.
MIPGG_LEVELS = (
    ContributionLevel("C", 1.0),
    ContributionLevel("C-0.1", 0.1),
    ContributionLevel("C-0.2", 0.2),
    ContributionLevel("D", 0.0),
)
_MIPGG_BY_LABEL = {lvl.label: lvl for lvl in MIPGG_LEVELS}
_MIPGG_BY_LABEL.update({"Contribute": MIPGG_LEVELS[0], "Defect": MIPGG_LEVELS[3]})


def ipgg_rewards(fractions: Sequence[float], params: IpggParams = IpggParams()) -> np.ndarray:
    """Pool share minus own contribution, per agent."""
    frac = np.asarray(fractions, dtype=np.float64)
    if frac.shape != (params.n,):
        raise ValueError(f"expected {params.n} fractions, got {frac.shape}")
    if np.any((frac < 0) | (frac > 1)):
        raise ValueError("contribution fractions must lie in [0, 1]")
    share = params.r * params.e * frac.sum() / params.n
    return share - params.e * frac


def mipgg_rewards(levels: Sequence[ContributionLevel | str], params: IpggParams = IpggParams()) -> np.ndarray:
    fracs = []
    for lvl in levels:
        if isinstance(lvl, str):
            try:
                lvl = _MIPGG_BY_LABEL[lvl]
            except KeyError:
                raise ValueError(f"unknown contribution level {lvl!r}") from None
        fracs.append(lvl.fraction)
    return ipgg_rewards(fracs, params)


class PublicGoodsGame(MarkovGame):
    """Repeated public goods game; the observation is last round's joint action, one-hot."""

    name = "ipgg"
    levels: tuple[ContributionLevel, ...] = IPGG_LEVELS

    def __init__(self, params: IpggParams = IpggParams(), horizon: int = 50):
        k = len(self.levels)
        super().__init__(GameSpec(params.n, (k,) * params.n, (params.n * k,), horizon))
        self.params = params
        self.fractions = np.array([lvl.fraction for lvl in self.levels])
        self.action_labels = tuple(lvl.label for lvl in self.levels)
        self.cooperate_action = 0
        self.defect_action = k - 1
        self.prev_actions: np.ndarray | None = None

    def _reset(self) -> None:
        self.prev_actions = None

    def _transition(self, actions: np.ndarray) -> np.ndarray:
        self.prev_actions = actions.copy()
        self.last_events = [(i, self.action_labels[a]) for i, a in enumerate(actions)]
        return ipgg_rewards(self.fractions[actions], self.params)

    def _observe(self) -> np.ndarray:
        n, k = self.n, len(self.levels)
        onehot = np.zeros((n, k), dtype=np.float32)
        if self.prev_actions is not None:
            onehot[np.arange(n), self.prev_actions] = 1.0
        # fully observable: everybody sees the same vector
        return np.repeat(onehot.reshape(1, -1), n, axis=0)

    def cooperation_rate(self, events):
        """Mean contributed fraction."""
        if not events:
            return float("nan")
        by_label = dict(zip(self.action_labels, self.fractions))
        return float(np.mean([by_label[tag] for _, tag in events]))

    def contribution(self, actions: np.ndarray) -> np.ndarray:
        return self.fractions[np.asarray(actions)]

    def render(self) -> str:
        last = "-" if self.prev_actions is None else " ".join(self.action_labels[a] for a in self.prev_actions)
        return f"{self.name} t={self.t} last=[{last}]"


class IPGG(PublicGoodsGame):
    name = "ipgg"
    levels = IPGG_LEVELS


class MIPGG(PublicGoodsGame):
    name = "mipgg"
    levels = MIPGG_LEVELS
