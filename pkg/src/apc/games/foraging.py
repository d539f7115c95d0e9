"""Foraging with forbidden berries that only special agents can harvest."""

from __future__ import annotations

import numpy as np

from apc.games.grid import STAY, GridGame

COMMON_VALUE = 3.0
DEGRADED_VALUE = 1.0
FORBIDDEN_VALUE = 4.0


class Foraging(GridGame):
    name = "foraging"
    cooperative_tags = frozenset({"common"})
    resource_channels = ("berry", "forbidden")

    def __init__(
        self,
        num_agents: int = 12,
        size: int = 10,
        horizon: int = 100,
        special: int = 2,
        berries: int = 20,
        forbidden: int = 4,
        radius: int = 3,
        agent_channels: str = "merged",
    ):
        super().__init__(num_agents, size, size, horizon, radius, agent_channels)
        self.special = np.zeros(num_agents, dtype=bool)
        self.special[:special] = True
        self.n_berries, self.n_forbidden = berries, forbidden
        self.degraded = False
        self.cooperate_action = STAY
        self.defect_action = STAY

    def _reset(self) -> None:
        self.layers = {}
        self._place_agents()
        self._scatter("berry", self.n_berries)
        self._scatter("forbidden", self.n_forbidden)
        self.degraded = False

    def _transition(self, actions: np.ndarray) -> np.ndarray:
        self._move(actions)
        rewards = np.zeros(self.n)
        forbidden, berry = self.layers["forbidden"], self.layers["berry"]
        for i in np.flatnonzero(self.special):
            r, c = self.pos[i]
            if forbidden[r, c]:
                forbidden[r, c] = False
                rewards[i] += FORBIDDEN_VALUE
                self.degraded = True
                self.last_events.append((int(i), "forbidden"))
        value = DEGRADED_VALUE if self.degraded else COMMON_VALUE
        for i in range(self.n):
            r, c = self.pos[i]
            if berry[r, c]:
                berry[r, c] = False
                rewards[i] += value
                self.last_events.append((i, "common"))
                cell = self._random_free_cell()
                if cell is not None:
                    berry[cell] = True
        return rewards

    def scripted_action(self, agent: int, kind: str, rng: np.random.Generator) -> int:
        if kind == "always_defect" and self.special[agent] and self.layers["forbidden"].any():
            return self.step_toward(agent, self.nearest(agent, self.layers["forbidden"]))
        if kind in ("always_cooperate", "always_defect"):
            target = self.nearest(agent, self.layers["berry"])
            return STAY if target is None else self.step_toward(agent, target)
        return int(rng.integers(self.spec.action_space_sizes[agent]))
