"""Sequential Snowdrift: clearing a pile pays every agent 6 and costs the clearer 4."""

from __future__ import annotations

import numpy as np

from apc.games.grid import STAY, GridGame

PILE_BENEFIT = 6.0
PILE_COST = 4.0


class Snowdrift(GridGame):
    name = "ssg"
    cooperative_tags = frozenset({"clear"})
    resource_channels = ("pile",)

    def __init__(
        self,
        num_agents: int = 4,
        size: int = 8,
        horizon: int = 50,
        piles: int = 6,
        radius: int = 3,
        agent_channels: str = "merged",
    ):
        super().__init__(num_agents, size, size, horizon, radius, agent_channels)
        self.n_piles = piles
        self.cooperate_action = STAY
        self.defect_action = STAY

    def _reset(self) -> None:
        self.layers = {}
        self._place_agents()
        self._scatter("pile", self.n_piles)

    def _transition(self, actions: np.ndarray) -> np.ndarray:
        self._move(actions)
        rewards = np.zeros(self.n)
        piles = self.layers["pile"]
        for i in range(self.n):
            r, c = self.pos[i]
            if piles[r, c]:
                piles[r, c] = False
                rewards += PILE_BENEFIT
                rewards[i] -= PILE_COST
                self.last_events.append((i, "clear"))
        return rewards

    def cooperation_rate(self, events):
        """Share of the initial piles that got cleared."""
        return sum(tag == "clear" for _, tag in events) / self.n_piles

    def _terminal(self) -> bool:
        return not self.layers["pile"].any()

    def scripted_action(self, agent: int, kind: str, rng: np.random.Generator) -> int:
        if kind == "always_cooperate":
            target = self.nearest(agent, self.layers["pile"])
            return STAY if target is None else self.step_toward(agent, target)
        if kind == "always_defect":
            return STAY
        return int(rng.integers(self.spec.action_space_sizes[agent]))
