"""Coin Game on a torus: any coin pays +1, an opponent-colored pickup costs its owner 2."""

from __future__ import annotations

import numpy as np

from apc.games.grid import STAY, GridGame


class CoinGame(GridGame):
    name = "coin"
    cooperative_tags = frozenset({"own"})
    toroidal = True

    def __init__(
        self, num_agents: int = 2, size: int = 5, horizon: int = 50, radius: int = 3, agent_channels: str = "merged"
    ):
        self.resource_channels = tuple(f"coin{k}" for k in range(num_agents))
        super().__init__(num_agents, size, size, horizon, radius, agent_channels)
        self.cooperate_action = STAY
        self.defect_action = STAY
        self.coin_pos = np.zeros(2, dtype=np.int64)
        self.coin_color = 0

    def _spawn_coin(self) -> None:
        for name in self.resource_channels:
            self.layers[name] = np.zeros((self.height, self.width), dtype=bool)
        cell = self._random_free_cell()
        self.coin_color = int(self.rng.integers(self.n))
        self.coin_pos = np.array(cell, dtype=np.int64)
        self.layers[self.resource_channels[self.coin_color]][cell] = True

    def _reset(self) -> None:
        self.layers = {name: np.zeros((self.height, self.width), dtype=bool) for name in self.resource_channels}
        self._place_agents()
        self._spawn_coin()
        self.last_pickup = None

    def _transition(self, actions: np.ndarray) -> np.ndarray:
        rewards = np.zeros(self.n)
        self._move(actions)
        hit = np.flatnonzero(np.all(self.pos == self.coin_pos, axis=1))
        if len(hit):
            i = int(hit[0])
            rewards[i] += 1.0
            if self.coin_color != i:
                rewards[self.coin_color] -= 2.0
            self.last_pickup = (i, self.coin_color)
            self.last_events.append((i, "own" if self.coin_color == i else "foreign"))
            self._spawn_coin()
        else:
            self.last_pickup = None
        return rewards

    def scripted_action(self, agent: int, kind: str, rng: np.random.Generator) -> int:
        own = self.coin_color == agent
        if kind == "always_defect" or (kind == "always_cooperate" and own):
            return self.step_toward(agent, self.coin_pos)
        if kind == "always_cooperate":
            # wander without stepping onto the foreign coin
            for a in rng.permutation(5):
                if not np.array_equal(self._target(self.pos[agent], int(a)), self.coin_pos):
                    return int(a)
            return STAY
        return int(rng.integers(self.spec.action_space_sizes[agent]))
