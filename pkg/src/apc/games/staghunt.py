"""Sequential Stag Hunt and its graded-hare variant.

A capture takes the hunter out of the episode. Stags need two or more
hunters within one cell and pay 10 split among them; a hare pays its lone
hunter 1. In the graded variant, hare actions ``HH-x`` also cost every other
active agent ``x`` that step.
"""

from __future__ import annotations

import numpy as np

from apc.games.grid import STAY, GridGame

STAG_VALUE = 10.0
HARE_VALUE = 1.0
HUNT_STAG = 5
HUNT_HARE = 6


class StagHunt(GridGame):
    name = "ssh"
    cooperative_tags = frozenset({"stag"})
    resource_channels = ("stag", "hare")
    extra_actions = ("hunt_stag", "HH")
    # bystander cost for each hare action, indexed from HUNT_HARE
    hare_penalties: tuple[float, ...] = (0.0,)

    def __init__(
        self,
        num_agents: int = 4,
        size: int = 8,
        horizon: int = 50,
        stags: int = 2,
        hares: int = 4,
        radius: int = 3,
        agent_channels: str = "merged",
    ):
        super().__init__(num_agents, size, size, horizon, radius, agent_channels)
        self.n_stags, self.n_hares = stags, hares
        self.cooperate_action = HUNT_STAG
        self.defect_action = HUNT_HARE
        self.hare_actions = tuple(range(HUNT_HARE, HUNT_HARE + len(self.hare_penalties)))
        self.last_captures: list[tuple[int, str]] = []

    def _reset(self) -> None:
        self.layers = {}
        self._place_agents()
        self._scatter("stag", self.n_stags)
        self._scatter("hare", self.n_hares)
        self.last_captures = []

    def _respawn(self, name: str, cell) -> None:
        self.layers[name][tuple(cell)] = False
        new = self._random_free_cell()
        if new is not None:
            self.layers[name][new] = True

    def _transition(self, actions: np.ndarray) -> np.ndarray:
        self._move(actions)
        rewards = np.zeros(self.n)
        self.last_captures = []
        exits = []

        hunters: dict[tuple[int, int], list[int]] = {}
        for i in range(self.n):
            if self.active[i] and actions[i] == HUNT_STAG:
                near = self.adjacent_cells(self.layers["stag"], self.pos[i])
                if len(near):
                    hunters.setdefault(tuple(near[0]), []).append(i)
        for cell, group in sorted(hunters.items()):
            if len(group) < 2:
                continue
            for i in group:
                rewards[i] += STAG_VALUE / len(group)
                self.last_captures.append((i, "stag"))
                self.last_events.append((i, "stag"))
            exits.extend(group)
            self._respawn("stag", cell)

        for i in range(self.n):
            a = int(actions[i])
            if not self.active[i] or a not in self.hare_actions or i in exits:
                continue
            near = self.adjacent_cells(self.layers["hare"], self.pos[i])
            if not len(near):
                continue
            rewards[i] += HARE_VALUE
            penalty = self.hare_penalties[a - HUNT_HARE]
            if penalty:
                bystanders = self.active.copy()
                bystanders[i] = False
                rewards[bystanders] -= penalty
            self.last_captures.append((i, self.action_labels[a]))
            self.last_events.append((i, self.action_labels[a]))
            exits.append(i)
            self._respawn("hare", near[0])

        self.active[exits] = False
        return rewards

    def _terminal(self) -> bool:
        return not self.active.any()

    def probe_relevant(self, target: int) -> bool:
        return self.hare_reachable(target)

    def hare_reachable(self, agent: int) -> bool:
        return bool(self.active[agent]) and len(self.adjacent_cells(self.layers["hare"], self.pos[agent])) > 0

    def stag_reachable(self, agent: int) -> bool:
        return bool(self.active[agent]) and len(self.adjacent_cells(self.layers["stag"], self.pos[agent])) > 0

    def scripted_action(self, agent: int, kind: str, rng: np.random.Generator) -> int:
        if not self.active[agent]:
            return STAY
        if kind == "always_cooperate":
            if self.stag_reachable(agent):
                return HUNT_STAG
            target = self.nearest(agent, self.layers["stag"])
            return STAY if target is None else self.step_toward(agent, target)
        if kind == "always_defect":
            if self.hare_reachable(agent):
                return self.hare_actions[-1]
            target = self.nearest(agent, self.layers["hare"])
            return STAY if target is None else self.step_toward(agent, target)
        return int(rng.integers(self.spec.action_space_sizes[agent]))


class ModifiedStagHunt(StagHunt):
    name = "mssh"
    extra_actions = ("hunt_stag", "HH", "HH-0.2", "HH-0.3")
    hare_penalties = (0.0, 0.2, 0.3)
