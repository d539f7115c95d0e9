"""Fixed opponents: always defect, always cooperate, uniform random."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apc.games.grid import GridGame

RULE_KINDS = ("always_defect", "always_cooperate", "random")


@dataclass(frozen=True)
class RulePolicy:
    kind: str
    n_actions: int
    cooperate_action: int = 0
    defect_action: int = 1

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}; choose from {RULE_KINDS}")


def rule_act(policy: RulePolicy, observation, rng: np.random.Generator, game=None, agent: int | None = None) -> int:
    """Matrix games use the designated actions; gridworlds defer to the game's scripts."""
    if isinstance(game, GridGame):
        return int(game.scripted_action(agent, policy.kind, rng))
    if policy.kind == "always_defect":
        return policy.defect_action
    if policy.kind == "always_cooperate":
        return policy.cooperate_action
    return int(rng.integers(policy.n_actions))


def rule_for(game, kind: str, agent: int = 0) -> RulePolicy:
    return RulePolicy(kind, game.spec.action_space_sizes[agent], game.cooperate_action, game.defect_action)
