"""Agent bundles for the full mechanism and its two ablations."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

from apc.defection import HarmModel

VARIANTS = ("full", "no_dpn", "no_apr")


@dataclass
class AgentBundle:
    variant: str
    policy: Any
    harm_models: dict[int, HarmModel] = field(default_factory=dict)
    adaptive: bool = True
    fit_dpn: bool = True

    def probability(self, flags) -> float:
        from apc.punishment import punish_probability

        return punish_probability(flags) if self.adaptive else 1.0


@dataclass
class Components:
    """``harm_factory(target)`` builds a fresh harm model for one target.

    ``fitted`` holds the phase-1 models; it may be empty when the caller
    builds the bundle before fitting (the harness does this and fits only
    when ``bundle.fit_dpn`` is set).
    """

    policy: Any
    harm_factory: Callable[[int], HarmModel]
    targets: tuple[int, ...]
    fitted: Mapping[int, HarmModel] = field(default_factory=dict)


def make_ablation(variant: str, components: Components) -> AgentBundle:
    if variant not in VARIANTS:
        raise ValueError(f"unknown ablation {variant!r}; choose from {VARIANTS}")
    if variant == "no_dpn":
        models = {j: components.harm_factory(j) for j in components.targets}
        for m in models.values():
            m.freeze()
        return AgentBundle(variant, components.policy, models, adaptive=True, fit_dpn=False)
    models = dict(components.fitted) or {j: components.harm_factory(j) for j in components.targets}
    return AgentBundle(variant, components.policy, models, adaptive=variant != "no_apr", fit_dpn=True)
