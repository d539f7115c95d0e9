"""Policy learners, fixed opponents, and ablation bundles."""

from apc.learners.a2c import ActorCritic, Trajectory, a2c_update, actor_loss_and_grads, critic_loss_and_grads
from apc.learners.ablation import VARIANTS, AgentBundle, Components, make_ablation
from apc.learners.checkpoint import load_policy, read_header, save_policy
from apc.learners.rules import RULE_KINDS, RulePolicy, rule_act, rule_for
from apc.learners.tabular import (
    TabularPolicy,
    action_means,
    categorical_update,
    expected_coop_gradient,
    tabular_update,
    td_error,
)

__all__ = [
    "RULE_KINDS",
    "VARIANTS",
    "ActorCritic",
    "AgentBundle",
    "Components",
    "RulePolicy",
    "TabularPolicy",
    "Trajectory",
    "a2c_update",
    "action_means",
    "actor_loss_and_grads",
    "categorical_update",
    "critic_loss_and_grads",
    "expected_coop_gradient",
    "load_policy",
    "make_ablation",
    "read_header",
    "rule_act",
    "rule_for",
    "save_policy",
    "tabular_update",
    "td_error",
]
