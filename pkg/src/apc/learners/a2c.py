"""Independent advantage actor-critic with TD(0) advantages."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from apc.nn import MLP, Adam, log_softmax


def actor_loss_and_grads(actor: MLP, obs, actions, advantages, entropy_coef: float):
    """Surrogate  -mean(adv * log pi(a|o)) - entropy_coef * mean(H(pi(.|o)))."""
    logits, acts = actor.forward(obs)
    logp = log_softmax(logits)
    p = np.exp(logp)
    B = len(actions)
    rows = np.arange(B)
    entropy = -(p * logp).sum(axis=1)
    loss = -np.mean(advantages * logp[rows, actions]) - entropy_coef * np.mean(entropy)
    g = p * advantages[:, None]
    g[rows, actions] -= advantages
    g += entropy_coef * p * (logp + entropy[:, None])
    g /= B
    return float(loss), actor.backward(acts, g)


def critic_loss_and_grads(critic: MLP, obs, targets):
    v, acts = critic.forward(obs)
    err = v[:, 0] - targets
    loss = 0.5 * np.mean(err**2)
    return float(loss), critic.backward(acts, (err / len(err))[:, None])


@dataclass
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminal: np.ndarray


class ActorCritic:
    def __init__(
        self,
        obs_dim: int,
        n_actions: int,
        rng: np.random.Generator,
        hidden: int = 64,
        actor_lr: float = 3e-4,
        critic_lr: float = 1e-3,
        gamma: float = 0.99,
        entropy_coef: float = 0.01,
    ):
        self.obs_dim, self.n_actions, self.hidden = obs_dim, n_actions, hidden
        self.actor = MLP([obs_dim, hidden, hidden, n_actions], rng, out_scale=0.01)
        self.critic = MLP([obs_dim, hidden, hidden, 1], rng)
        self.actor_opt = Adam(actor_lr)
        self.critic_opt = Adam(critic_lr)
        self.gamma = gamma
        self.entropy_coef = entropy_coef
        self.skipped = 0

    def policy(self, obs: np.ndarray) -> np.ndarray:
        logp = log_softmax(self.actor(np.atleast_2d(obs)))
        return np.exp(logp)

    def act(self, obs: np.ndarray, u: float) -> int:
        p = self.policy(obs)[0]
        return int(min(np.searchsorted(np.cumsum(p), u, side="right"), self.n_actions - 1))

    def value(self, obs: np.ndarray) -> np.ndarray:
        return self.critic(np.atleast_2d(obs))[:, 0]

    def advantages(self, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
        v = self.value(traj.obs)
        v_next = np.where(traj.terminal, 0.0, self.value(traj.next_obs))
        targets = traj.rewards + self.gamma * v_next
        return targets - v, targets


def a2c_update(learner: ActorCritic, traj: Trajectory) -> ActorCritic:
    if len(traj.actions) == 0:
        return learner
    adv, targets = learner.advantages(traj)
    _, ga = actor_loss_and_grads(learner.actor, traj.obs, traj.actions, adv, learner.entropy_coef)
    _, gc = critic_loss_and_grads(learner.critic, traj.obs, targets)
    if not all(np.all(np.isfinite(g)) for g in ga + gc):
        warnings.warn("non-finite actor-critic gradient; update skipped")
        learner.skipped += 1
        return learner
    learner.actor_opt.step(learner.actor.params, ga)
    learner.critic_opt.step(learner.critic.params, gc)
    return learner
