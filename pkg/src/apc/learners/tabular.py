"""Tabular policies for repeated matrix games."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def expected_coop_gradient(n: int, e: float, r: float, delta: float) -> float:
    """Drift of the contribution probability under full punishment of defectors
    by the other n-1 agents, without the alpha / (1 - gamma) factor."""
    return e * r / n - e + (n - 1) * delta


def td_error(r_tot: float, v_t: float, v_next: float, gamma: float, terminal: bool) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    return r_tot + (0.0 if terminal else gamma * v_next) - v_t


@dataclass
class TabularPolicy:
    """Stateless mixed strategy. With two actions, ``theta`` is the
    contribution probability (action 0)."""

    probs: np.ndarray
    lr: float = 0.05
    gamma: float = 0.99
    floor: float = 0.01

    @classmethod
    def uniform(cls, n_actions: int = 2, **kw) -> TabularPolicy:
        return cls(np.full(n_actions, 1.0 / n_actions), **kw)

    @property
    def theta(self) -> float:
        return float(self.probs[0])

    @property
    def step_size(self) -> float:
        return self.lr / (1.0 - self.gamma)

    def act(self, u: float) -> int:
        return int(min(np.searchsorted(np.cumsum(self.probs), u, side="right"), len(self.probs) - 1))


def action_means(actions: np.ndarray, rewards: np.ndarray, n_actions: int) -> np.ndarray:
    """Mean reward per action over an episode; NaN where the action never came up."""
    counts = np.bincount(actions, minlength=n_actions)
    sums = np.bincount(actions, weights=rewards, minlength=n_actions)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def tabular_update(policy: TabularPolicy, r_c_hat: float, r_d_hat: float) -> TabularPolicy:
    """theta += alpha / (1 - gamma) * (r_c - r_d), kept inside [floor, 1 - floor]."""
    theta = policy.theta + policy.step_size * (r_c_hat - r_d_hat)
    theta = float(np.clip(theta, policy.floor, 1.0 - policy.floor))
    policy.probs = np.array([theta, 1.0 - theta])
    return policy


def categorical_update(policy: TabularPolicy, means: np.ndarray) -> TabularPolicy:
    """Projected ascent for more than two actions, using the actions seen this episode."""
    if len(policy.probs) == 2:
        if np.all(np.isfinite(means)):
            tabular_update(policy, means[0], means[1])
        return policy
    seen = np.isfinite(means)
    if seen.sum() < 2:
        return policy
    g = np.zeros_like(policy.probs)
    g[seen] = means[seen] - means[seen].mean()
    p = np.clip(policy.probs + policy.step_size * g, policy.floor, None)
    policy.probs = p / p.sum()
    return policy
