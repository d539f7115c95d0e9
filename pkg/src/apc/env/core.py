"""Partially observable Markov game contract, transition records, replay buffer."""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

PLACEHOLDER = -1


class InvalidActionError(ValueError):
    pass


class EpisodeDoneError(RuntimeError):
    pass


@dataclass(frozen=True)
class GameSpec:
    num_agents: int
    action_space_sizes: tuple[int, ...]
    observation_shape: tuple[int, ...]
    horizon: int

    def __post_init__(self):
        if self.num_agents < 2:
            raise ValueError(f"num_agents must be >= 2, got {self.num_agents}")
        if len(self.action_space_sizes) != self.num_agents:
            raise ValueError("action_space_sizes must have one entry per agent")
        if any(a < 2 for a in self.action_space_sizes):
            raise ValueError(f"every action space needs >= 2 actions, got {self.action_space_sizes}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    @property
    def obs_dim(self) -> int:
        return int(np.prod(self.observation_shape))


@dataclass
class StepResult:
    observations: np.ndarray  # (N, obs_dim)
    raw_rewards: np.ndarray  # (N,)
    done: bool
    observability: np.ndarray  # (N, N) bool, [i, j] = j visible to i

    def __post_init__(self):
        n = len(self.raw_rewards)
        if self.observability.shape != (n, n):
            raise ValueError("observability must be N x N")
        if not np.all(np.diag(self.observability)):
            raise ValueError("every agent observes itself")

    def same_as(self, other: StepResult) -> bool:
        return (
            self.done == other.done
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.raw_rewards, other.raw_rewards)
            and np.array_equal(self.observability, other.observability)
        )


class MarkovGame:
    """Base class for simultaneous-move games.

    Subclasses implement ``_reset``, ``_transition`` and ``_observe``; this
    class owns validation, the step counter and the done flag.
    """

    name = "game"
    action_labels: tuple[str, ...] = ()

    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.t = 0
        self.done = True
        self.rng = np.random.default_rng(0)
        self._last: StepResult | None = None
        # (agent, tag) pairs emitted by the last step, e.g. (0, "stag")
        self.last_events: list[tuple[int, str]] = []

    @property
    def n(self) -> int:
        return self.spec.num_agents

    def reset(self, seed: int = 0) -> StepResult:
        self.rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.last_events = []
        self.t = 0
        self.done = False
        self._reset()
        obs = self._observe()
        result = StepResult(obs, np.zeros(self.n), False, self._observability())
        self._last = result
        return result

    def step(self, joint_action: Sequence[int]) -> StepResult:
        if self.done:
            raise EpisodeDoneError(f"{self.name}: step() called after the episode ended; call reset()")
        actions = self._validate(joint_action)
        self.last_events = []
        rewards = np.asarray(self._transition(actions), dtype=np.float64)
        self.t += 1
        self.done = self.t >= self.spec.horizon or self._terminal()
        result = StepResult(self._observe(), rewards, self.done, self._observability())
        self._last = result
        return result

    def _validate(self, joint_action) -> np.ndarray:
        actions = np.asarray(joint_action)
        if actions.shape != (self.n,):
            raise InvalidActionError(f"{self.name}: expected {self.n} actions, got shape {actions.shape}")
        for i, a in enumerate(actions):
            if int(a) != a or not 0 <= a < self.spec.action_space_sizes[i]:
                raise InvalidActionError(
                    f"{self.name}: invalid action {a!r} for agent {i} "
                    f"(valid 0..{self.spec.action_space_sizes[i] - 1})"
                )
        return actions.astype(np.int64)

    def _terminal(self) -> bool:
        return False

    def _observability(self) -> np.ndarray:
        return np.ones((self.n, self.n), dtype=bool)

    def _reset(self) -> None:
        raise NotImplementedError

    def _transition(self, actions: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def render(self) -> str:
        return f"{self.name} t={self.t}"

    cooperative_tags: frozenset[str] = frozenset()

    def probe_relevant(self, target: int) -> bool:
        """Whether the target's action choice matters right now (used by intensity probes)."""
        return True

    def cooperation_rate(self, events: list[tuple[int, str]]) -> float:
        """Share of cooperative events among all events of an episode; NaN when none."""
        if not events:
            return float("nan")
        return sum(tag in self.cooperative_tags for _, tag in events) / len(events)

    # Hooks used by the mechanism layer and the scripted opponents.
    def action_label(self, agent: int, action: int) -> str:
        if self.action_labels:
            return self.action_labels[action]
        return str(action)


@dataclass(frozen=True)
class TransitionRecord:
    focal_agent: int
    target_agent: int
    observation: np.ndarray
    non_target_actions: np.ndarray  # length N-1, PLACEHOLDER for unobservable
    target_action: int
    raw_reward: float

    @property
    def excluded(self) -> bool:
        """Records with an unobserved target never enter harm-model fitting."""
        return self.target_action == PLACEHOLDER


def non_target_actions(joint_action: np.ndarray, target: int, visible: np.ndarray) -> np.ndarray:
    """Actions of everyone but ``target``, masked by what the focal agent sees."""
    others = np.delete(np.asarray(joint_action, dtype=np.int64), target)
    mask = np.delete(np.asarray(visible, dtype=bool), target)
    return np.where(mask, others, PLACEHOLDER)


class ReplayBuffer:
    """Fixed-capacity FIFO of transition records, stored column-wise."""

    def __init__(self, capacity: int, obs_dim: int, num_agents: int, obs_dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.num_agents = num_agents
        self.focal = np.zeros(capacity, dtype=np.int64)
        self.target = np.zeros(capacity, dtype=np.int64)
        # binary gridworld views fit in uint8, a quarter of the float32 footprint
        self.obs = np.zeros((capacity, obs_dim), dtype=obs_dtype)
        self.others = np.zeros((capacity, num_agents - 1), dtype=np.int64)
        self.target_action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity, dtype=np.float64)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def append(self, record: TransitionRecord) -> None:
        k = self._next
        self.focal[k] = record.focal_agent
        self.target[k] = record.target_agent
        self.obs[k] = record.observation
        self.others[k] = record.non_target_actions
        self.target_action[k] = record.target_action
        self.reward[k] = record.raw_reward
        self._next = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, focal, target, obs, others, target_action, reward) -> None:
        """Batch append; arguments are aligned arrays, oldest record first."""
        m = len(target_action)
        if m == 0:
            return
        if m > self.capacity:
            sl = slice(m - self.capacity, m)
            focal, target, obs, others, target_action, reward = (
                np.asarray(x)[sl] for x in (focal, target, obs, others, target_action, reward)
            )
            m = self.capacity
        idx = (self._next + np.arange(m)) % self.capacity
        self.focal[idx] = focal
        self.target[idx] = target
        self.obs[idx] = obs
        self.others[idx] = others
        self.target_action[idx] = target_action
        self.reward[idx] = reward
        self._next = int((self._next + m) % self.capacity)
        self.size = min(self.size + m, self.capacity)

    def _order(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def __iter__(self) -> Iterator[TransitionRecord]:
        for k in self._order():
            yield TransitionRecord(
                int(self.focal[k]),
                int(self.target[k]),
                self.obs[k].copy(),
                self.others[k].copy(),
                int(self.target_action[k]),
                float(self.reward[k]),
            )

    def eligible(self, focal: int, target: int) -> dict[str, np.ndarray]:
        """Column slices for one ordered pair, observed targets only, oldest first."""
        idx = self._order()
        keep = (self.focal[idx] == focal) & (self.target[idx] == target) & (self.target_action[idx] != PLACEHOLDER)
        idx = idx[keep]
        return {
            "obs": self.obs[idx],
            "others": self.others[idx],
            "action": self.target_action[idx],
            "reward": self.reward[idx],
        }


@dataclass
class StepContext:
    observations: np.ndarray  # pre-step observations
    joint_action: np.ndarray
    raw_rewards: np.ndarray
    observability: np.ndarray  # pre-step visibility

    @classmethod
    def from_step(cls, before: StepResult, joint_action, after: StepResult) -> StepContext:
        return cls(before.observations, np.asarray(joint_action), after.raw_rewards, before.observability)


def record_transitions(
    buffer: ReplayBuffer, ctx: StepContext, focal_agents: Iterable[int] | None = None
) -> ReplayBuffer:
    """Append one record per ordered pair (i, j), i != j.

    ``focal_agents`` restricts the focal side, which is how per-agent
    buffers are filled in decentralized runs.
    """
    n = len(ctx.joint_action)
    focals = range(n) if focal_agents is None else focal_agents
    for i in focals:
        visible = ctx.observability[i]
        for j in range(n):
            if j == i:
                continue
            target_action = int(ctx.joint_action[j]) if visible[j] else PLACEHOLDER
            buffer.append(
                TransitionRecord(
                    focal_agent=i,
                    target_agent=j,
                    observation=ctx.observations[i],
                    non_target_actions=non_target_actions(ctx.joint_action, j, visible),
                    target_action=target_action,
                    raw_reward=float(ctx.raw_rewards[i]),
                )
            )
    return buffer


@dataclass
class TraceWriter:
    """Line-delimited JSON trace, one object per timestep."""

    stream: IO[str]
    episode: int = 0
    _rows: int = field(default=0, init=False)

    @classmethod
    def open(cls, path: str | Path) -> TraceWriter:
        return cls(open(path, "w", encoding="utf-8", newline="\n"))

    def write(self, t: int, joint_action, result: StepResult, extra: dict | None = None) -> None:
        row = {
            "episode": self.episode,
            "t": t,
            "actions": [int(a) for a in joint_action],
            "raw_rewards": [float(r) for r in result.raw_rewards],
            "done": bool(result.done),
            "observability": result.observability.astype(int).tolist(),
        }
        if extra:
            row.update(extra)
        self.stream.write(json.dumps(row, sort_keys=True) + "\n")
        self._rows += 1

    def close(self) -> None:
        self.stream.close()


def read_trace(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
