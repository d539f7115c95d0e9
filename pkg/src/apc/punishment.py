"""Adaptive punishment: windowed defection frequency, punishment probability,
intensity weights and reward shaping."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from apc import kernels
from apc.defection import DefectionDistribution, DefectionFlag
from apc.env.core import PLACEHOLDER


def is_ineffective(f_hist: Sequence[float], eps: float) -> bool:
    """Whether punishment in the last window of ``f_hist`` counts as wasted.

    Windows 0 and 1 are effective by definition. From window s >= 2 the
    window is ineffective when its frequency did not drop below the
    previous window's, or sits within ``eps`` of the mean over windows
    0..s-1, and is itself at least ``eps``.
    """
    s = len(f_hist) - 1
    if s < 2:
        return False
    f_s = f_hist[s]
    f_bar = sum(f_hist[:s]) / s
    return bool(((f_s >= f_hist[s - 1]) or abs(f_s - f_bar) < eps) and f_s >= eps)


def punish_probability(ineffective_flags: Sequence[bool], m: int | None = None) -> float:
    """Probability of punishing in window ``m`` given the flags of windows 1..m-1."""
    if m is None:
        m = len(ineffective_flags) + 1
    if m <= 1:
        return 1.0
    flags = list(ineffective_flags)[: m - 1]
    if len(flags) != m - 1:
        raise ValueError(f"window {m} needs {m - 1} flags, got {len(flags)}")
    # (m - 1 - k) / (m - 1) is the correctly rounded value of the rational
    return (m - 1 - sum(bool(f) for f in flags)) / (m - 1)


def piw(dist: DefectionDistribution, action: int, draw: int) -> float:
    if action == PLACEHOLDER:
        return 0.0
    probs = dist.probs
    if probs[action] <= 1.0 / len(probs):
        return 0.0
    return float(draw) * float(probs[action] / probs.max())


def shape_rewards(
    raw_rewards: np.ndarray,
    W: np.ndarray,
    c: float,
    delta: float,
    observability: np.ndarray | None = None,
) -> np.ndarray:
    """Raw reward minus c per unit of punishment given and delta per unit received."""
    W = np.asarray(W, dtype=np.float64)
    if np.any(np.diag(W) != 0):
        raise ValueError("agents cannot punish themselves")
    if observability is not None and np.any(W[~np.asarray(observability, dtype=bool)] != 0):
        raise ValueError("punishment of an unobservable agent")
    return np.asarray(raw_rewards, dtype=np.float64) - c * W.sum(axis=1) - delta * W.sum(axis=0)


@dataclass
class PunishmentState:
    pair: tuple[int, int]
    window_length: int = 25
    tolerance: float = 0.05
    adaptive: bool = True
    current_window_flags: list[bool] = field(default_factory=list)
    frequency_history: list[float] = field(default_factory=list)
    ineffective_flags: list[bool] = field(default_factory=list)
    current_probability: float = 1.0
    steps_in_window: int = 0

    @property
    def window_index(self) -> int:
        return len(self.frequency_history)

    @property
    def window_due(self) -> bool:
        return self.steps_in_window >= self.window_length


def record_step(state: PunishmentState, flag: DefectionFlag, observable: bool) -> PunishmentState:
    if observable and not flag.unobserved:
        state.current_window_flags.append(bool(flag.is_defection))
    state.steps_in_window += 1
    return state


def close_window(state: PunishmentState) -> tuple[float, PunishmentState]:
    flags = state.current_window_flags
    if flags:
        f = sum(flags) / len(flags)
    else:
        f = state.frequency_history[-1] if state.frequency_history else 0.0
    state.frequency_history.append(f)
    if len(state.frequency_history) >= 2:
        state.ineffective_flags.append(is_ineffective(state.frequency_history, state.tolerance))
    if state.adaptive:
        state.current_probability = punish_probability(state.ineffective_flags)
    else:
        state.current_probability = 1.0
    state.current_window_flags = []
    state.steps_in_window = 0
    return f, state


@dataclass
class WindowReport:
    window: int  # index of the window just closed
    frequency: np.ndarray  # (n, n)
    ineffective: np.ndarray  # (n, n) bool, False for windows 0 and 1
    probability: np.ndarray  # (n, n) probability for the next window
    probability_used: np.ndarray  # (n, n) probability in force during the closed window
    punishments: np.ndarray  # (n, n) punishment events in the window
    weight_sum: np.ndarray  # (n, n)


class PunishmentBook:
    """All directed pairs of one run at once; same rules as ``PunishmentState``."""

    def __init__(self, n: int, window_length: int, tolerance: float, adaptive: bool | np.ndarray = True):
        self.n = n
        self.window_length = window_length
        self.tolerance = tolerance
        # per punisher row; rows set False keep p = 1 (the no_apr ablation)
        self.adaptive = np.broadcast_to(np.asarray(adaptive, dtype=bool), (n,)).copy()
        self.off = ~np.eye(n, dtype=bool)
        self.defections = np.zeros((n, n))
        self.observed = np.zeros((n, n))
        self.punishments = np.zeros((n, n))
        self.weight_sum = np.zeros((n, n))
        self.steps = 0
        self.windows = 0
        self.f_prev = np.zeros((n, n))
        self.f_sum = np.zeros((n, n))
        self.flag_sum = np.zeros((n, n))
        self.history: list[np.ndarray] = []
        self.p = np.ones((n, n))

    def probability(self) -> np.ndarray:
        return np.where(self.off, self.p, 0.0)

    def observe(self, defect: np.ndarray, visible: np.ndarray, W: np.ndarray | None = None) -> None:
        vis = visible & self.off
        self.defections += defect & vis
        self.observed += vis
        if W is not None:
            self.punishments += W > 0
            self.weight_sum += W
        self.steps += 1

    def add_counts(self, defections, observed_steps, punishments, weight_sum, steps: int) -> None:
        self.defections += defections
        self.observed += observed_steps
        self.punishments += punishments
        self.weight_sum += weight_sum
        self.steps += steps

    @property
    def window_due(self) -> bool:
        return self.steps >= self.window_length

    def close(self) -> WindowReport:
        s = self.windows
        used = self.probability()
        carry = self.f_prev if s > 0 else np.zeros((self.n, self.n))
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(self.observed > 0, self.defections / np.maximum(self.observed, 1), carry)
        f = np.where(self.off, f, 0.0)
        if s >= 2:
            mean = self.f_sum / s
            flags = kernels.ineffective(f, self.f_prev, mean, self.tolerance) & self.off
        else:
            flags = np.zeros((self.n, self.n), dtype=bool)
        if s >= 1:
            self.flag_sum += flags
            self.p = np.where(self.adaptive[:, None], (s - self.flag_sum) / s, 1.0)
        report = WindowReport(
            s, f, flags, self.probability(), used, self.punishments.copy(), self.weight_sum.copy()
        )
        self.history.append(f)
        self.f_sum += f
        self.f_prev = f
        self.windows += 1
        self.defections[:] = 0
        self.observed[:] = 0
        self.punishments[:] = 0
        self.weight_sum[:] = 0
        self.steps = 0
        return report
