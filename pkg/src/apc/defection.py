"""Defection awareness.

A harm model regresses the focal agent's negated raw reward on
(observation, other agents' actions, target action). The defection
distribution over the target's actions is the softmax of those harm
estimates at temperature ``beta``, which is the exact maximizer of
expected harm plus ``beta`` times entropy for fixed harm values.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from apc import kernels
from apc.env.core import PLACEHOLDER, ReplayBuffer
from apc.nn import MLP, Adam

FORMAT_VERSION = 1


@dataclass(frozen=True)
class DefectionDistribution:
    probs: np.ndarray
    entropy_coeff: float
    context_hash: str = ""

    def __post_init__(self):
        if np.any(self.probs < 0) or abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValueError("defection distribution must be a probability vector")

    @property
    def threshold(self) -> float:
        return 1.0 / len(self.probs)


@dataclass(frozen=True)
class DefectionFlag:
    is_defection: bool
    severity: float
    unobserved: bool = False


class HarmModel:
    """Base class: ``harm(obs, others)`` returns (batch, n_target_actions)."""

    kind = "base"

    def __init__(self, n_actions: int, beta: float = 0.1, lr: float = 1e-2, resolution: float = 0.0):
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.n_actions = n_actions
        self.beta = beta
        self.lr = lr
        self.resolution = resolution
        self.frozen = False

    def _raw_harm(self, obs: np.ndarray, others: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def harm(self, obs: np.ndarray, others: np.ndarray) -> np.ndarray:
        q = self._raw_harm(np.atleast_2d(obs), np.atleast_2d(others))
        if self.resolution > 0:
            q = np.round(q / self.resolution) * self.resolution
        return q

    def distribution(self, obs: np.ndarray, others: np.ndarray) -> np.ndarray:
        q = np.ascontiguousarray(self.harm(obs, others), dtype=np.float64)
        return kernels.softmax_rows(q, self.beta)

    def freeze(self) -> None:
        self.frozen = True

    def loss(self, data: dict[str, np.ndarray]) -> float:
        q = self._raw_harm(data["obs"], data["others"])
        pred = q[np.arange(len(q)), data["action"]]
        return float(np.mean((pred + data["reward"]) ** 2))

    def fit(self, data: dict[str, np.ndarray], steps: int, batch_size: int, rng: np.random.Generator) -> None:
        raise NotImplementedError

    # -- serialization ---------------------------------------------------
    def _header(self) -> dict:
        return {
            "format": "apc-harm",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "n_actions": self.n_actions,
            "beta": self.beta,
            "lr": self.lr,
            "resolution": self.resolution,
            "frozen": self.frozen,
        }

    def _arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(self._header(), sort_keys=True)), **self._arrays())


class TabularHarmModel(HarmModel):
    """Tables over a discrete context: context offset + action effect + interaction.

    For repeated matrix games the observation is last round's joint action,
    one-hot. ``encoder="joint"`` keys on (last joint action, a^{-j});
    ``encoder="others"`` keys on a^{-j} alone.
    """

    kind = "tabular"
    max_cells = 2_000_000

    def __init__(
        self,
        num_agents: int,
        n_actions: int,
        encoder: str = "joint",
        beta: float = 0.1,
        lr: float = 1e-2,
        resolution: float = 0.0,
        init_scale: float = 0.0,
        rng: np.random.Generator | None = None,
    ):
        super().__init__(n_actions, beta, lr, resolution)
        if encoder not in ("joint", "others"):
            raise ValueError(f"unknown encoder {encoder!r}")
        self.num_agents = num_agents
        self.encoder = encoder
        base = n_actions + 1
        self.n_contexts = base ** (num_agents - 1) * (base**num_agents if encoder == "joint" else 1)
        if self.n_contexts * n_actions > self.max_cells:
            raise ValueError(
                f"tabular context space too large ({self.n_contexts} contexts); use encoder='others'"
            )
        self.ctx = np.zeros(self.n_contexts)
        self.act = np.zeros(n_actions)
        self.table = np.zeros((self.n_contexts, n_actions))
        if init_scale > 0:
            rng = rng or np.random.default_rng()
            self.ctx = rng.normal(0, init_scale, self.n_contexts)
            self.act = rng.normal(0, init_scale, n_actions)
            self.table = rng.normal(0, init_scale, (self.n_contexts, n_actions))

    def keys(self, obs: np.ndarray, others: np.ndarray) -> np.ndarray:
        base = self.n_actions + 1
        others = np.asarray(others, dtype=np.int64)
        codes = np.where(others == PLACEHOLDER, 0, others + 1)
        key = codes @ (base ** np.arange(others.shape[1]))
        if self.encoder == "joint":
            onehot = np.asarray(obs).reshape(len(obs), self.num_agents, self.n_actions)
            seen = onehot.sum(axis=2) > 0
            prev = np.where(seen, onehot.argmax(axis=2) + 1, 0)
            key = key + (prev @ (base ** np.arange(self.num_agents))) * base ** (self.num_agents - 1)
        return key

    def harm_by_key(self, keys: np.ndarray) -> np.ndarray:
        q = self.ctx[keys][:, None] + self.act[None, :] + self.table[keys]
        if self.resolution > 0:
            q = np.round(q / self.resolution) * self.resolution
        return q

    def all_keys_harm(self) -> np.ndarray:
        return self.harm_by_key(np.arange(self.n_contexts))

    def _raw_harm(self, obs, others):
        k = self.keys(obs, others)
        return self.ctx[k][:, None] + self.act[None, :] + self.table[k]

    def fit(self, data, steps, batch_size, rng):
        if self.frozen:
            raise RuntimeError("harm model is frozen")
        n = len(data["action"])
        cells = self.keys(data["obs"], data["others"])
        batches = rng.integers(0, n, size=(steps, batch_size))
        kernels.tabular_sgd(
            cells,
            np.asarray(data["action"], dtype=np.int64),
            -np.asarray(data["reward"], dtype=np.float64),
            self.ctx,
            self.act,
            self.table,
            batches,
            float(self.lr),
        )

    def _header(self):
        h = super()._header()
        h.update(num_agents=self.num_agents, encoder=self.encoder)
        return h

    def _arrays(self):
        return {"ctx": self.ctx, "act": self.act, "table": self.table}


class MLPHarmModel(HarmModel):
    """Two hidden layers over [observation, one-hot a^{-j} with an 'unknown' slot].

    The output layer has a shared baseline column plus one deviation column
    per target action: q(x, a) = b(x) + d(x)[a]. ``shrink`` adds a ridge
    pull of every deviation toward zero at each visited input, so target
    actions without a real effect on the reward collapse onto the baseline
    instead of keeping their own estimation noise.
    """

    kind = "mlp"

    def __init__(
        self,
        obs_dim: int,
        num_agents: int,
        n_actions: int,
        other_actions: int | None = None,
        hidden: int = 64,
        beta: float = 0.1,
        lr: float = 1e-2,
        resolution: float = 0.0,
        shrink: float = 0.0,
        rng: np.random.Generator | None = None,
    ):
        super().__init__(n_actions, beta, lr, resolution)
        self.shrink = shrink
        self.obs_dim = obs_dim
        self.num_agents = num_agents
        self.other_actions = other_actions or n_actions
        self.hidden = hidden
        in_dim = obs_dim + (num_agents - 1) * (self.other_actions + 1)
        self.net = MLP([in_dim, hidden, hidden, n_actions + 1], rng or np.random.default_rng())
        self.opt = Adam(lr)

    def features(self, obs: np.ndarray, others: np.ndarray) -> np.ndarray:
        others = np.asarray(others, dtype=np.int64)
        B, m = others.shape
        onehot = np.zeros((B, m, self.other_actions + 1))
        slot = np.where(others == PLACEHOLDER, 0, others + 1)
        onehot[np.arange(B)[:, None], np.arange(m)[None, :], slot] = 1.0
        return np.concatenate([np.asarray(obs, dtype=np.float64), onehot.reshape(B, -1)], axis=1)

    def _raw_harm(self, obs, others):
        out = self.net(self.features(obs, others))
        return out[:, :1] + out[:, 1:]

    def fit(self, data, steps, batch_size, rng):
        if self.frozen:
            raise RuntimeError("harm model is frozen")
        x_all = np.ascontiguousarray(self.features(data["obs"], data["others"]))
        y_all = -np.asarray(data["reward"], dtype=np.float64)
        a_all = np.asarray(data["action"], dtype=np.int64)
        batches = rng.integers(0, len(y_all), size=(steps, batch_size))
        opt = self.opt
        if not opt.m:
            opt.m = [np.zeros_like(p) for p in self.net.params]
            opt.v = [np.zeros_like(p) for p in self.net.params]
        opt.t = kernels.mlp_fit(
            x_all,
            y_all,
            a_all,
            self.net.params,
            opt.m,
            opt.v,
            opt.t,
            batches,
            float(opt.lr),
            float(self.shrink),
        )

    def _header(self):
        h = super()._header()
        h.update(
            obs_dim=self.obs_dim,
            num_agents=self.num_agents,
            other_actions=self.other_actions,
            hidden=self.hidden,
            shrink=self.shrink,
        )
        return h

    def _arrays(self):
        return {f"p{k}": p for k, p in enumerate(self.net.params)}


def load_harm_model(path: str | Path) -> HarmModel:
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        arrays = {k: z[k] for k in z.files if k != "header"}
    if header.get("format") != "apc-harm":
        raise ValueError(f"{path}: not a harm model file")
    if header["version"] > FORMAT_VERSION:
        raise ValueError(f"{path}: format version {header['version']} is newer than supported")
    common = dict(beta=header["beta"], lr=header["lr"], resolution=header["resolution"])
    if header["kind"] == "tabular":
        model = TabularHarmModel(header["num_agents"], header["n_actions"], header["encoder"], **common)
        model.ctx, model.act, model.table = arrays["ctx"], arrays["act"], arrays["table"]
    elif header["kind"] == "mlp":
        model = MLPHarmModel(
            header["obs_dim"],
            header["num_agents"],
            header["n_actions"],
            header["other_actions"],
            header["hidden"],
            shrink=header.get("shrink", 0.0),
            **common,
        )
        model.net.params = [arrays[f"p{k}"] for k in range(len(model.net.params))]
    else:
        raise ValueError(f"{path}: unknown harm model kind {header['kind']!r}")
    model.frozen = header["frozen"]
    return model


def fit_harm_model(
    model: HarmModel,
    buffer: ReplayBuffer,
    focal: int,
    target: int,
    steps: int,
    rng: np.random.Generator,
    batch_size: int = 64,
) -> HarmModel:
    data = buffer.eligible(focal, target)
    if len(data["action"]) == 0:
        warnings.warn(f"no observed records for pair ({focal}, {target}); harm model left unchanged")
        return model
    model.fit(data, steps, batch_size, rng)
    return model


def _context_hash(obs, others) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(np.ascontiguousarray(obs, dtype=np.float32).tobytes())
    h.update(np.ascontiguousarray(others, dtype=np.int64).tobytes())
    return h.hexdigest()


def softmax_distribution(q: np.ndarray, beta: float) -> np.ndarray:
    q = np.ascontiguousarray(np.atleast_2d(q), dtype=np.float64)
    return kernels.softmax_rows(q, beta)


def sigma(model: HarmModel, obs: np.ndarray, others: np.ndarray) -> DefectionDistribution:
    """Defection distribution for a single context."""
    probs = model.distribution(np.asarray(obs)[None, :], np.asarray(others)[None, :])[0]
    return DefectionDistribution(probs, model.beta, _context_hash(obs, others))


def classify(dist: DefectionDistribution, action: int) -> DefectionFlag:
    if action == PLACEHOLDER:
        return DefectionFlag(False, 0.0, unobserved=True)
    severity = float(dist.probs[action])
    return DefectionFlag(severity > dist.threshold, severity)


def objective_value(probs: np.ndarray, q: np.ndarray, beta: float) -> float:
    """Expected harm plus beta times entropy; 0 log 0 counts as 0."""
    probs = np.asarray(probs, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = probs > 0
    entropy = -np.sum(probs[nz] * np.log(probs[nz]))
    return float(np.dot(probs, q) + beta * entropy)
