"""Versioned policy checkpoints (JSON header + parameter arrays in one .npz)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from apc.learners.a2c import ActorCritic
from apc.learners.tabular import TabularPolicy

FORMAT_VERSION = 1


def save_policy(path: str | Path, policy) -> None:
    if isinstance(policy, TabularPolicy):
        header = {"kind": "tabular", "lr": policy.lr, "gamma": policy.gamma, "floor": policy.floor}
        arrays = {"probs": policy.probs}
    elif isinstance(policy, ActorCritic):
        header = {
            "kind": "a2c",
            "obs_dim": policy.obs_dim,
            "n_actions": policy.n_actions,
            "hidden": policy.hidden,
            "gamma": policy.gamma,
            "entropy_coef": policy.entropy_coef,
            "actor_lr": policy.actor_opt.lr,
            "critic_lr": policy.critic_opt.lr,
        }
        arrays = {f"actor{k}": p for k, p in enumerate(policy.actor.params)}
        arrays.update({f"critic{k}": p for k, p in enumerate(policy.critic.params)})
    else:
        raise TypeError(f"cannot checkpoint {type(policy).__name__}")
    header.update(format="apc-policy", version=FORMAT_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def read_header(path: str | Path) -> dict:
    with np.load(path) as z:
        return json.loads(str(z["header"]))


def load_policy(path: str | Path):
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        arrays = {k: z[k] for k in z.files if k != "header"}
    if header.get("format") != "apc-policy":
        raise ValueError(f"{path}: not a policy checkpoint")
    if header["version"] > FORMAT_VERSION:
        raise ValueError(f"{path}: checkpoint version {header['version']} is newer than supported")
    if header["kind"] == "tabular":
        return TabularPolicy(arrays["probs"], header["lr"], header["gamma"], header["floor"])
    if header["kind"] == "a2c":
        ac = ActorCritic(
            header["obs_dim"],
            header["n_actions"],
            np.random.default_rng(0),
            header["hidden"],
            header["actor_lr"],
            header["critic_lr"],
            header["gamma"],
            header["entropy_coef"],
        )
        ac.actor.params = [arrays[f"actor{k}"] for k in range(len(ac.actor.params))]
        ac.critic.params = [arrays[f"critic{k}"] for k in range(len(ac.critic.params))]
        return ac
    raise ValueError(f"{path}: unknown policy kind {header['kind']!r}")
