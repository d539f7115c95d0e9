"""One seed of one experiment: collect, fit and freeze harm models, train.

Matrix games whose agents are all tabular or rule-based run phase 2
through ``kernels.matrix_episode``; everything else steps the environment
one timestep at a time.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from apc import kernels
from apc.defection import HarmModel, MLPHarmModel, TabularHarmModel, fit_harm_model
from apc.env.core import PLACEHOLDER, ReplayBuffer, StepContext, record_transitions
from apc.games import make_game
from apc.games.grid import STAY, GridGame
from apc.games.pgg import PublicGoodsGame
from apc.harness.config import AgentSpec, ExperimentConfig
from apc.learners import (
    ActorCritic,
    AgentBundle,
    Components,
    RulePolicy,
    TabularPolicy,
    Trajectory,
    a2c_update,
    action_means,
    categorical_update,
    make_ablation,
    rule_act,
    rule_for,
)
from apc.punishment import PunishmentBook, WindowReport, shape_rewards
from apc.rng import child_seed, stream

METRIC_COLUMNS = (
    "run_id",
    "seed",
    "episode",
    "raw_return",
    "total_return",
    "collective_reward",
    "cooperation_rate",
    "punishment_frequency",
    "mean_p",
    "mean_piw",
)
WINDOW_COLUMNS = (
    "run_id",
    "episode",
    "window",
    "punisher",
    "target",
    "frequency",
    "ineffective",
    "probability",
    "punish_count",
    "mean_w",
)


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (np.ndarray, list, tuple)):
        return ";".join(fmt(v) for v in x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".10g")


@dataclass
class MetricRow:
    run_id: str
    seed: int
    episode: int
    raw_return: np.ndarray
    total_return: np.ndarray
    collective_reward: float
    cooperation_rate: float
    punishment_frequency: float
    mean_p: float
    mean_piw: float

    def cells(self) -> list[str]:
        return [fmt(getattr(self, c)) if c != "run_id" else self.run_id for c in METRIC_COLUMNS]


@dataclass
class Agent:
    index: int
    spec: AgentSpec
    policy: Any
    rng: np.random.Generator
    punish_rng: np.random.Generator
    bundle: AgentBundle | None = None
    learns: bool = True

    @property
    def punisher(self) -> bool:
        return self.bundle is not None


@dataclass
class RunResult:
    run_id: str
    seed: int
    rows: list[MetricRow] = field(default_factory=list)
    windows: list[list[str]] = field(default_factory=list)
    agents: list[Agent] = field(default_factory=list)
    reports: list[WindowReport] = field(default_factory=list)
    game: Any = None
    buffers: list[ReplayBuffer | None] = field(default_factory=list)
    # mean contribution probability of the tabular learners, per episode
    theta_trace: list[float] = field(default_factory=list)

    def final(self, tail: int | None = None) -> dict[str, float]:
        """Tail averages of the episode metrics plus the final policy state."""
        if not self.rows:
            return {}
        tail = tail or max(1, len(self.rows) // 10)
        rows = self.rows[-tail:]
        out = {
            "collective_reward": float(np.mean([r.collective_reward for r in rows])),
            "cooperation_rate": float(np.nanmean([r.cooperation_rate for r in rows]))
            if any(not math.isnan(r.cooperation_rate) for r in rows)
            else float("nan"),
            "punishment_frequency": float(np.mean([r.punishment_frequency for r in rows])),
            "mean_piw": float(np.mean([r.mean_piw for r in rows])),
            "punishment_cost": float(sum(np.sum(r.raw_return - r.total_return) for r in self.rows)),
        }
        if self.theta_trace:
            out["contribution_probability"] = float(np.mean(self.theta_trace[-tail:]))
        return out


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def is_matrix(game) -> bool:
    return isinstance(game, PublicGoodsGame)


def new_harm_model(cfg: ExperimentConfig, game, seed: int, i: int, j: int, random_init: bool) -> HarmModel:
    mech = cfg.mechanism
    rng = stream(seed, "harm", i * game.n + j)
    k = game.spec.action_space_sizes
    if is_matrix(game):
        return TabularHarmModel(
            game.n,
            k[j],
            mech.encoder,
            beta=mech.beta,
            lr=mech.harm_lr,
            resolution=mech.harm_resolution,
            init_scale=mech.random_init_scale if random_init else 0.0,
            rng=rng,
        )
    return MLPHarmModel(
        game.spec.obs_dim,
        game.n,
        k[j],
        other_actions=max(k),
        hidden=mech.harm_hidden,
        shrink=mech.harm_shrink,
        beta=mech.beta,
        lr=mech.harm_lr,
        resolution=mech.harm_resolution,
        rng=rng,
    )


def new_policy(cfg: ExperimentConfig, game, spec: AgentSpec, seed: int, i: int):
    t = cfg.training
    k = game.spec.action_space_sizes[i]
    if spec.learner == "tabular":
        return TabularPolicy.uniform(k, lr=t.lr, gamma=t.gamma, floor=t.theta_floor)
    if spec.learner == "a2c":
        return ActorCritic(
            game.spec.obs_dim,
            k,
            stream(seed, "init", i),
            t.hidden,
            t.actor_lr,
            t.critic_lr,
            t.gamma,
            t.entropy_coef,
        )
    return rule_for(game, spec.rule, i)


def build_agents(cfg: ExperimentConfig, game, seed: int) -> list[Agent]:
    agents = []
    for i, spec in enumerate(cfg.agents):
        policy = new_policy(cfg, game, spec, seed, i)
        bundle = None
        if cfg.mechanism.enabled and spec.punishes:
            random_init = spec.variant == "no_dpn"
            comps = Components(
                policy,
                lambda j, i=i, r=random_init: new_harm_model(cfg, game, seed, i, j, r),
                tuple(j for j in range(game.n) if j != i),
            )
            bundle = make_ablation(spec.variant, comps)
        agents.append(
            Agent(i, spec, policy, stream(seed, "agent", i), stream(seed, "punish", i), bundle, spec.learner != "rule")
        )
    return agents


# ---------------------------------------------------------------------------
# acting
# ---------------------------------------------------------------------------


def policy_probs(agent: Agent, game) -> np.ndarray:
    """Action distribution of a stateless matrix-game policy."""
    k = game.spec.action_space_sizes[agent.index]
    pol = agent.policy
    if isinstance(pol, TabularPolicy):
        return pol.probs
    if isinstance(pol, RulePolicy):
        if pol.kind == "random":
            return np.full(k, 1.0 / k)
        out = np.zeros(k)
        out[pol.defect_action if pol.kind == "always_defect" else pol.cooperate_action] = 1.0
        return out
    raise TypeError(f"{type(pol).__name__} has no fixed action distribution")


def act_all(agents: list[Agent], game, observations: np.ndarray) -> np.ndarray:
    actions = np.empty(len(agents), dtype=np.int64)
    grid = isinstance(game, GridGame)
    for a in agents:
        i = a.index
        if grid and not game.active[i]:
            actions[i] = STAY
            continue
        pol = a.policy
        if isinstance(pol, TabularPolicy):
            actions[i] = pol.act(a.rng.random())
        elif isinstance(pol, ActorCritic):
            actions[i] = pol.act(observations[i], a.rng.random())
        else:
            actions[i] = rule_act(pol, observations[i], a.rng, game, i)
    return actions


def _sample(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, :, None] >= cdf[None, :, :]).sum(axis=2), probs.shape[1] - 1)


# ---------------------------------------------------------------------------
# phase 1: collection and fitting
# ---------------------------------------------------------------------------


def collect(cfg: ExperimentConfig, game, agents: list[Agent], seed: int) -> list[ReplayBuffer | None]:
    mech = cfg.mechanism
    n = game.n
    dtype = np.uint8 if isinstance(game, GridGame) else np.float32
    buffers: list[ReplayBuffer | None] = [
        ReplayBuffer(mech.buffer_capacity, game.spec.obs_dim, n, dtype) if a.bundle and a.bundle.fit_dpn else None
        for a in agents
    ]
    if not any(b is not None for b in buffers):
        return buffers
    if is_matrix(game):
        _collect_matrix(game, agents, buffers, mech.collect_episodes)
        return buffers
    for ep in range(mech.collect_episodes):
        before = game.reset(child_seed(seed, "collect", ep))
        while not game.done:
            actions = act_all(agents, game, before.observations)
            after = game.step(actions)
            ctx = StepContext.from_step(before, actions, after)
            for i, buf in enumerate(buffers):
                if buf is not None:
                    record_transitions(buf, ctx, [i])
            before = after
    return buffers


def _collect_matrix(game, agents, buffers, episodes: int) -> None:
    n, H = game.n, game.spec.horizon
    k = len(game.fractions)
    e, r = game.params.e, game.params.r
    probs = np.stack([policy_probs(a, game) for a in agents])
    for _ in range(episodes):
        u = np.stack([a.rng.random(H) for a in agents], axis=1)
        actions = _sample(probs, u)
        contrib = game.fractions[actions]
        raw = r * e * contrib.sum(axis=1, keepdims=True) / n - e * contrib
        obs = np.zeros((H, n, k), dtype=np.float32)
        obs[np.arange(1, H)[:, None], np.arange(n)[None, :], actions[:-1]] = 1.0
        obs = obs.reshape(H, n * k)
        for i, buf in enumerate(buffers):
            if buf is None:
                continue
            for j in range(n):
                if j != i:
                    buf.extend(
                        np.full(H, i), np.full(H, j), obs, np.delete(actions, j, axis=1), actions[:, j], raw[:, i]
                    )


def fit_dpn(cfg: ExperimentConfig, agents: list[Agent], buffers, seed: int) -> None:
    mech = cfg.mechanism
    n = len(agents)
    for a in agents:
        if a.bundle is None:
            continue
        if a.bundle.fit_dpn:
            for j, model in a.bundle.harm_models.items():
                if not model.frozen:
                    fit_harm_model(
                        model,
                        buffers[a.index],
                        a.index,
                        j,
                        mech.fit_steps,
                        stream(seed, "fit", a.index * n + j),
                        mech.batch_size,
                    )
        for model in a.bundle.harm_models.values():
            model.freeze()


# ---------------------------------------------------------------------------
# phase 2
# ---------------------------------------------------------------------------


class _Recorder:
    def __init__(self, run: RunResult, agents: list[Agent], log_every: int, windows: bool):
        self.run = run
        self.punishers = np.array([a.punisher for a in agents])
        n = len(agents)
        self.pairs = self.punishers[:, None] & ~np.eye(n, dtype=bool)
        self.log_every = log_every
        self.keep_windows = windows

    def episode(self, ep, raw, total, coop, punish_count, observed_pairs, p_used, wsum):
        if (ep + 1) % self.log_every and ep != 0:
            return
        pairs = self.pairs
        freq = punish_count[pairs].sum() / observed_pairs if observed_pairs > 0 else 0.0
        mean_p = float(p_used[pairs].mean()) if pairs.any() else float("nan")
        count = punish_count.sum()
        self.run.rows.append(
            MetricRow(
                self.run.run_id,
                self.run.seed,
                ep,
                raw,
                total,
                float(raw.sum()),
                float(coop),
                float(freq),
                mean_p,
                float(wsum.sum() / count) if count > 0 else 0.0,
            )
        )

    def window(self, ep: int, report: WindowReport) -> None:
        self.run.reports.append(report)
        if not self.keep_windows:
            return
        for i, j in zip(*np.nonzero(self.pairs)):
            cnt = report.punishments[i, j]
            self.run.windows.append(
                [
                    self.run.run_id,
                    fmt(ep),
                    fmt(report.window),
                    fmt(int(i)),
                    fmt(int(j)),
                    fmt(report.frequency[i, j]),
                    fmt(bool(report.ineffective[i, j])),
                    fmt(report.probability_used[i, j]),
                    fmt(int(cnt)),
                    fmt(report.weight_sum[i, j] / cnt if cnt > 0 else 0.0),
                ]
            )


def _book(cfg: ExperimentConfig, agents: list[Agent]) -> PunishmentBook:
    adaptive = np.array([a.bundle.adaptive if a.bundle else True for a in agents])
    return PunishmentBook(len(agents), cfg.mechanism.window, cfg.mechanism.epsilon, adaptive)


def train_matrix(cfg: ExperimentConfig, game, agents: list[Agent], run: RunResult, episodes: int) -> None:
    mech = cfg.mechanism
    n, H = game.n, game.spec.horizon
    k = len(game.fractions)
    punishers = [a for a in agents if a.punisher]
    models = [m for a in punishers for m in a.bundle.harm_models.values()]
    encoders = {m.encoder for m in models}
    if len(encoders) > 1:
        raise ValueError("all tabular harm models of a run must share one context encoder")
    joint = encoders == {"joint"}
    K = models[0].n_contexts if models else 1
    intensity = np.zeros((n, n, K, k))
    for a in punishers:
        for j, m in a.bundle.harm_models.items():
            intensity[a.index, j] = kernels.intensity_rows(kernels.softmax_rows(m.all_keys_harm(), m.beta))
    book = _book(cfg, agents)
    rec = _Recorder(run, agents, cfg.outputs.log_every, cfg.outputs.windows)
    off = ~np.eye(n, dtype=bool)
    observed = np.where(rec.pairs, float(H), 0.0)
    punish = bool(punishers)
    learners = [a.index for a in agents if isinstance(a.policy, TabularPolicy)]
    for ep in range(episodes):
        probs = np.stack([policy_probs(a, game) for a in agents])
        if learners:
            run.theta_trace.append(float(probs[learners, 0].mean()))
        u_act = np.stack([a.rng.random(H) for a in agents], axis=1)
        u_pun = np.stack([a.punish_rng.random((H, n)) for a in agents], axis=1)
        p_used = book.probability()
        actions, raw, total, defections, punishments, wsum = kernels.matrix_episode(
            probs,
            game.fractions,
            float(game.params.e),
            float(game.params.r),
            u_act,
            u_pun,
            intensity,
            p_used,
            float(mech.c),
            float(mech.delta),
            joint,
            punish,
        )
        for a in agents:
            if a.learns and isinstance(a.policy, TabularPolicy):
                categorical_update(a.policy, action_means(actions[:, a.index], total[:, a.index], k))
        book.add_counts(defections * off, observed, punishments, wsum, H)
        rec.episode(
            ep,
            raw.sum(axis=0),
            total.sum(axis=0),
            game.fractions[actions].mean(),
            punishments,
            observed.sum(),
            p_used,
            wsum,
        )
        if book.window_due:
            rec.window(ep, book.close())
    if book.steps:
        rec.window(episodes - 1, book.close())


def train_generic(cfg: ExperimentConfig, game, agents: list[Agent], run: RunResult, episodes: int) -> None:
    mech = cfg.mechanism
    n = game.n
    k = game.spec.action_space_sizes
    book = _book(cfg, agents)
    rec = _Recorder(run, agents, cfg.outputs.log_every, cfg.outputs.windows)
    grid = isinstance(game, GridGame)
    for ep in range(episodes):
        before = game.reset(child_seed(run.seed, "env", ep))
        traj: dict[int, list] = {a.index: [] for a in agents if isinstance(a.policy, ActorCritic) and a.learns}
        raw_sum, total_sum = np.zeros(n), np.zeros(n)
        punish_count, wsum = np.zeros((n, n)), np.zeros((n, n))
        observed = 0.0
        events: list = []
        p_acc, p_steps = np.zeros((n, n)), 0
        while not game.done:
            obs, vis = before.observations, before.observability
            active = game.active.copy() if grid else np.ones(n, dtype=bool)
            actions = act_all(agents, game, obs)
            after = game.step(actions)
            events.extend(game.last_events)
            p = book.probability()
            p_acc += p
            p_steps += 1
            W = np.zeros((n, n))
            defect = np.zeros((n, n), dtype=bool)
            seen = vis & ~np.eye(n, dtype=bool) & rec.pairs
            for a in agents:
                if not a.punisher:
                    continue
                i = a.index
                for j in np.flatnonzero(seen[i]):
                    others = np.delete(actions, j)
                    others = np.where(np.delete(vis[i], j), others, PLACEHOLDER)
                    probs = a.bundle.harm_models[j].distribution(obs[i][None, :], others[None, :])[0]
                    aj = actions[j]
                    if probs[aj] > 1.0 / k[j]:
                        defect[i, j] = True
                        if a.punish_rng.random() < p[i, j]:
                            W[i, j] = probs[aj] / probs.max()
            total = after.raw_rewards
            if rec.pairs.any():
                total = shape_rewards(after.raw_rewards, W, mech.c, mech.delta, vis)
            book.observe(defect, seen, W)
            observed += seen.sum()
            punish_count += W > 0
            wsum += W
            raw_sum += after.raw_rewards
            total_sum += total
            for i, steps in traj.items():
                if active[i]:
                    still = (not after.done) and (game.active[i] if grid else True)
                    steps.append((obs[i], actions[i], total[i], after.observations[i], not still))
            if book.window_due:
                rec.window(ep, book.close())
            before = after
        for i, steps in traj.items():
            if steps:
                o, a_, r_, o2, term = zip(*steps)
                a2c_update(
                    agents[i].policy,
                    Trajectory(np.array(o), np.array(a_), np.array(r_), np.array(o2), np.array(term)),
                )
        rec.episode(
            ep,
            raw_sum,
            total_sum,
            game.cooperation_rate(events),
            punish_count,
            observed,
            p_acc / max(p_steps, 1),
            wsum,
        )
    if book.steps:
        rec.window(episodes - 1, book.close())


def uses_matrix_path(game, agents: list[Agent], window: int) -> bool:
    return (
        is_matrix(game)
        and all(isinstance(a.policy, (TabularPolicy, RulePolicy)) for a in agents)
        and window % game.spec.horizon == 0
    )


def train(cfg: ExperimentConfig, game, agents: list[Agent], run: RunResult, episodes: int | None = None) -> None:
    episodes = cfg.training.episodes if episodes is None else episodes
    if uses_matrix_path(game, agents, cfg.mechanism.window):
        train_matrix(cfg, game, agents, run, episodes)
    else:
        train_generic(cfg, game, agents, run, episodes)


def prepare(cfg: ExperimentConfig, seed: int, run_id: str | None = None) -> RunResult:
    """Build the game and agents, then run phase 1 (collect, fit, freeze)."""
    game = make_game(cfg.environment, cfg.env_params)
    agents = build_agents(cfg, game, seed)
    buffers = collect(cfg, game, agents, seed)
    fit_dpn(cfg, agents, buffers, seed)
    return RunResult(run_id or f"{cfg.name}-s{seed}", seed, agents=agents, game=game, buffers=buffers)


def run_seed(cfg: ExperimentConfig, seed: int, hook: Callable[[RunResult], None] | None = None) -> RunResult:
    run = prepare(cfg, seed)
    if hook:
        hook(run)
    train(cfg, run.game, run.agents, run)
    return run
