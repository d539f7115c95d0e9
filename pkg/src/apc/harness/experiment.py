"""Experiment-level orchestration: runs, summaries, sweeps, matchups, plot data."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import warnings
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apc import kernels
from apc.defection import load_harm_model
from apc.env.core import PLACEHOLDER
from apc.games import make_game
from apc.harness.config import ExperimentConfig
from apc.harness.runner import (
    METRIC_COLUMNS,
    WINDOW_COLUMNS,
    Agent,
    RunResult,
    build_agents,
    fmt,
    new_policy,
    prepare,
    run_seed,
    train,
)
from apc.learners import RulePolicy, load_policy, read_header, rule_for, save_policy
from apc.learners.rules import RULE_KINDS
from apc.rng import child_seed, stream

log = logging.getLogger(__name__)

COARSE_GRID = (0.0, 0.1, 0.2, 0.3, 0.7, 1.1, 1.4)
FULL_GRID = tuple(round(0.1 * k, 1) for k in range(15))
OPPONENTS = RULE_KINDS + ("a2c", "tabular", "apc")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def save_checkpoints(run: RunResult, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for a in run.agents:
        if not isinstance(a.policy, RulePolicy):
            save_policy(directory / f"agent{a.index}.npz", a.policy)
        if a.bundle:
            for j, model in a.bundle.harm_models.items():
                model.save(directory / f"harm{a.index}_{j}.npz")


def _stats(values: list[float]) -> dict:
    arr = np.array(values, dtype=float)
    ok = arr[~np.isnan(arr)]
    return {
        "mean": float(ok.mean()) if len(ok) else float("nan"),
        "std": float(ok.std()) if len(ok) else float("nan"),
        "per_seed": [None if math.isnan(v) else v for v in arr.tolist()],
    }


def summarize(cfg: ExperimentConfig, runs: list[RunResult]) -> dict:
    finals = [r.final() for r in runs]
    keys = sorted({k for f in finals for k in f})
    return {
        "name": cfg.name,
        "environment": cfg.environment,
        "seeds": [r.seed for r in runs],
        "episodes": cfg.training.episodes,
        "mechanism": {"enabled": cfg.mechanism.enabled, "c": cfg.mechanism.c, "delta": cfg.mechanism.delta},
        "final": {k: _stats([f.get(k, float("nan")) for f in finals]) for k in keys},
    }


@dataclass
class ExperimentResult:
    directory: Path
    runs: list[RunResult]
    summary: dict
    metric_files: list[Path] = field(default_factory=list)


def output_root(cfg: ExperimentConfig, out_root: str | Path | None = None) -> Path:
    import os

    root = out_root or os.environ.get("APC_OUTPUT_ROOT")
    base = Path(cfg.outputs.dir)
    if root and not base.is_absolute():
        base = Path(root) / base
    return base / cfg.name


def _run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> RunResult:
    run = RunResult(f"{cfg.name}-s{seed}", seed)
    try:
        run = prepare(cfg, seed)
        train(cfg, run.game, run.agents, run)
    finally:
        write_csv(out / f"{run.run_id}.csv", METRIC_COLUMNS, (r.cells() for r in run.rows))
        if cfg.outputs.windows:
            write_csv(out / f"{run.run_id}.windows.csv", WINDOW_COLUMNS, run.windows)
    if cfg.outputs.checkpoints:
        save_checkpoints(run, out / "checkpoints" / run.run_id)
    log.info("%s done: %s", run.run_id, run.final())
    return run


def run_experiment(cfg: ExperimentConfig, out_root: str | Path | None = None, workers: int = 1) -> ExperimentResult:
    """Every seed of ``cfg``; one metrics CSV per run, window telemetry, checkpoints, summary.json.

    Seeds share nothing, so ``workers > 1`` runs them in separate processes;
    outputs are identical either way.
    """
    out = output_root(cfg, out_root)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    seeds = list(cfg.training.seeds)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            runs = list(pool.map(_run_seed, [cfg] * len(seeds), seeds, [out] * len(seeds)))
    else:
        runs = [_run_seed(cfg, seed, out) for seed in seeds]
    summary = summarize(cfg, runs)
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files = [out / f"{run.run_id}.csv" for run in runs]
    return ExperimentResult(out, runs, summary, files)


# ---------------------------------------------------------------------------
# (c, delta) sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    c_grid: tuple[float, ...]
    d_grid: tuple[float, ...]
    rates: np.ndarray  # (len(d_grid), len(c_grid)), seed means
    per_seed: np.ndarray  # (len(d_grid), len(c_grid), seeds)

    def rate(self, c: float, delta: float) -> float:
        return float(self.rates[self.d_grid.index(delta), self.c_grid.index(c)])

    def write(self, path: Path) -> None:
        rows = [[fmt(d)] + [fmt(v) for v in row] for d, row in zip(self.d_grid, self.rates)]
        write_csv(path, ["delta\\c"] + [fmt(c) for c in self.c_grid], rows)


def sweep_cd(
    cfg: ExperimentConfig,
    c_grid: Sequence[float] = COARSE_GRID,
    d_grid: Sequence[float] = COARSE_GRID,
    out: str | Path | None = None,
    metric: str = "contribution_probability",
) -> SweepResult:
    """Converged cooperation per (c, delta) cell, averaged over the config's seeds.

    Phase 1 does not depend on c or delta, so it runs once per seed and
    every cell starts from a copy of that state; each cell's numbers equal
    a standalone run of the same config.
    """
    if not c_grid or not d_grid:
        raise ValueError("sweep grids must be non-empty")
    c_grid, d_grid = tuple(float(c) for c in c_grid), tuple(float(d) for d in d_grid)
    seeds = cfg.training.seeds
    per_seed = np.zeros((len(d_grid), len(c_grid), len(seeds)))
    quiet = cfg.replace(**{"outputs.windows": False})
    for s, seed in enumerate(seeds):
        base = prepare(quiet, seed)
        for di, d in enumerate(d_grid):
            for ci, c in enumerate(c_grid):
                cell = quiet.replace(**{"mechanism.c": c, "mechanism.delta": d})
                run = copy.deepcopy(base)
                train(cell, run.game, run.agents, run)
                per_seed[di, ci, s] = run.final().get(metric, float("nan"))
    result = SweepResult(c_grid, d_grid, per_seed.mean(axis=2), per_seed)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        result.write(out)
    return result


# ---------------------------------------------------------------------------
# matchups and intensity probes
# ---------------------------------------------------------------------------


def load_checkpoints(cfg: ExperimentConfig, directory: Path, seed: int) -> RunResult:
    """Agents of a finished run, rebuilt from its checkpoint directory."""
    game = make_game(cfg.environment, cfg.env_params)
    agents = build_agents(cfg, game, seed)
    for a in agents:
        path = directory / f"agent{a.index}.npz"
        if path.exists():
            header = read_header(path)
            kind = {"tabular": "tabular", "a2c": "a2c"}[header["kind"]]
            if kind != a.spec.learner:
                raise ValueError(f"{path}: checkpoint holds a {kind} policy, config says {a.spec.learner}")
            policy = load_policy(path)
            if getattr(policy, "obs_dim", game.spec.obs_dim) != game.spec.obs_dim:
                raise ValueError(f"{path}: checkpoint observation size does not match {cfg.environment}")
            a.policy = policy
        if a.bundle:
            for j in list(a.bundle.harm_models):
                hp = directory / f"harm{a.index}_{j}.npz"
                if not hp.exists():
                    raise ValueError(f"{hp}: missing harm model checkpoint")
                model = load_harm_model(hp)
                if model.n_actions != game.spec.action_space_sizes[j]:
                    raise ValueError(f"{hp}: harm model action count does not match {cfg.environment}")
                model.freeze()
                a.bundle.harm_models[j] = model
    return RunResult(f"{cfg.name}-s{seed}", seed, agents=agents, game=game)


def with_opponents(cfg: ExperimentConfig, run: RunResult, opponent: str, focal: int, seed: int) -> list[Agent]:
    if opponent not in OPPONENTS:
        raise ValueError(f"unknown opponent {opponent!r}; choose from {OPPONENTS}")
    agents = []
    for a in run.agents:
        if a.index == focal or opponent == "apc":
            agents.append(a)
            continue
        rng, prng = stream(seed, "opponent", a.index), stream(seed, "opponent-punish", a.index)
        if opponent in RULE_KINDS:
            agents.append(Agent(a.index, a.spec, rule_for(run.game, opponent, a.index), rng, prng, None, False))
        else:
            spec = copy.copy(a.spec)
            spec.learner = opponent
            policy = new_policy(cfg, run.game, spec, seed + 7919, a.index)
            agents.append(Agent(a.index, spec, policy, rng, prng, None, True))
    return agents


def intensity_probe(run: RunResult, focal: int = 0, episodes: int = 20, seed: int = 0) -> dict[str, float]:
    """Mean draw-free punishment weight per target action label.

    Contexts come from uniformly random play; only steps where the target
    is visible to the focal agent and ``game.probe_relevant(target)`` holds
    are used.
    """
    game = make_game(run.game.name, run.game.build_params)
    agent = run.agents[focal]
    if agent.bundle is None:
        raise ValueError(f"agent {focal} does not punish")
    rng = stream(seed, "probe", focal)
    ctx: dict[int, tuple[list, list]] = {j: ([], []) for j in agent.bundle.harm_models}
    for ep in range(episodes):
        res = game.reset(child_seed(seed, "probe-env", ep))
        while not game.done:
            relevant = [j for j in ctx if res.observability[focal, j] and game.probe_relevant(j)]
            actions = np.array([rng.integers(k) for k in game.spec.action_space_sizes])
            for j in relevant:
                others = np.where(np.delete(res.observability[focal], j), np.delete(actions, j), PLACEHOLDER)
                ctx[j][0].append(res.observations[focal])
                ctx[j][1].append(others)
            res = game.step(actions)
    labels = game.action_labels or tuple(str(a) for a in range(game.spec.action_space_sizes[0]))
    total = np.zeros(len(labels))
    count = 0
    for j, (obs, others) in ctx.items():
        if not obs:
            continue
        probs = agent.bundle.harm_models[j].distribution(np.array(obs), np.array(others))
        total += kernels.intensity_rows(np.ascontiguousarray(probs)).sum(axis=0)
        count += len(obs)
    if count == 0:
        warnings.warn("intensity probe found no relevant contexts")
        return {lab: float("nan") for lab in labels}
    return {lab: float(v / count) for lab, v in zip(labels, total)}


@dataclass
class MatchupResult:
    opponent: str
    curves: list[dict]  # one per window, focal-side means over targets
    intensity: dict[str, float]
    run: RunResult

    @property
    def probability(self) -> np.ndarray:
        return np.array([c["probability"] for c in self.curves])

    @property
    def punishments(self) -> np.ndarray:
        return np.array([c["punish_count"] for c in self.curves])

    def write(self, path: Path) -> None:
        keys = ("window", "frequency", "ineffective", "probability", "punish_count", "mean_w")
        write_csv(path, ("opponent",) + keys, ([self.opponent] + [fmt(c[k]) for k in keys] for c in self.curves))


def evaluate_matchup(
    cfg: ExperimentConfig,
    opponent: str,
    episodes: int | None = None,
    seed: int | None = None,
    checkpoint_dir: str | Path | None = None,
    focal: int = 0,
    train_focal: bool = False,
    probe_episodes: int = 20,
    out: str | Path | None = None,
) -> MatchupResult:
    """Focal APC agent against ``opponent`` with its DPN frozen.

    The focal agent comes from ``checkpoint_dir`` when given, otherwise
    from a fresh self-play run of ``cfg`` (phase 1 and phase 2).
    """
    seed = cfg.training.seeds[0] if seed is None else seed
    if checkpoint_dir is not None:
        source = load_checkpoints(cfg, Path(checkpoint_dir), seed)
    else:
        source = run_seed(cfg.replace(**{"outputs.windows": False}), seed)
    if source.agents[focal].bundle is None:
        raise ValueError(f"focal agent {focal} has no punishment mechanism")
    agents = with_opponents(cfg, source, opponent, focal, seed)
    for a in agents:
        if a.index == focal:
            a.learns = train_focal
    game = make_game(cfg.environment, cfg.env_params)
    match_cfg = cfg.replace(**{"outputs.windows": False, "outputs.log_every": 1})
    run = RunResult(f"{cfg.name}-vs-{opponent}-s{seed}", seed, agents=agents, game=game)
    train(match_cfg, game, agents, run, cfg.training.episodes if episodes is None else episodes)
    targets = [j for j in range(game.n) if j != focal]
    curves = []
    for rep in run.reports:
        cnt = rep.punishments[focal, targets]
        curves.append(
            {
                "window": rep.window,
                "frequency": float(rep.frequency[focal, targets].mean()),
                "ineffective": float(rep.ineffective[focal, targets].mean()),
                "probability": float(rep.probability_used[focal, targets].mean()),
                "punish_count": float(cnt.sum()),
                "mean_w": float(rep.weight_sum[focal, targets].sum() / cnt.sum()) if cnt.sum() else 0.0,
            }
        )
    source.game = game
    intensity = intensity_probe(source, focal, probe_episodes, seed)
    result = MatchupResult(opponent, curves, intensity, run)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        result.write(out / f"matchup_{opponent}.csv")
        write_csv(
            out / f"intensity_{opponent}.csv",
            ("label", "mean_piw"),
            ([k, fmt(v)] for k, v in intensity.items()),
        )
    return result


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def emit_plot_data(metrics_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Learning curves (episode, mean, std across runs) per metric, plus pass-through
    of sweep matrices and matchup curves found in ``metrics_dir``."""
    metrics_dir = Path(metrics_dir)
    out_dir = Path(out_dir) if out_dir else metrics_dir / "plots"
    skip = ("sweep", "matchup", "intensity")
    runs = sorted(p for p in metrics_dir.glob("*.csv") if p.suffixes == [".csv"] and not p.name.startswith(skip))
    sweeps = sorted(metrics_dir.glob("sweep*.csv"))
    matchups = sorted(metrics_dir.glob("matchup_*.csv"))
    if not (runs or sweeps or matchups):
        warnings.warn(f"no metrics found in {metrics_dir}")
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if runs:
        tables = [read_csv(p) for p in runs]
        for col in ("collective_reward", "cooperation_rate", "punishment_frequency", "mean_p", "mean_piw"):
            by_ep: dict[int, list[float]] = {}
            for table in tables:
                for row in table:
                    by_ep.setdefault(int(row["episode"]), []).append(float(row[col]))
            rows = []
            for ep in sorted(by_ep):
                v = np.array(by_ep[ep])
                v = v[~np.isnan(v)]
                mean, std = (v.mean(), v.std()) if len(v) else (float("nan"), float("nan"))
                rows.append([fmt(ep), fmt(mean), fmt(std)])
            path = out_dir / f"curve_{col}.csv"
            write_csv(path, ("episode", "mean", "std"), rows)
            written.append(path)
    for src in sweeps:
        path = out_dir / f"heatmap_{src.stem}.csv"
        path.write_text(src.read_text(encoding="utf-8"), encoding="utf-8")
        written.append(path)
    if matchups:
        rows = []
        for src in matchups:
            for row in read_csv(src):
                rows.append([row["opponent"], row["window"], row["frequency"], row["probability"], row["punish_count"]])
        path = out_dir / "matchup_curves.csv"
        write_csv(path, ("opponent", "window", "frequency", "probability", "punish_count"), rows)
        written.append(path)
    return written
