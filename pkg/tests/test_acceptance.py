"""End-to-end acceptance checks, one test per criterion.

Each check records a one-line verdict that is printed in the terminal
summary. Gridworld runs use a desk-scale budget (see the constants below);
everything else runs the shipped presets unchanged.
"""

import warnings
from fractions import Fraction

import numpy as np
import pytest

from apc import kernels
from apc.defection import MLPHarmModel, TabularHarmModel, objective_value, softmax_distribution
from apc.harness import evaluate_matchup, intensity_probe, load_config, prepare, run_seed, sweep_cd
from apc.harness.experiment import COARSE_GRID
from apc.learners import actor_loss_and_grads, critic_loss_and_grads, expected_coop_gradient
from apc.nn import MLP
from apc.punishment import is_ineffective, punish_probability

pytestmark = pytest.mark.slow

GRID_EPISODES = 3000
GRID_FIT_STEPS = 5000
GRID_SEEDS = [0, 1, 2, 3, 4]
ABLATION_SEEDS = [0, 1, 2]

_runs: dict = {}


def finals(preset, seeds, **over):
    """Final metrics of ``preset`` per seed, memoized across criteria."""
    key = (preset, tuple(seeds), tuple(sorted(over.items())))
    if key not in _runs:
        cfg = load_config(preset).replace(**{"outputs.windows": False, **over})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _runs[key] = [run_seed(cfg, s).final() for s in seeds]
    return _runs[key]


def grid_finals(preset, seeds):
    return finals(preset, seeds, **{"training.episodes": GRID_EPISODES, "mechanism.fit_steps": GRID_FIT_STEPS})


def mean_of(rows, key):
    return float(np.mean([r[key] for r in rows]))


# 1 ----------------------------------------------------------------------------


def test_criterion_1_drift_closed_form(verdict):
    errs = [abs(expected_coop_gradient(5, 1, 3, d) - (-0.4 + 4 * d)) for d in (0.0, 0.1, 0.3, 0.7)]
    below, at, above = (expected_coop_gradient(5, 1, 3, d) for d in (0.1 - 1e-9, 0.1, 0.1 + 1e-9))
    ok = max(errs) < 1e-12 and below < 0 < above and abs(at) < 1e-12
    verdict(1, ok, f"max error {max(errs):.1e}; sign at 0.1-/0.1/0.1+: {below:+.1e} {at:+.1e} {above:+.1e}")


# 2 ----------------------------------------------------------------------------


def test_criterion_2_ipgg_self_play(verdict):
    seeds = [0, 1, 2, 3, 4]
    apc = [r["contribution_probability"] for r in finals("ipgg", seeds)]
    base = [r["contribution_probability"] for r in finals("ipgg_nopunish", seeds)]
    ok = min(apc) > 0.95 and max(base) < 0.2
    verdict(2, ok, f"APC min {min(apc):.3f} over 5 seeds (> 0.95); no punishment max {max(base):.3f} (< 0.2)")


# 3 ----------------------------------------------------------------------------


def test_criterion_3_phase_diagram(verdict):
    cfg = load_config("ipgg").replace(**{"outputs.windows": False})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sweep_cd(cfg, COARSE_GRID, COARSE_GRID)
    bad = []
    for d in COARSE_GRID:
        for c in COARSE_GRID:
            v = res.rate(c, d)
            if d >= 0.3 and not v > 0.9:
                bad.append(f"(d={d}, c={c}) {v:.2f} <= 0.9")
            if d == 0.2 and c in (0.7, 1.1, 1.4) and not v < 0.5:
                bad.append(f"(d={d}, c={c}) {v:.2f} >= 0.5")
            if d == 0.2 and c in (0.0, 0.1, 0.2) and not v > 0.9:
                bad.append(f"(d={d}, c={c}) {v:.2f} <= 0.9")
    detail = "all cells as required" if not bad else f"{len(bad)} cells off: " + "; ".join(bad)
    verdict(3, not bad, detail)


# 4 ----------------------------------------------------------------------------


def test_criterion_4_softmax_beats_simplex_oracle(verdict):
    rng = np.random.default_rng(4)
    worst = np.inf
    for _ in range(200):
        k = int(rng.integers(2, 6))
        q = rng.normal(0, 2, size=k)
        beta = float(rng.choice([0.05, 0.1, 1.0]))
        best = objective_value(softmax_distribution(q, beta)[0], q, beta)
        pts = rng.dirichlet(np.ones(k), size=10_000)
        ent = -np.sum(np.where(pts > 0, pts * np.log(np.where(pts > 0, pts, 1.0)), 0.0), axis=1)
        worst = min(worst, float(best - (pts @ q + beta * ent).max()))
    verdict(4, worst >= -1e-6, f"smallest margin over 200 vectors x 1e4 points: {worst:.3e} (>= -1e-6)")


# 5 ----------------------------------------------------------------------------


def direct(f_hist, eps):
    f, e, m = [Fraction(x) for x in f_hist], Fraction(eps), len(f_hist)
    if m <= 1:
        return Fraction(1)
    k = 0
    for s in range(2, m):
        fbar = sum(f[:s]) / s
        k += (f[s] >= f[s - 1] or abs(f[s] - fbar) < e) and f[s] >= e
    return 1 - Fraction(k, m - 1)


def test_criterion_5_probability_oracle(verdict):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        hist = [float(rng.choice([0.0, 0.05, 0.5])) if rng.random() < 0.3 else float(rng.random()) for _ in range(m)]
        flags = [is_ineffective(hist[: s + 1], 0.05) for s in range(1, m)]
        mismatches += punish_probability(flags, m) != float(direct(hist, 0.05))
    verdict(5, mismatches == 0, f"{mismatches} mismatches over 1000 histories")


# 6 ----------------------------------------------------------------------------


def test_criterion_6_adaptive_frequency(verdict):
    cfg = load_config("ipgg").replace(**{"training.seeds": [0]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        defect = evaluate_matchup(cfg, "always_defect", episodes=20)
        coop = evaluate_matchup(cfg, "always_cooperate", episodes=20)
    p = np.array([rep.probability_used[0, 1:] for rep in defect.run.reports])  # (windows, targets)
    monotone = bool(np.all(np.diff(p[2:], axis=0) <= 1e-12))
    low = bool(np.all(p[:20].min(axis=0) < 0.2))
    spared = int(coop.punishments.sum())
    ok = monotone and low and spared == 0
    verdict(
        6,
        ok,
        f"vs defectors p non-increasing after window 2: {monotone}, min p {p.min():.3f} within 20 windows; "
        f"punishments of cooperators: {spared}",
    )


# 7 ----------------------------------------------------------------------------


def probe(preset, episodes):
    cfg = load_config(preset)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run = prepare(cfg, cfg.training.seeds[0])
    return intensity_probe(run, 0, episodes, 0)


def fmt(d):
    return ", ".join(f"{k} {v:.3f}" for k, v in d.items())


def test_criterion_7_intensity_ordering(verdict):
    m = probe("mipgg", 50)
    mipgg_ok = m["D"] > m["C-0.1"] > m["C-0.2"] and m["C"] == 0
    s = probe("mssh", 300)
    others = {k: v for k, v in s.items() if k not in ("HH", "HH-0.2", "HH-0.3")}
    mssh_ok = s["HH-0.3"] > s["HH-0.2"] > s["HH"] and all(v == 0 for v in others.values())
    verdict(7, mipgg_ok and mssh_ok, f"MIPGG [{fmt(m)}] ok={mipgg_ok}; MSSH [{fmt(s)}] ok={mssh_ok}")


# 8 ----------------------------------------------------------------------------


def matchup_cost(preset):
    cfg = load_config(preset).replace(**{"training.seeds": [0]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = evaluate_matchup(cfg, "always_defect", episodes=50)
    return float(sum(r.raw_return[0] - r.total_return[0] for r in res.run.rows))


def test_criterion_8_ablation_ordering(verdict):
    parts = []
    ok = True
    for env, run in (("ipgg", finals), ("ssh", grid_finals)):
        apc = mean_of(run(env, ABLATION_SEEDS), "collective_reward")
        no_apr = mean_of(run(f"{env}_no_apr", ABLATION_SEEDS), "collective_reward")
        no_dpn = mean_of(run(f"{env}_no_dpn", ABLATION_SEEDS), "collective_reward")
        close = abs(apc - no_apr) <= 0.1 * max(abs(apc), abs(no_apr))
        ratio = apc / no_dpn if no_dpn > 0 else np.inf
        ok &= close and ratio > 5
        parts.append(f"{env}: APC {apc:.2f}, no APr {no_apr:.2f}, no DPN {no_dpn:.2f}, ratio {ratio:.1f}")
    cost, cost_no_apr = matchup_cost("ipgg"), matchup_cost("ipgg_no_apr")
    ok &= cost < cost_no_apr
    parts.append(f"cost vs defectors {cost:.1f} < {cost_no_apr:.1f}")
    verdict(8, ok, "; ".join(parts))


# 9 ----------------------------------------------------------------------------


def fd_rel_err(params, loss, analytic, h=1e-6):
    num = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            g[idx] = (up - loss()) / (2 * h)
            p[idx] = old
        num.append(g)
    a = np.concatenate([x.ravel() for x in analytic])
    b = np.concatenate([x.ravel() for x in num])
    return np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b))


def test_criterion_9_gradient_sanity(verdict):
    rng = np.random.default_rng(9)
    actor, critic = MLP([6, 16, 16, 5], rng), MLP([6, 16, 16, 1], rng)
    obs, acts, adv, tgt = rng.normal(size=(20, 6)), rng.integers(5, size=20), rng.normal(size=20), rng.normal(size=20)
    ea = fd_rel_err(
        actor.params,
        lambda: actor_loss_and_grads(actor, obs, acts, adv, 0.01)[0],
        actor_loss_and_grads(actor, obs, acts, adv, 0.01)[1],
    )
    ec = fd_rel_err(
        critic.params, lambda: critic_loss_and_grads(critic, obs, tgt)[0], critic_loss_and_grads(critic, obs, tgt)[1]
    )

    N = 300
    others = rng.integers(2, size=(N, 4))
    actions = rng.integers(2, size=N)
    rewards = 0.5 * actions - 0.2 * others.sum(axis=1) + rng.normal(0, 0.3, N)
    data = {"obs": np.zeros((N, 10)), "others": others, "action": actions, "reward": rewards}
    full = np.arange(N)[None, :]
    tab = TabularHarmModel(5, 2)
    cells = tab.keys(data["obs"], others)
    mlp = MLPHarmModel(10, 5, 2, hidden=16, lr=1e-3, rng=np.random.default_rng(0))
    x = mlp.features(data["obs"], others)
    params = mlp.net.params
    m, v, t = [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0
    lt, lm = [tab.loss(data)], [mlp.loss(data)]
    for _ in range(100):
        kernels.tabular_sgd(cells, actions, -rewards, tab.ctx, tab.act, tab.table, full, 0.05)
        t = kernels.mlp_fit(x, -rewards, actions, params, m, v, t, full, 1e-3, 0.0)
        lt.append(tab.loss(data))
        lm.append(mlp.loss(data))
    mono = all(b <= a + 1e-12 for seq in (lt, lm) for a, b in zip(seq, seq[1:]))
    ok = ea < 1e-4 and ec < 1e-4 and mono
    verdict(9, ok, f"actor rel err {ea:.1e}, critic {ec:.1e}; harm loss non-increasing over 100 epochs: {mono}")


# 10 ---------------------------------------------------------------------------


def test_criterion_10_beats_no_punishment(verdict):
    parts, ok = [], True
    for env in ("coin", "ssh"):
        apc = mean_of(grid_finals(env, GRID_SEEDS), "collective_reward")
        base = mean_of(grid_finals(f"{env}_nopunish", GRID_SEEDS), "collective_reward")
        ok &= apc > base
        parts.append(f"{env}: APC {apc:.2f} vs no punishment {base:.2f}")
    verdict(10, ok, f"{'; '.join(parts)} ({GRID_EPISODES} episodes, 5 seeds)")
