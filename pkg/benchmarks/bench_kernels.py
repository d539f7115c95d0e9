"""Numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--episodes 1000]

Each kernel is warmed up once (so JIT compilation is excluded), then timed
as the best of ``--repeat`` runs. Outputs of the two paths are compared
as well; a mismatch is reported next to the timing. The last block trains
the IPGG preset end to end in two subprocesses, with and without
APC_DISABLE_NUMBA, since the flag is only read at import.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from apc import kernels


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, atol=1e-10)


def cases(rng):
    q = rng.normal(size=(20000, 9))
    yield "softmax_rows 20000x9", kernels.softmax_rows_nb, kernels.softmax_rows_np, lambda: (q, 0.1)

    probs = kernels.softmax_rows_np(q, 0.1)
    yield "intensity_rows 20000x9", kernels.intensity_rows_nb, kernels.intensity_rows_np, lambda: (probs,)

    f = rng.random((3, 64, 64))
    yield "ineffective 64x64", kernels.ineffective_nb, kernels.ineffective_np, lambda: (f[0], f[1], f[2], 0.05)

    # one IPGG episode, 5 agents, previous joint action in the context
    n, k, H = 5, 2, 50
    K = (k + 1) ** (2 * n - 1)
    intensity = np.zeros((n, n, K, k))
    intensity[..., 1] = 1.0
    episode = (
        np.full((n, k), 0.5),
        np.array([1.0, 0.0]),
        1.0,
        3.0,
        rng.random((H, n)),
        rng.random((H, n, n)),
        intensity,
        np.ones((n, n)),
        0.7,
        0.7,
        True,
        True,
    )
    yield "matrix_episode ipgg H=50", kernels.matrix_episode_nb, kernels.matrix_episode_np, lambda: episode

    N, K, A = 20000, 243, 2
    cells, acts = rng.integers(K, size=N), rng.integers(A, size=N)
    targets = rng.normal(size=N)
    batches = rng.integers(N, size=(2000, 64))

    def sgd_args():
        return cells, acts, targets, np.zeros(K), np.zeros(A), np.zeros((K, A)), batches, 0.01

    yield "tabular_sgd 2000 steps", kernels.tabular_sgd_nb, kernels.tabular_sgd_np, sgd_args


E2E = """
import time
from apc.harness import load_config, prepare, train
cfg = load_config("ipgg").replace(**{{"training.episodes": {episodes}}})
t0 = time.perf_counter()
run = prepare(cfg, 0)
train(cfg, run.game, run.agents, run)
print(time.perf_counter() - t0, run.final()["contribution_probability"])
"""


def end_to_end(episodes):
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, APC_DISABLE_NUMBA=flag)
        res = subprocess.run(
            [sys.executable, "-c", E2E.format(episodes=episodes)], env=env, capture_output=True, text=True, check=True
        )
        secs, coop = res.stdout.split()
        out[label] = (float(secs), float(coop))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--episodes", type=int, default=1000, help="IPGG episodes for the end-to-end run; 0 skips it")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  match")
    for name, fast, slow, make in cases(rng):
        t_nb = best_of(lambda f=fast, m=make: f(*m()), args.repeat)
        t_np = best_of(lambda f=slow, m=make: f(*m()), args.repeat)
        ok = same(fast(*make()), slow(*make()))
        print(f"{name:28s} {1e3 * t_nb:10.3f} {1e3 * t_np:10.3f} {t_np / t_nb:7.1f}x  {'yes' if ok else 'NO'}")
    if args.episodes:
        res = end_to_end(args.episodes)
        (t_nb, c_nb), (t_np, c_np) = res["numba"], res["numpy"]
        print(f"\nipgg {args.episodes} episodes: numba {t_nb:.2f} s, numpy {t_np:.2f} s ({t_np / t_nb:.1f}x)")
        print(f"final contribution probability: numba {c_nb:.6f}, numpy {c_np:.6f}")


if __name__ == "__main__":
    main()
