"""Hot numeric kernels.

Every kernel has a jitted loop version (``*_nb``) and a vectorized numpy
version (``*_np``). The public name is bound to one of them by
``APC_DISABLE_NUMBA``; both are importable for benchmarks and equivalence
tests. Random draws are always made by the caller and passed in, so the
two paths consume identical randomness.
"""

from __future__ import annotations

import numpy as np

from apc._accel import njit, pick

# ---------------------------------------------------------------------------
# softmax at temperature beta, row-wise
# ---------------------------------------------------------------------------


def softmax_rows_np(q: np.ndarray, beta: float) -> np.ndarray:
    z = q / beta
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@njit(cache=True)
def softmax_rows_nb(q, beta):
    out = np.empty_like(q)
    for b in range(q.shape[0]):
        m = q[b, 0] / beta
        for a in range(1, q.shape[1]):
            v = q[b, a] / beta
            m = max(m, v)
        s = 0.0
        for a in range(q.shape[1]):
            out[b, a] = np.exp(q[b, a] / beta - m)
            s += out[b, a]
        for a in range(q.shape[1]):
            out[b, a] /= s
    return out


# ---------------------------------------------------------------------------
# punishment intensity (draw = 1) for a batch of distributions
# ---------------------------------------------------------------------------


def intensity_rows_np(probs: np.ndarray) -> np.ndarray:
    """Per action: 0 at or below the uniform level, else prob / max prob."""
    k = probs.shape[1]
    ratio = probs / probs.max(axis=1, keepdims=True)
    return np.where(probs > 1.0 / k, ratio, 0.0)


@njit(cache=True)
def intensity_rows_nb(probs):
    out = np.zeros_like(probs)
    k = probs.shape[1]
    thr = 1.0 / k
    for b in range(probs.shape[0]):
        m = probs[b, 0]
        for a in range(1, k):
            m = max(m, probs[b, a])
        for a in range(k):
            if probs[b, a] > thr:
                out[b, a] = probs[b, a] / m
    return out


# ---------------------------------------------------------------------------
# ineffectiveness test, elementwise over pairs
# ---------------------------------------------------------------------------


def ineffective_np(f_now, f_prev, f_mean, eps):
    f_now = np.asarray(f_now, dtype=np.float64)
    return ((f_now >= f_prev) | (np.abs(f_now - f_mean) < eps)) & (f_now >= eps)


@njit(cache=True)
def ineffective_nb(f_now, f_prev, f_mean, eps):
    out = np.zeros(f_now.shape, dtype=np.bool_)
    for k in range(f_now.size):
        fs = f_now.flat[k]
        out.flat[k] = ((fs >= f_prev.flat[k]) or (abs(fs - f_mean.flat[k]) < eps)) and fs >= eps
    return out


# ---------------------------------------------------------------------------
# tabular harm regression: q = ctx[k] + act[a] + table[k, a]
# each parameter steps by lr times the mean residual of the batch samples
# that touch it
# ---------------------------------------------------------------------------


def tabular_sgd_np(cells, actions, targets, ctx, act, table, batches, lr):
    K, A = table.shape
    for rows in batches:
        k = cells[rows]
        a = actions[rows]
        err = ctx[k] + act[a] + table[k, a] - targets[rows]
        flat = k * A + a
        n_ctx = np.bincount(k, minlength=K)
        n_act = np.bincount(a, minlength=A)
        n_cell = np.bincount(flat, minlength=K * A)
        s_ctx = np.bincount(k, weights=err, minlength=K)
        s_act = np.bincount(a, weights=err, minlength=A)
        s_cell = np.bincount(flat, weights=err, minlength=K * A)
        hit = n_ctx > 0
        ctx[hit] -= lr * s_ctx[hit] / n_ctx[hit]
        hit = n_act > 0
        act[hit] -= lr * s_act[hit] / n_act[hit]
        tv = table.reshape(-1)
        hit = n_cell > 0
        tv[hit] -= lr * s_cell[hit] / n_cell[hit]
    return ctx, act, table


@njit(cache=True)
def tabular_sgd_nb(cells, actions, targets, ctx, act, table, batches, lr):
    K, A = table.shape
    B = batches.shape[1]
    n_ctx = np.zeros(K)
    s_ctx = np.zeros(K)
    n_act = np.zeros(A)
    s_act = np.zeros(A)
    n_cell = np.zeros((K, A))
    s_cell = np.zeros((K, A))
    err = np.zeros(B)
    for step in range(batches.shape[0]):
        for b in range(B):
            r = batches[step, b]
            k = cells[r]
            a = actions[r]
            err[b] = ctx[k] + act[a] + table[k, a] - targets[r]
        for b in range(B):
            r = batches[step, b]
            k = cells[r]
            a = actions[r]
            n_ctx[k] += 1.0
            s_ctx[k] += err[b]
            n_act[a] += 1.0
            s_act[a] += err[b]
            n_cell[k, a] += 1.0
            s_cell[k, a] += err[b]
        for b in range(B):
            r = batches[step, b]
            k = cells[r]
            a = actions[r]
            if n_ctx[k] > 0:
                ctx[k] -= lr * s_ctx[k] / n_ctx[k]
                n_ctx[k] = 0.0
                s_ctx[k] = 0.0
            if n_cell[k, a] > 0:
                table[k, a] -= lr * s_cell[k, a] / n_cell[k, a]
                n_cell[k, a] = 0.0
                s_cell[k, a] = 0.0
        for a in range(A):
            if n_act[a] > 0:
                act[a] -= lr * s_act[a] / n_act[a]
                n_act[a] = 0.0
                s_act[a] = 0.0
    return ctx, act, table


# ---------------------------------------------------------------------------
# one episode of a repeated public goods game under the punishment mechanism
# ---------------------------------------------------------------------------
#
# probs      (n, k)      action distribution of each agent
# fractions  (k,)        contributed fraction per action
# u_act      (H, n)      uniforms for action sampling
# u_pun      (H, n, n)   uniforms for the Bernoulli gate, row = punisher
# intensity  (n, n, K, k) draw-free punishment weight per pair, context, action
# p          (n, n)      current punishment probability per pair
# joint_ctx  include the previous joint action in the context key
# punish     apply shaping at all
#
# Returns actions (H, n) int, raw (H, n), total (H, n), defections (n, n),
# punishments (n, n), weight sums (n, n).


@njit(cache=True)
def matrix_episode_nb(probs, fractions, e, r, u_act, u_pun, intensity, p, c, delta, joint_ctx, punish):
    H, n = u_act.shape
    k = fractions.shape[0]
    base = k + 1
    actions = np.zeros((H, n), dtype=np.int64)
    raw = np.zeros((H, n))
    total = np.zeros((H, n))
    defections = np.zeros((n, n))
    punishments = np.zeros((n, n))
    wsum = np.zeros((n, n))
    prev = np.zeros(n, dtype=np.int64)  # 0 = no previous round
    others_pow = base ** (n - 1)
    for t in range(H):
        pool = 0.0
        for i in range(n):
            acc = 0.0
            a = k - 1
            for b in range(k):
                acc += probs[i, b]
                if u_act[t, i] < acc:
                    a = b
                    break
            actions[t, i] = a
            pool += fractions[a]
        for i in range(n):
            raw[t, i] = r * e * pool / n - e * fractions[actions[t, i]]
            total[t, i] = raw[t, i]
        prev_key = 0
        if joint_ctx:
            mult = 1
            for m in range(n):
                prev_key += prev[m] * mult
                mult *= base
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                key = 0
                mult = 1
                for m in range(n):
                    if m == j:
                        continue
                    key += (actions[t, m] + 1) * mult
                    mult *= base
                if joint_ctx:
                    key += prev_key * others_pow
                w1 = intensity[i, j, key, actions[t, j]]
                if w1 > 0.0:
                    defections[i, j] += 1.0
                    if punish and u_pun[t, i, j] < p[i, j]:
                        punishments[i, j] += 1.0
                        wsum[i, j] += w1
                        total[t, i] -= c * w1
                        total[t, j] -= delta * w1
        for m in range(n):
            prev[m] = actions[t, m] + 1
    return actions, raw, total, defections, punishments, wsum


def matrix_episode_np(probs, fractions, e, r, u_act, u_pun, intensity, p, c, delta, joint_ctx, punish):
    H, n = u_act.shape
    k = fractions.shape[0]
    base = k + 1
    cdf = np.cumsum(probs, axis=1)
    actions = (u_act[:, :, None] >= cdf[None, :, :]).sum(axis=2)
    actions = np.minimum(actions, k - 1).astype(np.int64)
    contrib = fractions[actions]
    raw = r * e * contrib.sum(axis=1, keepdims=True) / n - e * contrib
    total = raw.copy()
    defections = np.zeros((n, n))
    punishments = np.zeros((n, n))
    wsum = np.zeros((n, n))

    off = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(off)
    # positional weight of agent m inside the key of a^{-j}
    pos = np.arange(n)[None, :] - (np.arange(n)[None, :] > jj[:, None])
    place = np.where(np.arange(n)[None, :] == jj[:, None], 0, base ** pos)
    codes = actions + 1
    others_key = codes @ place.T  # (H, pairs)
    if joint_ctx:
        prev = np.vstack([np.zeros((1, n), dtype=np.int64), codes[:-1]])
        prev_key = prev @ (base ** np.arange(n))
        keys = prev_key[:, None] * base ** (n - 1) + others_key
    else:
        keys = others_key
    w1 = intensity[ii[None, :], jj[None, :], keys, actions[:, jj]]  # (H, pairs)
    flagged = w1 > 0.0
    defections[ii, jj] = flagged.sum(axis=0)
    if punish:
        gate = u_pun[:, ii, jj] < p[ii, jj][None, :]
        w = np.where(flagged & gate, w1, 0.0)
        punishments[ii, jj] = (flagged & gate).sum(axis=0)
        wsum[ii, jj] = w.sum(axis=0)
        W = np.zeros((H, n, n))
        W[:, ii, jj] = w
        total = raw - c * W.sum(axis=2) - delta * W.sum(axis=1)
    return actions, raw, total, defections, punishments, wsum


softmax_rows = pick(softmax_rows_nb, softmax_rows_np)
intensity_rows = pick(intensity_rows_nb, intensity_rows_np)
ineffective = pick(ineffective_nb, ineffective_np)
tabular_sgd = pick(tabular_sgd_nb, tabular_sgd_np)
matrix_episode = pick(matrix_episode_nb, matrix_episode_np)


# ---------------------------------------------------------------------------
# harm MLP regression: two tanh layers, output = [baseline, deviations...],
# q(x, a) = out[0] + out[1 + a]; ridge on the input-dependent deviations;
# Adam on all six parameter arrays
# ---------------------------------------------------------------------------


def _adam_np(p, g, m, v, lr, b1, b2, eps, c1, c2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def mlp_fit_np(X, y, acts, params, ms, vs, t, batches, lr, shrink, b1=0.9, b2=0.999, eps=1e-8):
    W1, c1_, W2, c2_, W3, c3_ = params
    for rows in batches:
        xb, yb, ab = X[rows], y[rows], acts[rows]
        B = len(rows)
        h1 = np.tanh(xb @ W1 + c1_)
        h2 = np.tanh(h1 @ W2 + c2_)
        out = h2 @ W3 + c3_
        r = np.arange(B)
        err = (out[r, 0] + out[r, 1 + ab] - yb) / B
        ridge = shrink * (out[:, 1:] - c3_[1:]) / B
        g = np.zeros_like(out)
        g[:, 1:] = ridge
        g[r, 0] = err
        g[r, 1 + ab] += err
        grads = [None] * 6
        grads[4] = h2.T @ g
        grads[5] = g.sum(axis=0)
        grads[5][1:] -= ridge.sum(axis=0)
        g = (g @ W3.T) * (1.0 - h2 * h2)
        grads[2] = h1.T @ g
        grads[3] = g.sum(axis=0)
        g = (g @ W2.T) * (1.0 - h1 * h1)
        grads[0] = xb.T @ g
        grads[1] = g.sum(axis=0)
        t += 1
        bc1, bc2 = 1.0 - b1**t, 1.0 - b2**t
        for p, gr, m, v in zip(params, grads, ms, vs):
            _adam_np(p, gr, m, v, lr, b1, b2, eps, bc1, bc2)
    return t


# matmul-bound, so numba gains nothing here; one implementation serves both modes
mlp_fit = mlp_fit_np
