from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apc import kernels
from apc.defection import DefectionDistribution, DefectionFlag
from apc.env.core import PLACEHOLDER
from apc.punishment import (
    PunishmentBook,
    PunishmentState,
    close_window,
    is_ineffective,
    piw,
    punish_probability,
    record_step,
    shape_rewards,
)

EPS = 0.05


def flag(d):
    return DefectionFlag(d, 0.9 if d else 0.1)


def direct_probability(f_hist, eps):
    """Hand-coded reference for the window probability after ``f_hist`` closed.

    Window s >= 2 is ineffective when (f_s >= f_{s-1} or |f_s - fbar_s| < eps)
    and f_s >= eps, with fbar_s the mean of f_{s-1}, ..., f_0. The probability
    in window m = len(f_hist) is 1 - (1/(m-1)) * sum of those indicators over
    windows 1..m-1, and 1 for m <= 1. Exact rationals throughout.
    """
    f = [Fraction(x) for x in f_hist]
    e = Fraction(eps)
    m = len(f)
    if m <= 1:
        return Fraction(1)
    count = 0
    for s in range(2, m):
        fbar = sum(f[s - k] for k in range(1, s + 1)) / s
        if (f[s] >= f[s - 1] or abs(f[s] - fbar) < e) and f[s] >= e:
            count += 1
    return 1 - Fraction(count, m - 1)


def random_history(rng, length):
    out = []
    for _ in range(length):
        if out and rng.random() < 0.3:
            out.append(out[-1])  # exercise the f_s >= f_{s-1} equality branch
        elif rng.random() < 0.1:
            out.append(0.0)
        else:
            out.append(float(rng.random()))
    return out


def flags_for(history, eps):
    return [is_ineffective(history[: s + 1], eps) for s in range(1, len(history))]


# -- ineffective windows ----------------------------------------------------


@pytest.mark.parametrize(
    "hist, expected",
    [([0.6, 0.6, 0.7], True), ([0.6, 0.6, 0.5], False), ([0.6, 0.6, 0.02], False)],
)
def test_ineffective_examples(hist, expected):
    assert is_ineffective(hist, EPS) is expected


def test_first_two_windows_are_effective():
    assert not is_ineffective([0.9], EPS)
    assert not is_ineffective([0.9, 0.95], EPS)


def test_near_mean_counts_as_ineffective():
    # dropped below the previous window but stuck within eps of the running mean
    assert is_ineffective([0.5, 0.7, 0.58], EPS)


def test_ineffective_kernels_agree():
    rng = np.random.default_rng(0)
    f, g, h = rng.random((3, 30, 30))
    g[::3] = f[::3]
    assert np.array_equal(kernels.ineffective_nb(f, g, h, EPS), kernels.ineffective_np(f, g, h, EPS))


# -- punishment probability -------------------------------------------------


def test_probability_examples():
    assert punish_probability([], 0) == 1.0
    assert punish_probability([], 1) == 1.0
    assert punish_probability([False, True, True], 4) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        punish_probability([True], 4)


def test_all_ineffective_drives_probability_down():
    # window 1 is effective by definition, every later one is not
    ps = [punish_probability([False] + [True] * k) for k in range(40)]
    assert ps[0] == 1.0
    assert all(b < a for a, b in zip(ps, ps[1:]))
    assert ps[-1] < 0.03


def test_probability_matches_direct_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        hist = random_history(rng, int(rng.integers(1, 9)))
        got = punish_probability(flags_for(hist, EPS), len(hist))
        assert got == float(direct_probability(hist, EPS)), hist


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_probability_is_one_minus_k_over_m_minus_1(hist):
    m = len(hist)
    p = punish_probability(flags_for(hist, EPS), m)
    assert 0.0 <= p <= 1.0
    if m >= 2:
        k = round((1 - p) * (m - 1))
        assert p == pytest.approx(1 - k / (m - 1), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.3, 1.0), st.lists(st.floats(0.06, 0.2), min_size=1, max_size=8))
def test_strictly_decreasing_history_keeps_probability_one(start, drops):
    hist = [start]
    for d in drops:
        hist.append(hist[-1] - d)
    assert punish_probability(flags_for(hist, EPS), len(hist)) == 1.0


# -- windows ------------------------------------------------------------------


def test_record_step_and_close():
    st_ = PunishmentState((0, 1), window_length=4)
    for d in (True, False, True, False):
        record_step(st_, flag(d), True)
    record_step(st_, flag(True), False)  # unobservable: ignored
    assert st_.current_window_flags == [True, False, True, False]
    f, st_ = close_window(st_)
    assert f == 0.5 and st_.current_window_flags == [] and st_.frequency_history == [0.5]


def test_empty_window_carries_frequency_forward():
    st_ = PunishmentState((0, 1))
    f0, _ = close_window(st_)
    assert f0 == 0.0
    record_step(st_, flag(True), True)
    close_window(st_)
    f2, _ = close_window(st_)
    assert f2 == 1.0


def test_unobserved_flag_is_skipped():
    st_ = PunishmentState((0, 1))
    record_step(st_, DefectionFlag(False, 0.0, unobserved=True), True)
    assert st_.current_window_flags == [] and st_.steps_in_window == 1


def test_non_adaptive_state_stays_at_one():
    st_ = PunishmentState((0, 1), adaptive=False)
    for _ in range(6):
        record_step(st_, flag(True), True)
        close_window(st_)
    assert st_.current_probability == 1.0
    assert any(st_.ineffective_flags)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 4), st.integers(1, 6))
def test_book_matches_pairwise_states(seed, n, L):
    rng = np.random.default_rng(seed)
    book = PunishmentBook(n, L, EPS)
    states = {(i, j): PunishmentState((i, j), L, EPS) for i in range(n) for j in range(n) if i != j}
    for _ in range(8 * L):
        defect = rng.random((n, n)) < 0.5
        visible = rng.random((n, n)) < 0.8
        book.observe(defect, visible)
        for (i, j), s in states.items():
            record_step(s, flag(bool(defect[i, j])), bool(visible[i, j]))
        if book.window_due:
            rep = book.close()
            for (i, j), s in states.items():
                f, _ = close_window(s)
                assert rep.frequency[i, j] == pytest.approx(f, abs=1e-12)
                assert rep.probability[i, j] == pytest.approx(s.current_probability, abs=1e-12)


def test_book_reports_probability_in_force():
    book = PunishmentBook(2, 1, EPS)
    used = []
    for _ in range(6):
        book.observe(np.ones((2, 2), bool), np.ones((2, 2), bool))
        rep = book.close()
        used.append(rep.probability_used[0, 1])
    assert used[:3] == [1.0, 1.0, 1.0]
    assert used[-1] < 1.0  # constant defection is ineffective from window 2 on


def test_book_rows_without_adaptation():
    book = PunishmentBook(3, 1, EPS, adaptive=np.array([True, False, True]))
    for _ in range(5):
        book.observe(np.ones((3, 3), bool), np.ones((3, 3), bool))
        book.close()
    p = book.probability()
    assert np.all(p[1, [0, 2]] == 1.0)
    assert np.all(p[0, [1, 2]] < 1.0)
    assert np.all(np.diag(p) == 0.0)


# -- PIW and shaping ----------------------------------------------------------


def dd(p):
    return DefectionDistribution(np.array(p), 0.1)


def test_piw_examples():
    d = dd([0.5, 0.3, 0.1, 0.1])
    assert piw(d, 0, 1) == 1.0
    assert piw(d, 1, 1) == pytest.approx(0.6)
    assert piw(d, 0, 0) == 0.0
    assert piw(d, 2, 1) == 0.0
    assert piw(d, PLACEHOLDER, 1) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
def test_piw_ordering_and_gap(raw):
    p = np.array(raw) / sum(raw)
    d = dd(p)
    w = np.array([piw(d, a, 1) for a in range(len(p))])
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(w[p <= 1 / len(p)] == 0)
    order = np.argsort(p)
    assert np.all(np.diff(w[order]) >= -1e-12)
    assert np.all((w == 1.0) <= (p == p.max()))


def test_intensity_kernels_agree():
    rng = np.random.default_rng(3)
    probs = rng.dirichlet(np.ones(5), size=40)
    probs[0] = 0.2
    np.testing.assert_allclose(kernels.intensity_rows_nb(probs), kernels.intensity_rows_np(probs), atol=1e-15)
    row = kernels.intensity_rows_np(probs[1:2])[0]
    np.testing.assert_allclose(row, [piw(dd(probs[1]), a, 1) for a in range(5)], atol=1e-15)


def test_shaping_example():
    W = np.zeros((3, 3))
    W[0, 1] = 0.6
    W[2, 0] = 1.0
    total = shape_rewards(np.array([2.0, 0.0, 0.0]), W, 0.7, 0.7)
    assert total[0] == pytest.approx(0.88)
    np.testing.assert_allclose(total[1:], [-0.42, -0.7])


def test_shaping_trivial_and_symmetric():
    raw = np.array([1.0, -1.0])
    np.testing.assert_array_equal(shape_rewards(raw, np.zeros((2, 2)), 0.5, 0.9), raw)
    W = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(shape_rewards(raw, W, 0.4, 0.4), raw - 0.8)


def test_shaping_rejects_invalid_punishment():
    with pytest.raises(ValueError):
        shape_rewards(np.zeros(2), np.eye(2), 0.1, 0.1)
    vis = np.ones((2, 2), bool)
    vis[0, 1] = False
    with pytest.raises(ValueError):
        shape_rewards(np.zeros(2), np.array([[0, 0.5], [0, 0]]), 0.1, 0.1, vis)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.floats(0, 3), st.floats(0, 3), st.integers(0, 2**31))
def test_shaping_conservation(n, c, delta, seed):
    rng = np.random.default_rng(seed)
    W = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
    np.fill_diagonal(W, 0.0)
    raw = rng.normal(size=n)
    total = shape_rewards(raw, W, c, delta)
    assert total.sum() == pytest.approx(raw.sum() - (c + delta) * W.sum(), abs=1e-9)
