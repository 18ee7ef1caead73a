import math

import numpy as np
import pytest
from scipy.stats import kstest

from ergodicmc.pathfun import (
    PathWindow,
    SlidingMax,
    WindowCoverageError,
    barrier_payoff,
    bridge_sup_cdf,
    bridge_sup_sample,
    eval_stopped,
    make_functional,
)
from ergodicmc.streams import GaussianStream


# ---------------------------------------------------------------------------
# bridge supremum
# ---------------------------------------------------------------------------


def test_bridge_cdf_values():
    assert bridge_sup_cdf(0, 0, 1, 1, 1) == pytest.approx(1 - math.exp(-2), rel=1e-14)
    assert bridge_sup_cdf(0.3, -0.2, 1, 1, 0.3) == 0.0  # z = max(x, y)
    assert bridge_sup_cdf(0, 1, 0.5, 2, 2) == pytest.approx(1 - math.exp(-8), rel=1e-14)
    assert bridge_sup_cdf(0, 0, 1, 1, -0.5) == 0.0


def test_bridge_sample_inverts_cdf_value():
    z = bridge_sup_sample(0, 0, 1, 1, 1 - math.exp(-2))
    assert z == pytest.approx(1.0, rel=1e-12)


def test_bridge_sample_small_u_approaches_max():
    for u in (1e-12, 1e-9, 1e-6):
        z = bridge_sup_sample(0.2, -0.1, 1.0, 1.0, u)
        assert z >= 0.2
        assert z - 0.2 < 1e-4


def _random_bridge_inputs(n, seed=0):
    st = GaussianStream(seed, stream_id=77)
    x = 4.0 * st.uniform(n) - 2.0
    lam = 0.05 + 1.95 * st.uniform(n)
    gam = 10.0 ** (-4.0 * st.uniform(n))  # 1e-4 .. 1
    y = x + lam * np.sqrt(gam) * st.normal(n)
    u = st.uniform(n)
    u = np.clip(u, 1e-6, 1 - 1e-6)
    return x, y, lam, gam, u


def test_bridge_roundtrip_1e4_random_inputs():
    x, y, lam, gam, u = _random_bridge_inputs(10_000)
    z = bridge_sup_sample(x, y, lam, gam, u)
    back = bridge_sup_cdf(x, y, lam, gam, z)
    assert np.max(np.abs(back - u)) < 1e-12


def test_bridge_sample_dominates_endpoints():
    x, y, lam, gam, u = _random_bridge_inputs(10_000, seed=1)
    z = bridge_sup_sample(x, y, lam, gam, u)
    assert np.all(z >= np.maximum(x, y))


def test_bridge_sample_ks_against_cdf():
    x, y, lam, gam = 0.1, -0.2, 0.7, 0.5
    u = GaussianStream(5, 9).uniform(100_000)
    z = bridge_sup_sample(x, y, lam, gam, u)
    d = kstest(z, lambda t: bridge_sup_cdf(x, y, lam, gam, t)).statistic
    assert d < 1.63 / math.sqrt(z.size)  # 1% critical value


def test_bridge_sample_rejects_boundary_u():
    with pytest.raises(ValueError):
        bridge_sup_sample(0, 0, 1, 1, 0.0)
    with pytest.raises(ValueError):
        bridge_sup_sample(0, 0, 1, 1, 1.0)


# ---------------------------------------------------------------------------
# sliding max
# ---------------------------------------------------------------------------


def test_sliding_max_matches_bruteforce_windows():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(10, 200))
        vals = rng.standard_normal(n)
        # both window ends move right, as the shifted horizons do
        lefts = np.sort(rng.integers(0, n, size=20))
        sm = SlidingMax()
        pushed = 0
        right = -1
        for left in lefts:
            right = max(right, int(rng.integers(left, n)))
            while pushed <= right:
                sm.push(pushed, vals[pushed])
                pushed += 1
            sm.drop_older(int(left))
            assert sm.max() == vals[left : right + 1].max()


# ---------------------------------------------------------------------------
# windows and functionals
# ---------------------------------------------------------------------------


def _fill_window(times, values, sups=None, horizon=1.0):
    w = PathWindow(horizon)
    w.append(times[0], values[0])
    for i in range(1, len(times)):
        w.append(times[i], values[i], interval_sup=None if sups is None else sups[i - 1])
    return w


def test_eval_stopped_marginal_and_constant():
    f = make_functional("marginal", 1.0, which="start")
    w = _fill_window([0.0, 0.5, 1.0, 1.5], [1.0, 2.0, 3.0, 4.0])
    assert eval_stopped(f, w, 0) == 1.0
    c = make_functional("constant", 1.0, value=3.25)
    assert eval_stopped(c, w, 0) == 3.25


def test_eval_stopped_terminal_floor_reading():
    f = make_functional("marginal", 1.0, which="end")
    w = _fill_window([0.0, 0.4, 0.9, 1.2], [1.0, 2.0, 3.0, 4.0])
    # origin 0, horizon 1.0: floor grid point is t=0.9
    assert eval_stopped(f, w, 0) == 3.0


def test_eval_stopped_sup_against_dense_reference():
    # brute-force oracle: the sup over [u, u+T] of the stored interval sups,
    # whole-interval convention includes the interval straddling u+T
    rng = np.random.default_rng(11)
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.3, size=40))])
    values = rng.standard_normal(41)
    sups = np.maximum(values[:-1], values[1:]) + rng.uniform(0, 0.1, size=40)
    w = _fill_window(times, values, sups, horizon=1.0)
    f = make_functional("capped-sup", 1.0, cap=100.0)
    for origin in (0, 3, 7):
        t_end = times[origin] + 1.0
        i1 = int(np.searchsorted(times, t_end, side="right"))
        expect = sups[origin:i1].max()
        assert eval_stopped(f, w, origin) == pytest.approx(expect, rel=1e-15)


def test_eval_stopped_insufficient_coverage():
    f = make_functional("marginal", 1.0, which="start")
    w = _fill_window([0.0, 0.4, 0.9], [1.0, 2.0, 3.0])
    with pytest.raises(WindowCoverageError):
        eval_stopped(f, w, 0)  # needs a grid point strictly past t=1
    w2 = _fill_window([0.0, 0.5, 1.2], [1.0, 2.0, 3.0])
    w2.drop_before(1)
    with pytest.raises(WindowCoverageError):
        eval_stopped(f, w2, 0)


def test_eval_stopped_shift_consistency():
    f = make_functional("capped-sup", 1.0, cap=10.0)
    rng = np.random.default_rng(2)
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 0.4, size=12))])
    values = rng.standard_normal(13)
    sups = np.maximum(values[:-1], values[1:])
    w = _fill_window(times, values, sups)
    shifted = _fill_window(times - times[2], values, sups)
    assert eval_stopped(f, w, 2) == eval_stopped(f, shifted, 2)


def test_bound_enforced():
    f = make_functional("constant", 1.0, value=2.0)
    bad = f.__class__(
        horizon=1.0, evaluate=lambda view: 5.0, bound=1.0, kind="generic", params={}
    )
    w = _fill_window([0.0, 0.6, 1.3], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        eval_stopped(bad, w, 0)


# ---------------------------------------------------------------------------
# barrier payoff
# ---------------------------------------------------------------------------


def _barrier_view(values, sups, horizon=1.0):
    times = np.linspace(0, horizon * 1.25, len(values))
    w = _fill_window(times, values, sups, horizon=horizon)
    return w.view(0)


def test_barrier_immediate_knockout():
    # sup >= log(s0) at time zero: s0 > L knocks out instantly
    view = _barrier_view([0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0] * 5)
    assert barrier_payoff(view, s0=60.0, r=0.0, K=50.0, L=55.0) == 0.0


def test_barrier_direct_arithmetic():
    # terminal s0 e^d = 52, running max 53, K=50, L=55, r=0 -> 2.0
    d_term = math.log(52.0 / 50.0)
    d_max = math.log(53.0 / 50.0)
    values = [0.0, 0.1 * d_term, d_term, d_term, d_term * 1.01]
    sups = [d_max, d_max, d_max, d_max]
    view = _barrier_view(values, sups)
    # floor reading is values[-2]
    out = barrier_payoff(view, s0=50.0, r=0.0, K=50.0, L=55.0)
    assert out == pytest.approx(2.0, rel=1e-12)
    # running max 56 > L kills it regardless of terminal
    d_56 = math.log(56.0 / 50.0)
    view2 = _barrier_view(values, [d_56] * 4)
    assert barrier_payoff(view2, s0=50.0, r=0.0, K=50.0, L=55.0) == 0.0


def test_barrier_monotonicity_in_max_and_terminal():
    base_vals = [0.0, 0.01, 0.03, 0.03, 0.035]
    base_sups = [0.02, 0.04, 0.05, 0.05]
    view = _barrier_view(base_vals, base_sups)
    p0 = barrier_payoff(view, s0=50.0, r=0.0, K=50.0, L=55.0)
    # larger running max never increases the payoff
    for bump in (0.01, 0.05, 0.2):
        v = _barrier_view(base_vals, [s + bump for s in base_sups])
        assert barrier_payoff(v, s0=50.0, r=0.0, K=50.0, L=55.0) <= p0
    # larger terminal (same max) never decreases it
    richer = [0.0, 0.01, 0.04, 0.04, 0.045]
    v = _barrier_view(richer, base_sups)
    assert barrier_payoff(v, s0=50.0, r=0.0, K=50.0, L=55.0) >= p0


def test_barrier_rejects_bad_params():
    view = _barrier_view([0.0, 0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        barrier_payoff(view, s0=50.0, r=0.0, K=-1.0, L=55.0)
    with pytest.raises(ValueError):
        barrier_payoff(view, s0=50.0, r=0.0, K=50.0, L=0.0)
    with pytest.raises(ValueError):
        make_functional("barrier-uo-call", 1.0, s0=50.0, K=55.0, L=50.0)
