import math

import numpy as np
import pytest

from ergodicmc.empirical import EmpiricalAccumulator, marginal_average, on_step
from ergodicmc.pathfun import PathWindow, make_functional
from ergodicmc.schemes import cir_model, ou_model
from ergodicmc.stepgrid import StepSchedule


def test_first_term_is_exact():
    acc = EmpiricalAccumulator(StepSchedule(gamma1=1.0, rho=0.6))
    acc.fold(4.2)
    assert acc.snapshot().value == 4.2  # weight gamma_1 / Gamma_1 = 1


def test_constant_fold_is_fixed_point():
    acc = EmpiricalAccumulator(StepSchedule(gamma1=0.5, rho=0.5))
    for _ in range(100):
        acc.fold(3.0)
    assert acc.snapshot().value == pytest.approx(3.0, rel=1e-14)


def test_equal_weights_plain_mean():
    acc = EmpiricalAccumulator(StepSchedule.explicit([1.0, 1.0, 1.0]))
    for y in (0.0, 3.0, 6.0):
        acc.fold(y)
    assert acc.snapshot().value == pytest.approx(3.0, rel=1e-14)


def test_streamed_matches_batch_on_random_sequences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(2, 120))
        g = np.sort(rng.uniform(0.01, 1.0, size=n))[::-1]
        y = rng.standard_normal(n) * rng.uniform(0.1, 10)
        sched = StepSchedule.explicit(g)
        acc = EmpiricalAccumulator(sched)
        for yi in y:
            acc.fold(yi)
        batch = float(np.sum(g * y) / np.sum(g))
        got = acc.snapshot().value
        denom = max(abs(batch), 1e-12)
        worst = max(worst, abs(got - batch) / denom)
    assert worst < 1e-12


def test_streamed_matches_batch_long_run():
    sched = StepSchedule(gamma1=1.0, rho=0.6)
    n = 50_000
    rng = np.random.default_rng(3)
    y = rng.standard_normal(n)
    acc = EmpiricalAccumulator(sched)
    for yi in y:
        acc.fold(yi)
    g = sched.gammas(n)
    batch = float(np.sum(g * y) / sched.cum_time(n))
    assert acc.snapshot().value == pytest.approx(batch, abs=1e-12 * max(1, abs(batch)))


def test_value_stays_in_convex_hull():
    rng = np.random.default_rng(9)
    acc = EmpiricalAccumulator(StepSchedule(gamma1=0.3, rho=0.7))
    y = rng.uniform(-5, 5, size=500)
    for yi in y:
        acc.fold(yi)
    assert y.min() - 1e-12 <= acc.snapshot().value <= y.max() + 1e-12


def test_snapshot_bookkeeping_and_empty_error():
    sched = StepSchedule(gamma1=0.5, rho=0.5)
    acc = EmpiricalAccumulator(sched)
    with pytest.raises(ValueError):
        acc.snapshot()
    for i in range(7):
        acc.fold(float(i))
    snap = acc.snapshot()
    assert snap.terms == 7
    assert snap.gamma_total == sched.cum_time(7)


def test_on_step_emission_order_and_values():
    # constant steps 0.5, horizon 1: term k emits once Gamma_n > Gamma_{k-1} + 1
    sched = StepSchedule.explicit([0.5] * 20)
    f = make_functional("marginal", 1.0, which="start")
    acc = EmpiricalAccumulator(sched)
    w = PathWindow(1.0)
    w.append(0.0, 10.0)
    values = [10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0]
    emitted = []
    for n in range(1, 8):
        w.append(0.5 * n, values[n], interval_sup=None)
        on_step(acc, w, f, sched)
        emitted.append(acc.terms)
    # Gamma_n = n/2; term 1 (origin 0) needs Gamma_n > 1: n = 3
    assert emitted == [0, 0, 1, 2, 3, 4, 5]
    g = sched.gammas(acc.terms)
    batch = np.sum(g * np.array(values[: acc.terms])) / np.sum(g)
    assert acc.snapshot().value == pytest.approx(float(batch), rel=1e-14)


def test_on_step_trims_window():
    sched = StepSchedule.explicit([0.5] * 40)
    f = make_functional("marginal", 1.0, which="start")
    acc = EmpiricalAccumulator(sched)
    w = PathWindow(1.0)
    w.append(0.0, 0.0)
    for n in range(1, 31):
        w.append(0.5 * n, float(n), interval_sup=None)
        on_step(acc, w, f, sched)
    # retained grid points stay within the pending horizon, not the full path
    assert w.base_index == acc.terms
    assert len(w.times) <= 5


def test_marginal_average_normalization():
    out = marginal_average(
        ou_model(), StepSchedule(gamma1=0.5, rho=0.5), lambda x: np.ones_like(x), 500, seed=1
    )
    assert out["values"] == pytest.approx(1.0, rel=1e-12)


def test_marginal_average_ou_second_moment():
    # OU stationary second moment sigma0^2/(2 lam) = 1; gamma1 kept small so
    # the euler stationary-variance inflation (~lam gamma / 2) stays inside
    # the tolerance
    model = ou_model(lam=1.0, sigma0=math.sqrt(2.0))
    sched = StepSchedule(gamma1=0.1, rho=0.1)
    n = sched.locate(5000.0)[0] + 1
    out = marginal_average(model, sched, lambda x: x * x, n, seed=7, n_replicates=4)
    assert np.mean(out["values"]) == pytest.approx(1.0, abs=0.05)


def test_marginal_average_cir_mean():
    model = cir_model(k=2.0, theta=0.01, varsigma=0.1)
    sched = StepSchedule(gamma1=0.1, rho=0.1)
    n = sched.locate(5000.0)[0] + 1
    out = marginal_average(model, sched, lambda v: v, n, seed=5)
    assert out["values"] == pytest.approx(0.01, rel=0.05)
