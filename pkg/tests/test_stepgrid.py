import numpy as np
import pytest

from ergodicmc.stepgrid import StepSchedule, check_conditions, schedule_from_config


def test_gamma_polynomial_values():
    s = StepSchedule(gamma1=1.0, rho=0.6)
    assert s.gamma(1) == 1.0
    assert s.gamma(2) == pytest.approx(2 ** -0.6, rel=1e-15)
    s2 = StepSchedule(gamma1=0.5, rho=0.5)
    assert s2.gamma(4) == pytest.approx(0.25, rel=1e-15)


def test_cum_time_values():
    s = StepSchedule(gamma1=1.0, rho=0.6)
    assert s.cum_time(0) == 0.0
    assert s.cum_time(2) == pytest.approx(1.0 + 2 ** -0.6, rel=1e-14)
    s2 = StepSchedule(gamma1=0.5, rho=0.5)
    # summation oracle: direct sum of the first three steps
    expect = 0.5 * (1 + 2 ** -0.5 + 3 ** -0.5)
    assert s2.cum_time(3) == pytest.approx(expect, rel=1e-14)


def test_gamma_rejects_index_zero():
    s = StepSchedule()
    with pytest.raises(ValueError):
        s.gamma(0)


def test_steps_nonincreasing_and_consistent():
    s = StepSchedule(gamma1=0.7, rho=0.35)
    for n in range(1, 200):
        assert s.gamma(n + 1) <= s.gamma(n)
        assert s.cum_time(n) - s.cum_time(n - 1) == pytest.approx(s.gamma(n), rel=1e-12)


def test_locate_constant_steps():
    s = StepSchedule.explicit([0.5] * 100)
    assert s.locate(0.7) == (1, 0.5)
    assert s.locate(0.0) == (0, 0.0)


def test_locate_polynomial():
    s = StepSchedule(gamma1=1.0, rho=0.6)
    n, floor = s.locate(1.7)
    assert n == 2
    assert floor == pytest.approx(1.0 + 2 ** -0.6, rel=1e-14)


def test_locate_is_grid_inverse():
    s = StepSchedule(gamma1=0.8, rho=0.45)
    rng = np.random.default_rng(0)
    for n in rng.integers(1, 5000, size=60):
        n = int(n)
        t = s.cum_time(n)
        assert s.locate(t) == (n, t)
        # strictly inside the interval
        mid = 0.5 * (s.cum_time(n) + s.cum_time(n + 1))
        idx, floor = s.locate(mid)
        assert idx == n and floor == t


def test_cum_asymptotics_match_polynomial_growth():
    # Gamma_n ~ gamma1 n^(1-rho) / (1-rho), within 1% at n = 1e6
    s = StepSchedule(gamma1=1.0, rho=0.6)
    n = 1_000_000
    ratio = s.cum_time(n) / (n ** 0.4)
    assert ratio == pytest.approx(1.0 / 0.4, rel=0.01)


def test_cum_monotone_exact_over_long_horizon():
    s = StepSchedule(gamma1=1.0, rho=0.6)
    cum = s.cum_times(2_000_000)
    d = np.diff(cum)
    assert np.all(d > 0)
    # partial sums exact at working precision vs extended-precision oracle
    g = s.gammas(2_000_000)
    tail = np.cumsum(g[::-1].astype(np.longdouble))[::-1]  # unrelated order, sanity scale
    assert cum[-1] == pytest.approx(float(np.sum(g.astype(np.longdouble))), rel=1e-14)


def test_explicit_schedule_validation():
    with pytest.raises(ValueError):
        StepSchedule.explicit([0.5, 0.6])  # increasing
    with pytest.raises(ValueError):
        StepSchedule.explicit([0.5, -0.1])
    s = StepSchedule.explicit([0.5, 0.5, 0.25])
    assert s.gamma(3) == 0.25
    with pytest.raises(IndexError):
        s.gamma(4)


def test_check_conditions_polynomial_verdicts():
    assert check_conditions(StepSchedule(rho=0.6), delta=0.0).converges is True
    assert check_conditions(StepSchedule(rho=0.4), delta=0.0).converges is False
    # rho > 1 / (2 (1 - delta)) = 0.5556 at delta = 0.1
    assert check_conditions(StepSchedule(rho=0.6), delta=0.1).converges is True
    assert check_conditions(StepSchedule(rho=0.52), delta=0.1).converges is False


def test_check_conditions_marginal():
    assert check_conditions(StepSchedule(rho=0.4), condition="marginal").converges is True
    assert check_conditions(StepSchedule(rho=0.3), condition="marginal").converges is False


def test_check_conditions_tail_exponent_diagnostic():
    # summand ~ k^(-rho(3/2) - (1-rho)/2): rho=0.6 -> exponent -1.1
    rep = check_conditions(StepSchedule(rho=0.6), delta=0.0, horizon=20_000)
    assert rep.fitted_tail_exponent == pytest.approx(-1.1, abs=0.05)


def test_check_conditions_rejects_bad_args():
    s = StepSchedule()
    with pytest.raises(ValueError):
        check_conditions(s, delta=0.5)
    with pytest.raises(ValueError):
        check_conditions(s, horizon=100)


def test_schedule_from_config():
    s = schedule_from_config({"family": "poly", "gamma1": 0.5, "rho": 0.5})
    assert s.gamma(4) == pytest.approx(0.25)
    e = schedule_from_config({"family": "explicit", "values": [1.0, 0.5]})
    assert e.cum_time(2) == 1.5
