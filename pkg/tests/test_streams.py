import numpy as np
import pytest
from scipy.stats import kstest

from ergodicmc.streams import GaussianStream


def test_counter_determinism():
    a = GaussianStream(42, stream_id=7).normal(10)
    b = GaussianStream(42, stream_id=7, counter=4).normal(6)
    assert np.array_equal(a[4:], b)


def test_runs_reproduce():
    a = GaussianStream(1, 2).normal(1000)
    b = GaussianStream(1, 2).normal(1000)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = GaussianStream(1, 2).normal(1000)
    b = GaussianStream(1, 3).normal(1000)
    c = GaussianStream(2, 2).normal(1000)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_mixed_draw_sizes_follow_counter():
    s = GaussianStream(9, 0)
    parts = [s.normal(3), np.array([s.normal()]), s.normal(4)]
    whole = GaussianStream(9, 0).normal(8)
    assert np.allclose(np.concatenate(parts), whole)


def test_uniform_open_interval():
    u = GaussianStream(5, 1).uniform(100_000)
    assert u.min() > 0.0 and u.max() < 1.0


def test_normal_marginals_exact():
    z = GaussianStream(123, 0).normal(100_000)
    d = kstest(z, "norm").statistic
    assert d < 1.63 / np.sqrt(z.size)  # 1% critical value
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1.0) < 0.01
