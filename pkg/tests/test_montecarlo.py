import numpy as np
import pytest

from iclcat.montecarlo import CHUNK_SIZE, THREADS_ENV, McConfig, chunk_sizes, collect, mean_stderr, observations, resolve_threads
from iclcat.tasks import TaskConfig


def test_chunking():
    assert chunk_sizes(CHUNK_SIZE * 2 + 5) == [CHUNK_SIZE, CHUNK_SIZE, 5]
    assert chunk_sizes(3) == [3]


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(num_tasks=0)
    with pytest.raises(ValueError):
        McConfig(num_tasks=3, antithetic=True)


def test_thread_resolution(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv(THREADS_ENV)
    assert resolve_threads() == 1


def test_collect_is_thread_invariant():
    cfg = TaskConfig(2, 3, np.eye(2))
    mc = McConfig(CHUNK_SIZE * 3 + 17, seed=4)
    one = collect(lambda b: {"yq": b.yq, "x": b.x}, cfg, mc, threads=1)
    four = collect(lambda b: {"yq": b.yq, "x": b.x}, cfg, mc, threads=4)
    np.testing.assert_array_equal(one["yq"], four["yq"])
    np.testing.assert_array_equal(one["x"], four["x"])
    assert one["x"].shape == (mc.num_tasks, 2, 3)


def test_antithetic_observations():
    v = np.array([1.0, 3.0, 2.0, 2.0])
    np.testing.assert_array_equal(observations(v, True), [2.0, 2.0])
    m, se = mean_stderr(v, antithetic=True)
    assert m == 2.0 and se == 0.0
    m, se = mean_stderr(np.array([5.0]))
    assert m == 5.0 and np.isnan(se)
