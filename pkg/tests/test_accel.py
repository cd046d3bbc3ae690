import numpy as np
import pytest

from ebf import _accel, _purepy

speedups = pytest.importorskip("ebf._speedups")


def test_backend_is_reported():
    assert _accel.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("servers", [1, 2, 5])
def test_fifo_schedule_matches_fallback(servers):
    rng = np.random.default_rng(servers)
    arr = np.cumsum(rng.integers(0, 1000, 5000)).astype(np.int64)
    svc = rng.integers(1, 4000, 5000).astype(np.int64)
    a = speedups.fifo_schedule(arr, svc, servers)
    b = _purepy.fifo_schedule(arr, svc, servers)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_and_pool_match_fallback(stride):
    rng = np.random.default_rng(stride)
    x = rng.standard_normal((17, 23)).astype(np.float32)
    w = rng.standard_normal((3, 3)).astype(np.float32)
    assert np.allclose(speedups.conv2d_valid(x, w, stride), _purepy.conv2d_valid(x, w, stride), rtol=1e-12)
    for avg in (False, True):
        assert np.allclose(speedups.pool2d(x, 3, stride, avg), _purepy.pool2d(x, 3, stride, avg), rtol=1e-12)


def test_schedule_rejects_bad_input():
    for impl in (speedups, _purepy):
        with pytest.raises(ValueError):
            impl.fifo_schedule(np.zeros(3, np.int64), np.zeros(2, np.int64), 1)
        with pytest.raises(ValueError):
            impl.fifo_schedule(np.zeros(3, np.int64), np.zeros(3, np.int64), 0)
