import numpy as np
import pytest

from ebf.kernels import (
    KERNELS,
    KernelSpec,
    ShapeMismatch,
    UnknownKernel,
    checksum,
    fast,
    make_inputs,
    reference_oracle,
    run_kernel,
)

from kernel_cases import random_spec


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0))) if a.size else 0.0


def test_fourteen_kernels():
    assert len(KERNELS) == 14 and len(set(KERNELS)) == 14


@pytest.mark.parametrize("name", KERNELS)
def test_fast_matches_oracle_on_random_shapes(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(25):
        spec = random_spec(name, rng)
        inp = make_inputs(spec)
        got, want = fast(spec, inp), reference_oracle(spec, inp)
        assert got.shape == want.shape
        assert rel_err(got, want) <= 1e-6, spec


def test_hand_values():
    x = np.array([[-1.0, 0.0, 2.0]], dtype=np.float32)
    assert reference_oracle("relu", {"x": x}).tolist() == [[0.0, 0.0, 2.0]]
    sm = reference_oracle("softmax", {"x": np.zeros((1, 4), dtype=np.float32)})
    assert np.allclose(sm, 0.25)
    conv = reference_oracle(
        "convolution",
        {"x": np.arange(9, dtype=np.float32).reshape(3, 3), "w": np.ones((2, 2), dtype=np.float32)},
        kernel_size=2,
    )
    assert conv.tolist() == [[8.0, 12.0], [20.0, 24.0]]
    mp = reference_oracle("max_pooling", {"x": np.arange(16, dtype=np.float32).reshape(4, 4)},
                          kernel_size=2, stride=2)
    assert mp.tolist() == [[5.0, 7.0], [13.0, 15.0]]
    t = reference_oracle("data_arrangement", {"x": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert t.shape == (3, 2)


def test_softmax_rows_sum_to_one():
    spec = KernelSpec("softmax", (32, 200), seed=3)
    out = fast(spec, make_inputs(spec))
    assert np.all(np.abs(out.sum(axis=1) - 1) <= 1e-9)


def test_dropout_is_inverted_and_seeded():
    spec = KernelSpec("dropout", (100, 100), rate=0.3, seed=5)
    inp = make_inputs(spec)
    out = fast(spec, inp)
    kept = out != 0
    assert np.allclose(out[kept], inp["x"][kept].astype(np.float64) / 0.7)
    assert 0.6 < kept.mean() < 0.8
    assert checksum(fast(spec, make_inputs(spec))) == checksum(out)


def test_errors():
    with pytest.raises(UnknownKernel):
        KernelSpec("gemm_plus")
    with pytest.raises(ShapeMismatch):
        KernelSpec("convolution", (2, 2), kernel_size=3)
    with pytest.raises(ShapeMismatch):
        KernelSpec("fully_connected", (4, 4))
    with pytest.raises(ShapeMismatch):
        KernelSpec("relu", (0, 3))


def test_run_kernel_result():
    res = run_kernel(KernelSpec("relu", (16, 16), repetitions=5))
    assert res.min_ns <= res.mean_ns and res.min_ns <= res.p99_ns
    assert res.repetitions == 5 and res.bytes_touched > 0
    again = run_kernel(KernelSpec("relu", (16, 16), repetitions=5))
    assert again.checksum == res.checksum
    assert set(res.to_dict()) >= {"name", "shape", "checksum", "min_ns", "mean_ns", "p99_ns"}
