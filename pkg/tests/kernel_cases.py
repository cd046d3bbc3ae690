"""Random small kernel specs shared by the kernel and acceptance tests."""

import numpy as np

from ebf.kernels import KERNELS, KernelSpec


def random_spec(name: str, rng: np.random.Generator) -> KernelSpec:
    r = lambda lo, hi: int(rng.integers(lo, hi + 1))  # noqa: E731
    seed = r(0, 2**31)
    if name == "fully_connected":
        return KernelSpec(name, (r(1, 6), r(1, 24), r(1, 12)), seed=seed)
    if name in ("convolution", "max_pooling", "avg_pooling"):
        k = r(1, 4)
        return KernelSpec(name, (r(k, 14), r(k, 14)), kernel_size=k, stride=r(1, 3), seed=seed)
    if name in ("cosine_norm", "batch_norm", "softmax", "data_arrangement"):
        return KernelSpec(name, (r(1, 12), r(1, 40)), seed=seed)
    if name == "dropout":
        return KernelSpec(name, (r(1, 12), r(1, 20)), rate=float(rng.uniform(0, 0.9)), seed=seed)
    return KernelSpec(name, tuple(r(1, 12) for _ in range(r(1, 3))), seed=seed)


def cases(n: int = 100, seed: int = 2024):
    rng = np.random.default_rng(seed)
    for name in KERNELS:
        for _ in range(n):
            yield random_spec(name, rng)
