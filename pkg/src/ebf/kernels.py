"""Fourteen units of computation: fast implementations, loop-level oracles
and a timing harness.

Tensors are stored as float32; arithmetic kernels accumulate and return
float64 so results can be checked against the oracles at 1e-6 relative
error. Layout kernels (memcpy, data_arrangement) keep the input dtype.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ebf import _accel

KERNELS = (
    "convolution",
    "fully_connected",
    "relu",
    "sigmoid",
    "tanh",
    "max_pooling",
    "avg_pooling",
    "cosine_norm",
    "batch_norm",
    "dropout",
    "elementwise_multiply",
    "softmax",
    "data_arrangement",
    "memcpy",
)

EPS = 1e-5

# Shapes used when none is given; our own choice, sized for quick timing runs.
DEFAULT_SHAPES = {
    "convolution": (64, 64),
    "fully_connected": (32, 256, 128),
    "relu": (256, 256),
    "sigmoid": (256, 256),
    "tanh": (256, 256),
    "max_pooling": (64, 64),
    "avg_pooling": (64, 64),
    "cosine_norm": (64, 256),
    "batch_norm": (64, 256),
    "dropout": (256, 256),
    "elementwise_multiply": (256, 256),
    "softmax": (64, 256),
    "data_arrangement": (256, 256),
    "memcpy": (256, 256),
}


class UnknownKernel(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    name: str
    shape: tuple[int, ...] = ()
    kernel_size: int = 3
    stride: int = 1
    rate: float = 0.5
    repetitions: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.name not in KERNELS:
            raise UnknownKernel(f"unknown kernel {self.name!r}; expected one of {', '.join(KERNELS)}")
        if not self.shape:
            object.__setattr__(self, "shape", DEFAULT_SHAPES[self.name])
        if any(int(d) < 1 for d in self.shape):
            raise ShapeMismatch(f"all dimensions must be >= 1, got {self.shape}")
        if self.kernel_size < 1 or self.stride < 1 or self.repetitions < 1:
            raise ShapeMismatch("kernel_size, stride and repetitions must be >= 1")
        if not 0 <= self.rate < 1:
            raise ShapeMismatch("dropout rate must lie in [0, 1)")
        want = {"fully_connected": 3, "convolution": 2, "max_pooling": 2, "avg_pooling": 2,
                "cosine_norm": 2, "batch_norm": 2, "softmax": 2, "data_arrangement": 2}
        if self.name in want and len(self.shape) != want[self.name]:
            raise ShapeMismatch(f"{self.name} needs a {want[self.name]}-d shape, got {self.shape}")
        if self.name in ("convolution", "max_pooling", "avg_pooling") and self.kernel_size > min(self.shape):
            raise ShapeMismatch(f"window {self.kernel_size} larger than input {self.shape}")


@dataclass
class KernelResult:
    name: str
    shape: tuple[int, ...]
    checksum: str
    min_ns: int
    mean_ns: float
    p99_ns: int
    repetitions: int
    bytes_touched: int
    flops: int
    backend: str = field(default=_accel.BACKEND)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "shape": list(self.shape),
            "checksum": self.checksum,
            "min_ns": self.min_ns,
            "mean_ns": self.mean_ns,
            "p99_ns": self.p99_ns,
            "repetitions": self.repetitions,
            "bytes_touched": self.bytes_touched,
            "flops": self.flops,
            "backend": self.backend,
        }


# ------------------------------------------------------------------ inputs


def make_inputs(spec: KernelSpec) -> dict[str, np.ndarray]:
    """Seeded float32 operands for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    f32 = lambda *s: rng.standard_normal(s).astype(np.float32)  # noqa: E731
    shape = tuple(int(d) for d in spec.shape)
    name = spec.name
    if name == "convolution":
        return {"x": f32(*shape), "w": f32(spec.kernel_size, spec.kernel_size)}
    if name == "fully_connected":
        b, n_in, n_out = shape
        return {"x": f32(b, n_in), "w": f32(n_in, n_out), "b": f32(n_out)}
    if name == "batch_norm":
        d = shape[1]
        return {
            "x": f32(*shape),
            "mean": f32(d),
            "var": rng.uniform(0.5, 2.0, d).astype(np.float32),
            "gamma": f32(d),
            "beta": f32(d),
        }
    if name == "dropout":
        return {"x": f32(*shape), "u": rng.random(shape).astype(np.float32)}
    if name == "elementwise_multiply":
        return {"a": f32(*shape), "b": f32(*shape)}
    return {"x": f32(*shape)}


# ------------------------------------------------------------- fast path


def _f64(a):
    return np.asarray(a, dtype=np.float64)


def fast(spec: KernelSpec, inp: dict[str, np.ndarray]) -> np.ndarray:
    name = spec.name
    if name == "convolution":
        return _accel.conv2d_valid(np.ascontiguousarray(inp["x"]), np.ascontiguousarray(inp["w"]), spec.stride)
    if name == "fully_connected":
        x, w, b = inp["x"], inp["w"], inp["b"]
        if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"fully_connected: {x.shape} @ {w.shape} + {b.shape}")
        return _f64(x) @ _f64(w) + _f64(b)
    if name == "relu":
        return np.maximum(_f64(inp["x"]), 0.0)
    if name == "sigmoid":
        x = _f64(inp["x"])
        # Split by sign so exp never overflows.
        e = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if name == "tanh":
        return np.tanh(_f64(inp["x"]))
    if name in ("max_pooling", "avg_pooling"):
        return _accel.pool2d(np.ascontiguousarray(inp["x"]), spec.kernel_size, spec.stride, name == "avg_pooling")
    if name == "cosine_norm":
        x = _f64(inp["x"])
        return x / (np.sqrt((x * x).sum(axis=1, keepdims=True)) + EPS)
    if name == "batch_norm":
        x = _f64(inp["x"])
        if x.shape[1] != inp["mean"].shape[0]:
            raise ShapeMismatch("batch_norm: statistics do not match feature dimension")
        return (x - _f64(inp["mean"])) / np.sqrt(_f64(inp["var"]) + EPS) * _f64(inp["gamma"]) + _f64(inp["beta"])
    if name == "dropout":
        keep = inp["u"] >= spec.rate
        return np.where(keep, _f64(inp["x"]) / (1.0 - spec.rate), 0.0)
    if name == "elementwise_multiply":
        if inp["a"].shape != inp["b"].shape:
            raise ShapeMismatch(f"elementwise_multiply: {inp['a'].shape} vs {inp['b'].shape}")
        return _f64(inp["a"]) * _f64(inp["b"])
    if name == "softmax":
        x = _f64(inp["x"])
        e = np.exp(x - x.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    if name == "data_arrangement":
        return np.ascontiguousarray(inp["x"].T)
    if name == "memcpy":
        out = np.empty_like(inp["x"])
        np.copyto(out, inp["x"])
        return out
    raise UnknownKernel(name)


# ---------------------------------------------------------------- oracle


def reference_oracle(spec: KernelSpec | str, inp: dict[str, np.ndarray], **params) -> np.ndarray:
    """Textbook loop implementation; meant for shapes up to 32 per dimension."""
    if isinstance(spec, str):
        spec = KernelSpec(spec, shape=tuple(np.asarray(next(iter(inp.values()))).shape) or (1,), **params)
    name = spec.name
    if name in ("convolution", "max_pooling", "avg_pooling"):
        x = inp["x"].tolist()
        H, W = len(x), len(x[0])
        k = spec.kernel_size if name != "convolution" else len(inp["w"])
        kw = k if name != "convolution" else len(inp["w"][0])
        if k > H or kw > W:
            raise ShapeMismatch("window larger than input")
        s = spec.stride
        out = []
        for i in range(0, H - k + 1, s):
            row = []
            for j in range(0, W - kw + 1, s):
                vals = [(x[i + a][j + b], a, b) for a in range(k) for b in range(kw)]
                if name == "convolution":
                    w = inp["w"].tolist()
                    row.append(math.fsum(v * w[a][b] for v, a, b in vals))
                elif name == "max_pooling":
                    row.append(max(v for v, _, _ in vals))
                else:
                    row.append(math.fsum(v for v, _, _ in vals) / (k * kw))
            out.append(row)
        return np.array(out, dtype=np.float64)
    if name == "fully_connected":
        x, w, b = inp["x"].tolist(), inp["w"].tolist(), inp["b"].tolist()
        if len(x[0]) != len(w) or len(w[0]) != len(b):
            raise ShapeMismatch("fully_connected operand shapes disagree")
        return np.array(
            [[math.fsum(x[r][i] * w[i][c] for i in range(len(w))) + b[c] for c in range(len(b))] for r in range(len(x))]
        )
    if name in ("relu", "sigmoid", "tanh"):
        fn = {
            "relu": lambda v: v if v > 0 else 0.0,
            "sigmoid": lambda v: 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v)),
            "tanh": math.tanh,
        }[name]
        x = np.asarray(inp["x"], dtype=np.float64)
        return np.array([fn(v) for v in x.ravel().tolist()]).reshape(x.shape)
    if name == "cosine_norm":
        rows = inp["x"].tolist()
        out = []
        for r in rows:
            norm = math.sqrt(math.fsum(v * v for v in r))
            out.append([v / (norm + EPS) for v in r])
        return np.array(out)
    if name == "batch_norm":
        x = inp["x"].tolist()
        mean, var, g, b = (inp[k].tolist() for k in ("mean", "var", "gamma", "beta"))
        if len(x[0]) != len(mean):
            raise ShapeMismatch("batch_norm statistics do not match feature dimension")
        return np.array(
            [[(r[j] - mean[j]) / math.sqrt(var[j] + EPS) * g[j] + b[j] for j in range(len(r))] for r in x]
        )
    if name == "dropout":
        x = np.asarray(inp["x"], dtype=np.float64)
        u = np.asarray(inp["u"]).ravel().tolist()
        vals = x.ravel().tolist()
        return np.array(
            [v / (1.0 - spec.rate) if u[i] >= spec.rate else 0.0 for i, v in enumerate(vals)]
        ).reshape(x.shape)
    if name == "elementwise_multiply":
        a = np.asarray(inp["a"], dtype=np.float64)
        bb = np.asarray(inp["b"], dtype=np.float64)
        if a.shape != bb.shape:
            raise ShapeMismatch("operand shapes differ")
        av, bv = a.ravel().tolist(), bb.ravel().tolist()
        return np.array([av[i] * bv[i] for i in range(len(av))]).reshape(a.shape)
    if name == "softmax":
        out = []
        for r in inp["x"].tolist():
            m = max(r)
            e = [math.exp(v - m) for v in r]
            s = math.fsum(e)
            out.append([v / s for v in e])
        return np.array(out)
    if name == "data_arrangement":
        x = inp["x"]
        R, C = x.shape
        out = np.empty((C, R), dtype=x.dtype)
        for i in range(R):
            for j in range(C):
                out[j, i] = x[i, j]
        return out
    if name == "memcpy":
        x = inp["x"]
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            out[i] = flat[i]
        return out.reshape(x.shape)
    raise UnknownKernel(name)


# ---------------------------------------------------------------- costs


def _cost(spec: KernelSpec, inp: dict, out: np.ndarray) -> tuple[int, int]:
    in_bytes = sum(a.nbytes for a in inp.values())
    n = out.size
    name = spec.name
    if name == "convolution":
        flops = 2 * n * inp["w"].size
    elif name == "fully_connected":
        flops = 2 * inp["x"].shape[0] * inp["w"].size + n
    elif name in ("max_pooling", "avg_pooling"):
        flops = n * spec.kernel_size**2
    elif name in ("softmax", "cosine_norm", "batch_norm", "sigmoid", "tanh"):
        flops = 4 * n
    elif name in ("data_arrangement", "memcpy"):
        flops = 0
    else:
        flops = n
    return in_bytes + out.nbytes, flops


def checksum(arr: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(arr).tobytes(), digest_size=16).hexdigest()


def run_kernel(spec: KernelSpec) -> KernelResult:
    """One warm-up call, then ``repetitions`` timed calls."""
    inp = make_inputs(spec)
    out = fast(spec, inp)
    times = []
    for _ in range(spec.repetitions):
        t0 = time.perf_counter_ns()
        out = fast(spec, inp)
        times.append(max(1, time.perf_counter_ns() - t0))
    times.sort()
    p99 = times[max(1, math.ceil(0.99 * len(times))) - 1]
    nbytes, flops = _cost(spec, inp, out)
    return KernelResult(
        spec.name, tuple(spec.shape), checksum(out), times[0], sum(times) / len(times), p99,
        spec.repetitions, nbytes, flops,
    )
