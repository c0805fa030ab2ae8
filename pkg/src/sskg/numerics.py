"""Dense float64 kernels with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every layer
primitive comes as a forward function plus a matching ``*_backward`` that
maps an upstream gradient to input gradients; :func:`grad_check` verifies a
backward against central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

_MASK64 = (1 << 64) - 1


def as_tensor(x, shape: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"expected shape {tuple(shape)}, got {arr.shape}")
    return arr


class Rng:
    """xorshift64* generator seeded through one round of splitmix64.

    The stream depends only on the integer seed, so parameter initialisation
    and traversal choices are identical on every platform.
    """

    def __init__(self, seed: int) -> None:
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        # rejection sampling keeps the draw exactly uniform
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice(self, items):
        return items[self.randbelow(len(items))]

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        n = math.prod(shape)
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            # Box-Muller; u1 drawn from (0, 1] so the log is finite
            u1 = 1.0 - self.random()
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
            i += 2
        return (out * std).reshape(shape)


# -- matmul -------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def matmul_backward(a: np.ndarray, b: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return grad @ b.T, a.T @ grad


# -- softmax ------------------------------------------------------------------

def softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_backward(y: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the softmax input given its output ``y``."""
    return y * (grad - np.sum(grad * y, axis=-1, keepdims=True))


# -- layer norm (no affine parameters) ------------------------------------------

LN_EPS = 1e-5


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> tuple[np.ndarray, tuple]:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv
    return y, (y, inv)


def layer_norm_backward(cache: tuple, grad: np.ndarray) -> np.ndarray:
    y, inv = cache
    g_mean = grad.mean(axis=-1, keepdims=True)
    gy_mean = (grad * y).mean(axis=-1, keepdims=True)
    return inv * (grad - g_mean - y * gy_mean)


# -- GELU (tanh approximation) --------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


# -- loss -----------------------------------------------------------------------

def cross_entropy(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over rows, plus its gradient w.r.t. ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} incompatible with targets {targets.shape}")
    n, v = logits.shape
    if n == 0:
        raise ValueError("cross_entropy needs at least one position")
    if np.any(targets < 0) or np.any(targets >= v):
        raise IndexError(f"target index out of range for vocabulary of size {v}")
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(n)
    loss = float(-logp[rows, targets].mean())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad /= n
    return loss, grad


# -- finite differences -----------------------------------------------------------

def _relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    f: Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray] | np.ndarray,
    eps: float = 1e-4,
    coords: Iterable[tuple[str, int]] | None = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f(params)`` must return ``(value, grads)`` with ``grads`` keyed like
    ``params``.  Entries of ``params`` are perturbed in place and restored.
    ``coords`` selects ``(name, flat_index)`` probes; default is every entry.
    A bare array is accepted and treated as ``{"x": array}``.
    """
    if isinstance(params, np.ndarray):
        arr = params
        params = {"x": arr}
        inner = f
        f = lambda p: _wrap_single(inner, p["x"])  # noqa: E731

    value, grads = f(params)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite function value {value!r}")
    if coords is None:
        coords = [(name, i) for name, p in params.items() for i in range(p.size)]

    worst = 0.0
    for name, idx in coords:
        flat = params[name].reshape(-1)
        if not np.shares_memory(flat, params[name]):
            raise ValueError(f"parameter {name!r} must be contiguous for in-place probing")
        orig = flat[idx]
        flat[idx] = orig + eps
        f_plus = f(params)[0]
        flat[idx] = orig - eps
        f_minus = f(params)[0]
        flat[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite value while probing {name}[{idx}]")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        analytic = float(np.asarray(grads[name]).reshape(-1)[idx])
        if not np.isfinite(analytic):
            raise FloatingPointError(f"non-finite analytic gradient at {name}[{idx}]")
        worst = max(worst, _relative_error(analytic, numeric))
    return worst


def _wrap_single(f, x):
    value, grad = f(x)
    return value, {"x": np.asarray(grad, dtype=np.float64)}


# -- optimisation -----------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> AdamWState:
    """Decoupled-weight-decay Adam update, applied to ``params`` in place."""
    if set(grads) != set(params):
        raise ValueError("grads and params must share the same keys")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear warm-up: ``base_lr * step / warmup_steps`` until the plateau (steps are 1-based)."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return base_lr
    return base_lr * step / warmup_steps
