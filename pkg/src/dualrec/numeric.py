"""Dense numeric kernels with analytic backward passes.

Everything operates on float64 ``numpy`` arrays along the last axis, so the
same functions serve a single row vector and a ``(batch, n, d)`` stack.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

RMS_EPS = 1e-6


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """Raised when a gradient or parameter stops being finite."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with shape validation.

    Leading (batch) axes broadcast as in ``np.matmul``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return np.matmul(a, b)


def rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float = RMS_EPS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ShapeError("rmsnorm: zero-length input")
    if gain.shape != x.shape[-1:]:
        raise ShapeError(f"rmsnorm: gain {gain.shape} does not match input {x.shape}")
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * inv * gain


def rmsnorm_backward(dy: np.ndarray, x: np.ndarray, gain: np.ndarray,
                     eps: float = RMS_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dx, dgain)``; ``dgain`` is summed over all leading axes."""
    width = x.shape[-1]
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    gdy = dy * gain
    dx = gdy * inv - x * (inv ** 3) * np.sum(gdy * x, axis=-1, keepdims=True) / width
    dgain = np.sum((dy * x * inv).reshape(-1, width), axis=0)
    return dx, dgain


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # branch-free stable form: exp never sees a positive argument
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return dy * (s + x * s * (1.0 - s))


def softmax_row(x: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def log_softmax_row(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def check_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values in {name!r}")


def grad_check(
    forward: Callable[..., np.ndarray],
    adjoint: Callable[..., Sequence[np.ndarray]],
    inputs: Sequence[np.ndarray],
    step: float = 1e-5,
    rng: np.random.Generator | None = None,
    names: Sequence[str] | None = None,
) -> float:
    """Compare an analytic adjoint with central finite differences.

    ``forward(*inputs)`` returns an array ``y``; ``adjoint(upstream, *inputs)``
    returns one gradient per input for the scalar ``sum(upstream * y)``. A
    random upstream is drawn so every output entry is exercised.

    Returns the max over all input entries of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    upstream = rng.standard_normal(np.shape(forward(*inputs)))
    analytic = adjoint(upstream, *inputs)

    worst = 0.0
    for k, (x, g) in enumerate(zip(inputs, analytic)):
        g = np.asarray(g, dtype=np.float64)
        check_finite(names[k], g)
        if g.shape != x.shape:
            raise ShapeError(f"gradient for {names[k]!r} has shape {g.shape}, expected {x.shape}")
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = np.sum(upstream * forward(*inputs))
            flat[i] = orig - step
            lo = np.sum(upstream * forward(*inputs))
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite finite difference for {names[k]!r}[{i}]")
            worst = max(worst, abs(gflat[i] - numeric) / max(1.0, abs(numeric)))
    return worst
