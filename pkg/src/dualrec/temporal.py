"""Relative temporal matrices and interval-to-weight encoders.

The main encoder maps an interval ``x`` (seconds) to ``alpha * gamma ** (x + eps) ** beta``.
Two comparators are kept for benchmarking: a log-bucket table lookup and an
inverse-proportion decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-6
BUCKET_UNIT_SECONDS = 60.0
DEFAULT_NUM_BUCKETS = 128

# per-domain decay defaults
GAMMA_MOVIE = 0.8
GAMMA_VIDEO = 0.8
GAMMA_MUSIC = 0.9


@dataclass
class TemporalParams:
    """Decay-kernel parameters for one layer.

    ``alpha`` and ``beta`` are trained; ``gamma`` and ``epsilon`` are fixed
    configuration.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = GAMMA_MOVIE
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


def _check_timestamps(ts: np.ndarray) -> None:
    if ts.shape[-1] < 1:
        raise ValueError("timestamp sequence is empty")
    if np.any(ts < 0):
        raise ValueError("negative timestamp")
    if np.any(np.diff(ts, axis=-1) < 0):
        raise ValueError("timestamps are not time-ordered (decreasing step found)")


def relative_intervals_int(timestamps) -> np.ndarray:
    """Integer ``|t_i - t_j|`` matrix (or batch of matrices), no float cast."""
    ts = np.asarray(timestamps, dtype=np.int64)
    _check_timestamps(ts)
    return np.abs(ts[..., :, None] - ts[..., None, :])


def build_relative_matrix(timestamps, dtype=np.float64) -> np.ndarray:
    """Pairwise absolute timestamp differences, cast to floating point once.

    Accepts a 1-d sequence of integer seconds or a ``(batch, n)`` array.
    """
    return relative_intervals_int(timestamps).astype(dtype)


_EXP_UNDERFLOW = -746.0


def _exp_power_float(T: np.ndarray, p: TemporalParams) -> np.ndarray:
    out = np.add(T, p.epsilon)
    if p.alpha <= 0.0 or (p.epsilon == 0.0 and np.any(out == 0.0)):
        return p.alpha * np.exp(math.log(p.gamma) * np.power(out, p.beta))
    # alpha * gamma**(s**beta) == exp(log(alpha) - exp(beta*log(s) + log(-log(gamma)))),
    # evaluated in place on one buffer: two exps and a log, no pow, no temporaries
    np.log(out, out=out)
    out *= p.beta
    out += math.log(-math.log(p.gamma))
    np.exp(out, out=out)
    np.subtract(math.log(p.alpha), out, out=out)
    # exp underflows to exactly 0 below about -745.1; long intervals land there
    # and numpy's vector exp is slow on them, so only evaluate the rest
    result = np.zeros(out.shape)
    np.exp(out, out=result, where=out > _EXP_UNDERFLOW)
    return result


def exp_power_attention(T: np.ndarray, p: TemporalParams) -> np.ndarray:
    """``alpha * gamma ** (T + eps) ** beta`` elementwise; no causal mask."""
    return _exp_power_float(np.asarray(T, dtype=np.float64), p)


def exp_power_attention_unconverted(T_int: np.ndarray, p: TemporalParams) -> np.ndarray:
    """Same kernel fed an integer matrix, paying the dtype conversion per call.

    Only used to measure the cost of skipping the one-time float cast.
    """
    return _exp_power_float(T_int.astype(np.float64), p)


def exp_power_gradients(T: np.ndarray, p: TemporalParams,
                        upstream: np.ndarray) -> tuple[float, float]:
    """Gradients of ``sum(upstream * exp_power_attention(T, p))`` w.r.t. alpha and beta."""
    s = T + p.epsilon
    if p.epsilon == 0.0 and np.any(s == 0.0):
        raise ValueError("zero interval with epsilon=0 makes the beta gradient undefined; use epsilon > 0")
    log_gamma = math.log(p.gamma)
    s_beta = np.power(s, p.beta)
    decay = np.exp(log_gamma * s_beta)
    d_alpha = float(np.sum(upstream * decay))
    d_beta = float(np.sum(upstream * p.alpha * decay * log_gamma * s_beta * np.log(s)))
    return d_alpha, d_beta


def interval_derivative(x: float, p: TemporalParams) -> float:
    """Slope of the kernel in the interval, evaluated at ``x + eps``.

    With ``epsilon == 0`` and ``beta < 1`` the slope diverges as ``x -> 0``;
    at exactly zero this returns ``-inf`` (for alpha > 0).
    """
    if x < 0:
        raise ValueError("interval must be >= 0")
    s = x + p.epsilon
    log_gamma = math.log(p.gamma)
    with np.errstate(divide="ignore"):
        lead = np.power(np.float64(s), p.beta - 1.0)
    return float(p.alpha * p.beta * log_gamma * lead * math.exp(log_gamma * s ** p.beta))


def bucket_index(T: np.ndarray, num_buckets: int = DEFAULT_NUM_BUCKETS,
                 unit: float = BUCKET_UNIT_SECONDS) -> np.ndarray:
    if num_buckets < 1:
        raise ValueError("num_buckets must be >= 1")
    idx = np.floor(np.log2(1.0 + T / unit)).astype(np.int64)
    return np.minimum(idx, num_buckets - 1)


def bucket_attention_baseline(T: np.ndarray, weights: np.ndarray,
                              num_buckets: int | None = None,
                              unit: float = BUCKET_UNIT_SECONDS) -> np.ndarray:
    """Log-bucketized intervals looked up in a learnable per-bucket table."""
    weights = np.asarray(weights)
    num_buckets = weights.shape[0] if num_buckets is None else num_buckets
    return weights[bucket_index(T, num_buckets, unit)]


def inverse_proportion_baseline(T: np.ndarray, a: float, c: float = 1.0) -> np.ndarray:
    if c <= 0:
        raise ValueError(f"offset c must be > 0, got {c}")
    return a / (T + c)
