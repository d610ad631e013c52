"""Latency microbenchmarks.

Every case is checked for correctness in-process before it is timed. Timing
is median (and p90) of ``reps`` calls after ``warmups`` discarded calls.
"""

from __future__ import annotations

import csv
import math
import os
import statistics
import time
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, forward, init_params
from .positional import (BlockSparseMap, apply_sparse_mask, flops_count,
                         generate_sparse_mask, materialize)
from .temporal import (TemporalParams, bucket_attention_baseline, build_relative_matrix,
                       exp_power_attention, exp_power_attention_unconverted,
                       inverse_proportion_baseline, relative_intervals_int)
from .training import loss_and_grads, sample_negatives

CSV_COLUMNS = ["case", "n", "batch", "median_ms", "p90_ms", "flops_reduction"]
MIN_REPS = 30
MIN_WARMUPS = 5


@dataclass
class BenchResult:
    case: str
    n: int
    batch: int
    repetitions: int
    warmups: int
    median_ms: float
    p90_ms: float
    flops_reduction_percent: float | None = None


def time_call(fn, reps: int = MIN_REPS, warmups: int = MIN_WARMUPS) -> tuple[float, float]:
    """Median and p90 wall time of ``fn()`` in milliseconds."""
    if reps < MIN_REPS or warmups < MIN_WARMUPS:
        raise ValueError(f"need at least {MIN_REPS} repetitions after {MIN_WARMUPS} warmups")
    for _ in range(warmups):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(1000.0 * (time.perf_counter() - t0))
    samples.sort()
    p90 = samples[min(len(samples) - 1, math.ceil(0.9 * len(samples)) - 1)]
    return statistics.median(samples), p90


def random_timestamps(batch: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted integer timestamps with a mix of second- and day-scale gaps."""
    gaps = np.where(rng.random((batch, n)) < 0.7,
                    rng.integers(1, 600, (batch, n)), rng.integers(3600, 30 * 86400, (batch, n)))
    gaps[:, 0] = rng.integers(10**9, 2 * 10**9, batch)
    return np.cumsum(gaps, axis=1)


def temporal_cases(T: np.ndarray, T_int: np.ndarray, rng: np.random.Generator) -> dict:
    p = TemporalParams(alpha=1.0, beta=0.5, gamma=0.8)
    table = rng.normal(size=128)
    return {
        "exp_power": lambda: exp_power_attention(T, p),
        "exp_power_unconverted": lambda: exp_power_attention_unconverted(T_int, p),
        "bucket": lambda: bucket_attention_baseline(T, table),
        "inverse": lambda: inverse_proportion_baseline(T, 1.0, 1.0),
    }


def verify_temporal(cases: dict, T: np.ndarray) -> None:
    outs = {name: fn() for name, fn in cases.items()}
    for name, out in outs.items():
        if out.shape != T.shape or not np.all(np.isfinite(out)):
            raise AssertionError(f"encoder {name!r} produced a bad output")
    if not np.array_equal(outs["exp_power"], outs["exp_power_unconverted"]):
        raise AssertionError("pre-converted and unconverted kernels disagree")
    p = TemporalParams(alpha=1.0, beta=0.5, gamma=0.8)
    idx = tuple(np.unravel_index(np.arange(0, T.size, max(1, T.size // 97)), T.shape))
    closed = np.array([p.alpha * p.gamma ** ((x + p.epsilon) ** p.beta) for x in T[idx]])
    if not np.allclose(outs["exp_power"][idx], closed, rtol=1e-12, atol=0):
        raise AssertionError("exp_power kernel does not match the scalar closed form")


def bench_temporal(n_grid=(128, 256, 512, 1000), batch_grid=(8,), reps: int = MIN_REPS,
                   warmups: int = MIN_WARMUPS, seed: int = 0) -> list[BenchResult]:
    """Time the three interval encoders (plus the unconverted variant) on shared inputs."""
    rng = np.random.default_rng(seed)
    results = []
    for batch in batch_grid:
        for n in n_grid:
            ts = random_timestamps(batch, n, rng)
            T_int = relative_intervals_int(ts)
            T = T_int.astype(np.float64)
            cases = temporal_cases(T, T_int, rng)
            verify_temporal(cases, T)
            for name, fn in cases.items():
                med, p90 = time_call(fn, reps, warmups)
                results.append(BenchResult(name, n, batch, reps, warmups, med, p90))
    return results


def verify_model_gradients(seed: int = 0, samples: int = 40) -> float:
    """Spot-check the full backward pass on a tiny model; returns the worst error."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(n=8, d=4, d_ffn=8, num_layers=2, vocab=20, dropout=0.0, num_negatives=5)
    params = init_params(cfg, rng)
    items = rng.integers(1, cfg.vocab, (2, cfg.n))
    targets = rng.integers(1, cfg.vocab, (2, cfg.n))
    T = build_relative_matrix(np.sort(rng.integers(0, 100, (2, cfg.n)), axis=1))
    negs = sample_negatives(cfg.vocab, cfg.num_negatives, targets.reshape(-1), rng)
    _, grads = loss_and_grads(cfg, params, items, None, targets, None, negs, T)
    worst = 0.0
    names = sorted(params)
    for _ in range(samples):
        name = names[rng.integers(len(names))]
        flat = params[name].reshape(-1)
        i = int(rng.integers(flat.size))
        if name == "item_emb" and i < cfg.d:
            continue
        orig = flat[i]
        flat[i] = orig + 1e-5
        hi, _ = loss_and_grads(cfg, params, items, None, targets, None, negs, T)
        flat[i] = orig - 1e-5
        lo, _ = loss_and_grads(cfg, params, items, None, targets, None, negs, T)
        flat[i] = orig
        num = (hi - lo) / 2e-5
        worst = max(worst, abs(num - grads[name].reshape(-1)[i]) / max(1.0, abs(num)))
    if worst > 1e-4:
        raise AssertionError(f"model gradient check failed (max rel. error {worst:.2e})")
    return worst


def bench_model_step(configs: list[ModelConfig], batch: int = 8, reps: int = MIN_REPS,
                     warmups: int = MIN_WARMUPS, seed: int = 0) -> list[BenchResult]:
    """Time inference (forward) and one training step (forward + backward) per config."""
    verify_model_gradients(seed)
    rng = np.random.default_rng(seed)
    results = []
    for cfg in configs:
        params = init_params(cfg, rng)
        items = rng.integers(1, cfg.vocab, (batch, cfg.n))
        targets = rng.integers(1, cfg.vocab, (batch, cfg.n))
        T = build_relative_matrix(random_timestamps(batch, cfg.n, rng))
        step_rng = np.random.default_rng(seed)
        med, p90 = time_call(lambda: forward(cfg, params, items, T), reps, warmups)
        results.append(BenchResult("forward", cfg.n, batch, reps, warmups, med, p90))
        med, p90 = time_call(lambda: loss_and_grads(cfg, params, items, None, targets, step_rng, T=T),
                             reps, warmups)
        results.append(BenchResult("forward_backward", cfg.n, batch, reps, warmups, med, p90))
    return results


def decaying_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """Positional weights whose magnitude shrinks with offset, like a trained map."""
    return rng.normal(size=n) / (1.0 + np.arange(n) / 16.0)


def bench_positional(n_grid=(256, 512, 1024), tau: float = 0.6, s: int = 8, d: int = 64,
                     batch: int = 1, reps: int = MIN_REPS, warmups: int = MIN_WARMUPS,
                     seed: int = 0, weights=None) -> list[BenchResult]:
    """Dense ``W @ V`` against the diagonal block-skipping product at ratio ``tau``."""
    rng = np.random.default_rng(seed)
    results = []
    for n in n_grid:
        w = decaying_weights(n, rng) if weights is None else np.asarray(weights)[:n]
        W = materialize(w, n)
        mask = generate_sparse_mask(W, s, tau)
        sparse = BlockSparseMap.from_weights(w, n, mask)
        kept, dense_blocks, reduction = flops_count(n, s, mask)
        if sparse.block_multiplies != kept:
            raise AssertionError("block-skipping path does not match the counted kept blocks")
        shape = (n, d) if batch == 1 else (batch, n, d)
        V = rng.normal(size=shape)
        if not np.allclose(sparse.matmul(V), apply_sparse_mask(W, mask) @ V, rtol=0, atol=1e-10):
            raise AssertionError("block-skipping product disagrees with the dense product")
        med, p90 = time_call(lambda: W @ V, reps, warmups)
        results.append(BenchResult("positional_dense", n, batch, reps, warmups, med, p90, 0.0))
        med, p90 = time_call(lambda: sparse.matmul(V), reps, warmups)
        results.append(BenchResult("positional_sparse", n, batch, reps, warmups, med, p90, reduction))
    return results


def write_csv(results: list[BenchResult], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            red = "" if r.flops_reduction_percent is None else f"{r.flops_reduction_percent:.4f}"
            w.writerow([r.case, r.n, r.batch, f"{r.median_ms:.6f}", f"{r.p90_ms:.6f}", red])


def read_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {list(rows[0].keys())}")
    return rows


def plotdata(csv_path: str | os.PathLike, out_dir: str | os.PathLike) -> list[str]:
    """Split a bench CSV into one ``<case>_b<batch>.tsv`` series (``n``, median, p90) per case and batch."""
    series = defaultdict(list)
    for row in read_csv(csv_path):
        series[(row["case"], row["batch"])].append((int(row["n"]), row["median_ms"], row["p90_ms"]))
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for (case, batch), points in sorted(series.items()):
        path = os.path.join(out_dir, f"{case}_b{batch}.tsv")
        with open(path, "w") as fh:
            fh.write("n\tmedian_ms\tp90_ms\n")
            for n, med, p90 in sorted(points):
                fh.write(f"{n}\t{med}\t{p90}\n")
        written.append(path)
    return written
