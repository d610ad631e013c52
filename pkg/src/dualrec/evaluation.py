"""Full-vocabulary ranking metrics."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .model import PAD, ModelConfig, forward, predict_scores
from .temporal import build_relative_matrix

DEFAULT_LENGTH_EDGES = (10, 20, 50, 100)


@dataclass
class Metrics:
    hr: float
    ndcg: float
    mrr: float
    count: int


def rank_of_target(scores: np.ndarray, target: int) -> int:
    """1-based rank of ``target`` among non-padding items.

    Items tied with the target count as ranked above it.
    """
    if target == PAD:
        raise ValueError("padding id cannot be a target")
    s = np.asarray(scores, dtype=np.float64)
    ge = s >= s[target]
    ge[PAD] = False
    return int(np.count_nonzero(ge))


def ranks_from_scores(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rank_of_target` over rows."""
    target_scores = np.take_along_axis(scores, targets[:, None], axis=1)
    ge = scores >= target_scores
    ge[:, PAD] = False
    return ge.sum(axis=1)


def metrics(ranks, k: int = 10) -> Metrics:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no ranks to aggregate")
    hit = r <= k
    ndcg = np.where(hit, 1.0 / np.log2(r + 1.0), 0.0)
    return Metrics(hr=math.fsum(hit) / r.size, ndcg=math.fsum(ndcg) / r.size,
                   mrr=math.fsum(1.0 / r) / r.size, count=int(r.size))


def metrics_by_length_group(ranks, lengths, edges=DEFAULT_LENGTH_EDGES,
                            k: int = 10) -> list[tuple[str, Metrics | None]]:
    """Metrics per history-length bucket.

    ``edges`` are the interior bucket boundaries; ``len(edges) + 1`` groups
    result, labelled like ``"[10,20)"``. Empty groups report ``None``.
    """
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("edges must be strictly increasing")
    ranks = np.asarray(ranks)
    lengths = np.asarray(lengths)
    group = np.searchsorted(edges, lengths, side="right")
    bounds = [0] + edges + [math.inf]
    out = []
    for g in range(len(edges) + 1):
        label = f"[{bounds[g]},{bounds[g + 1]})"
        sel = ranks[group == g]
        out.append((label, metrics(sel, k) if sel.size else None))
    return out


def score_queries(cfg: ModelConfig, params: dict, items: np.ndarray, times: np.ndarray,
                  last: np.ndarray, masks=None, batch_size: int = 256,
                  exclude_history: bool = False) -> np.ndarray:
    """Full-vocabulary scores for the hidden state at each query's last real position."""
    out = np.empty((items.shape[0], params["item_emb"].shape[0]))
    for start in range(0, items.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        T = build_relative_matrix(times[sl])
        h = forward(cfg, params, items[sl], T, masks=masks)
        x = h[np.arange(h.shape[0]), last[sl]]
        scores = predict_scores(x, params["item_emb"])
        if exclude_history:
            rows = np.repeat(np.arange(scores.shape[0]), items.shape[1])
            seen = items[sl].reshape(-1)
            scores[rows[seen != PAD], seen[seen != PAD]] = -np.inf
        out[sl] = scores
    return out


def evaluate_ranks(cfg: ModelConfig, params: dict, queries, masks=None,
                   exclude_history: bool = False) -> np.ndarray:
    """Ranks of each query's target; ``queries`` is the tuple from ``data.query_windows``."""
    items, times, last, targets = queries
    scores = score_queries(cfg, params, items, times, last, masks=masks,
                           exclude_history=exclude_history)
    return ranks_from_scores(scores, targets)


def write_metrics_csv(path: str | os.PathLike, ranks, ks=(10, 50)) -> None:
    with open(path, "w") as fh:
        fh.write("metric,K,value\n")
        for k in ks:
            m = metrics(ranks, k)
            fh.write(f"hr,{k},{m.hr!r}\n")
            fh.write(f"ndcg,{k},{m.ndcg!r}\n")
        fh.write(f"mrr,0,{metrics(ranks, 1).mrr!r}\n")


def write_group_csv(path: str | os.PathLike, groups, k: int = 10) -> None:
    with open(path, "w") as fh:
        fh.write("group,count,hr,ndcg,mrr,K\n")
        for label, m in groups:
            if m is None:
                fh.write(f"{label},0,,,,{k}\n")
            else:
                fh.write(f"{label},{m.count},{m.hr!r},{m.ndcg!r},{m.mrr!r},{k}\n")
