"""AdamW training loop with uniformly sampled negatives."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import DatasetSplit, query_windows, training_windows
from .evaluation import evaluate_ranks, metrics
from .model import (PAD, ModelConfig, backward, forward, init_params,
                    sampled_softmax_batch, save_checkpoint, storage_round)
from .numeric import NumericError, check_finite
from .temporal import build_relative_matrix

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,step,loss,hr10,ndcg10,mrr,wall_ms"


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    patience: int = 5
    seed: int = 0
    debug_finite: bool = False
    log_wall_time: bool = True


@dataclass
class RunConfig:
    """Everything one training run needs, loadable from a flat JSON document."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str = ""
    run_dir: str = "run"

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        model_keys = {f.name for f in fields(ModelConfig)}
        train_keys = {f.name for f in fields(TrainConfig)}
        unknown = set(values) - model_keys - train_keys - {"data", "run_dir"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(model=ModelConfig(**{k: v for k, v in values.items() if k in model_keys}),
                   train=TrainConfig(**{k: v for k, v in values.items() if k in train_keys}),
                   data=values.get("data", ""), run_dir=values.get("run_dir", "run"))

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {**asdict(self.model), **asdict(self.train), "data": self.data, "run_dir": self.run_dir}


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState,
               frozen_rows: dict | None = None) -> None:
    """In-place AdamW update; ``frozen_rows`` maps a tensor name to rows left untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}; step aborted")
    frozen_rows = frozen_rows or {}
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * ((m / bc1) / (np.sqrt(v / bc2) + state.eps) + state.weight_decay * p)
        rows = frozen_rows.get(name)
        if rows is not None:
            update[rows] = 0.0
        p -= update


def sample_negatives(vocab: int, num: int, exclude, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws over items ``1..vocab-1``, never equal to ``exclude``.

    ``exclude`` may be a scalar (returns shape ``(num,)``) or an array of
    true items (returns ``exclude.shape + (num,)``). Duplicates among the
    negatives are allowed.
    """
    if vocab - 2 < num:
        raise ValueError(f"vocab {vocab} too small for {num} negatives")
    exclude = np.asarray(exclude)
    draws = rng.integers(1, vocab, size=exclude.shape + (num,))
    bad = draws == exclude[..., None]
    while np.any(bad):
        draws[bad] = rng.integers(1, vocab, size=int(bad.sum()))
        bad = draws == exclude[..., None]
    return draws


def loss_and_grads(cfg: ModelConfig, params: dict, items, times, targets, rng,
                   negatives=None, T=None):
    """Mean sampled-softmax loss over real target positions, plus gradients.

    ``rng`` drives dropout and negative sampling; pass explicit
    ``negatives`` (shape ``(num_valid, N)``) to fix them.
    """
    if T is None:
        T = build_relative_matrix(times)
    h, state = forward(cfg, params, items, T, rng=rng, keep_cache=True)
    valid = targets != PAD
    tgt = targets[valid]
    if negatives is None:
        negatives = sample_negatives(cfg.vocab, cfg.num_negatives, tgt, rng)
    loss, dh_valid, demb = sampled_softmax_batch(h[valid], tgt, negatives, params["item_emb"])
    dh = np.zeros_like(h)
    dh[valid] = dh_valid
    grads = backward(cfg, params, dh, state)
    grads["item_emb"] += demb
    grads["item_emb"][PAD] = 0.0
    return loss, grads


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_epoch: int
    history: list


def _format_row(row: dict, wall: bool) -> str:
    wall_ms = f"{row['wall_ms']:.1f}" if wall else "0"
    return (f"{row['epoch']},{row['step']},{row['loss']!r},{row['hr10']!r},"
            f"{row['ndcg10']!r},{row['mrr']!r},{wall_ms}")


def train(split: DatasetSplit, cfg: ModelConfig, tcfg: TrainConfig,
          run_dir: str | os.PathLike | None = None, params: dict | None = None) -> TrainResult:
    """Train on ``split.train`` and validate on ``split.valid`` every epoch.

    With ``run_dir`` set, writes ``metrics.csv`` and ``checkpoints/epoch_K``.
    Validation scores the float32-rounded parameters, i.e. exactly what the
    checkpoint holds. Stops early after ``patience`` epochs without a better
    validation NDCG@10.
    """
    rng = np.random.default_rng(tcfg.seed)
    if params is None:
        params = init_params(cfg, rng)
    items, times, targets = training_windows(split.train, cfg.n)
    valid_q = query_windows(split.valid, cfg.n) if split.valid else None
    opt = AdamWState(lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2,
                     eps=tcfg.adam_eps, weight_decay=tcfg.weight_decay)
    frozen = {"item_emb": [PAD]}

    csv = None
    if run_dir is not None:
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
        csv = open(os.path.join(run_dir, "metrics.csv"), "w")
        csv.write(METRICS_HEADER + "\n")

    history = []
    best = (-1.0, 0, storage_round(params))
    stale = 0
    try:
        for epoch in range(1, tcfg.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(items.shape[0])
            losses = []
            for start in range(0, order.size, tcfg.batch_size):
                b = order[start:start + tcfg.batch_size]
                if not np.any(targets[b] != PAD):
                    continue
                loss, grads = loss_and_grads(cfg, params, items[b], times[b], targets[b], rng)
                adamw_step(params, grads, opt, frozen)
                if tcfg.debug_finite:
                    for name, p in params.items():
                        check_finite(name, p)
                losses.append(loss)
            stored = storage_round(params)
            if valid_q is not None:
                m = metrics(evaluate_ranks(cfg, stored, valid_q), 10)
                hr, ndcg, mrr = m.hr, m.ndcg, m.mrr
            else:
                hr = ndcg = mrr = float("nan")
            row = dict(epoch=epoch, step=opt.step, loss=float(np.mean(losses)) if losses else float("nan"),
                       hr10=hr, ndcg10=ndcg, mrr=mrr, wall_ms=1000.0 * (time.perf_counter() - t0))
            history.append(row)
            log.info("epoch %d loss %.4f hr@10 %.4f ndcg@10 %.4f", epoch, row["loss"], hr, ndcg)
            if csv is not None:
                csv.write(_format_row(row, tcfg.log_wall_time) + "\n")
                csv.flush()
                save_checkpoint(os.path.join(run_dir, "checkpoints", f"epoch_{epoch}"), cfg, stored,
                                extra={"epoch": epoch, "step": opt.step, "seed": tcfg.seed})
            if ndcg > best[0]:
                best, stale = (ndcg, epoch, stored), 0
            else:
                stale += 1
                if stale >= tcfg.patience:
                    log.info("early stop after epoch %d", epoch)
                    break
    finally:
        if csv is not None:
            csv.close()
    return TrainResult(params=params, best_params=best[2], best_epoch=best[1], history=history)
