"""Dual-channel sequential recommender with a hand-written backward pass.

Each block mixes a shared value projection through two causal ``n x n`` maps,
a temporal decay map built from timestamp intervals and a learnable Toeplitz
positional map, gates the normalized result with a second projection, and
follows it with a SwiGLU feed-forward layer. Both sub-layers are
pre-normalized and residual.

Parameters live in a flat ``dict`` of float64 arrays so the optimizer,
gradient checker and checkpoint code can treat them uniformly.
"""

from __future__ import annotations

import datetime as _dt
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp

from .numeric import (ShapeError, log_softmax_row, rmsnorm, rmsnorm_backward,
                      silu, silu_backward, softmax_row)
from .positional import SparseMask, apply_sparse_mask, materialize, toeplitz_gradient
from .temporal import TemporalParams, exp_power_attention, exp_power_gradients

PAD = 0
INIT_STD = 0.02


@dataclass
class ModelConfig:
    n: int = 50
    d: int = 32
    d_ffn: int = 64
    num_layers: int = 2
    vocab: int = 200
    dropout: float = 0.2
    num_negatives: int = 128
    gamma: float = 0.8
    epsilon: float = 1e-6
    use_temporal: bool = True
    use_positional: bool = True
    use_ffn: bool = True

    def __post_init__(self) -> None:
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if self.d_ffn < self.d:
            raise ValueError("d_ffn must be >= d")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.num_negatives < 1:
            raise ValueError("num_negatives must be >= 1")
        if self.vocab < 2:
            raise ValueError("vocab must include padding and at least one item")
        TemporalParams(gamma=self.gamma, epsilon=self.epsilon)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)


def layer_keys(layer: int) -> dict[str, str]:
    names = ["w_uv", "w_o", "b_o", "norm_attn", "norm_mix", "norm_ffn",
             "alpha", "beta", "pos_w", "w1", "w2", "w3"]
    return {k: f"layers.{layer}.{k}" for k in names}


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, f = cfg.d, cfg.d_ffn

    def normal(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    params = {"item_emb": normal(cfg.vocab, d), "pos_emb": normal(cfg.n, d)}
    params["item_emb"][PAD] = 0.0
    for layer in range(cfg.num_layers):
        k = layer_keys(layer)
        params[k["w_uv"]] = normal(d, 3 * d)
        params[k["w_o"]] = normal(2 * d, d)
        params[k["b_o"]] = np.zeros(d)
        params[k["norm_attn"]] = np.ones(d)
        params[k["norm_mix"]] = np.ones(2 * d)
        params[k["norm_ffn"]] = np.ones(d)
        params[k["alpha"]] = np.ones(1)
        params[k["beta"]] = np.ones(1)
        params[k["pos_w"]] = normal(cfg.n)
        params[k["w1"]] = normal(d, f)
        params[k["w2"]] = normal(d, f)
        params[k["w3"]] = normal(f, d)
    return params


def temporal_params(cfg: ModelConfig, params: dict, layer: int) -> TemporalParams:
    k = layer_keys(layer)
    return TemporalParams(alpha=float(params[k["alpha"]][0]), beta=float(params[k["beta"]][0]),
                          gamma=cfg.gamma, epsilon=cfg.epsilon)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n)))


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _wgrad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Weight gradient ``sum_b x_b^T dy_b`` for a right-multiplied weight."""
    return _flat(x).T @ _flat(dy)


# ---------------------------------------------------------------------------
# embedding

def embed(items: np.ndarray, params: dict) -> np.ndarray:
    """Item plus absolute-position embedding; padding rows are zero."""
    items = np.asarray(items)
    vocab = params["item_emb"].shape[0]
    if np.any(items >= vocab) or np.any(items < 0):
        raise ValueError(f"item id outside [0, {vocab})")
    n = items.shape[-1]
    real = (items != PAD)[..., None]
    return (params["item_emb"][items] + params["pos_emb"][:n]) * real


# ---------------------------------------------------------------------------
# one block

def block_forward(X: np.ndarray, params: dict, layer: int, A_ts: np.ndarray | None,
                  W_pos: np.ndarray | None, dropout: float = 0.0,
                  rng: np.random.Generator | None = None,
                  use_ffn: bool = True) -> tuple[np.ndarray, dict]:
    """Run one block on ``X`` of shape ``(..., n, d)``.

    ``A_ts`` and ``W_pos`` must already be causally masked; pass ``None`` to
    drop a channel (its half of the mixed features is then zero). Dropout on
    the FFN hidden activation is active when ``rng`` is given.
    """
    k = layer_keys(layer)
    d = X.shape[-1]
    n = X.shape[-2]
    if params[k["w_uv"]].shape != (d, 3 * d):
        raise ShapeError(f"layer {layer}: input width {d} does not match w_uv {params[k['w_uv']].shape}")
    for name, m in (("A_ts", A_ts), ("W_pos", W_pos)):
        if m is not None and m.shape[-2:] != (n, n):
            raise ShapeError(f"{name} has shape {m.shape}, expected (..., {n}, {n})")

    xn = rmsnorm(X, params[k["norm_attn"]])
    z = xn @ params[k["w_uv"]]
    sz = silu(z)
    U, V = sz[..., : 2 * d], sz[..., 2 * d:]
    ca = A_ts @ V if A_ts is not None else np.zeros_like(V)
    cp = W_pos @ V if W_pos is not None else np.zeros_like(V)
    mix = np.concatenate([ca, cp], axis=-1)
    mixn = rmsnorm(mix, params[k["norm_mix"]])
    inter = mixn * U
    O = inter @ params[k["w_o"]] + params[k["b_o"]] + X
    cache = dict(X=X, xn=xn, z=z, U=U, V=V, mix=mix, mixn=mixn, inter=inter, O=O,
                 A_ts=A_ts, W_pos=W_pos, use_ffn=use_ffn)
    if not use_ffn:
        return O, cache

    on = rmsnorm(O, params[k["norm_ffn"]])
    h1 = on @ params[k["w1"]]
    h2 = on @ params[k["w2"]]
    s1 = silu(h1)
    hidden = s1 * h2
    drop = None
    if rng is not None and dropout > 0.0:
        drop = (rng.random(hidden.shape) >= dropout) / (1.0 - dropout)
        hidden = hidden * drop
    H = hidden @ params[k["w3"]] + O
    cache.update(on=on, h1=h1, h2=h2, s1=s1, hidden=hidden, drop=drop)
    return H, cache


def block_backward(dH: np.ndarray, params: dict, layer: int, cache: dict) -> tuple[np.ndarray, dict]:
    """Return ``(dX, grads)`` where ``grads`` holds this layer's weight gradients
    plus ``"dA_ts"`` / ``"dW_pos"`` for the two maps (``None`` if unused)."""
    k = layer_keys(layer)
    grads: dict = {}
    d = cache["X"].shape[-1]
    dO = dH.copy()
    if cache["use_ffn"]:
        grads[k["w3"]] = _wgrad(cache["hidden"], dH)
        dhidden = dH @ params[k["w3"]].T
        if cache["drop"] is not None:
            dhidden = dhidden * cache["drop"]
        ds1 = dhidden * cache["h2"]
        dh2 = dhidden * cache["s1"]
        dh1 = silu_backward(ds1, cache["h1"])
        grads[k["w1"]] = _wgrad(cache["on"], dh1)
        grads[k["w2"]] = _wgrad(cache["on"], dh2)
        don = dh1 @ params[k["w1"]].T + dh2 @ params[k["w2"]].T
        dO_norm, grads[k["norm_ffn"]] = rmsnorm_backward(don, cache["O"], params[k["norm_ffn"]])
        dO += dO_norm

    dX = dO.copy()
    grads[k["b_o"]] = _flat(dO).sum(axis=0)
    grads[k["w_o"]] = _wgrad(cache["inter"], dO)
    dinter = dO @ params[k["w_o"]].T
    dmixn = dinter * cache["U"]
    dU = dinter * cache["mixn"]
    dmix, grads[k["norm_mix"]] = rmsnorm_backward(dmixn, cache["mix"], params[k["norm_mix"]])
    dca, dcp = dmix[..., :d], dmix[..., d:]
    V = cache["V"]
    dV = np.zeros_like(V)
    Vt = np.swapaxes(V, -1, -2)
    grads["dA_ts"] = grads["dW_pos"] = None
    if cache["A_ts"] is not None:
        dV += np.swapaxes(cache["A_ts"], -1, -2) @ dca
        grads["dA_ts"] = dca @ Vt
    if cache["W_pos"] is not None:
        dV += np.swapaxes(cache["W_pos"], -1, -2) @ dcp
        grads["dW_pos"] = dcp @ Vt
    dsz = np.concatenate([dU, dV], axis=-1)
    dz = silu_backward(dsz, cache["z"])
    grads[k["w_uv"]] = _wgrad(cache["xn"], dz)
    dxn = dz @ params[k["w_uv"]].T
    dX_norm, grads[k["norm_attn"]] = rmsnorm_backward(dxn, cache["X"], params[k["norm_attn"]])
    dX += dX_norm
    return dX, grads


# ---------------------------------------------------------------------------
# full network

def layer_maps(cfg: ModelConfig, params: dict, layer: int, T: np.ndarray,
               mask: SparseMask | None = None) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Causally masked temporal and positional maps for one layer."""
    n = T.shape[-1]
    C = causal_mask(n)
    A = exp_power_attention(T, temporal_params(cfg, params, layer)) * C if cfg.use_temporal else None
    W = None
    if cfg.use_positional:
        W = materialize(params[layer_keys(layer)["pos_w"]], n)
        if mask is not None:
            W = apply_sparse_mask(W, mask)
    return A, W


def forward(cfg: ModelConfig, params: dict, items: np.ndarray, T: np.ndarray,
            masks: list | None = None, rng: np.random.Generator | None = None,
            keep_cache: bool = False):
    """Hidden states of the last layer, shape ``(..., n, d)``.

    ``T`` is the float interval matrix (batch-aligned with ``items``) shared by
    every layer. ``masks`` optionally holds one :class:`SparseMask` (or
    ``None``) per layer. Passing ``rng`` turns on dropout.
    """
    items = np.asarray(items)
    training = rng is not None and cfg.dropout > 0.0
    X = embed(items, params)
    emb_drop = None
    if training:
        emb_drop = (rng.random(X.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        X = X * emb_drop
    caches = []
    for layer in range(cfg.num_layers):
        mask = masks[layer] if masks is not None else None
        A, W = layer_maps(cfg, params, layer, T, mask)
        X, cache = block_forward(X, params, layer, A, W, cfg.dropout,
                                 rng if training else None, cfg.use_ffn)
        cache["mask"] = mask
        if keep_cache:
            caches.append(cache)
        else:
            cache.clear()
    if keep_cache:
        return X, dict(items=items, T=T, layers=caches, emb_drop=emb_drop)
    return X


def backward(cfg: ModelConfig, params: dict, dout: np.ndarray, state: dict) -> dict:
    """Gradients of every parameter given ``d loss / d hidden``."""
    grads: dict = {}
    n = state["items"].shape[-1]
    C = causal_mask(n)
    dX = dout
    for layer in reversed(range(cfg.num_layers)):
        cache = state["layers"][layer]
        dX, g = block_backward(dX, params, layer, cache)
        k = layer_keys(layer)
        dA, dW = g.pop("dA_ts"), g.pop("dW_pos")
        grads.update(g)
        if dA is not None:
            da, db = exp_power_gradients(state["T"], temporal_params(cfg, params, layer), dA * C)
            grads[k["alpha"]] = np.array([da])
            grads[k["beta"]] = np.array([db])
        else:
            grads[k["alpha"]] = np.zeros(1)
            grads[k["beta"]] = np.zeros(1)
        gw = np.zeros_like(params[k["pos_w"]])
        if dW is not None:
            if cache["mask"] is not None:
                dW = apply_sparse_mask(dW, cache["mask"])
            gw[:n] = toeplitz_gradient(dW)
        grads[k["pos_w"]] = gw
        if not cfg.use_ffn:
            for name in ("w1", "w2", "w3", "norm_ffn"):
                grads[k[name]] = np.zeros_like(params[k[name]])

    if state["emb_drop"] is not None:
        dX = dX * state["emb_drop"]
    items = state["items"]
    real = (items != PAD)[..., None]
    dX = dX * real
    grads["pos_emb"] = np.zeros_like(params["pos_emb"])
    grads["pos_emb"][:n] = dX.reshape(-1, n, dX.shape[-1]).sum(axis=0)
    grads["item_emb"] = scatter_rows(items.reshape(-1), _flat(dX), params["item_emb"].shape[0])
    grads["item_emb"][PAD] = 0.0
    return grads


def scatter_rows(ids: np.ndarray, rows: np.ndarray, vocab: int) -> np.ndarray:
    """``out[ids[p]] += rows[p]`` with duplicates summed in a fixed order."""
    P = ids.shape[0]
    S = sp.csr_matrix((np.ones(P), (ids, np.arange(P))), shape=(vocab, P))
    return np.asarray(S @ rows)


# ---------------------------------------------------------------------------
# prediction and loss

def predict_scores(x: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
    """Dot-product scores over the vocabulary; padding is set to ``-inf``."""
    scores = x @ item_emb.T
    scores[..., PAD] = -np.inf
    return scores


def predict_proba(x: np.ndarray, item_emb: np.ndarray) -> np.ndarray:
    return softmax_row(predict_scores(x, item_emb))


def sampled_softmax_loss(x: np.ndarray, true_item: int, negatives, item_emb: np.ndarray):
    """Cross-entropy of the true item against ``N`` sampled negatives at one position.

    Returns ``(loss, dx, d_item_emb)``; ``d_item_emb`` is a dense array shaped
    like ``item_emb``.
    """
    negatives = np.asarray(negatives)
    if np.any(negatives == true_item):
        raise ValueError(f"true item {true_item} appears among the negatives")
    if true_item == PAD or np.any(negatives == PAD):
        raise ValueError("padding id cannot be a target or a negative")
    ids = np.concatenate([[true_item], negatives])
    cand = item_emb[ids]
    logits = cand @ x
    loss = -log_softmax_row(logits)[0]
    dlogits = softmax_row(logits)
    dlogits[0] -= 1.0
    dx = dlogits @ cand
    demb = np.zeros_like(item_emb)
    np.add.at(demb, ids, dlogits[:, None] * x[None, :])
    return float(loss), dx, demb


def sampled_softmax_batch(h: np.ndarray, targets: np.ndarray, negatives: np.ndarray,
                          item_emb: np.ndarray, chunk: int = 1024):
    """Mean sampled-softmax loss over rows of ``h`` (shape ``(P, d)``).

    ``targets`` is ``(P,)`` and ``negatives`` ``(P, N)``. Returns
    ``(loss, dh, d_item_emb)``.
    """
    P, d = h.shape
    if P == 0:
        return 0.0, np.zeros_like(h), np.zeros_like(item_emb)
    ids = np.concatenate([targets[:, None], negatives], axis=1)
    dh = np.empty_like(h)
    dlog_all = np.empty(ids.shape)
    total = 0.0
    for start in range(0, P, chunk):
        sl = slice(start, start + chunk)
        cand = item_emb[ids[sl]]
        logits = np.einsum("pkd,pd->pk", cand, h[sl])
        logp = log_softmax_row(logits)
        total += -logp[:, 0].sum()
        dlog = np.exp(logp)
        dlog[:, 0] -= 1.0
        dlog /= P
        dlog_all[sl] = dlog
        dh[sl] = np.einsum("pk,pkd->pd", dlog, cand)
    K = ids.shape[1]
    S = sp.csr_matrix((dlog_all.reshape(-1), (ids.reshape(-1), np.repeat(np.arange(P), K))),
                      shape=(item_emb.shape[0], P))
    demb = np.asarray(S @ h)
    return total / P, dh, demb


# ---------------------------------------------------------------------------
# checkpoints

MANIFEST = "manifest.txt"


def save_checkpoint(path: str | os.PathLike, cfg: ModelConfig, params: dict,
                    extra: dict | None = None) -> None:
    """Write a ``key=value`` manifest plus one little-endian float32 blob per tensor."""
    os.makedirs(path, exist_ok=True)
    lines = [f"config.{k}={v}" for k, v in asdict(cfg).items()]
    lines.append(f"num_layers={cfg.num_layers}")
    lines.append(f"created={_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
    for k, v in (extra or {}).items():
        lines.append(f"meta.{k}={v}")
    for name in sorted(params):
        arr = params[name]
        blob = f"{name}.bin"
        arr.astype("<f4").tofile(os.path.join(path, blob))
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"tensor.{name}={shape}:{blob}")
    with open(os.path.join(path, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_value(text: str, kind):
    if kind is bool:
        if text not in ("True", "False"):
            raise ValueError(f"bad boolean {text!r}")
        return text == "True"
    return kind(text)


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelConfig, dict, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(config, params, meta)``."""
    manifest = os.path.join(path, MANIFEST)
    with open(manifest) as fh:
        entries = [ln.rstrip("\n").split("=", 1) for ln in fh if "=" in ln]
    types = {f.name: f.type for f in fields(ModelConfig)}
    kinds = {"int": int, "float": float, "bool": bool}
    cfg_values, params, meta = {}, {}, {}
    for key, value in entries:
        if key.startswith("config."):
            name = key[len("config."):]
            if name not in types:
                raise ValueError(f"{manifest}: unknown config key {name!r}")
            cfg_values[name] = _parse_value(value, kinds[str(types[name])])
        elif key.startswith("tensor."):
            shape_text, blob = value.split(":", 1)
            shape = tuple(int(s) for s in shape_text.split("x")) if shape_text else ()
            data = np.fromfile(os.path.join(path, blob), dtype="<f4")
            if data.size != math.prod(shape):
                raise ValueError(f"{blob}: expected {math.prod(shape)} floats, found {data.size}")
            params[key[len("tensor."):]] = data.reshape(shape).astype(np.float64)
        elif key.startswith("meta."):
            meta[key[len("meta."):]] = value
    return ModelConfig(**cfg_values), params, meta


def storage_round(params: dict) -> dict:
    """Parameters as they will read back from a checkpoint (float32-rounded)."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}
