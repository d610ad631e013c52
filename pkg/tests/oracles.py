"""Independent reference implementations used only by the tests.

Each oracle is written the slow, obvious way (python loops over cells or
blocks, full sorts) so it shares no code path with the library.
"""

import math

import numpy as np


def toeplitz_loops(w, n):
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            W[i, j] = w[i - j]
    return W


def diagonal_pruning_oracle(W, s, tau):
    """Pruned flat block indices by scoring every block of the full padded map.

    The padded map keeps the original cell (i, j) at block
    ((i + pad) // s, j // s). Every block is scored by its absolute sum; all
    blocks on one block diagonal must share a score (asserted), and the
    floor(nb * tau) lowest-scoring diagonals are pruned, ties going to the
    lower diagonal offset.
    """
    n = W.shape[0]
    pad = (-n) % s
    nb = (n + pad) // s
    block = [[0.0] * nb for _ in range(nb)]
    for i in range(n):
        for j in range(n):
            block[(i + pad) // s][j // s] += abs(W[i, j])
    scores = []
    for r in range(nb):
        on_diag = [block[r + m][m] for m in range(nb - r)]
        assert all(v == on_diag[0] for v in on_diag), "blocks on one diagonal differ"
        scores.append(on_diag[0])
    k = math.floor(nb * tau)
    chosen = sorted(range(nb), key=lambda r: (scores[r], r))[:k]
    pruned = set()
    for R in range(nb):
        for C in range(nb):
            if R - C in chosen:
                pruned.add(R * nb + C)
    return pruned


def flops_enumeration(n, s, pruned):
    """(kept, dense, reduction %) by walking every lower-triangular block."""
    pad = (-n) % s
    nb = (n + pad) // s
    dense = kept = 0
    for R in range(nb):
        for C in range(R + 1):
            dense += 1
            if R * nb + C not in pruned:
                kept += 1
    return kept, dense, 100.0 * (1.0 - kept / dense)


def masked_map_loops(W, s, pruned):
    """Zero every cell whose padded block is pruned."""
    n = W.shape[0]
    pad = (-n) % s
    nb = (n + pad) // s
    out = W.copy()
    for i in range(n):
        for j in range(n):
            if ((i + pad) // s) * nb + j // s in pruned:
                out[i, j] = 0.0
    return out


def exp_power_scalar(x, alpha, beta, gamma, eps):
    return alpha * gamma ** ((x + eps) ** beta)


def rank_by_sort(scores, target, pad=0):
    """1-based pessimistic rank from a full descending sort of non-padding items.

    Items tied with the target are placed ahead of it.
    """
    items = [i for i in range(len(scores)) if i != pad]
    order = sorted(items, key=lambda i: (-scores[i], i != target))
    # pessimistic: target goes after every item with an equal score
    tied_after = [i for i in order if scores[i] == scores[target]]
    return order.index(tied_after[0]) + len(tied_after)


def central_difference(f, x, step=1e-5):
    """Gradient of scalar ``f`` at ``x`` by central differences (copies ``x``)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def sampled_softmax_reference(x, true_item, negatives, E):
    """Cross-entropy of the true item against [true] + negatives, by definition."""
    cand = [true_item] + list(negatives)
    logits = np.array([float(np.dot(x, E[c])) for c in cand])
    m = max(logits)
    return -(logits[0] - m - math.log(sum(math.exp(v - m) for v in logits)))


def tiny_model_case(rng, n=8, d=4, d_ffn=8, layers=2, vocab=20, negatives=5):
    """Random tiny model, batch with padding and repeated timestamps, fixed negatives."""
    from dualrec.model import ModelConfig, init_params
    from dualrec.temporal import build_relative_matrix
    from dualrec.training import sample_negatives

    cfg = ModelConfig(n=n, d=d, d_ffn=d_ffn, num_layers=layers, vocab=vocab,
                      dropout=0.0, num_negatives=negatives)
    params = init_params(cfg, rng)
    # larger weights than the 0.02 init so every path carries signal
    for name in params:
        if params[name].ndim == 2 or name.endswith("pos_w"):
            params[name] = params[name] * 20.0
        elif name.endswith(("alpha", "beta")):
            params[name] = rng.uniform(0.5, 1.5, size=1)
    params["item_emb"][0] = 0.0
    batch = 2
    items = rng.integers(1, vocab, size=(batch, n))
    real = rng.integers(n // 2, n + 1, size=batch)
    for b in range(batch):
        items[b, real[b]:] = 0
    gaps = rng.integers(0, 4, size=(batch, n))  # zero gaps exercise the epsilon shift
    times = np.cumsum(gaps, axis=1)
    targets = np.zeros_like(items)
    targets[:, :-1] = items[:, 1:]
    valid = targets != 0
    negs = sample_negatives(vocab, negatives, targets[valid], rng)
    return cfg, params, items, build_relative_matrix(times), targets, negs


def model_grad_error(rng, coords_per_tensor=None, step=1e-5):
    """Worst relative error of the end-to-end analytic gradient on one random tiny case.

    ``coords_per_tensor=None`` checks every parameter entry; otherwise that
    many random entries of every tensor.
    """
    from dualrec.training import loss_and_grads

    cfg, params, items, T, targets, negs = tiny_model_case(rng)
    _, grads = loss_and_grads(cfg, params, items, None, targets, None, negs, T)
    worst = 0.0
    for name in sorted(params):
        flat = params[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        if coords_per_tensor is None:
            idx = range(flat.size)
        else:
            idx = rng.choice(flat.size, size=min(flat.size, coords_per_tensor), replace=False)
        for i in idx:
            if name == "item_emb" and i < cfg.d:
                continue  # padding row is frozen; its gradient is defined as zero
            orig = flat[i]
            flat[i] = orig + step
            hi, _ = loss_and_grads(cfg, params, items, None, targets, None, negs, T)
            flat[i] = orig - step
            lo, _ = loss_and_grads(cfg, params, items, None, targets, None, negs, T)
            flat[i] = orig
            num = (hi - lo) / (2 * step)
            worst = max(worst, abs(gflat[i] - num) / max(1.0, abs(num)))
    return worst
