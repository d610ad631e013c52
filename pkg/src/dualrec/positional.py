"""Toeplitz positional attention and diagonal-sliding block pruning.

The positional map is lower-triangular and constant along every diagonal,
``W[i, j] = w[i - j]`` for ``i >= j``. For pruning, the map is zero-padded on
the top and right edges so its side becomes a multiple of the stride ``s``;
this keeps the padded map Toeplitz, so the ``s x s`` blocks in the leftmost
block column stand in for every block diagonal.

Block coordinates are ``(R, C)`` over the padded grid, flattened row-major as
``R * num_blocks + C``. Original cell ``(i, j)`` lives in block
``((i + pad) // s, j // s)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

DEFAULT_STRIDE = 8


def materialize(w: np.ndarray, n: int) -> np.ndarray:
    """Build the causal ``n x n`` Toeplitz map from per-offset weights."""
    w = np.asarray(w, dtype=np.float64)
    if n > w.shape[0]:
        raise ValueError(f"need {n} offsets but only {w.shape[0]} are stored")
    idx = np.arange(n)
    offset = idx[:, None] - idx[None, :]
    return np.where(offset >= 0, w[np.clip(offset, 0, None)], 0.0)


def toeplitz_gradient(upstream: np.ndarray) -> np.ndarray:
    """Backward of :func:`materialize`: sum ``upstream`` along each lower diagonal.

    Extra leading axes are summed too.
    """
    up = np.asarray(upstream, dtype=np.float64)
    n = up.shape[-1]
    if up.ndim > 2:
        up = up.reshape(-1, n, n).sum(axis=0)
    return np.array([np.trace(up, offset=-d) for d in range(n)])


def block_divide(n: int, s: int) -> tuple[int, int]:
    """Return ``(num_blocks, pad)`` for an ``n x n`` map and stride ``s``."""
    if s < 1:
        raise ValueError(f"stride must be >= 1, got {s}")
    pad = (s - n % s) % s
    return (n + pad) // s, pad


def pad_map(W: np.ndarray, s: int) -> np.ndarray:
    """Zero-pad the top rows and right columns up to a multiple of ``s``."""
    n = W.shape[-1]
    _, pad = block_divide(n, s)
    widths = [(0, 0)] * (W.ndim - 2) + [(pad, 0), (0, pad)]
    return np.pad(W, widths)


def leftmost_scores(W_padded: np.ndarray, s: int) -> np.ndarray:
    """Sum of ``|W|`` inside each block of the leftmost block column."""
    side = W_padded.shape[-1]
    if side % s:
        raise ValueError(f"padded side {side} is not a multiple of stride {s}")
    strip = np.abs(W_padded[:, :s]).reshape(side // s, s, s)
    return strip.sum(axis=(1, 2))


@dataclass(frozen=True)
class SparseMask:
    """Pruned block indices for one ``(n, s)`` map at ratio ``tau``."""

    n: int
    s: int
    tau: float
    pruned: frozenset = field(default_factory=frozenset)

    @property
    def num_blocks(self) -> int:
        return block_divide(self.n, self.s)[0]

    @property
    def pad(self) -> int:
        return block_divide(self.n, self.s)[1]

    def pruned_diagonals(self) -> list[int]:
        """Block-diagonal offsets ``R - C`` that are fully pruned."""
        nb = self.num_blocks
        return sorted({f // nb - f % nb for f in self.pruned})

    def block_keep(self) -> np.ndarray:
        """Boolean ``(num_blocks, num_blocks)`` grid, False where pruned."""
        nb = self.num_blocks
        keep = np.ones(nb * nb, dtype=bool)
        keep[list(self.pruned)] = False
        return keep.reshape(nb, nb)


def generate_sparse_mask(W: np.ndarray, s: int = DEFAULT_STRIDE, tau: float = 0.5) -> SparseMask:
    """Select the ``floor(num_blocks * tau)`` weakest leftmost blocks and slide them down their diagonals.

    Ties in score go to the lower block row.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    n = W.shape[-1]
    num_blocks, _ = block_divide(n, s)
    scores = leftmost_scores(pad_map(W, s), s)
    num_mask = int(np.floor(num_blocks * tau))
    rows = np.argsort(scores, kind="stable")[:num_mask]

    max_index = num_blocks * num_blocks - 1
    increment = num_blocks + 1
    pruned = []
    for r in rows:
        index = int(r) * num_blocks
        while index <= max_index:
            pruned.append(index)
            index += increment
    return SparseMask(n=n, s=s, tau=float(tau), pruned=frozenset(pruned))


def cell_keep_matrix(mask: SparseMask) -> np.ndarray:
    """Boolean ``n x n`` matrix, False for cells inside pruned blocks."""
    keep = mask.block_keep()
    rows = (np.arange(mask.n) + mask.pad) // mask.s
    cols = np.arange(mask.n) // mask.s
    return keep[rows[:, None], cols[None, :]]


def _check_mask(W: np.ndarray, mask: SparseMask) -> None:
    if W.shape[-1] != mask.n or W.shape[-2] != mask.n:
        raise ValueError(f"mask built for n={mask.n} cannot apply to map of shape {W.shape}")


def apply_sparse_mask(W: np.ndarray, mask: SparseMask) -> np.ndarray:
    _check_mask(W, mask)
    return np.where(cell_keep_matrix(mask), W, 0.0)


class BlockSparseMap:
    """A positional map stored as its kept block diagonals.

    ``matmul`` only touches kept lower-triangular blocks. With
    ``toeplitz=True`` every block on a block diagonal is identical, so a run
    of consecutive kept diagonals ``r0..r1-1`` collapses into one
    ``(s x q*s)`` panel applied to a sliding window of value blocks; this
    keeps the GEMM inner dimension large. Otherwise each diagonal keeps its
    own stack of blocks.
    """

    def __init__(self, W: np.ndarray, mask: SparseMask | None = None, s: int | None = None,
                 toeplitz: bool = False):
        n = W.shape[-1]
        if mask is None:
            mask = SparseMask(n=n, s=s or DEFAULT_STRIDE, tau=0.0)
        _check_mask(W, mask)
        self.n, self.s, self.mask, self.toeplitz = n, mask.s, mask, toeplitz
        nb, self.pad = mask.num_blocks, mask.pad
        self.num_blocks = nb
        blocks = pad_map(W, self.s).reshape(nb, self.s, nb, self.s).transpose(0, 2, 1, 3)
        skipped = set(mask.pruned_diagonals())
        self.diagonals = []
        for r in range(nb):
            if r in skipped:
                continue
            if toeplitz:
                self.diagonals.append((r, np.ascontiguousarray(blocks[r, 0])))
            else:
                m = np.arange(nb - r)
                self.diagonals.append((r, np.ascontiguousarray(blocks[r + m, m])))
        self.panels = []
        if toeplitz:
            runs = []
            for r, _ in self.diagonals:
                if runs and runs[-1][1] == r:
                    runs[-1][1] = r + 1
                else:
                    runs.append([r, r + 1])
            for r0, r1 in runs:
                # column block c of the panel multiplies value block R - (r1 - 1) + c
                panel = np.concatenate([blocks[r, 0] for r in range(r1 - 1, r0 - 1, -1)], axis=1)
                self.panels.append((r0, r1, np.ascontiguousarray(panel)))

    @classmethod
    def from_weights(cls, w: np.ndarray, n: int, mask: SparseMask | None = None,
                     s: int | None = None) -> "BlockSparseMap":
        return cls(materialize(w, n), mask, s, toeplitz=True)

    @property
    def block_multiplies(self) -> int:
        """Number of ``s x s`` block products one ``matmul`` performs."""
        return sum(self.num_blocks - r for r, _ in self.diagonals)

    def matmul(self, V: np.ndarray) -> np.ndarray:
        """``W_masked @ V`` for ``V`` of shape ``(n, d)`` or ``(batch, n, d)``."""
        lead = V.shape[:-2]
        d = V.shape[-1]
        s, nb, pad = self.s, self.num_blocks, self.pad
        Vp = np.zeros(lead + (nb * s, d))
        Vp[..., : self.n, :] = V
        if not self.toeplitz:
            Vb = Vp.reshape(lead + (nb, s, d))
            out = np.zeros_like(Vb)
            for r, blocks in self.diagonals:
                out[..., r:, :, :] += np.matmul(blocks, Vb[..., : nb - r, :, :])
            return out.reshape(lead + (nb * s, d))[..., pad:, :]

        # fold batch into columns: (nb*s, batch*d) keeps every window contiguous in rows
        cols = Vp.reshape(-1, nb * s, d).transpose(1, 0, 2).reshape(nb * s, -1)
        cols = np.ascontiguousarray(cols)
        out = np.zeros_like(cols)
        row_stride, col_stride = cols.strides
        for r0, r1, panel in self.panels:
            q = r1 - r0
            # output rows whose window would start before block 0 take a truncated panel
            for R in range(r0, min(r1 - 1, nb)):
                width = (R - r0 + 1) * s
                out[R * s:(R + 1) * s] += panel[:, -width:] @ cols[:width]
            m = nb - (r1 - 1)
            if m > 0:
                windows = as_strided(cols, shape=(m, q * s, cols.shape[1]),
                                     strides=(s * row_stride, row_stride, col_stride), writeable=False)
                out[(r1 - 1) * s:].reshape(m, s, -1)[...] += np.matmul(panel, windows)
        out = out.reshape(nb * s, -1, d).transpose(1, 0, 2).reshape(lead + (nb * s, d))
        return out[..., pad:, :]


def flops_count(n: int, s: int, mask: SparseMask) -> tuple[int, int, float]:
    """Return ``(kept_blocks, dense_blocks, reduction_percent)`` over the causal block triangle."""
    num_blocks, _ = block_divide(n, s)
    if mask.n != n or mask.s != s:
        raise ValueError("mask does not match (n, s)")
    dense = num_blocks * (num_blocks + 1) // 2
    pruned_lower = sum(1 for f in mask.pruned if f // num_blocks >= f % num_blocks)
    kept = dense - pruned_lower
    return kept, dense, 100.0 * (1.0 - kept / dense)


def save_mask(mask: SparseMask, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(f"{mask.n} {mask.s} {mask.tau!r}\n")
        for index in sorted(mask.pruned):
            fh.write(f"{index}\n")


def load_mask(path: str | os.PathLike) -> SparseMask:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty mask file")
    try:
        n, s, tau = lines[0].split()
        pruned = frozenset(int(x) for x in lines[1:])
        mask = SparseMask(n=int(n), s=int(s), tau=float(tau), pruned=pruned)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed mask file ({exc})") from None
    if any(f < 0 or f >= mask.num_blocks ** 2 for f in pruned):
        raise ValueError(f"{path}: block index out of range")
    return mask
