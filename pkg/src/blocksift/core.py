"""Dense tensor primitives and the exact causal attention reference.

Everything downstream is measured against `dense_causal_attention`, which
runs in float64 with a fixed reduction order, so repeated runs are
bit-identical on the same machine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError

__all__ = [
    "AttentionHead",
    "HeadSet",
    "as_matrix",
    "causal_row_softmax",
    "dense_causal_attention",
    "dense_probabilities",
    "scaled_scores",
]

# Row-block height for the memory-lean oracle loops (peak O(block x S)).
ROW_BLOCK = 512


def as_matrix(a, name: str = "matrix", dtype=np.float64) -> np.ndarray:
    """Coerce `a` to a dense 2-D float array, rejecting NaN/Inf."""
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class AttentionHead:
    """Q/K/V tensors of one causal self-attention head, each S x d.

    Prefill self-attention only: the query and key sequence lengths must be
    equal. Cross-attention shapes are rejected up front.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    head_id: int = 0

    def __post_init__(self):
        q = as_matrix(self.q, "q")
        k = as_matrix(self.k, "k")
        v = as_matrix(self.v, "v")
        if not (q.shape == k.shape == v.shape):
            raise InputError(
                f"head {self.head_id}: q/k/v must share one S x d shape, got "
                f"{q.shape}/{k.shape}/{v.shape}"
            )
        if q.shape[0] < 1 or q.shape[1] < 1:
            raise InputError(f"head {self.head_id}: S and d must be >= 1")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    @property
    def S(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class HeadSet:
    """Attention heads sharing one sequence length and head dimension."""

    heads: tuple[AttentionHead, ...]

    def __post_init__(self):
        heads = tuple(self.heads)
        if not heads:
            raise InputError("HeadSet needs at least one head")
        S, d = heads[0].S, heads[0].d
        for h in heads:
            if h.S != S or h.d != d:
                raise InputError(
                    f"head {h.head_id} has shape {h.S}x{h.d}, expected {S}x{d}"
                )
        object.__setattr__(self, "heads", heads)

    @property
    def S(self) -> int:
        return self.heads[0].S

    @property
    def d(self) -> int:
        return self.heads[0].d

    def __len__(self) -> int:
        return len(self.heads)

    def __iter__(self):
        return iter(self.heads)


def scaled_scores(q: np.ndarray, k: np.ndarray, d: int) -> np.ndarray:
    """Pre-softmax attention logits Q K^T / sqrt(d).

    `q` may be a slice of the full query matrix (n x d against m x d keys);
    the result is n x m.
    """
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    if q.shape[1] != d or k.shape[1] != d:
        raise InputError(
            f"expected head dimension {d}, got q:{q.shape[1]} k:{k.shape[1]}"
        )
    return (q @ k.T) / np.sqrt(d)


def causal_row_softmax(scores: np.ndarray, row_index=None) -> np.ndarray:
    """Row-wise softmax restricted to causal entries j <= query position.

    `scores` is either square (row r is query r) or a rectangular slice of
    sampled query rows, in which case `row_index` must give each row's
    global query position so causality keeps its meaning.

    Entries beyond a row's query position come out exactly 0; every row
    sums to 1 over its causal support. Per-row max subtraction keeps exp
    in range for arbitrarily large logits.
    """
    s = as_matrix(scores, "scores")
    n, m = s.shape
    if row_index is None:
        if n != m:
            raise InputError(
                "rectangular scores need row_index (global query positions)"
            )
        rows = np.arange(n)
    else:
        rows = np.asarray(row_index, dtype=np.int64)
        if rows.shape != (n,):
            raise InputError(f"row_index must have shape ({n},), got {rows.shape}")
        if n and (rows.min() < 0 or rows.max() >= m):
            raise InputError("row_index entries must lie in [0, n_keys)")
    masked = np.where(np.arange(m)[None, :] <= rows[:, None], s, -np.inf)
    mx = masked.max(axis=1, keepdims=True)  # j = 0 is always causal, so finite
    p = np.exp(masked - mx)
    p /= p.sum(axis=1, keepdims=True)
    return p


def dense_causal_attention(head: AttentionHead) -> np.ndarray:
    """Exact causal attention output, the gold reference for the sparse path.

    Computes softmax(Q K^T / sqrt(d)) V row-block by row-block in float64;
    identical values to the full-matrix formulation with O(block x S) peak
    memory.
    """
    S, d = head.S, head.d
    out = np.empty((S, d))
    for r0 in range(0, S, ROW_BLOCK):
        r1 = min(r0 + ROW_BLOCK, S)
        p = causal_row_softmax(
            scaled_scores(head.q[r0:r1], head.k, d), np.arange(r0, r1)
        )
        out[r0:r1] = p @ head.v
    return out


def dense_probabilities(head: AttentionHead) -> np.ndarray:
    """Full causal probability matrix P (S x S, float64).

    Materializes S^2 floats; intended for desk-scale metric work only.
    """
    S = head.S
    p = np.empty((S, S))
    for r0 in range(0, S, ROW_BLOCK):
        r1 = min(r0 + ROW_BLOCK, S)
        p[r0:r1] = causal_row_softmax(
            scaled_scores(head.q[r0:r1], head.k, head.d), np.arange(r0, r1)
        )
    return p
