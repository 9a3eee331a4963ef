"""Block-sparse causal attention with streaming softmax.

`sparse_attention` touches only active blocks and keeps running per-row
max / normalizer / weighted-sum state, so no S x S intermediate ever
exists. `masked_dense_attention` is the direct reference it is checked
against: masked logits are excluded outright (the large-negative-constant
limit) and rows renormalize over surviving entries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import AttentionHead, causal_row_softmax, scaled_scores
from .exceptions import InputError, InternalInvariantError
from .filtering import BlockMask
from .oracle import EntryMask
from .sampler import n_blocks

__all__ = [
    "FlopReport",
    "flop_accounting",
    "masked_dense_attention",
    "sparse_attention",
]


@dataclass
class FlopReport:
    """Work accounting for one head: block counts, density, and gemm FLOP
    estimates (two 2*m*n*d products per active block pair, trailing partial
    blocks pro-rated by true size). Wall times are filled by whoever runs
    the comparison."""

    active_blocks: int
    causal_blocks: int
    block_density: float
    estimated_flops_sparse: int
    estimated_flops_dense: int
    wall_time_sparse: float = 0.0
    wall_time_dense: float = 0.0

    @property
    def flop_ratio(self) -> float:
        return self.estimated_flops_sparse / self.estimated_flops_dense


def _block_sizes(S: int, blk: int) -> np.ndarray:
    nb = n_blocks(S, blk)
    return np.minimum(blk, S - np.arange(nb) * blk)


def flop_accounting(mask: BlockMask, S: int, d: int) -> FlopReport:
    """Count active vs causal blocks and estimate gemm FLOPs for both paths."""
    if n_blocks(S, mask.blk) != mask.n_qblocks:
        raise InputError(
            f"mask has {mask.n_qblocks} blocks of {mask.blk}, cannot cover S={S}"
        )
    sizes = _block_sizes(S, mask.blk)
    area = sizes[:, None] * sizes[None, :]
    causal_pairs = np.tril(np.ones((len(sizes), len(sizes)), dtype=bool))
    dense = 4 * d * int(area[causal_pairs].sum())
    sparse = 4 * d * int(area[mask.active].sum())
    return FlopReport(
        active_blocks=mask.active_count(),
        causal_blocks=mask.causal_count(),
        block_density=mask.block_density(),
        estimated_flops_sparse=sparse,
        estimated_flops_dense=dense,
    )


def masked_dense_attention(head: AttentionHead, mask) -> np.ndarray:
    """Reference masked attention in float64: softmax over the unmasked
    causal entries only, then the weighted value sum.

    Accepts a BlockMask (expanded to token granularity) or an EntryMask.
    Materializes S x S, so desk scale only. Raises when a mask leaves some
    query row without support, since its softmax would be undefined.
    """
    S = head.S
    if isinstance(mask, BlockMask):
        grid = mask.to_entry_mask(S).grid
    elif isinstance(mask, EntryMask):
        grid = mask.grid
    else:
        raise InputError(f"expected BlockMask or EntryMask, got {type(mask)!r}")
    if grid.shape != (S, S):
        raise InputError(f"mask shape {grid.shape} does not match S={S}")
    if not grid.any(axis=1).all():
        empty = int(np.flatnonzero(~grid.any(axis=1))[0])
        raise InputError(f"mask leaves query row {empty} without active entries")
    scores = scaled_scores(head.q, head.k, head.d)
    masked = np.where(grid, scores, -np.inf)
    mx = masked.max(axis=1, keepdims=True)
    p = np.exp(masked - mx)
    p /= p.sum(axis=1, keepdims=True)
    return p @ head.v


def sparse_attention(
    head: AttentionHead, mask: BlockMask
) -> tuple[np.ndarray, FlopReport]:
    """Causal attention that computes only the mask's active blocks.

    Per query block, active key blocks stream through the online-softmax
    recurrence: running max m, running normalizer l, running weighted sum.
    Entry-level causality applies inside the diagonal block; other active
    blocks lie strictly below the diagonal and are fully visible. The
    returned report carries an instrumented count of blocks actually
    touched. Peak memory is O(blk x (blk + d)) per step.
    """
    S, d = head.S, head.d
    blk = mask.blk
    nb = n_blocks(S, blk)
    if mask.n_qblocks != nb:
        raise InputError(
            f"mask has {mask.n_qblocks} blocks of {blk}, head needs {nb} for S={S}"
        )
    t0 = time.perf_counter()
    scale = 1.0 / np.sqrt(d)
    out = np.empty((S, d))
    touched = 0
    key_pos = np.arange(S)
    for qb in range(nb):
        q0, q1 = qb * blk, min((qb + 1) * blk, S)
        active = mask.active_for(qb)
        if active.size == 0:
            raise InputError(f"query block {qb} has no active key blocks")
        qs = head.q[q0:q1] * scale
        m = np.full(q1 - q0, -np.inf)
        l = np.zeros(q1 - q0)
        acc = np.zeros((q1 - q0, d))
        for kb in active:
            k0, k1 = kb * blk, min((kb + 1) * blk, S)
            sb = qs @ head.k[k0:k1].T
            if kb == qb:
                sb[key_pos[k0:k1][None, :] > key_pos[q0:q1][:, None]] = -np.inf
            new_m = np.maximum(m, sb.max(axis=1))
            alpha = np.exp(m - new_m)
            pb = np.exp(sb - new_m[:, None])
            l = alpha * l + pb.sum(axis=1)
            acc *= alpha[:, None]
            acc += pb @ head.v[k0:k1]
            m = new_m
            touched += 1
        if not np.all(l > 0.0):
            raise InternalInvariantError(
                f"query block {qb} produced an empty softmax normalizer"
            )
        out[q0:q1] = acc / l[:, None]
    report = flop_accounting(mask, S, d)
    report.active_blocks = touched
    report.wall_time_sparse = time.perf_counter() - t0
    return out, report
