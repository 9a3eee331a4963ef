"""Stage one: chunked query sampling and block-granular score reduction.

Queries are split into equal chunks and the last `blk` rows of each chunk
are scored exactly against all keys. The resulting probability rows are
accumulated per key-column block and per diagonal-offset (slash) block;
those block scores are all stage two ever sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttentionHead, causal_row_softmax, scaled_scores
from .exceptions import InputError

__all__ = [
    "ChunkPlan",
    "ChunkSample",
    "ChunkScores",
    "ReducedScores",
    "SampledRange",
    "SampledScores",
    "SparseConfig",
    "block_reduce",
    "n_blocks",
    "plan_chunks",
    "sample_scores",
]


def n_blocks(s: int, blk: int) -> int:
    """Number of blocks covering s positions; the trailing one may be narrower."""
    return -(-s // blk)


@dataclass(frozen=True)
class SparseConfig:
    """Tunable knobs: retained-mass thresholds per direction, the number of
    sampling chunks, and the block size."""

    alpha_c: float = 0.95
    alpha_s: float = 0.95
    chunk_n: int = 1
    blk: int = 128

    def __post_init__(self):
        if not 0.0 <= self.alpha_c <= 1.0:
            raise InputError(f"alpha_c must be in [0, 1], got {self.alpha_c}")
        if not 0.0 <= self.alpha_s <= 1.0:
            raise InputError(f"alpha_s must be in [0, 1], got {self.alpha_s}")
        if self.chunk_n < 1:
            raise InputError(f"chunk_n must be >= 1, got {self.chunk_n}")
        if self.blk < 1:
            raise InputError(f"blk must be >= 1, got {self.blk}")


@dataclass(frozen=True)
class SampledRange:
    """One chunk: the sampled query rows and the region of rows it governs."""

    sample_start: int
    sample_end: int
    region_start: int
    region_end: int


@dataclass(frozen=True)
class ChunkPlan:
    """Where each chunk samples and which query rows it is responsible for.

    `chunk_n` is the effective chunk count after clamping; the requested
    value is kept for reporting.
    """

    S: int
    blk: int
    requested_chunk_n: int
    chunk_n: int
    itv: int
    chunks: tuple[SampledRange, ...]

    def sampled_rows(self) -> int:
        return sum(c.sample_end - c.sample_start for c in self.chunks)


def plan_chunks(S: int, cfg: SparseConfig) -> ChunkPlan:
    """Lay out sampled ranges: the last `blk` rows of each of `chunk_n`
    equal query segments.

    Degenerate configurations clamp instead of failing: segments must be at
    least `blk` rows tall, so chunk_n drops to floor(S / blk) when needed,
    and a sequence shorter than one block is sampled in full.
    """
    if S < 1:
        raise InputError(f"S must be >= 1, got {S}")
    blk = cfg.blk
    if S < blk:
        chunk_n, itv = 1, S
    else:
        chunk_n = cfg.chunk_n
        itv = S // chunk_n
        if itv < blk:
            chunk_n = max(1, S // blk)
            itv = S // chunk_n
    chunks = []
    for i in range(1, chunk_n + 1):
        hi = i * itv
        chunks.append(
            SampledRange(
                sample_start=max(0, hi - blk),
                sample_end=hi,
                region_start=(i - 1) * itv,
                region_end=S if i == chunk_n else hi,
            )
        )
    return ChunkPlan(S, blk, cfg.chunk_n, chunk_n, itv, tuple(chunks))


@dataclass(frozen=True)
class ChunkSample:
    """Exact probability rows for one chunk's sampled queries."""

    rows: np.ndarray  # global query indices, shape (n_rows,)
    probs: np.ndarray  # (n_rows, S) causal softmax rows


@dataclass(frozen=True)
class SampledScores:
    S: int
    chunks: tuple[ChunkSample, ...]


def sample_scores(head: AttentionHead, plan: ChunkPlan) -> SampledScores:
    """Score each chunk's sampled query slice against all keys.

    The sampled rows are exact rows of the dense probability matrix; the
    only approximation in stage one is the row subset itself. Peak memory
    is one blk x S slice at a time.
    """
    if plan.S != head.S:
        raise InputError(f"plan built for S={plan.S}, head has S={head.S}")
    out = []
    for c in plan.chunks:
        rows = np.arange(c.sample_start, c.sample_end)
        scores = scaled_scores(head.q[c.sample_start : c.sample_end], head.k, head.d)
        out.append(ChunkSample(rows, causal_row_softmax(scores, rows)))
    return SampledScores(head.S, tuple(out))


@dataclass(frozen=True)
class ChunkScores:
    """Block-granular mass totals for one chunk, per direction."""

    col_scores: np.ndarray  # (n_blocks,) mass per key-column block
    slash_scores: np.ndarray  # (n_blocks,) mass per query-minus-key offset block
    total_mass: float


@dataclass(frozen=True)
class ReducedScores:
    S: int
    blk: int
    chunks: tuple[ChunkScores, ...]


def block_reduce(samples: SampledScores, blk: int) -> ReducedScores:
    """Accumulate sampled probability mass per column block and per slash block.

    A slash is a constant query-minus-key offset; offset 0 is the main
    diagonal (the local window). Every causal entry lands in exactly one
    block of each direction, so both directions total the same mass.
    Partial trailing blocks are real, narrower blocks.
    """
    if blk < 1:
        raise InputError(f"blk must be >= 1, got {blk}")
    S = samples.S
    nb = n_blocks(S, blk)
    col_bounds = np.arange(0, S, blk)
    key = np.arange(S)
    chunks = []
    for c in samples.chunks:
        col = np.add.reduceat(c.probs.sum(axis=0), col_bounds)
        offs = (c.rows[:, None] - key[None, :]) // blk
        # Acausal entries carry probability exactly 0; route them to block 0
        # where they contribute nothing.
        np.clip(offs, 0, nb - 1, out=offs)
        slash = np.bincount(offs.ravel(), weights=c.probs.ravel(), minlength=nb)
        chunks.append(ChunkScores(col, slash, float(c.probs.sum())))
    return ReducedScores(S, blk, tuple(chunks))
