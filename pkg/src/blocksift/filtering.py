"""Stage two: minimal-quota block selection and mask assembly.

Per chunk and per direction, pick the minimal number of blocks whose
sampled mass reaches the threshold share of the chunk total, then extend
the chosen strips across the chunk's query region and union everything
into one block-level mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .oracle import EntryMask
from .sampler import ChunkPlan, ReducedScores, SparseConfig, n_blocks

__all__ = [
    "BlockMask",
    "ChunkSelection",
    "SelectedIndices",
    "arg_topk",
    "find_k",
    "merge_index",
    "select_and_merge",
]


def find_k(scores, alpha: float) -> int:
    """Minimal k such that the k largest scores sum to >= alpha * total.

    The comparison runs on the descending cumulative sum, with the total
    taken from the same cumulative sum, so the guarantee is exact in
    reproducible arithmetic. A zero total (or alpha == 0) needs no blocks.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InputError(f"scores must be a nonempty 1-D sequence, got shape {s.shape}")
    if (s < 0).any():
        raise InputError("scores must be nonnegative")
    cum = np.cumsum(np.sort(s)[::-1])
    target = alpha * cum[-1]
    if target <= 0.0:
        return 0
    return int(np.searchsorted(cum, target, side="left")) + 1


def arg_topk(scores, k: int) -> tuple[int, ...]:
    """Indices of the k largest scores, ascending; ties break toward the
    lower index, so the result is deterministic."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise InputError(f"scores must be 1-D, got shape {s.shape}")
    if not 0 <= k <= s.size:
        raise InputError(f"k={k} out of range for {s.size} scores")
    if k == 0:
        return ()
    order = np.argsort(-s, kind="stable")
    return tuple(sorted(int(i) for i in order[:k]))


@dataclass(frozen=True)
class ChunkSelection:
    """Block indices one chunk picked, per direction."""

    i_c: tuple[int, ...]
    i_s: tuple[int, ...]
    k_c: int
    k_s: int

    def __post_init__(self):
        if len(self.i_c) != self.k_c or len(self.i_s) != self.k_s:
            raise InputError("selection sizes disagree with k_c/k_s")


@dataclass(frozen=True)
class SelectedIndices:
    chunks: tuple[ChunkSelection, ...]


@dataclass(frozen=True)
class BlockMask:
    """Block-level sparsity pattern over the (query block x key block) grid.

    Invariants enforced on construction: active blocks satisfy kb <= qb
    (block-level causality) and every query block keeps its diagonal block,
    so sparse softmax rows always have support.
    """

    blk: int
    active: np.ndarray  # (n_qblocks, n_kblocks) bool
    provenance: SelectedIndices | None = None

    def __post_init__(self):
        a = np.asarray(self.active, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InputError(f"block grid must be square, got shape {a.shape}")
        if self.blk < 1:
            raise InputError(f"blk must be >= 1, got {self.blk}")
        nb = a.shape[0]
        if a[np.triu_indices(nb, 1)].any():
            raise InputError("block mask violates block-level causality (kb > qb)")
        if not a.diagonal().all():
            raise InputError("every query block must keep its diagonal block")
        object.__setattr__(self, "active", a)

    @property
    def n_qblocks(self) -> int:
        return self.active.shape[0]

    @property
    def n_kblocks(self) -> int:
        return self.active.shape[1]

    def active_count(self) -> int:
        return int(self.active.sum())

    def causal_count(self) -> int:
        nb = self.n_qblocks
        return nb * (nb + 1) // 2

    def block_density(self) -> float:
        return self.active_count() / self.causal_count()

    def active_for(self, qb: int) -> np.ndarray:
        """Ascending key-block indices active for query block qb."""
        return np.flatnonzero(self.active[qb])

    def to_entry_mask(self, S: int) -> EntryMask:
        """Expand to token granularity, applying causality inside blocks."""
        blk = self.blk
        if n_blocks(S, blk) != self.n_qblocks:
            raise InputError(
                f"mask has {self.n_qblocks} blocks of {blk}, cannot cover S={S}"
            )
        grid = np.zeros((S, S), dtype=bool)
        for qb in range(self.n_qblocks):
            q0, q1 = qb * blk, min((qb + 1) * blk, S)
            for kb in self.active_for(qb):
                k0, k1 = kb * blk, min((kb + 1) * blk, S)
                grid[q0:q1, k0:k1] = True
            grid[q0:q1] &= np.arange(S)[None, :] <= np.arange(q0, q1)[:, None]
        return EntryMask(grid)

    def active_causal_entries(self, S: int) -> int:
        """Exact count of token-level causal entries the mask keeps."""
        blk = self.blk
        if n_blocks(S, blk) != self.n_qblocks:
            raise InputError(
                f"mask has {self.n_qblocks} blocks of {blk}, cannot cover S={S}"
            )
        total = 0
        for qb in range(self.n_qblocks):
            q0, q1 = qb * blk, min((qb + 1) * blk, S)
            m = q1 - q0
            for kb in self.active_for(qb):
                if kb == qb:
                    total += m * (m + 1) // 2
                else:
                    total += m * (min((kb + 1) * blk, S) - kb * blk)
        return total

    def serialize(self) -> str:
        """Compact text form: a header line, then one line of ascending
        active key blocks per query block."""
        lines = [f"BLOCKMASK v1 {self.n_qblocks} {self.n_kblocks} {self.blk}"]
        for qb in range(self.n_qblocks):
            lines.append(" ".join(str(int(kb)) for kb in self.active_for(qb)))
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "BlockMask":
        lines = text.splitlines()
        if not lines:
            raise InputError("empty block mask document")
        head = lines[0].split()
        if len(head) != 5 or head[0] != "BLOCKMASK" or head[1] != "v1":
            raise InputError(f"bad block mask header: {lines[0]!r}")
        try:
            nq, nk, blk = int(head[2]), int(head[3]), int(head[4])
        except ValueError as e:
            raise InputError(f"bad block mask header: {lines[0]!r}") from e
        if len(lines) < nq + 1:
            raise InputError(f"expected {nq} query block lines, got {len(lines) - 1}")
        active = np.zeros((nq, nk), dtype=bool)
        for qb in range(nq):
            for tok in lines[1 + qb].split():
                kb = int(tok)
                if not 0 <= kb < nk:
                    raise InputError(f"key block {kb} out of range on line {qb + 2}")
                active[qb, kb] = True
        return cls(blk, active)


def merge_index(
    selected: SelectedIndices, plan: ChunkPlan, blk: int, S: int
) -> BlockMask:
    """Extend per-chunk picks across their query regions and union them.

    A column block kb covers every query block qb >= kb in the chunk's
    region. A slash offset block ob can thread through exactly two key
    blocks of a given query block, {qb - ob - 1, qb - ob}; both are kept
    (a conservative superset, since block-aligned masks cannot split a
    band on the diagonal). The diagonal block is always kept so no query
    row is left without support. Query blocks straddling two regions take
    the union of both chunks' picks.
    """
    if len(selected.chunks) != len(plan.chunks):
        raise InputError(
            f"{len(selected.chunks)} selections for {len(plan.chunks)} chunks"
        )
    nb = n_blocks(S, blk)
    active = np.zeros((nb, nb), dtype=bool)
    for sel, rng in zip(selected.chunks, plan.chunks):
        qb_lo = rng.region_start // blk
        qb_hi = (rng.region_end - 1) // blk
        for qb in range(qb_lo, qb_hi + 1):
            for kb in sel.i_c:
                if kb <= qb:
                    active[qb, kb] = True
            for ob in sel.i_s:
                for kb in (qb - ob - 1, qb - ob):
                    if 0 <= kb <= qb:
                        active[qb, kb] = True
            active[qb, qb] = True
    np.fill_diagonal(active, True)  # rows outside every region still need support
    return BlockMask(blk, active, provenance=selected)


def select_and_merge(
    reduced: ReducedScores, plan: ChunkPlan, cfg: SparseConfig
) -> BlockMask:
    """Run find_k + arg_topk per direction per chunk, then merge.

    Thresholding the two directions independently keeps the search linear
    in the number of blocks instead of quadratic over column-slash
    combinations.
    """
    if len(reduced.chunks) != len(plan.chunks):
        raise InputError("reduced scores and plan disagree on chunk count")
    sels = []
    for c in reduced.chunks:
        k_c = find_k(c.col_scores, cfg.alpha_c)
        k_s = find_k(c.slash_scores, cfg.alpha_s)
        sels.append(
            ChunkSelection(
                i_c=arg_topk(c.col_scores, k_c),
                i_s=arg_topk(c.slash_scores, k_s),
                k_c=k_c,
                k_s=k_s,
            )
        )
    return merge_index(SelectedIndices(tuple(sels)), plan, reduced.blk, reduced.S)
