"""End-to-end composition: plan, sample, reduce, select, execute, measure.

The oracle half (full probability matrix, dense output, entry-level CRA)
only runs when requested and the sequence is short enough to afford an
S x S matrix; above the cap the report carries sampled-row CRA only and
says so.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .core import AttentionHead, HeadSet, dense_causal_attention, dense_probabilities
from .exceptions import InputError
from .executor import sparse_attention
from .filtering import BlockMask, select_and_merge
from .oracle import output_error
from .sampler import (
    SampledScores,
    SparseConfig,
    block_reduce,
    n_blocks,
    plan_chunks,
    sample_scores,
)

__all__ = ["HeadMetrics", "MetricsReport", "ORACLE_CAP", "run_pipeline"]

# Full-P oracle metrics need S^2 floats; refuse beyond this.
ORACLE_CAP = 8192


def _retained_by_block(
    probs: np.ndarray, rows: np.ndarray, mask: BlockMask, S: int
) -> np.ndarray:
    """Retained mass per probability row under a block mask.

    Works on causal rows (acausal entries exactly 0), so summing whole
    column blocks is exact even for the diagonal block.
    """
    bounds = np.arange(0, S, mask.blk)
    block_sums = np.add.reduceat(probs, bounds, axis=1)
    qb = rows // mask.blk
    return (block_sums * mask.active[qb]).sum(axis=1)


def _sampled_cra(samples: SampledScores, mask: BlockMask) -> tuple[float, float]:
    retained = np.concatenate(
        [
            _retained_by_block(c.probs, c.rows, mask, samples.S)
            for c in samples.chunks
        ]
    )
    return float(retained.min()), float(retained.mean())


@dataclass
class HeadMetrics:
    head_id: int
    cra_sampled_min: float
    cra_sampled_mean: float
    block_density: float
    sparsity_ratio: float
    active_blocks: int
    flop_ratio: float
    wall_time_sample: float
    wall_time_filter: float
    wall_time_sparse: float
    cra_full_min: float | None = None
    cra_full_mean: float | None = None
    output_error: float | None = None
    wall_time_dense: float | None = None


@dataclass
class MetricsReport:
    """Flat-serializable run summary: per-head rows plus aggregates.

    `masks` carries the merged block masks as artifacts; they are not part
    of the serialized document.
    """

    S: int
    d: int
    n_heads: int
    alpha_c: float
    alpha_s: float
    chunk_n: int
    effective_chunk_n: int
    blk: int
    oracle: bool
    heads: list[HeadMetrics]
    seed: int | None = None
    masks: tuple[BlockMask, ...] = field(default=(), repr=False)

    def to_flat_dict(self) -> dict:
        out = {
            "S": self.S,
            "d": self.d,
            "n_heads": self.n_heads,
            "alpha_c": self.alpha_c,
            "alpha_s": self.alpha_s,
            "chunk_n": self.chunk_n,
            "effective_chunk_n": self.effective_chunk_n,
            "blk": self.blk,
            "oracle": self.oracle,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        for h in self.heads:
            p = f"head_{h.head_id}_"
            out[p + "cra_sampled_min"] = h.cra_sampled_min
            out[p + "cra_sampled_mean"] = h.cra_sampled_mean
            out[p + "block_density"] = h.block_density
            out[p + "sparsity_ratio"] = h.sparsity_ratio
            out[p + "active_blocks"] = h.active_blocks
            out[p + "flop_ratio"] = h.flop_ratio
            out[p + "wall_time_sample"] = h.wall_time_sample
            out[p + "wall_time_filter"] = h.wall_time_filter
            out[p + "wall_time_sparse"] = h.wall_time_sparse
            if self.oracle:
                out[p + "cra_full_min"] = h.cra_full_min
                out[p + "cra_full_mean"] = h.cra_full_mean
                out[p + "output_error"] = h.output_error
                out[p + "wall_time_dense"] = h.wall_time_dense
        hs = self.heads
        out["cra_sampled_min"] = min(h.cra_sampled_min for h in hs)
        out["cra_sampled_mean"] = sum(h.cra_sampled_mean for h in hs) / len(hs)
        out["block_density_mean"] = sum(h.block_density for h in hs) / len(hs)
        out["sparsity_ratio_mean"] = sum(h.sparsity_ratio for h in hs) / len(hs)
        out["flop_ratio_mean"] = sum(h.flop_ratio for h in hs) / len(hs)
        out["wall_time_total"] = sum(
            h.wall_time_sample + h.wall_time_filter + h.wall_time_sparse for h in hs
        )
        if self.oracle:
            out["cra_full_min"] = min(h.cra_full_min for h in hs)
            out["cra_full_mean"] = sum(h.cra_full_mean for h in hs) / len(hs)
            out["output_error_max"] = max(h.output_error for h in hs)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_flat_dict(), sort_keys=True, indent=2) + "\n"


def run_pipeline(
    head_set: HeadSet,
    cfg: SparseConfig,
    want_oracle: bool = False,
    seed: int | None = None,
) -> MetricsReport:
    """Run the full sparse pipeline on every head and collect metrics.

    With `want_oracle`, also runs the dense reference and entry-level CRA
    per head (requires S <= ORACLE_CAP). Everything except wall times is a
    pure function of (head_set, cfg).
    """
    S, d = head_set.S, head_set.d
    if want_oracle and S > ORACLE_CAP:
        raise InputError(
            f"oracle metrics need S <= {ORACLE_CAP}, got {S}; run without --oracle"
        )
    plan = plan_chunks(S, cfg)
    head_rows: list[HeadMetrics] = []
    masks: list[BlockMask] = []
    for head in head_set:
        t0 = time.perf_counter()
        samples = sample_scores(head, plan)
        reduced = block_reduce(samples, cfg.blk)
        t1 = time.perf_counter()
        mask = select_and_merge(reduced, plan, cfg)
        t2 = time.perf_counter()
        o_sparse, flop = sparse_attention(head, mask)
        t3 = time.perf_counter()
        cra_s_min, cra_s_mean = _sampled_cra(samples, mask)
        total_causal = S * (S + 1) // 2
        hm = HeadMetrics(
            head_id=head.head_id,
            cra_sampled_min=cra_s_min,
            cra_sampled_mean=cra_s_mean,
            block_density=mask.block_density(),
            sparsity_ratio=1.0 - mask.active_causal_entries(S) / total_causal,
            active_blocks=flop.active_blocks,
            flop_ratio=flop.flop_ratio,
            wall_time_sample=t1 - t0,
            wall_time_filter=t2 - t1,
            wall_time_sparse=t3 - t2,
        )
        if want_oracle:
            t4 = time.perf_counter()
            o_dense = dense_causal_attention(head)
            hm.wall_time_dense = time.perf_counter() - t4
            hm.output_error = output_error(o_sparse, o_dense)
            p = dense_probabilities(head)
            retained = _retained_by_block(p, np.arange(S), mask, S)
            hm.cra_full_min = float(retained.min())
            hm.cra_full_mean = float(retained.mean())
            del p
        head_rows.append(hm)
        masks.append(mask)
    return MetricsReport(
        S=S,
        d=d,
        n_heads=len(head_set),
        alpha_c=cfg.alpha_c,
        alpha_s=cfg.alpha_s,
        chunk_n=cfg.chunk_n,
        effective_chunk_n=plan.chunk_n,
        blk=cfg.blk,
        oracle=want_oracle,
        heads=head_rows,
        seed=seed,
        masks=tuple(masks),
    )
