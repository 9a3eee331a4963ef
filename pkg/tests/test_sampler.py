"""Chunk planning, sampling, and block reduction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blocksift import (
    InputError,
    SparseConfig,
    block_reduce,
    dense_probabilities,
    plan_chunks,
    sample_scores,
)
from blocksift.sampler import ChunkSample, SampledScores
from conftest import random_head


def brute_force_block_sums(probs, rows, blk, n_blocks):
    """Double-loop column/slash accumulation over sampled rows."""
    col = np.zeros(n_blocks)
    slash = np.zeros(n_blocks)
    for r, q in enumerate(rows):
        for j in range(probs.shape[1]):
            if j > q:
                continue
            col[j // blk] += probs[r, j]
            slash[(q - j) // blk] += probs[r, j]
    return col, slash


class TestSparseConfig:
    def test_defaults(self):
        cfg = SparseConfig()
        assert (cfg.alpha_c, cfg.alpha_s, cfg.chunk_n, cfg.blk) == (0.95, 0.95, 1, 128)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha_c": -0.1},
            {"alpha_s": 1.5},
            {"chunk_n": 0},
            {"blk": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(InputError):
            SparseConfig(**kwargs)


class TestPlanChunks:
    def test_hand_layout(self):
        plan = plan_chunks(8, SparseConfig(chunk_n=2, blk=2))
        assert plan.itv == 4
        assert [(c.sample_start, c.sample_end) for c in plan.chunks] == [(2, 4), (6, 8)]
        assert [(c.region_start, c.region_end) for c in plan.chunks] == [(0, 4), (4, 8)]

    def test_bottom_sampling_special_case(self):
        plan = plan_chunks(1024, SparseConfig(chunk_n=1, blk=128))
        assert len(plan.chunks) == 1
        c = plan.chunks[0]
        assert (c.sample_start, c.sample_end) == (896, 1024)
        assert (c.region_start, c.region_end) == (0, 1024)

    def test_clamps_when_segments_too_short(self):
        plan = plan_chunks(300, SparseConfig(chunk_n=4, blk=128))
        assert plan.chunk_n == 2 and plan.itv == 150
        assert [(c.sample_start, c.sample_end) for c in plan.chunks] == [
            (22, 150),
            (172, 300),
        ]

    def test_short_sequence_sampled_in_full(self):
        plan = plan_chunks(50, SparseConfig(chunk_n=3, blk=128))
        assert plan.chunk_n == 1
        assert [(c.sample_start, c.sample_end) for c in plan.chunks] == [(0, 50)]

    @given(
        S=st.integers(1, 5000),
        chunk_n=st.integers(1, 16),
        blk=st.integers(1, 512),
    )
    @settings(max_examples=200, deadline=None)
    def test_total_on_any_input(self, S, chunk_n, blk):
        plan = plan_chunks(S, SparseConfig(chunk_n=chunk_n, blk=blk))
        assert 1 <= plan.chunk_n <= chunk_n
        regions = [(c.region_start, c.region_end) for c in plan.chunks]
        # regions partition [0, S)
        assert regions[0][0] == 0 and regions[-1][1] == S
        for (a, b), (c, d) in zip(regions, regions[1:]):
            assert b == c and a < b
        for c in plan.chunks:
            assert c.region_start <= c.sample_start < c.sample_end <= c.region_end
            assert c.sample_end - c.sample_start == min(blk, S)


class TestSampleScores:
    def test_causal_support_counts(self):
        head = random_head(3, 4, 2)
        plan = plan_chunks(4, SparseConfig(chunk_n=1, blk=2))
        samples = sample_scores(head, plan)
        probs = samples.chunks[0].probs
        assert list(samples.chunks[0].rows) == [2, 3]
        assert (probs[0] > 0).sum() == 3
        assert (probs[1] > 0).sum() == 4

    def test_rows_match_dense_oracle(self):
        head = random_head(8, 96, 8)
        plan = plan_chunks(96, SparseConfig(chunk_n=3, blk=16))
        samples = sample_scores(head, plan)
        p = dense_probabilities(head)
        for c in samples.chunks:
            np.testing.assert_allclose(c.probs, p[c.rows], atol=1e-10)

    def test_long_context_sampling_ratio(self):
        plan = plan_chunks(65536, SparseConfig(chunk_n=2, blk=128))
        assert plan.sampled_rows() == 256
        assert plan.sampled_rows() / 65536 == pytest.approx(0.0039, abs=1e-4)

    def test_plan_head_mismatch(self):
        with pytest.raises(InputError):
            sample_scores(random_head(0, 8, 2), plan_chunks(16, SparseConfig()))


class TestBlockReduce:
    def test_single_row_hand_computation(self):
        probs = np.array([[0.1, 0.2, 0.3, 0.4]])
        samples = SampledScores(4, (ChunkSample(np.array([3]), probs),))
        reduced = block_reduce(samples, 2)
        np.testing.assert_allclose(reduced.chunks[0].col_scores, [0.3, 0.7])
        np.testing.assert_allclose(reduced.chunks[0].slash_scores, [0.7, 0.3])

    def test_conservation(self):
        head = random_head(5, 200, 8)
        plan = plan_chunks(200, SparseConfig(chunk_n=3, blk=32))
        reduced = block_reduce(sample_scores(head, plan), 32)
        for c, rng in zip(reduced.chunks, plan.chunks):
            n_rows = rng.sample_end - rng.sample_start
            assert c.col_scores.sum() == pytest.approx(n_rows, abs=1e-6)
            assert c.slash_scores.sum() == pytest.approx(n_rows, abs=1e-6)
            assert c.total_mass == pytest.approx(n_rows, abs=1e-6)
            assert (c.col_scores >= 0).all() and (c.slash_scores >= 0).all()

    def test_matches_brute_force_double_loop(self):
        head = random_head(11, 512, 16)
        plan = plan_chunks(512, SparseConfig(chunk_n=2, blk=64))
        samples = sample_scores(head, plan)
        reduced = block_reduce(samples, 64)
        for cs, rs in zip(reduced.chunks, samples.chunks):
            col, slash = brute_force_block_sums(rs.probs, rs.rows, 64, 8)
            np.testing.assert_allclose(cs.col_scores, col, atol=1e-12)
            np.testing.assert_allclose(cs.slash_scores, slash, atol=1e-12)

    def test_partial_trailing_block(self):
        head = random_head(13, 100, 4)
        plan = plan_chunks(100, SparseConfig(chunk_n=1, blk=32))
        reduced = block_reduce(sample_scores(head, plan), 32)
        assert len(reduced.chunks[0].col_scores) == 4  # 3 full + 1 of width 4
        assert reduced.chunks[0].col_scores.sum() == pytest.approx(32, abs=1e-6)
