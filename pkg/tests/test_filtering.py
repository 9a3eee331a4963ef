"""Minimal-quota selection, top-k extraction, and mask assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blocksift import (
    BlockMask,
    InputError,
    SparseConfig,
    arg_topk,
    block_reduce,
    find_k,
    merge_index,
    plan_chunks,
    sample_scores,
    select_and_merge,
)
from blocksift.filtering import ChunkSelection, SelectedIndices
from conftest import random_head


def oracle_min_k(scores, alpha):
    """Exhaustive reference: smallest k whose top-k sum clears the target,
    using the same descending cumulative arithmetic as the contract."""
    cum = np.cumsum(np.sort(np.asarray(scores, dtype=float))[::-1])
    target = alpha * cum[-1]
    if target <= 0:
        return 0
    for k in range(1, len(cum) + 1):
        if cum[k - 1] >= target:
            return k
    return len(cum)


nonneg_scores = st.lists(
    st.floats(0, 1e6, allow_nan=False, allow_infinity=False), min_size=1, max_size=64
)


class TestFindK:
    def test_hand_computation(self):
        assert find_k([0.5, 0.3, 0.2], 0.7) == 2

    def test_alpha_zero(self):
        assert find_k([3.0, 1.0], 0.0) == 0

    def test_alpha_one_counts_nonzeros(self):
        assert find_k([0.4, 0.0, 0.3, 0.0, 0.3], 1.0) == 3

    def test_zero_total(self):
        assert find_k([0.0, 0.0], 0.9) == 0

    def test_rejects_negative_scores(self):
        with pytest.raises(InputError):
            find_k([0.5, -0.1], 0.5)

    def test_rejects_bad_alpha(self):
        with pytest.raises(InputError):
            find_k([1.0], 1.01)

    @given(scores=nonneg_scores, alpha=st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_matches_exhaustive_oracle(self, scores, alpha):
        assert find_k(scores, alpha) == oracle_min_k(scores, alpha)

    @given(scores=nonneg_scores, a=st.floats(0, 1), b=st.floats(0, 1))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_alpha(self, scores, a, b):
        lo, hi = min(a, b), max(a, b)
        assert find_k(scores, lo) <= find_k(scores, hi)


class TestArgTopk:
    def test_hand_computation(self):
        assert arg_topk([0.1, 0.9, 0.5], 2) == (1, 2)

    def test_ties_break_toward_lower_index(self):
        assert arg_topk([0.5, 0.5, 0.5], 1) == (0,)
        assert arg_topk([0.5, 0.5, 0.5], 2) == (0, 1)

    def test_k_too_large(self):
        with pytest.raises(InputError):
            arg_topk([1.0, 2.0], 3)

    @given(
        scores=st.lists(st.floats(-100, 100), min_size=1, max_size=32),
        data=st.data(),
    )
    @settings(max_examples=100, deadline=None)
    def test_selected_total_matches_full_sort(self, scores, data):
        k = data.draw(st.integers(0, len(scores)))
        picked = arg_topk(scores, k)
        assert len(picked) == k
        top = np.sort(np.asarray(scores))[::-1][:k]
        np.testing.assert_allclose(
            np.sort(np.asarray(scores)[list(picked)])[::-1], top
        )

    @given(scores=nonneg_scores, data=st.data())
    @settings(max_examples=100, deadline=None)
    def test_nested_for_growing_k(self, scores, data):
        k = data.draw(st.integers(0, max(len(scores) - 1, 0)))
        assert set(arg_topk(scores, k)) <= set(arg_topk(scores, k + 1))


class TestMergeIndex:
    def test_worked_example(self):
        """Two chunks at S=8, blk=2: columns extend causally down the region,
        each slash offset block touches two key blocks, diagonal always kept."""
        plan = plan_chunks(8, SparseConfig(chunk_n=2, blk=2))
        selected = SelectedIndices(
            (
                ChunkSelection(i_c=(0,), i_s=(0,), k_c=1, k_s=1),
                ChunkSelection(i_c=(), i_s=(0, 1), k_c=0, k_s=2),
            )
        )
        mask = merge_index(selected, plan, 2, 8)
        assert set(mask.active_for(0)) == {0}
        assert set(mask.active_for(1)) == {0, 1}
        assert set(mask.active_for(2)) == {0, 1, 2}
        assert set(mask.active_for(3)) == {1, 2, 3}

    def test_slash_zero_alone_gives_local_band(self):
        plan = plan_chunks(16, SparseConfig(chunk_n=1, blk=2))
        selected = SelectedIndices(
            (ChunkSelection(i_c=(), i_s=(0,), k_c=0, k_s=1),)
        )
        mask = merge_index(selected, plan, 2, 16)
        for qb in range(8):
            assert set(mask.active_for(qb)) == ({qb - 1, qb} if qb else {qb})

    def test_everything_selected_gives_full_causal_mask(self):
        plan = plan_chunks(16, SparseConfig(chunk_n=2, blk=2))
        all_blocks = tuple(range(8))
        selected = SelectedIndices(
            tuple(
                ChunkSelection(all_blocks, all_blocks, 8, 8) for _ in plan.chunks
            )
        )
        mask = merge_index(selected, plan, 2, 16)
        assert mask.active_count() == mask.causal_count()

    def test_chunk_count_mismatch(self):
        plan = plan_chunks(8, SparseConfig(chunk_n=2, blk=2))
        with pytest.raises(InputError):
            merge_index(SelectedIndices(()), plan, 2, 8)


class TestBlockMask:
    def test_rejects_acausal_block(self):
        active = np.eye(3, dtype=bool)
        active[0, 2] = True
        with pytest.raises(InputError):
            BlockMask(4, active)

    def test_rejects_missing_diagonal(self):
        active = np.zeros((3, 3), dtype=bool)
        active[0, 0] = active[2, 2] = True
        with pytest.raises(InputError):
            BlockMask(4, active)

    def test_serialize_round_trip(self):
        active = np.tril(np.ones((4, 4), dtype=bool))
        active[3, 1] = False
        mask = BlockMask(8, active)
        text = mask.serialize()
        assert text.splitlines()[0] == "BLOCKMASK v1 4 4 8"
        back = BlockMask.deserialize(text)
        np.testing.assert_array_equal(back.active, mask.active)
        assert back.blk == 8
        assert back.serialize() == text

    def test_deserialize_rejects_garbage(self):
        with pytest.raises(InputError):
            BlockMask.deserialize("BLOCKMASK v2 1 1 8\n0\n")
        with pytest.raises(InputError):
            BlockMask.deserialize("BLOCKMASK v1 2 2 8\n0\n")  # missing a line
        with pytest.raises(InputError):
            BlockMask.deserialize("BLOCKMASK v1 1 1 8\n4\n")  # out of range


class TestSelectAndMerge:
    def test_full_retention_keeps_all_sampled_mass(self):
        head = random_head(3, 64, 8)
        cfg = SparseConfig(1.0, 1.0, chunk_n=2, blk=8)
        plan = plan_chunks(64, cfg)
        samples = sample_scores(head, plan)
        reduced = block_reduce(samples, cfg.blk)
        mask = select_and_merge(reduced, plan, cfg)
        # every block with nonzero sampled column mass is selected
        for sel, c in zip(mask.provenance.chunks, reduced.chunks):
            assert set(sel.i_c) == set(np.flatnonzero(c.col_scores > 0))
            assert set(sel.i_s) == set(np.flatnonzero(c.slash_scores > 0))
        # and the sampled rows retain all of their mass
        for s in samples.chunks:
            for r, q in enumerate(s.rows):
                cols = np.zeros(64, dtype=bool)
                for kb in mask.active_for(q // cfg.blk):
                    cols[kb * cfg.blk : (kb + 1) * cfg.blk] = True
                cols[q + 1 :] = False
                assert s.probs[r, cols].sum() == pytest.approx(1.0, abs=1e-9)

    def test_zero_thresholds_give_safety_band_only(self):
        head = random_head(4, 64, 8)
        cfg = SparseConfig(0.0, 0.0, chunk_n=2, blk=8)
        plan = plan_chunks(64, cfg)
        mask = select_and_merge(block_reduce(sample_scores(head, plan), 8), plan, cfg)
        np.testing.assert_array_equal(mask.active, np.eye(8, dtype=bool))

    def test_selection_guarantee_is_exact(self):
        """The selected set is the top-k multiset and its descending
        cumulative sum clears alpha * total, in the same arithmetic find_k
        used."""
        head = random_head(5, 256, 8)
        cfg = SparseConfig(0.9, 0.8, chunk_n=2, blk=32)
        plan = plan_chunks(256, cfg)
        reduced = block_reduce(sample_scores(head, plan), cfg.blk)
        mask = select_and_merge(reduced, plan, cfg)
        for sel, c in zip(mask.provenance.chunks, reduced.chunks):
            for idx, scores, alpha in (
                (sel.i_c, c.col_scores, cfg.alpha_c),
                (sel.i_s, c.slash_scores, cfg.alpha_s),
            ):
                srt = np.sort(scores)[::-1]
                cum = np.cumsum(srt)
                k = len(idx)
                np.testing.assert_array_equal(
                    np.sort(scores[list(idx)])[::-1], srt[:k]
                )
                assert cum[k - 1] >= alpha * cum[-1]
                if k > 1:
                    assert cum[k - 2] < alpha * cum[-1]

    def test_mask_monotone_in_thresholds(self):
        head = random_head(6, 128, 8)
        plan = plan_chunks(128, SparseConfig(chunk_n=2, blk=16))
        reduced = block_reduce(sample_scores(head, plan), 16)
        prev = None
        for alpha in (0.2, 0.5, 0.8, 0.95, 1.0):
            cfg = SparseConfig(alpha, alpha, chunk_n=2, blk=16)
            mask = select_and_merge(reduced, plan, cfg)
            if prev is not None:
                assert (prev.active <= mask.active).all()
            prev = mask

    def test_deterministic(self):
        head = random_head(7, 128, 8)
        cfg = SparseConfig(0.9, 0.9, chunk_n=2, blk=16)
        plan = plan_chunks(128, cfg)
        reduced = block_reduce(sample_scores(head, plan), 16)
        a = select_and_merge(reduced, plan, cfg)
        b = select_and_merge(reduced, plan, cfg)
        assert a.serialize() == b.serialize()
