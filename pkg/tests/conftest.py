import numpy as np

from blocksift import AttentionHead, BlockMask, HeadSet
from blocksift.sampler import n_blocks


def random_head(seed: int, S: int, d: int, scale: float = 1.0, head_id: int = 0) -> AttentionHead:
    rng = np.random.default_rng(seed)
    return AttentionHead(
        scale * rng.standard_normal((S, d)),
        scale * rng.standard_normal((S, d)),
        rng.standard_normal((S, d)),
        head_id=head_id,
    )


def random_head_set(seed: int, S: int, d: int, n_heads: int) -> HeadSet:
    return HeadSet(
        tuple(random_head(seed * 1000 + i, S, d, head_id=i) for i in range(n_heads))
    )


def full_block_mask(S: int, blk: int) -> BlockMask:
    nb = n_blocks(S, blk)
    return BlockMask(blk, np.tril(np.ones((nb, nb), dtype=bool)))


def random_block_mask(seed: int, S: int, blk: int, density: float = 0.4) -> BlockMask:
    """Random causal block pattern with the safety diagonal enforced."""
    rng = np.random.default_rng(seed)
    nb = n_blocks(S, blk)
    active = np.tril(rng.random((nb, nb)) < density)
    np.fill_diagonal(active, True)
    return BlockMask(blk, active)
