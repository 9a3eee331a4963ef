"""Ground-truth accuracy metrics for sparsity masks.

Retained mass is always measured on the original (pre-masking) probability
matrix, never on the renormalized sparse one: the question these metrics
answer is how much of the dense distribution a mask keeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ROW_BLOCK, as_matrix
from .exceptions import InputError

__all__ = [
    "AccuracyReport",
    "EntryMask",
    "cra_of_mask",
    "minimal_mass_fraction",
    "output_error",
    "retained_row_mass",
    "sparsity_ratio",
]


@dataclass(frozen=True)
class EntryMask:
    """Token-granular binary mask over a square causal attention grid.

    Acausal entries (j > i) are required to be inactive on construction.
    """

    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=bool)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise InputError(f"entry mask must be square, got shape {g.shape}")
        s = g.shape[0]
        for r0 in range(0, s, ROW_BLOCK):
            r1 = min(r0 + ROW_BLOCK, s)
            if (g[r0:r1] & (np.arange(s)[None, :] > np.arange(r0, r1)[:, None])).any():
                raise InputError("entry mask has active acausal entries")
        object.__setattr__(self, "grid", g)

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    @classmethod
    def full_causal(cls, s: int) -> "EntryMask":
        return cls(np.tril(np.ones((s, s), dtype=bool)))

    def active_entries(self) -> int:
        return int(self.grid.sum())


@dataclass(frozen=True)
class AccuracyReport:
    """Mask-quality summary: worst-row and mean retained mass, entry-level
    sparsity, and the relative output error against the dense reference."""

    cra: float
    mean_retained_mass: float
    sparsity_ratio: float
    max_row_rel_error: float

    def __post_init__(self):
        if self.cra > self.mean_retained_mass + 1e-12:
            raise InputError("cra (a minimum) cannot exceed the mean retained mass")


def _mask_grid(mask, p: np.ndarray) -> np.ndarray:
    grid = mask.grid if isinstance(mask, EntryMask) else np.asarray(mask, dtype=bool)
    if grid.shape != p.shape:
        raise InputError(f"mask shape {grid.shape} does not match p {p.shape}")
    return grid


def retained_row_mass(p: np.ndarray, mask) -> np.ndarray:
    """Per-query-row probability mass the mask keeps."""
    p = as_matrix(p, "p")
    grid = _mask_grid(mask, p)
    return np.where(grid, p, 0.0).sum(axis=1)


def cra_of_mask(p: np.ndarray, mask) -> float:
    """Minimum over query rows of retained probability mass.

    The minimum (not the mean) is the accuracy proxy: a single starved row
    is enough to lose whatever that query needed.
    """
    return float(retained_row_mass(p, mask).min())


def minimal_mass_fraction(p: np.ndarray, alpha: float) -> float:
    """Fraction of causal entries needed for every row to retain mass >= alpha.

    Rows are filtered independently, largest probabilities first (ties break
    toward the lower key index, which does not change the count). Returns
    total counted entries over total causal entries S(S+1)/2, so
    1 - minimal_mass_fraction(p, alpha) is the sparsity available at alpha.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    p = as_matrix(p, "p")
    s = p.shape[0]
    if p.shape[1] != s:
        raise InputError(f"p must be square, got {p.shape}")
    if alpha == 0.0:
        return 0.0
    counted = 0
    for r0 in range(0, s, ROW_BLOCK):
        r1 = min(r0 + ROW_BLOCK, s)
        # Acausal entries are exactly 0 and sort to the tail, so full-row
        # sorts are safe.
        srt = -np.sort(-p[r0:r1], axis=1)
        cum = np.cumsum(srt, axis=1)
        k = (cum < alpha).sum(axis=1) + 1
        counted += int(np.minimum(k, np.arange(r0, r1) + 1).sum())
    return counted / (s * (s + 1) // 2)


def sparsity_ratio(mask: EntryMask) -> float:
    """Fraction of causal entries the mask drops: 1 - active / (S(S+1)/2)."""
    if not isinstance(mask, EntryMask):
        mask = EntryMask(mask)
    s = mask.rows
    return 1.0 - mask.active_entries() / (s * (s + 1) // 2)


def output_error(o_sparse: np.ndarray, o_dense: np.ndarray) -> float:
    """Worst-row relative L2 error of a sparse output against the dense one."""
    o_sparse = as_matrix(o_sparse, "o_sparse")
    o_dense = as_matrix(o_dense, "o_dense")
    if o_sparse.shape != o_dense.shape:
        raise InputError(
            f"shape mismatch: {o_sparse.shape} vs {o_dense.shape}"
        )
    num = np.linalg.norm(o_sparse - o_dense, axis=1)
    den = np.maximum(np.linalg.norm(o_dense, axis=1), 1e-12)
    return float((num / den).max())
