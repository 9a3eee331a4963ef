"""Adaptive block-sparse causal attention.

Estimates per-head attention mass from a few exactly-scored query chunks,
selects the minimal set of column and diagonal-band block strips whose
sampled mass clears configurable thresholds, executes block-sparse causal
attention with streaming softmax, and measures everything against dense
references.
"""

from .core import (
    AttentionHead,
    HeadSet,
    causal_row_softmax,
    dense_causal_attention,
    dense_probabilities,
    scaled_scores,
)
from .exceptions import (
    GeneratorError,
    InfeasibleGridError,
    InputError,
    InternalInvariantError,
)
from .executor import FlopReport, flop_accounting, masked_dense_attention, sparse_attention
from .filtering import (
    BlockMask,
    ChunkSelection,
    SelectedIndices,
    arg_topk,
    find_k,
    merge_index,
    select_and_merge,
)
from .heatmap import export_heatmap, read_pgm
from .oracle import (
    AccuracyReport,
    EntryMask,
    cra_of_mask,
    minimal_mass_fraction,
    output_error,
    retained_row_mass,
    sparsity_ratio,
)
from .pipeline import ORACLE_CAP, MetricsReport, run_pipeline
from .sampler import (
    ChunkPlan,
    ReducedScores,
    SampledScores,
    SparseConfig,
    block_reduce,
    plan_chunks,
    sample_scores,
)
from .synth import SyntheticSpec, generate_synthetic
from .tensor_io import load_tensors, save_tensors
from .tuning import TuneGrid, TuneResult, tune

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "AttentionHead",
    "BlockMask",
    "ChunkPlan",
    "ChunkSelection",
    "EntryMask",
    "FlopReport",
    "GeneratorError",
    "HeadSet",
    "InfeasibleGridError",
    "InputError",
    "InternalInvariantError",
    "MetricsReport",
    "ORACLE_CAP",
    "ReducedScores",
    "SampledScores",
    "SelectedIndices",
    "SparseConfig",
    "SyntheticSpec",
    "TuneGrid",
    "TuneResult",
    "arg_topk",
    "block_reduce",
    "causal_row_softmax",
    "cra_of_mask",
    "dense_causal_attention",
    "dense_probabilities",
    "export_heatmap",
    "find_k",
    "flop_accounting",
    "generate_synthetic",
    "load_tensors",
    "masked_dense_attention",
    "merge_index",
    "minimal_mass_fraction",
    "output_error",
    "plan_chunks",
    "read_pgm",
    "retained_row_mass",
    "run_pipeline",
    "sample_scores",
    "save_tensors",
    "scaled_scores",
    "select_and_merge",
    "sparse_attention",
    "sparsity_ratio",
    "tune",
]
