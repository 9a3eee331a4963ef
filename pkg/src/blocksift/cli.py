"""Command-line front end: run, tune, sparsity, bench.

Synthetic-spec and grid files are flat JSON key/value documents whose keys
match the SyntheticSpec / TuneGrid fields. Metrics land on stdout (or at
--out) as flat JSON. Exit codes: 0 success, 1 input error, 2 infeasible
tuning, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback

import numpy as np

from .core import dense_causal_attention, dense_probabilities
from .exceptions import InfeasibleGridError, InputError, InternalInvariantError
from .heatmap import export_heatmap
from .oracle import minimal_mass_fraction
from .pipeline import ORACLE_CAP, run_pipeline
from .sampler import SparseConfig
from .synth import SyntheticSpec, generate_synthetic
from .tensor_io import load_tensors
from .tuning import TuneGrid, require_feasible, tune


def _load_kv(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a JSON object of key/value pairs")
    return doc


def _spec_from_file(path, length: int | None = None) -> SyntheticSpec:
    doc = _load_kv(path)
    allowed = {"S", "d", "n_heads", "sink_columns", "slash_offsets", "noise_scale", "seed"}
    unknown = set(doc) - allowed
    if unknown:
        raise InputError(f"{path}: unknown spec keys {sorted(unknown)}")
    if "S" not in doc or "d" not in doc:
        raise InputError(f"{path}: spec needs at least S and d")
    try:
        spec = SyntheticSpec(
            S=int(doc["S"]),
            d=int(doc["d"]),
            n_heads=int(doc.get("n_heads", 1)),
            sink_columns=tuple((int(p), float(m)) for p, m in doc.get("sink_columns", [])),
            slash_offsets=tuple((int(o), float(m)) for o, m in doc.get("slash_offsets", [])),
            noise_scale=float(doc.get("noise_scale", 1.0)),
            seed=int(doc.get("seed", 0)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"{path}: malformed spec value ({e})") from e
    if length is not None and length != spec.S:
        from .tuning import _scaled_spec

        spec = _scaled_spec(spec, length, spec.seed)
    return spec


def _emit(doc: dict, out_path) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args) -> int:
    if bool(args.input) == bool(args.synthetic):
        raise InputError("run needs exactly one of --input or --synthetic")
    seed = None
    if args.input:
        head_set = load_tensors(args.input)
    else:
        spec = _spec_from_file(args.synthetic)
        head_set = generate_synthetic(spec)
        seed = spec.seed
    cfg = SparseConfig(args.alpha_c, args.alpha_s, args.chunks, args.block)
    report = run_pipeline(head_set, cfg, want_oracle=args.oracle, seed=seed)
    if args.mask:
        with open(args.mask, "w", encoding="utf-8") as f:
            f.write(report.masks[0].serialize())
    if args.heatmap:
        export_heatmap(report.masks[0], args.heatmap)
    _emit(report.to_flat_dict(), args.out)
    return 0


def _parse_lengths(text: str) -> list[int]:
    try:
        lengths = [int(x) for x in text.split(",") if x]
    except ValueError as e:
        raise InputError(f"bad --lengths value {text!r}") from e
    if not lengths or any(l < 1 for l in lengths):
        raise InputError(f"bad --lengths value {text!r}")
    return lengths


def _cmd_tune(args) -> int:
    doc = _load_kv(args.grid)
    allowed = {"alphas_c", "alphas_s", "chunk_ns", "recall_target", "trials_per_cell", "spec"}
    unknown = set(doc) - allowed
    if unknown:
        raise InputError(f"{args.grid}: unknown grid keys {sorted(unknown)}")
    for key in ("alphas_c", "alphas_s", "chunk_ns", "spec"):
        if key not in doc:
            raise InputError(f"{args.grid}: missing grid key {key!r}")
    lengths = _parse_lengths(args.lengths)
    grid = TuneGrid(
        alphas_c=tuple(doc["alphas_c"]),
        alphas_s=tuple(doc["alphas_s"]),
        chunk_ns=tuple(doc["chunk_ns"]),
        length_ranges=tuple((l, l) for l in lengths),
        recall_target=args.recall_target
        if args.recall_target is not None
        else float(doc.get("recall_target", 0.9)),
        trials_per_cell=args.trials
        if args.trials is not None
        else int(doc.get("trials_per_cell", 3)),
    )
    template = _spec_from_file(doc["spec"])
    result = tune(grid, template)
    _emit(result.to_json_dict(), args.out)
    require_feasible(result)
    return 0


def _cmd_sparsity(args) -> int:
    lengths = _parse_lengths(args.lengths)
    if max(lengths) > ORACLE_CAP:
        raise InputError(
            f"row-wise mass analysis needs the full probability matrix; "
            f"lengths above {ORACLE_CAP} are not supported"
        )
    out = {"alpha": args.alpha}
    for length in lengths:
        spec = _spec_from_file(args.synthetic, length=length)
        head_set = generate_synthetic(spec)
        fracs = [minimal_mass_fraction(dense_probabilities(h), args.alpha) for h in head_set]
        frac = float(np.mean(fracs))
        out[f"length_{length}_mass_fraction"] = frac
        out[f"length_{length}_sparsity"] = 1.0 - frac
    _emit(out, args.out)
    return 0


def _cmd_bench(args) -> int:
    spec = _spec_from_file(args.synthetic)
    tuned = _load_kv(args.config)
    if "ranges" not in tuned:
        raise InputError(f"{args.config}: not a tuning result (no 'ranges')")
    cfg = None
    for r in tuned["ranges"]:
        if r.get("best") and r["lo"] <= spec.S <= r["hi"]:
            b = r["best"]
            cfg = SparseConfig(b["alpha_c"], b["alpha_s"], b["chunk_n"])
            break
    if cfg is None:
        raise InputError(
            f"{args.config}: no feasible tuned range covers S={spec.S}"
        )
    head_set = generate_synthetic(spec)
    best_sparse, best_dense = float("inf"), float("inf")
    report = None
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        report = run_pipeline(head_set, cfg)
        best_sparse = min(best_sparse, time.perf_counter() - t0)
        t0 = time.perf_counter()
        for head in head_set:
            dense_causal_attention(head)
        best_dense = min(best_dense, time.perf_counter() - t0)
    flat = report.to_flat_dict()
    out = {
        "S": spec.S,
        "d": spec.d,
        "n_heads": spec.n_heads,
        "alpha_c": cfg.alpha_c,
        "alpha_s": cfg.alpha_s,
        "chunk_n": cfg.chunk_n,
        "repeat": args.repeat,
        "wall_time_sparse_best": best_sparse,
        "wall_time_dense_best": best_dense,
        "speedup": best_dense / best_sparse,
        "flop_ratio_mean": flat["flop_ratio_mean"],
        "block_density_mean": flat["block_density_mean"],
    }
    _emit(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blocksift",
        description="Adaptive block-sparse causal attention pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the sparse pipeline on one input")
    p.add_argument("--input", help="QKV tensor file")
    p.add_argument("--synthetic", help="synthetic spec file (flat JSON)")
    p.add_argument("--alpha-c", type=float, default=0.95, dest="alpha_c")
    p.add_argument("--alpha-s", type=float, default=0.95, dest="alpha_s")
    p.add_argument("--chunks", type=int, default=1)
    p.add_argument("--block", type=int, default=128)
    p.add_argument("--oracle", action="store_true", help="also run dense reference metrics")
    p.add_argument("--out", help="metrics JSON path (default stdout)")
    p.add_argument("--heatmap", help="write head 0's block mask as a PGM image")
    p.add_argument("--mask", help="write head 0's block mask as text")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("tune", help="offline grid search per length range")
    p.add_argument("--grid", required=True, help="grid file (flat JSON)")
    p.add_argument("--recall-target", type=float, default=None, dest="recall_target")
    p.add_argument("--lengths", required=True, help="comma-separated lengths")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", help="tuned JSON path (default stdout)")
    p.set_defaults(fn=_cmd_tune)

    p = sub.add_parser("sparsity", help="row-wise minimal mass fraction per length")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--lengths", required=True)
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(fn=_cmd_sparsity)

    p = sub.add_parser("bench", help="dense vs sparse wall time with a tuned config")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--config", required=True, help="tuned JSON from `tune`")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InternalInvariantError as e:
        print(f"internal invariant violation: {e}", file=sys.stderr)
        return 3
    except InfeasibleGridError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 2
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
