"""Seeded generators for composed column / diagonal-band attention patterns.

Patterns are planted by construction in reserved head dimensions and then
calibrated against exact probability measurements until each planted
structure carries its target share of attention mass. Column patterns use
one reserved dimension per sink (a key spike against a constant query
component). The offset-0 band (the local window) uses two staggered grids
of position buckets: queries and keys sharing a bucket get a fixed logit
boost, which yields an exact staircase band of one bucket width with zero
leakage anywhere else, at the cost of one dimension per bucket. Bands at
other offsets give every position a slowly varying random topic vector
and shift the key side by the offset, so queries and keys correlate
exactly when their distance matches: the logit bump follows the process
autocorrelation, a Gaussian in query-minus-key offset, and the off-band
residue is zero-mean local texture rather than coherent stripes (its
worst pockets reach a few logits, so nonzero-offset bands suit
selection-level work better than worst-row guarantees).

Band mass is measured with background subtraction: the mass inside the
band's offset window minus the mass of an equally wide control window at a
pattern-free offset, averaged over rows where both windows are fully in
causal range and free of planted sinks. Without the control, short rows
would put most of their mass inside any window and small targets would be
unreachable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import ROW_BLOCK, AttentionHead, HeadSet, causal_row_softmax, scaled_scores
from .exceptions import GeneratorError, InputError

__all__ = ["SyntheticSpec", "band_mass_profile", "generate_synthetic"]

# Topic dimensions per nonzero-offset band: more dims smooth the along-band
# amplitude jitter (~1/sqrt(dims)) at the cost of reserved head dimensions.
_BAND_DIMS = 16
_MAX_ITERS = 20
# Calibration drives targets within ~10% before the +-20% final check.
_INNER_LOG_TOL = math.log(1.10)
_FINAL_REL_TOL = 0.20


def _band_sigma(S: int) -> int:
    """Gaussian half-width (in offsets) of nonzero-offset bands at length S."""
    return min(12, max(2, S // 32))


def _sink_margin(S: int) -> int:
    """Rows this close past a sink are excluded from its mass measurement:
    right at the sink the column briefly dominates tiny supports, and that
    near-field spike would skew the mean."""
    return min(64, max(1, S // 8))


def _bucket_dims(S: int, w: int) -> int:
    return -(-S // w) - (-(S + w // 2) // w)


def _window_width(spec: "SyntheticSpec") -> int:
    """Bucket width of the offset-0 staircase window.

    Starts at one block (capped by S/8) and doubles until the window's
    one-dimension-per-bucket cost fits the head dimension next to the other
    reserved dims; d is simply too small when nothing fits.
    """
    S = spec.S
    other = len(spec.sink_columns) + sum(
        _BAND_DIMS for off, _ in spec.slash_offsets if off != 0
    )
    w = min(128, max(16, S // 8))
    while w <= 4 * S and other + _bucket_dims(S, w) + 1 > spec.d:
        w *= 2
    return w


def _band_halfwidth(spec: "SyntheticSpec", off: int) -> int:
    if off == 0:
        return _window_width(spec) - 1
    return 4 * _band_sigma(spec.S)


def _measure_unit(spec: "SyntheticSpec") -> int:
    """One measurement half-width shared by all of a spec's bands."""
    return max(
        (_band_halfwidth(spec, off) for off, _ in spec.slash_offsets), default=0
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic head set.

    `sink_columns` plants (key position, target mass fraction) column
    patterns; `slash_offsets` plants (query-minus-key offset, target mass
    fraction) diagonal bands; everything else is seeded noise whose logit
    spread is `noise_scale`.
    """

    S: int
    d: int
    n_heads: int = 1
    sink_columns: tuple[tuple[int, float], ...] = ()
    slash_offsets: tuple[tuple[int, float], ...] = ()
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "sink_columns", tuple((int(p), float(m)) for p, m in self.sink_columns)
        )
        object.__setattr__(
            self, "slash_offsets", tuple((int(o), float(m)) for o, m in self.slash_offsets)
        )
        if self.S < 1 or self.d < 1 or self.n_heads < 1:
            raise InputError("S, d and n_heads must all be >= 1")
        if self.noise_scale <= 0:
            raise InputError(f"noise_scale must be > 0, got {self.noise_scale}")
        total = 0.0
        positions = set()
        margin = _sink_margin(self.S)
        for pos, mass in self.sink_columns:
            if not 0 <= pos < self.S:
                raise InputError(f"sink position {pos} outside [0, {self.S})")
            if pos + margin >= self.S:
                raise InputError(
                    f"sink position {pos} leaves no measurement rows at S={self.S} "
                    f"(needs position <= {self.S - margin - 1})"
                )
            if pos in positions:
                raise InputError(f"duplicate sink position {pos}")
            positions.add(pos)
            if mass <= 0:
                raise InputError(f"sink mass must be > 0, got {mass}")
            total += mass
        unit = _measure_unit(self)
        offsets = []
        for off, mass in self.slash_offsets:
            if not 0 <= off < self.S:
                raise InputError(f"slash offset {off} outside [0, {self.S})")
            if mass <= 0:
                raise InputError(f"slash mass must be > 0, got {mass}")
            for other in offsets:
                if abs(off - other) <= 2 * unit:
                    raise InputError(
                        f"slash offsets {other} and {off} are closer than the "
                        f"{2 * unit + 1} offsets calibration needs to separate them"
                    )
            offsets.append(off)
            total += mass
        if total > 1.0:
            raise InputError(f"planted mass fractions sum to {total:.3f} > 1")
        reserved = self.reserved_dims()
        if reserved >= self.d:
            raise InputError(
                f"{reserved} reserved pattern dimensions need d > {reserved}, got d={self.d}"
            )

    def reserved_dims(self) -> int:
        return len(self.sink_columns) + sum(
            _bucket_dims(self.S, _window_width(self)) if off == 0 else _BAND_DIMS
            for off, _ in self.slash_offsets
        )


def _smooth_process(rng: np.random.Generator, length: int, dims: int, sigma: int) -> np.ndarray:
    """Unit-variance random process with Gaussian autocorrelation
    exp(-delta^2 / (4 sigma^2)), one independent column per dim."""
    radius = 4 * sigma
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x**2) / (2.0 * sigma**2))
    kernel /= math.sqrt((kernel**2).sum())
    white = rng.standard_normal((length, dims))
    return np.column_stack(
        [np.convolve(white[:, a], kernel, mode="same") for a in range(dims)]
    )


class _HeadBuilder:
    """Assembles one head's Q/K from fixed noise plus adjustable patterns."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        self.spec = spec
        S, d = spec.S, spec.d
        noise_dims = d - spec.reserved_dims()
        # Noise lives on the unreserved dims; scale so the noise logit
        # spread equals noise_scale regardless of how many dims remain.
        entry_scale = math.sqrt(spec.noise_scale) * (d / noise_dims) ** 0.25
        self.base_q = entry_scale * rng.standard_normal((S, d))
        self.base_k = entry_scale * rng.standard_normal((S, d))
        self.v = rng.standard_normal((S, d))
        sigma = _band_sigma(S)
        self.band_topics = [
            None if off == 0 else _smooth_process(rng, S + off, _BAND_DIMS, sigma)
            for off, _ in spec.slash_offsets
        ]

    def build(self, sink_shift: np.ndarray, band_amp: np.ndarray):
        spec = self.spec
        S, d = spec.S, spec.d
        q = self.base_q.copy()
        k = self.base_k.copy()
        rd = math.sqrt(d)
        pos = np.arange(S)
        slot = 0
        for i, (p, _) in enumerate(spec.sink_columns):
            q[:, slot] = 1.0
            k[:, slot] = 0.0
            k[p, slot] = sink_shift[i] * rd
            slot += 1
        for b, (off, _) in enumerate(spec.slash_offsets):
            amp = max(band_amp[b], 1e-9)
            if off == 0:
                # staircase window: a shared one-hot bucket id per grid adds
                # amp/2 whenever query and key fall in the same bucket
                w = _window_width(spec)
                s = math.sqrt(amp * rd / 2.0)
                n1 = -(-S // w)
                n2 = -(-(S + w // 2) // w)
                q[:, slot : slot + n1 + n2] = 0.0
                k[:, slot : slot + n1 + n2] = 0.0
                q[pos, slot + pos // w] = s
                k[pos, slot + pos // w] = s
                shifted = slot + n1 + (pos + w // 2) // w
                q[pos, shifted] = s
                k[pos, shifted] = s
                slot += n1 + n2
            else:
                beta = math.sqrt(amp * rd / _BAND_DIMS)
                topics = self.band_topics[b]
                q[:, slot : slot + _BAND_DIMS] = beta * topics[:S]
                k[:, slot : slot + _BAND_DIMS] = beta * topics[off : off + S]
                slot += _BAND_DIMS
        return q, k


def _control_offsets(spec: SyntheticSpec) -> list[int]:
    """A pattern-free control offset per band, for background subtraction."""
    S = spec.S
    unit = _measure_unit(spec)
    stride = 2 * unit + 1
    taken = [o for o, _ in spec.slash_offsets]
    controls = []
    for off, _ in spec.slash_offsets:
        ctrl = None
        cand = off + stride
        while cand + unit < S:
            if all(abs(cand - o) > 2 * unit for o in taken):
                ctrl = cand
                break
            cand += stride
        if ctrl is None:
            cand = off - stride
            while cand - unit >= 0:
                if all(abs(cand - o) > 2 * unit for o in taken):
                    ctrl = cand
                    break
                cand -= stride
        if ctrl is None:
            raise GeneratorError(
                f"no pattern-free control window for slash offset {off} at S={S}; "
                f"use a longer sequence or fewer bands"
            )
        taken.append(ctrl)
        controls.append(ctrl)
    return controls


def _band_rows(
    spec: SyntheticSpec, rows: np.ndarray, off: int, ctrl: int, unit: int
) -> np.ndarray:
    """Rows where both the band window and its control are measurable."""
    el = rows >= max(off, ctrl) + unit
    for p, _ in spec.sink_columns:
        for center in (off, ctrl):
            el &= ~((rows >= p + center - unit) & (rows <= p + center + unit))
    return el


def _window_mass(cs: np.ndarray, local_rows: np.ndarray, rr: np.ndarray, center: int, w: int):
    lo = rr - center - w
    hi = np.minimum(rr - center + w, rr)
    return cs[local_rows, hi] - np.where(lo > 0, cs[local_rows, lo - 1], 0.0)


def _planted_masses(
    q: np.ndarray,
    k: np.ndarray,
    spec: SyntheticSpec,
    rows: np.ndarray,
    controls: list[int],
) -> tuple[np.ndarray, np.ndarray]:
    """Mean mass on each planted column, and background-subtracted mean mass
    in each band window, over the given probe rows."""
    d = spec.d
    n_sink = len(spec.sink_columns)
    n_band = len(spec.slash_offsets)
    sums = np.zeros(n_sink + n_band)
    counts = np.zeros(n_sink + n_band, dtype=np.int64)
    unit = _measure_unit(spec)
    for r0 in range(0, len(rows), ROW_BLOCK):
        rs = rows[r0 : r0 + ROW_BLOCK]
        p = causal_row_softmax(scaled_scores(q[rs], k, d), rs)
        cs = np.cumsum(p, axis=1) if n_band else None
        margin = _sink_margin(spec.S)
        for i, (pos, _) in enumerate(spec.sink_columns):
            el = rs >= pos + margin
            sums[i] += p[el, pos].sum()
            counts[i] += int(el.sum())
        for b, (off, _) in enumerate(spec.slash_offsets):
            el = np.flatnonzero(_band_rows(spec, rs, off, controls[b], unit))
            if el.size == 0:
                continue
            rr = rs[el]
            signal = _window_mass(cs, el, rr, off, unit)
            control = _window_mass(cs, el, rr, controls[b], unit)
            sums[n_sink + b] += (signal - control).sum()
            counts[n_sink + b] += el.size
    if n_band and (counts[n_sink:] == 0).any():
        bad = int(np.flatnonzero(counts[n_sink:] == 0)[0])
        raise GeneratorError(
            f"slash offset {spec.slash_offsets[bad][0]}: no measurable rows at "
            f"S={spec.S} once sink and control exclusions apply"
        )
    measured = sums / np.maximum(counts, 1)
    return measured[:n_sink], measured[n_sink:]


def band_mass_profile(p: np.ndarray, off: int, half_width: int) -> np.ndarray:
    """Per-row mass inside |query - key - off| <= half_width, causally clipped.

    Independent measurement helper for tests and analysis; rows before the
    band starts report 0.
    """
    S = p.shape[0]
    cs = np.cumsum(p, axis=1)
    rows = np.arange(S)
    out = np.zeros(S)
    el = rows >= off
    rr = rows[el]
    lo = np.maximum(rr - off - half_width, 0)
    hi = np.minimum(rr - off + half_width, rr)
    out[el] = cs[rr, hi] - np.where(lo > 0, cs[rr, lo - 1], 0.0)
    return out


def _calibrate_head(
    spec: SyntheticSpec,
    rng: np.random.Generator,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[AttentionHead, tuple[np.ndarray, np.ndarray]]:
    builder = _HeadBuilder(spec, rng)
    n_sink = len(spec.sink_columns)
    targets = np.array(
        [m for _, m in spec.sink_columns] + [m for _, m in spec.slash_offsets]
    )
    if targets.size == 0:
        q, k = builder.build(np.zeros(0), np.zeros(0))
        return AttentionHead(q, k, builder.v), (np.zeros(0), np.zeros(0))

    S = spec.S
    controls = _control_offsets(spec) if spec.slash_offsets else []
    if warm is not None:
        # heads of one set share targets and statistics, so the previous
        # head's parameters are a near-converged start
        sink_shift, band_amp = warm[0].copy(), warm[1].copy()
    else:
        # warm start from a one-entry-vs-noise-partition estimate; the loop
        # refines against measured masses
        z_bar = (S + 1) / 2 * math.exp(spec.noise_scale**2 / 2)
        z_bar *= max(1.0 - targets.sum(), 0.05)
        sink_shift = np.array([math.log(m * z_bar) for _, m in spec.sink_columns])
        band_amp = np.array(
            [
                max(
                    math.log(
                        max(
                            m
                            * z_bar
                            / (
                                0.75 * _window_width(spec)
                                if off == 0
                                else 2.5 * _band_sigma(S)
                            ),
                            1.01,
                        )
                    ),
                    0.1,
                )
                for off, m in spec.slash_offsets
            ]
        )

    # Per-row shares are lognormal-noisy, so a sparse row probe estimates
    # each mean to only ~10%; iterate on the cheap probe first, then polish
    # against full-row measurements within the same iteration budget.
    probe_rows = np.arange(0, S, max(1, S // 2048))
    all_rows = np.arange(S)
    use_full = probe_rows.size == S
    q = k = None
    sink_m = band_m = None
    measured_full = False
    for it in range(_MAX_ITERS):
        q, k = builder.build(sink_shift, band_amp)
        rows = all_rows if use_full else probe_rows
        sink_m, band_m = _planted_masses(q, k, spec, rows, controls)
        measured_full = use_full
        measured = np.concatenate([sink_m, band_m])
        log_err = np.clip(np.log(targets / np.maximum(measured, 1e-6)), -2.0, 2.0)
        if np.abs(log_err).max() <= _INNER_LOG_TOL:
            if use_full:
                break
            use_full = True  # re-check the same parameters at full precision
            continue
        if it >= _MAX_ITERS - 6:
            use_full = True
        sink_shift = np.clip(sink_shift + 0.9 * log_err[:n_sink], -10.0, 40.0)
        band_amp = np.clip(band_amp + 0.9 * log_err[n_sink:], 0.02, 60.0)

    if not measured_full:
        sink_m, band_m = _planted_masses(q, k, spec, all_rows, controls)
    for (pos, m), got in zip(spec.sink_columns, sink_m):
        if abs(got / m - 1.0) > _FINAL_REL_TOL:
            raise GeneratorError(
                f"sink column {pos}: measured mass {got:.4f} vs target {m} "
                f"is outside +-20% after {_MAX_ITERS} calibration steps"
            )
    for (off, m), got in zip(spec.slash_offsets, band_m):
        if abs(got / m - 1.0) > _FINAL_REL_TOL:
            raise GeneratorError(
                f"slash offset {off}: measured mass {got:.4f} vs target {m} "
                f"is outside +-20% after {_MAX_ITERS} calibration steps"
            )
    return AttentionHead(q, k, builder.v), (sink_shift, band_amp)


def generate_synthetic(spec: SyntheticSpec) -> HeadSet:
    """Build `n_heads` seeded heads whose dense attention concentrates the
    requested mass on each planted column and band.

    Each head gets its own noise and band topics but the same targets;
    calibration runs per head (warm-started from the previous head) and
    raises GeneratorError naming any target it cannot place within +-20%.
    """
    heads = []
    warm = None
    for h in range(spec.n_heads):
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, h])
        )
        head, warm = _calibrate_head(spec, rng, warm)
        heads.append(replace(head, head_id=h))
    return HeadSet(tuple(heads))
