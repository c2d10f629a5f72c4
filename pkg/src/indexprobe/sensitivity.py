"""Specification and spatial-scale sensitivity of ranked indices."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import IndexProbeError, MissingParent, UnitSetError
from .frame import Crosswalk, SpatialFrame, broadcast_parent
from .index import MISSING_QUINTILE, QUINTILE_THRESHOLDS, IndexSpec, RankedIndex, fmt, rank_index

log = logging.getLogger(__name__)

INCREASE, DECREASE, NO_CHANGE = "increase", "decrease", "no-change"


@dataclass(frozen=True)
class VariantRun:
    base: RankedIndex
    variant: RankedIndex
    unit_ids: tuple[str, ...]
    base_percentile: np.ndarray
    variant_percentile: np.ndarray
    base_quintile: np.ndarray
    variant_quintile: np.ndarray
    excluded: tuple[tuple[str, str], ...] = ()

    @property
    def name(self) -> str:
        return self.variant.spec_name


def pair_runs(base: RankedIndex, variant: RankedIndex) -> VariantRun:
    """Line up base and variant on the units scored by both."""
    if base.scale != variant.scale:
        raise UnitSetError(f"base is at {base.scale!r}, variant at {variant.scale!r}")
    b_idx = {u: i for i, u in enumerate(base.unit_ids)}
    v_idx = {u: i for i, u in enumerate(variant.unit_ids)}
    keep, excluded = [], []
    for uid in sorted(set(b_idx) | set(v_idx)):
        bi, vi = b_idx.get(uid), v_idx.get(uid)
        if bi is None or base.quintile[bi] == MISSING_QUINTILE:
            excluded.append((uid, f"missing in {base.spec_name}"))
        elif vi is None or variant.quintile[vi] == MISSING_QUINTILE:
            excluded.append((uid, f"missing in {variant.spec_name}"))
        else:
            keep.append((uid, bi, vi))
    if excluded:
        log.info("%s vs %s: %d units excluded", base.spec_name, variant.spec_name, len(excluded))
    bi = np.array([k[1] for k in keep], dtype=int)
    vi = np.array([k[2] for k in keep], dtype=int)
    return VariantRun(
        base, variant, tuple(k[0] for k in keep),
        base.percentile[bi], variant.percentile[vi],
        base.quintile[bi], variant.quintile[vi],
        tuple(excluded),
    )


def run_variants(base_spec: IndexSpec, variant_specs: Sequence[IndexSpec], frame: SpatialFrame) -> list[VariantRun]:
    """Rank the base once and compare every variant to it, in input order."""
    base = _ranked(base_spec, frame)
    return [pair_runs(base, _ranked(spec, frame)) for spec in variant_specs]


def _ranked(spec: IndexSpec, frame: SpatialFrame) -> RankedIndex:
    try:
        return rank_index(spec, frame)
    except IndexProbeError as exc:
        exc.args = (f"[{spec.name}] {exc}",)
        raise


@dataclass(frozen=True)
class TransitionRecord:
    unit_id: str
    direction: str
    base_quintile: int
    variant_quintile: int
    base_percentile: float
    variant_percentile: float

    @property
    def jump(self) -> int:
        return abs(self.variant_quintile - self.base_quintile)


def classify_transitions(run: VariantRun) -> list[TransitionRecord]:
    out = []
    for uid, bq, vq, bp, vp in zip(run.unit_ids, run.base_quintile, run.variant_quintile,
                                   run.base_percentile, run.variant_percentile):
        delta = int(vq) - int(bq)
        direction = INCREASE if delta > 0 else DECREASE if delta < 0 else NO_CHANGE
        out.append(TransitionRecord(uid, direction, int(bq), int(vq), float(bp), float(vp)))
    return out


@dataclass(frozen=True)
class VariantFractions:
    variant: str
    n_units: int
    unchanged: int
    increased: int
    decreased: int

    def fraction(self, which: str) -> Fraction:
        return Fraction(getattr(self, which), self.n_units) if self.n_units else Fraction(0)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "n_units": self.n_units,
            "unchanged": self.unchanged, "increased": self.increased, "decreased": self.decreased,
            "frac_unchanged": float(self.fraction("unchanged")),
            "frac_increased": float(self.fraction("increased")),
            "frac_decreased": float(self.fraction("decreased")),
        }


@dataclass(frozen=True)
class StabilitySummary:
    n_units: int
    n_unchanged_all_variants: int
    pairwise: tuple[VariantFractions, ...]
    flagged_jumps: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    excluded: tuple[str, ...] = ()
    jump_threshold: int = 2

    @property
    def frac_unchanged_all_variants(self) -> Fraction:
        return Fraction(self.n_unchanged_all_variants, self.n_units) if self.n_units else Fraction(0)

    def to_dict(self) -> dict:
        return {
            "n_units": self.n_units,
            "n_unchanged_all_variants": self.n_unchanged_all_variants,
            "frac_unchanged_all_variants": float(self.frac_unchanged_all_variants),
            "pairwise": [p.to_dict() for p in self.pairwise],
            "jump_threshold": self.jump_threshold,
            "flagged_jumps": {k: list(v) for k, v in self.flagged_jumps.items()},
            "excluded_units": list(self.excluded),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def stability_summary(runs: Sequence[VariantRun], jump_threshold: int = 2) -> StabilitySummary:
    """Per-variant transition counts plus the units no variant moves.

    Units missing from any run are left out of the all-variants count.
    """
    if not runs:
        return StabilitySummary(0, 0, (), {}, (), jump_threshold)
    ref = runs[0].base
    for run in runs[1:]:
        if run.base.unit_ids != ref.unit_ids or run.base.spec_name != ref.spec_name:
            raise UnitSetError(f"run {run.name!r} uses a different base or unit set")
    pairwise, jumps = [], {}
    changed: set[str] = set()
    present = None
    for run in runs:
        recs = classify_transitions(run)
        counts = {INCREASE: 0, DECREASE: 0, NO_CHANGE: 0}
        for r in recs:
            counts[r.direction] += 1
            if r.direction != NO_CHANGE:
                changed.add(r.unit_id)
        pairwise.append(VariantFractions(run.name, len(recs), counts[NO_CHANGE], counts[INCREASE], counts[DECREASE]))
        jumps[run.name] = tuple(r.unit_id for r in recs if r.jump >= jump_threshold)
        ids = set(run.unit_ids)
        present = ids if present is None else present & ids
    excluded = tuple(sorted(set(ref.unit_ids) - present))
    if excluded:
        log.info("%d units missing under some variant; left out of the all-variants count", len(excluded))
    unchanged_all = len(present - changed)
    return StabilitySummary(len(present), unchanged_all, tuple(pairwise), jumps, excluded, jump_threshold)


def scale_sensitivity(
    spec: IndexSpec,
    fine_frame: SpatialFrame,
    crosswalk: Crosswalk,
    coarse_index: RankedIndex,
    coarse_frame: SpatialFrame | None = None,
    broadcast_attributes: Sequence[str] = (),
) -> VariantRun:
    """Compare a coarse index pushed down to fine units against a fine re-ranking.

    Attributes listed in ``broadcast_attributes`` are copied from
    ``coarse_frame`` onto the fine units before the fine index is built,
    for inputs that are not published at the fine scale.
    """
    mapping = crosswalk.mapping
    for uid in fine_frame.unit_ids:
        if uid not in mapping:
            raise MissingParent(uid, f"fine unit {uid!r} is not in the crosswalk")
    fine_ids = set(fine_frame.unit_ids)
    fine_cw = Crosswalk(crosswalk.source_scale, crosswalk.target_scale,
                        tuple(link for link in crosswalk.links if link.source_id in fine_ids))
    frame = fine_frame
    for attr in broadcast_attributes:
        if coarse_frame is None:
            raise ValueError("broadcast_attributes needs coarse_frame")
        frame = frame.with_attribute(attr, broadcast_parent(coarse_frame.values_by_id(attr), fine_cw))

    pct = broadcast_parent(dict(zip(coarse_index.unit_ids, coarse_index.percentile.tolist())), fine_cw)
    quint = broadcast_parent(dict(zip(coarse_index.unit_ids, coarse_index.quintile.tolist())), fine_cw)
    raw = broadcast_parent(dict(zip(coarse_index.unit_ids, coarse_index.raw.tolist())), fine_cw)
    ids = frame.unit_ids
    base = RankedIndex(
        spec_name=coarse_index.spec_name,
        scale=frame.scale,
        unit_ids=ids,
        raw=np.array([raw[u] for u in ids], dtype=float),
        percentile=np.array([pct[u] for u in ids], dtype=float),
        quintile=np.array([quint[u] for u in ids], dtype=int),
        degenerate_inputs=coarse_index.degenerate_inputs,
        spec_digest=coarse_index.spec_digest,
        meta={"broadcast_from": coarse_index.scale},
    )
    variant = _ranked(spec, frame)
    if variant.spec_name == base.spec_name:
        variant = RankedIndex(f"{spec.name}@{frame.scale}", variant.scale, variant.unit_ids, variant.raw,
                              variant.percentile, variant.quintile, variant.degenerate_inputs,
                              variant.spec_digest, variant.meta)
    return pair_runs(base, variant)


TRANSITION_COLUMNS = ("unit_id", "base_quintile", "variant_quintile", "direction",
                      "base_percentile", "variant_percentile")


def transitions_csv(records: Sequence[TransitionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSITION_COLUMNS)
    for r in records:
        w.writerow([r.unit_id, r.base_quintile, r.variant_quintile, r.direction,
                    fmt(r.base_percentile), fmt(r.variant_percentile)])
    return buf.getvalue()


def plot_points(run: VariantRun) -> dict:
    """Scatter data: x = base percentile, y = variant percentile, class = direction."""
    return {
        "base": run.base.spec_name,
        "variant": run.name,
        "thresholds": list(QUINTILE_THRESHOLDS),
        "points": [
            {"unit_id": r.unit_id, "x": r.base_percentile, "y": r.variant_percentile, "class": r.direction}
            for r in classify_transitions(run)
        ],
    }


_COLORS = {INCREASE: "#2e7d32", DECREASE: "#f9a825", NO_CHANGE: "#757575"}


def plot_svg(run: VariantRun, size: int = 400, margin: int = 40) -> str:
    """Minimal standalone SVG scatter with gridlines at the quintile thresholds."""
    span = size - 2 * margin

    def sx(v: float) -> str:
        return f"{margin + span * v / 100:.2f}"

    def sy(v: float) -> str:
        return f"{size - margin - span * v / 100:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="#000"/>',
    ]
    for t in QUINTILE_THRESHOLDS:
        parts.append(f'<line class="grid" x1="{sx(t)}" y1="{sy(0)}" x2="{sx(t)}" y2="{sy(100)}" stroke="#ccc"/>')
        parts.append(f'<line class="grid" x1="{sx(0)}" y1="{sy(t)}" x2="{sx(100)}" y2="{sy(t)}" stroke="#ccc"/>')
    for r in classify_transitions(run):
        if math.isnan(r.base_percentile) or math.isnan(r.variant_percentile):
            continue
        parts.append(f'<circle cx="{sx(r.base_percentile)}" cy="{sy(r.variant_percentile)}" r="3" '
                     f'fill="{_COLORS[r.direction]}"><title>{_esc(r.unit_id)}</title></circle>')
    parts.append(f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" font-size="12">'
                 f'{_esc(run.base.spec_name)} percentile</text>')
    parts.append(f'<text x="12" y="{size / 2:.0f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 12 {size / 2:.0f})">{_esc(run.name)} percentile</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
