"""Rank correlations, score alignment and validity reports.

Kendall correlations are tau-b throughout.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateRanking, IndexProbeError, InsufficientData, UnitSetError
from .frame import Crosswalk
from .index import RankedIndex, fmt


@dataclass(frozen=True)
class Ranking:
    """A labelled per-unit column at one scale (percentiles, scores, counts...)."""

    label: str
    scale: str
    values: Mapping[str, float]

    @classmethod
    def from_index(cls, ranked: RankedIndex, kind: str = "percentile", label: str | None = None) -> "Ranking":
        return cls(label or ranked.spec_name, ranked.scale, ranked.column(kind))


def _as_ranking(obj) -> Ranking:
    if isinstance(obj, Ranking):
        return obj
    if isinstance(obj, RankedIndex):
        return Ranking.from_index(obj)
    raise TypeError(f"expected Ranking or RankedIndex, got {type(obj).__name__}")


@dataclass(frozen=True)
class PairedRanking:
    label_a: str
    label_b: str
    unit_ids: tuple[str, ...]
    a: np.ndarray
    b: np.ndarray
    scale: str = ""
    dropped: tuple[tuple[str, str], ...] = ()

    @property
    def n(self) -> int:
        return len(self.unit_ids)


def _lift(r: Ranking, crosswalk: Crosswalk) -> tuple[dict[str, float], list[tuple[str, str]]]:
    """Broadcast a coarse ranking onto the crosswalk's source (fine) units."""
    out, dropped = {}, []
    for source, target in sorted(crosswalk.mapping.items()):
        if target in r.values and not _isnan(r.values[target]):
            out[source] = r.values[target]
        else:
            dropped.append((source, f"{r.label}: parent {target} has no value"))
    return out, dropped


def _lower(r: Ranking, crosswalk: Crosswalk) -> tuple[dict[str, float], list[tuple[str, str]]]:
    """Average a fine ranking over each coarse target unit."""
    acc: dict[str, list[float]] = {}
    for source, target in sorted(crosswalk.mapping.items()):
        v = r.values.get(source)
        if v is not None and not _isnan(v):
            acc.setdefault(target, []).append(v)
    return {t: math.fsum(vs) / len(vs) for t, vs in acc.items()}, []


def _isnan(v) -> bool:
    return isinstance(v, float) and math.isnan(v)


def _find(crosswalks: Iterable[Crosswalk], source: str, target: str) -> Crosswalk | None:
    for cw in crosswalks or ():
        if cw.source_scale == source and cw.target_scale == target:
            return cw
    return None


def pair(rank_a, rank_b, crosswalks: Sequence[Crosswalk] = (), direction: str = "fine",
         universe: Iterable[str] | None = None) -> PairedRanking:
    """Join two rankings on a common unit set, keeping pairwise-complete units.

    Rankings at different scales are joined through a crosswalk between
    them: by default the coarse side is broadcast onto the fine units
    (``direction="fine"``); ``direction="coarse"`` averages the fine side
    per coarse unit instead.
    """
    a, b = _as_ranking(rank_a), _as_ranking(rank_b)
    va, vb = dict(a.values), dict(b.values)
    dropped: list[tuple[str, str]] = []
    scale = a.scale
    if a.scale != b.scale:
        down_b = _find(crosswalks, a.scale, b.scale)  # a fine, b coarse
        down_a = _find(crosswalks, b.scale, a.scale)  # b fine, a coarse
        if down_b is None and down_a is None:
            raise UnitSetError(f"no crosswalk between {a.scale!r} and {b.scale!r}")
        if direction == "fine":
            if down_b is not None:
                vb, dropped = _lift(b, down_b)
                scale = a.scale
            else:
                va, dropped = _lift(a, down_a)
                scale = b.scale
        elif direction == "coarse":
            if down_b is not None:
                va, dropped = _lower(a, down_b)
                scale = b.scale
            else:
                vb, dropped = _lower(b, down_a)
                scale = a.scale
        else:
            raise ValueError(f"unknown direction {direction!r}")

    keep = set(va) | set(vb)
    if universe is not None:
        universe = set(universe)
        for uid in sorted(keep - universe):
            dropped.append((uid, "outside fixed universe"))
        keep &= universe
    ids = []
    for uid in sorted(keep):
        x, y = va.get(uid), vb.get(uid)
        if x is None or _isnan(x):
            dropped.append((uid, f"missing in {a.label}"))
        elif y is None or _isnan(y):
            dropped.append((uid, f"missing in {b.label}"))
        else:
            ids.append(uid)
    if len(ids) < 2:
        raise InsufficientData(f"{a.label} vs {b.label}: only {len(ids)} paired units")
    return PairedRanking(
        a.label, b.label, tuple(ids),
        np.array([va[u] for u in ids], dtype=float),
        np.array([vb[u] for u in ids], dtype=float),
        scale, tuple(dropped),
    )


def _check(p: PairedRanking) -> None:
    if p.n < 2:
        raise InsufficientData(f"{p.label_a} vs {p.label_b}: need at least 2 pairs")
    for label, side in ((p.label_a, p.a), (p.label_b, p.b)):
        if np.all(side == side[0]):
            raise DegenerateRanking(f"{label}: every paired value is tied")


def spearman(p: PairedRanking) -> float:
    """Pearson correlation of the average-rank transforms of both sides."""
    _check(p)
    ra = rankdata(p.a, method="average")
    rb = rankdata(p.b, method="average")
    da, db = ra - ra.mean(), rb - rb.mean()
    rho = float(np.dot(da, db) / math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db))))
    return max(-1.0, min(1.0, rho))


class KendallCounts(NamedTuple):
    concordant: int
    discordant: int
    tied_a: int
    tied_b: int
    n_pairs: int

    @property
    def tau_b(self) -> float:
        denom = (self.n_pairs - self.tied_a) * (self.n_pairs - self.tied_b)
        if denom == 0:
            raise DegenerateRanking("all pairs tied on one side")
        tau = (self.concordant - self.discordant) / math.sqrt(denom)
        return max(-1.0, min(1.0, tau))

    @property
    def tau_b_squared(self) -> Fraction:
        """Exact tau-b squared, for rational comparisons."""
        return Fraction((self.concordant - self.discordant) ** 2,
                        (self.n_pairs - self.tied_a) * (self.n_pairs - self.tied_b))


def kendall_counts(a: Sequence[float], b: Sequence[float], block: int = 512) -> KendallCounts:
    """Count concordant, discordant and tied pairs over all C(n, 2) pairs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    c = d = ta = tb = 0
    for start in range(0, n, block):
        stop = min(start + block, n)
        sa = np.sign(a[start:stop, None] - a[None, :]).astype(np.int8)
        sb = np.sign(b[start:stop, None] - b[None, :]).astype(np.int8)
        # only pairs (i, j) with j > i
        upper = np.arange(n)[None, :] > np.arange(start, stop)[:, None]
        prod = (sa.astype(np.int16) * sb)[upper]
        c += int(np.count_nonzero(prod == 1))
        d += int(np.count_nonzero(prod == -1))
        ta += int(np.count_nonzero(sa[upper] == 0))
        tb += int(np.count_nonzero(sb[upper] == 0))
    return KendallCounts(c, d, ta, tb, n * (n - 1) // 2)


def kendall_tau(p: PairedRanking) -> float:
    _check(p)
    return kendall_counts(p.a, p.b).tau_b


def alignment(scores_a: Mapping[str, int], scores_b: Mapping[str, int]) -> float:
    """Percent of units given the same categorical score by both columns."""
    if isinstance(scores_a, Ranking):
        scores_a = scores_a.values
    if isinstance(scores_b, Ranking):
        scores_b = scores_b.values
    if set(scores_a) != set(scores_b) or not scores_a:
        raise UnitSetError("alignment needs two score columns over the same non-empty unit set")
    return float(alignment_fraction(scores_a, scores_b) * 100)


def alignment_fraction(scores_a: Mapping[str, int], scores_b: Mapping[str, int]) -> Fraction:
    matches = sum(1 for u in scores_a if scores_a[u] == scores_b[u])
    return Fraction(matches, len(scores_a))


@dataclass
class CorrelationEntry:
    label_a: str
    label_b: str
    n: int = 0
    spearman: float | None = None
    kendall: float | None = None
    error: str | None = None
    dropped: int = 0

    def to_dict(self) -> dict:
        return {
            "label_a": self.label_a, "label_b": self.label_b, "n": self.n,
            "spearman": self.spearman, "kendall_tau_b": self.kendall,
            "error": self.error, "dropped": self.dropped,
        }


@dataclass
class AlignmentEntry:
    label_a: str
    label_b: str
    percent: float
    matches: int
    n: int


@dataclass
class ValidityReport:
    entries: list[CorrelationEntry] = field(default_factory=list)
    alignments: list[AlignmentEntry] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    rows: list[str] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)

    def get(self, a: str, b: str) -> CorrelationEntry:
        for e in self.entries:
            if (e.label_a, e.label_b) in ((a, b), (b, a)):
                return e
        raise KeyError((a, b))

    def to_json(self) -> str:
        doc = {
            "kendall_variant": "tau-b",
            "metadata": self.metadata,
            "rows": self.rows,
            "columns": self.columns,
            "correlations": [e.to_dict() for e in self.entries],
            "alignments": [vars(a) for a in self.alignments],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def matrix_csv(self, method: str = "spearman") -> str:
        """Rows x columns table of one coefficient; failed cells are blank."""
        attr = {"spearman": "spearman", "kendall": "kendall"}[method]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + self.columns)
        for r in self.rows:
            cells = []
            for c in self.columns:
                if r == c:
                    cells.append("1.0")
                    continue
                try:
                    v = getattr(self.get(r, c), attr)
                except KeyError:
                    v = None
                cells.append(fmt(v) if v is not None else "")
            w.writerow([r] + cells)
        return buf.getvalue()


def _correlate(a: Ranking, b: Ranking, crosswalks, method: str, direction: str, universe) -> CorrelationEntry:
    entry = CorrelationEntry(a.label, b.label)
    try:
        p = pair(a, b, crosswalks, direction, universe)
        entry.n = p.n
        entry.dropped = len(p.dropped)
        if method in ("spearman", "both"):
            entry.spearman = spearman(p)
        if method in ("kendall", "both"):
            entry.kendall = kendall_tau(p)
    except IndexProbeError as exc:
        entry.error = f"{type(exc).__name__}: {exc}"
    return entry


def _common_universe(rankings: Sequence[Ranking], crosswalks) -> set[str]:
    """Units, at the finest scale involved, that have a value in every ranking."""
    finest = next(
        (r for r in rankings
         if all(o.scale == r.scale or _find(crosswalks, r.scale, o.scale) for o in rankings)),
        None,
    )
    if finest is None:
        raise UnitSetError("no single scale reaches every ranking through the given crosswalks")
    universe = None
    for r in rankings:
        if r.scale == finest.scale:
            ids = {u for u, v in r.values.items() if not _isnan(v)}
        else:
            ids = set(_lift(r, _find(crosswalks, finest.scale, r.scale))[0])
        universe = ids if universe is None else universe & ids
    return universe


def correlation_matrix(rankings: Sequence, crosswalks: Sequence[Crosswalk] = (), method: str = "both",
                       direction: str = "fine", fixed_universe: bool = False) -> ValidityReport:
    """All unordered pairs of rankings; per-pair failures are recorded, not raised."""
    if method not in ("spearman", "kendall", "both"):
        raise ValueError(f"unknown method {method!r}")
    rankings = sorted((_as_ranking(r) for r in rankings), key=lambda r: r.label)
    if len(rankings) < 2:
        raise InsufficientData("a correlation matrix needs at least two rankings")
    labels = [r.label for r in rankings]
    if len(set(labels)) != len(labels):
        raise ValueError("ranking labels must be unique")
    universe = _common_universe(rankings, crosswalks) if fixed_universe else None
    report = ValidityReport(rows=labels, columns=labels)
    for a, b in combinations(rankings, 2):
        report.entries.append(_correlate(a, b, crosswalks, method, direction, universe))
    report.metadata = {
        "scales": {r.label: r.scale for r in rankings},
        "crosswalks": [f"{c.source_scale}->{c.target_scale}" for c in crosswalks],
        "direction": direction,
        "fixed_universe": fixed_universe,
        "universe_size": None if universe is None else len(universe),
    }
    return report


def impact_validity(index_rankings: Sequence, impact_rankings: Sequence, crosswalks: Sequence[Crosswalk] = (),
                    method: str = "both", direction: str = "fine", fixed_universe: bool = False) -> ValidityReport:
    """Index x impact correlations; rows are impacts, columns are indices."""
    indices = [_as_ranking(r) for r in index_rankings]
    impacts = [_as_ranking(r) for r in impact_rankings]
    universe = _common_universe(indices + impacts, crosswalks) if fixed_universe else None
    report = ValidityReport(rows=[r.label for r in impacts], columns=[r.label for r in indices])
    for imp in impacts:
        for idx in indices:
            report.entries.append(_correlate(imp, idx, crosswalks, method, direction, universe))
    report.metadata = {
        "scales": {r.label: r.scale for r in indices + impacts},
        "crosswalks": [f"{c.source_scale}->{c.target_scale}" for c in crosswalks],
        "direction": direction,
        "fixed_universe": fixed_universe,
        "universe_size": None if universe is None else len(universe),
    }
    return report


@dataclass
class SpecificationRow:
    variant: str
    n: int
    spearman_percentile: float
    spearman_quintile: float
    kendall_percentile: float
    kendall_quintile: float
    alignment_percent: float
    matches: int


def specification_report(base: RankedIndex, variants: Sequence[RankedIndex]) -> list[SpecificationRow]:
    """Compare each variant to the base on percentiles, quintiles and alignment."""
    rows = []
    for v in variants:
        pp = pair(Ranking.from_index(base, "percentile", "base"), Ranking.from_index(v, "percentile", "variant"))
        pq = pair(Ranking.from_index(base, "quintile", "base"), Ranking.from_index(v, "quintile", "variant"))
        qa = {u: int(x) for u, x in zip(pq.unit_ids, pq.a)}
        qb = {u: int(x) for u, x in zip(pq.unit_ids, pq.b)}
        matches = sum(1 for u in qa if qa[u] == qb[u])
        rows.append(SpecificationRow(
            v.spec_name, pp.n,
            spearman(pp), spearman(pq), kendall_tau(pp), kendall_tau(pq),
            float(Fraction(matches, len(qa)) * 100), matches,
        ))
    return rows


def specification_table_csv(rows: Sequence[SpecificationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "n", "spearman_percentile", "spearman_quintile",
                "kendall_tau_b_percentile", "kendall_tau_b_quintile", "alignment_percent"])
    for r in rows:
        w.writerow([r.variant, r.n, fmt(r.spearman_percentile), fmt(r.spearman_quintile),
                    fmt(r.kendall_percentile), fmt(r.kendall_quintile), fmt(r.alignment_percent)])
    return buf.getvalue()
