"""Spatial units, attribute frames and crosswalks between scales.

Missing values are carried as NaN inside float columns. Nothing in this
module ever turns a missing value into zero; aggregations skip missing
cells and report how many they skipped.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DuplicateUnit,
    MissingParent,
    ParseError,
    ScaleError,
    SchemaError,
    UnresolvableSource,
)

_THOUSANDS = re.compile(r"^[+-]?\d{1,3}(,\d{3})+(\.\d*)?$")
MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none", "-"})


@dataclass(frozen=True)
class SpatialUnit:
    id: str
    scale: str
    population: float | None = None


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    column: str
    type: str = "real"


@dataclass(frozen=True)
class FrameSchema:
    id_column: str
    attributes: tuple[AttributeSpec, ...] = ()
    population_column: str | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FrameSchema":
        unknown = set(doc) - {"id_column", "population_column", "attributes"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        if "id_column" not in doc:
            raise SchemaError("schema needs an 'id_column'")
        raw = doc.get("attributes", [])
        attrs = []
        if isinstance(raw, Mapping):
            raw = [{"name": k, "type": v} for k, v in raw.items()]
        for item in raw:
            if isinstance(item, str):
                item = {"name": item}
            kind = item.get("type", "real")
            if kind not in ("real", "integer"):
                raise SchemaError(f"attribute {item.get('name')!r}: unsupported type {kind!r}")
            attrs.append(AttributeSpec(item["name"], item.get("column", item["name"]), kind))
        return cls(doc["id_column"], tuple(attrs), doc.get("population_column"))

    @classmethod
    def load(cls, path: str | Path) -> "FrameSchema":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read schema {path}: {exc}") from exc


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpatialFrame:
    """Attribute table for the units of one scale, ordered by unit id."""

    scale: str
    unit_ids: tuple[str, ...]
    attributes: Mapping[str, np.ndarray] = field(default_factory=dict)
    population: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.unit_ids)
        if len(set(self.unit_ids)) != n:
            seen = set()
            for uid in self.unit_ids:
                if uid in seen:
                    raise DuplicateUnit(uid)
                seen.add(uid)
        cols = {}
        for name, col in self.attributes.items():
            arr = _readonly(col)
            if arr.shape != (n,):
                raise SchemaError(f"attribute {name!r} has {arr.size} values for {n} units")
            cols[name] = arr
        object.__setattr__(self, "attributes", MappingProxyType(cols))
        if self.population is not None:
            pop = _readonly(self.population)
            if pop.shape != (n,):
                raise SchemaError("population column length does not match units")
            if np.any(pop[~np.isnan(pop)] < 0):
                raise SchemaError("population must be nonnegative")
            object.__setattr__(self, "population", pop)

    def __len__(self) -> int:
        return len(self.unit_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpatialFrame):
            return NotImplemented
        if (self.scale, self.unit_ids, set(self.attributes)) != (other.scale, other.unit_ids, set(other.attributes)):
            return False
        if (self.population is None) != (other.population is None):
            return False
        pairs = [(self.attributes[k], other.attributes[k]) for k in self.attributes]
        if self.population is not None:
            pairs.append((self.population, other.population))
        return all(np.array_equal(a, b, equal_nan=True) for a, b in pairs)

    __hash__ = None

    @property
    def units(self) -> list[SpatialUnit]:
        pops = self.population
        return [
            SpatialUnit(uid, self.scale, None if pops is None or math.isnan(pops[i]) else float(pops[i]))
            for i, uid in enumerate(self.unit_ids)
        ]

    def column(self, name: str) -> np.ndarray:
        if name in self.attributes:
            return self.attributes[name]
        if name == "population" and self.population is not None:
            return self.population
        raise SchemaError(f"frame at scale {self.scale!r} has no attribute {name!r}")

    def has(self, name: str) -> bool:
        return name in self.attributes or (name == "population" and self.population is not None)

    def values_by_id(self, name: str) -> dict[str, float]:
        return dict(zip(self.unit_ids, self.column(name).tolist()))

    def with_attribute(self, name: str, values: Sequence[float] | Mapping[str, float]) -> "SpatialFrame":
        """Return a copy with ``name`` added or replaced.

        ``values`` may be positional or keyed by unit id; ids absent from a
        mapping become missing.
        """
        if isinstance(values, Mapping):
            values = [values.get(uid, math.nan) for uid in self.unit_ids]
        attrs = dict(self.attributes)
        attrs[name] = values
        return SpatialFrame(self.scale, self.unit_ids, attrs, self.population)

    def subset(self, keep: Sequence[bool] | np.ndarray) -> "SpatialFrame":
        mask = np.asarray(keep, dtype=bool)
        ids = tuple(uid for uid, k in zip(self.unit_ids, mask) if k)
        attrs = {k: v[mask] for k, v in self.attributes.items()}
        pop = None if self.population is None else self.population[mask]
        return SpatialFrame(self.scale, ids, attrs, pop)


def _parse_cell(value, row: int, column: str) -> float:
    if value is None:
        return math.nan
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    text = str(value).strip()
    if text.lower() in MISSING_TOKENS:
        return math.nan
    try:
        out = float(text)
    except ValueError:
        if not _THOUSANDS.match(text):
            raise ParseError(row, column, value) from None
        out = float(text.replace(",", ""))
    if math.isinf(out):
        raise ParseError(row, column, value)
    return out


def build_frame(scale: str, rows: Iterable[Mapping], schema: FrameSchema | Mapping) -> SpatialFrame:
    """Build a frame from tabular records; units come out sorted by id."""
    if not isinstance(schema, FrameSchema):
        schema = FrameSchema.from_dict(schema)
    records = []
    seen = set()
    for i, row in enumerate(rows, start=1):
        if schema.id_column not in row or row[schema.id_column] in (None, ""):
            raise SchemaError(f"row {i}: missing unit id column {schema.id_column!r}")
        uid = str(row[schema.id_column]).strip()
        if uid in seen:
            raise DuplicateUnit(uid)
        seen.add(uid)
        values = {}
        for attr in schema.attributes:
            if attr.column not in row:
                raise SchemaError(f"row {i}: missing column {attr.column!r}")
            values[attr.name] = _parse_cell(row[attr.column], i, attr.column)
            if attr.type == "integer" and not math.isnan(values[attr.name]) and not values[attr.name].is_integer():
                raise ParseError(i, attr.column, row[attr.column])
        pop = math.nan
        if schema.population_column is not None:
            if schema.population_column not in row:
                raise SchemaError(f"row {i}: missing column {schema.population_column!r}")
            pop = _parse_cell(row[schema.population_column], i, schema.population_column)
        records.append((uid, values, pop))
    records.sort(key=lambda r: r[0])
    ids = tuple(r[0] for r in records)
    attrs = {a.name: [r[1][a.name] for r in records] for a in schema.attributes}
    population = [r[2] for r in records] if schema.population_column is not None else None
    return SpatialFrame(scale, ids, attrs, population)


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def load_frame(scale: str, data_path: str | Path, schema_path: str | Path) -> SpatialFrame:
    return build_frame(scale, read_csv_rows(data_path), FrameSchema.load(schema_path))


def filter_populated(frame: SpatialFrame) -> SpatialFrame:
    """Keep only units with a positive population count."""
    if frame.population is None:
        raise SchemaError(f"frame at scale {frame.scale!r} has no population column")
    pop = frame.population
    return frame.subset(~np.isnan(pop) & (pop > 0))


class Link(NamedTuple):
    source_id: str
    target_id: str
    weight: float


@dataclass(frozen=True)
class Crosswalk:
    source_scale: str
    target_scale: str
    links: tuple[Link, ...]

    def __post_init__(self):
        links = tuple(Link(str(s), str(t), float(w)) for s, t, w in self.links)
        for link in links:
            if not link.weight >= 0:
                raise SchemaError(f"negative or missing weight on link {link}")
        object.__setattr__(self, "links", tuple(sorted(links)))

    @classmethod
    def identity(cls, frame: SpatialFrame, target_scale: str | None = None) -> "Crosswalk":
        return cls(frame.scale, target_scale or frame.scale, tuple(Link(u, u, 1.0) for u in frame.unit_ids))

    @property
    def is_resolved(self) -> bool:
        sources = [link.source_id for link in self.links]
        return len(sources) == len(set(sources))

    @property
    def mapping(self) -> dict[str, str]:
        if not self.is_resolved:
            raise ScaleError("crosswalk maps some sources to several targets; resolve it first")
        return {link.source_id: link.target_id for link in self.links}

    @property
    def source_ids(self) -> list[str]:
        return sorted({link.source_id for link in self.links})

    @property
    def target_ids(self) -> list[str]:
        return sorted({link.target_id for link in self.links})

    def check_sources(self, frame: SpatialFrame) -> None:
        known = set(frame.unit_ids)
        for link in self.links:
            if link.source_id not in known:
                raise SchemaError(f"crosswalk source {link.source_id!r} is not a unit of {frame.scale!r}")


def resolve_highest_overlap(
    raw_links: Iterable[tuple[str, str, float]],
    source_scale: str = "source",
    target_scale: str = "target",
) -> Crosswalk:
    """Assign every source to the target it overlaps most.

    Equal overlaps go to the lexicographically smallest target id.
    """
    best: dict[str, tuple[float, str]] = {}
    for source, target, overlap in raw_links:
        source, target, overlap = str(source), str(target), float(overlap)
        if not overlap >= 0:
            raise SchemaError(f"overlap must be nonnegative, got {overlap} for {source}->{target}")
        current = best.get(source)
        if current is None or overlap > current[0] or (overlap == current[0] and target < current[1]):
            best[source] = (overlap, target)
    links = []
    for source, (overlap, target) in best.items():
        if overlap <= 0:
            raise UnresolvableSource(source)
        links.append(Link(source, target, overlap))
    return Crosswalk(source_scale, target_scale, tuple(links))


def load_crosswalk(
    path: str | Path, source_scale: str, target_scale: str, resolve: bool = True
) -> Crosswalk:
    rows = read_csv_rows(path)
    raw = []
    for i, row in enumerate(rows, start=1):
        try:
            raw.append((row["source_id"], row["target_id"], _parse_cell(row["weight"], i, "weight")))
        except KeyError as exc:
            raise SchemaError(f"{path}: crosswalk needs columns source_id,target_id,weight") from exc
    if resolve:
        return resolve_highest_overlap(raw, source_scale, target_scale)
    return Crosswalk(source_scale, target_scale, tuple(raw))


@dataclass(frozen=True)
class TargetColumn:
    """Values aggregated onto a target scale, keyed by target id."""

    scale: str
    values: Mapping[str, float]
    skipped: int = 0

    def __getitem__(self, target_id: str) -> float:
        return self.values[target_id]


def reaggregate(
    frame: SpatialFrame,
    attribute: str,
    crosswalk: Crosswalk,
    weight_attribute: str | None = None,
    mode: str = "weighted-mean",
    use_link_weights: bool = False,
) -> TargetColumn:
    """Aggregate a source-scale attribute onto the crosswalk's target units.

    weighted-mean: sum(w*x)/sum(w) over sources with non-missing x.
    sum: plain sum of non-missing x. Targets with nothing to aggregate, or
    zero total weight, come out missing.
    """
    if crosswalk.source_scale != frame.scale:
        raise ScaleError(f"crosswalk starts at {crosswalk.source_scale!r}, frame is {frame.scale!r}")
    if mode not in ("weighted-mean", "sum"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    crosswalk.check_sources(frame)
    x = frame.values_by_id(attribute)
    if weight_attribute is None:
        w = dict.fromkeys(frame.unit_ids, 1.0)
    else:
        w = frame.values_by_id(weight_attribute)
        if any(v < 0 for v in w.values() if not math.isnan(v)):
            raise SchemaError(f"weight attribute {weight_attribute!r} has negative values")

    num: dict[str, list[float]] = defaultdict(list)
    den: dict[str, list[float]] = defaultdict(list)
    skipped = 0
    for link in crosswalk.links:
        num.setdefault(link.target_id, [])
        den.setdefault(link.target_id, [])
        xi = x[link.source_id]
        wi = w[link.source_id]
        scale = link.weight if use_link_weights else 1.0
        if math.isnan(xi) or (mode == "weighted-mean" and math.isnan(wi)):
            skipped += 1
            continue
        if mode == "sum":
            num[link.target_id].append(xi * scale)
            den[link.target_id].append(1.0)
        else:
            num[link.target_id].append(wi * scale * xi)
            den[link.target_id].append(wi * scale)

    out = {}
    for target in sorted(num):
        if not den[target]:
            out[target] = math.nan
        elif mode == "sum":
            out[target] = math.fsum(num[target])
        else:
            total = math.fsum(den[target])
            out[target] = math.fsum(num[target]) / total if total > 0 else math.nan
    return TargetColumn(crosswalk.target_scale, MappingProxyType(out), skipped)


def broadcast_parent(parent_scores: Mapping[str, float], crosswalk: Crosswalk) -> dict[str, float]:
    """Copy each parent's value onto every source unit mapped to it."""
    out = {}
    for source, target in sorted(crosswalk.mapping.items()):
        if target not in parent_scores:
            raise MissingParent(target, f"target {target!r} (parent of {source!r}) has no score")
        out[source] = parent_scores[target]
    return out


def combine_attributes(frame: SpatialFrame, name: str, columns: Sequence[str], how: str = "mean") -> SpatialFrame:
    """Collapse several attributes into one sub-index column (mean or max).

    A unit missing any of the columns gets a missing result.
    """
    if how not in ("mean", "max"):
        raise ValueError(f"unknown combination {how!r}")
    stack = np.vstack([frame.column(c) for c in columns])
    with np.errstate(invalid="ignore"):
        combined = stack.mean(axis=0) if how == "mean" else stack.max(axis=0)
    return frame.with_attribute(name, combined)
