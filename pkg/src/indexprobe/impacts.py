"""Heat-impact record streams reduced to per-unit outcome values.

Each pipeline returns an :class:`IngestResult` whose exclusion log,
together with the included count, accounts for every input record.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import RecordError
from .index import percentile_rank

DEFAULT_WINDOW = (date(2021, 1, 1), date(2025, 12, 31))
DEFAULT_MONTHS = (5, 6, 7, 8, 9)
HYDRANT_DESCRIPTORS = (
    "Hydrant Running Full (WA4)",
    "Hydrant Running (WC3)",
    "Illegal Use Of A Hydrant (CIN)",
    "Request To Open A Hydrant (WC4)",
)
DUPLICATE_MARKERS = ("duplicate",)
RADIAL_DEDUP_MIN_CUSTOMERS = 10


@dataclass(frozen=True)
class OutageInterval:
    locality_id: str
    timestamp: datetime
    system: str
    customers_out: int
    customers_total: int
    record_id: str = ""

    def __post_init__(self):
        if self.system not in ("network", "radial"):
            raise RecordError(f"{self.record_id or self.locality_id}: unknown system {self.system!r}")
        if self.customers_total <= 0:
            raise RecordError(f"{self.record_id or self.locality_id}: customers_total must be positive")
        if not 0 <= self.customers_out <= self.customers_total:
            raise RecordError(f"{self.record_id or self.locality_id}: customers_out outside [0, customers_total]")
        ts = self.timestamp
        if ts.minute % 30 or ts.second or ts.microsecond:
            raise RecordError(f"{self.record_id or self.locality_id}: {ts} is not on a 30-minute boundary")


@dataclass(frozen=True)
class DispatchRecord:
    incident_id: str
    date: date | None
    zipcode: str | None
    initial_call_type: str = ""
    final_call_type: str = ""


@dataclass(frozen=True)
class ComplaintRecord:
    complaint_id: str
    created_date: date | None
    tract_id: str | None
    descriptor: str
    resolution: str = ""


@dataclass
class IngestResult:
    values: dict[str, float]
    included: int = 0
    excluded: list[tuple[str, str]] = field(default_factory=list)
    # units left out of ``values`` (e.g. zero-population tracts)
    dropped_units: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n_input(self) -> int:
        return self.included + len(self.excluded)


def _day(d) -> date:
    return d.date() if isinstance(d, datetime) else d


def in_scope(d, window=DEFAULT_WINDOW, months=DEFAULT_MONTHS) -> bool:
    d = _day(d)
    return window[0] <= d <= window[1] and d.month in months


def scope_days(window=DEFAULT_WINDOW, months=DEFAULT_MONTHS) -> list[date]:
    out, d = [], window[0]
    while d <= window[1]:
        if d.month in months:
            out.append(d)
        d += timedelta(days=1)
    return out


def outage_rate(
    intervals: Iterable[OutageInterval],
    window=DEFAULT_WINDOW,
    months=DEFAULT_MONTHS,
    localities: Iterable[str] | None = None,
    metric: str = "daily_max",
) -> IngestResult:
    """Average over in-scope days of each locality's maximum 30-minute outage rate.

    The slot rate is the customers out across both systems over the
    locality's customer total. A radial record that repeats the network
    record of the same slot with more than 10 customers out is dropped.
    Days without records count as zero. ``metric="cumulative"`` sums the
    slot rates instead.
    """
    if metric not in ("daily_max", "cumulative"):
        raise ValueError(f"unknown outage metric {metric!r}")
    result = IngestResult({})
    seen = set()
    slots: dict[tuple[str, datetime], dict[str, list[OutageInterval]]] = defaultdict(lambda: defaultdict(list))
    for rec in intervals:
        rid = rec.record_id or f"{rec.locality_id}@{rec.timestamp.isoformat()}/{rec.system}"
        if rec.customers_total <= 0:
            raise RecordError(f"{rid}: customers_total must be positive")
        if not in_scope(rec.timestamp, window, months):
            result.excluded.append((rid, "outside window/months"))
            continue
        key = (rec.locality_id, rec.timestamp, rec.system, rec.customers_out, rec.customers_total)
        if key in seen:
            result.excluded.append((rid, "exact duplicate record"))
            continue
        seen.add(key)
        slots[(rec.locality_id, rec.timestamp)][rec.system].append(rec)

    slot_rate: dict[tuple[str, datetime], float] = {}
    for (loc, ts), by_system in sorted(slots.items()):
        network = by_system.get("network", [])
        network_out = {r.customers_out for r in network}
        kept = list(network)
        for r in by_system.get("radial", []):
            if r.customers_out in network_out and r.customers_out > RADIAL_DEDUP_MIN_CUSTOMERS:
                result.excluded.append((r.record_id or f"{loc}@{ts.isoformat()}/radial", "radial duplicates network"))
            else:
                kept.append(r)
        result.included += len(kept)
        slot_rate[(loc, ts)] = sum(r.customers_out for r in kept) / max(r.customers_total for r in kept)

    per_day: dict[str, dict[date, float]] = defaultdict(dict)
    for (loc, ts), rate in slot_rate.items():
        day = ts.date()
        if metric == "daily_max":
            per_day[loc][day] = max(per_day[loc].get(day, 0.0), rate)
        else:
            per_day[loc][day] = per_day[loc].get(day, 0.0) + rate
    n_days = len(scope_days(window, months))
    names = set(per_day) | set(localities or ())
    for loc in sorted(names):
        total = math.fsum(per_day.get(loc, {}).values())
        if metric == "daily_max":
            result.values[loc] = total / n_days if n_days else math.nan
        else:
            result.values[loc] = total
    return result


def ems_heat_counts(
    records: Iterable[DispatchRecord],
    window=DEFAULT_WINDOW,
    months=DEFAULT_MONTHS,
    call_type: str = "HEAT",
    include_initial: bool = False,
    zipcodes: Iterable[str] | None = None,
) -> IngestResult:
    """Raw counts of dispatches whose final call type is ``call_type``, per zipcode."""
    result = IngestResult({z: 0.0 for z in zipcodes or ()})
    for rec in records:
        if rec.date is None or not rec.zipcode:
            result.excluded.append((rec.incident_id, "missing date or zipcode"))
            continue
        if not in_scope(rec.date, window, months):
            result.excluded.append((rec.incident_id, "outside window/months"))
            continue
        hit = rec.final_call_type == call_type or (include_initial and rec.initial_call_type == call_type)
        if not hit:
            result.excluded.append((rec.incident_id, "final call type is not " + call_type))
            continue
        result.included += 1
        result.values[rec.zipcode] = result.values.get(rec.zipcode, 0.0) + 1
    result.values = dict(sorted(result.values.items()))
    return result


def hydrant_complaints(
    records: Iterable[ComplaintRecord],
    populations: Mapping[str, float],
    window=DEFAULT_WINDOW,
    months=DEFAULT_MONTHS,
    descriptors: Sequence[str] = HYDRANT_DESCRIPTORS,
    duplicate_markers: Sequence[str] = DUPLICATE_MARKERS,
) -> IngestResult:
    """Complaints per 1,000 residents for every tract with a positive population."""
    allowed = set(descriptors)
    markers = [m.lower() for m in duplicate_markers]
    counts: dict[str, int] = defaultdict(int)
    result = IngestResult({})
    for rec in records:
        rid = rec.complaint_id
        if rec.descriptor not in allowed:
            result.excluded.append((rid, "descriptor not in allowlist"))
        elif any(m in (rec.resolution or "").lower() for m in markers):
            result.excluded.append((rid, "resolution marks a duplicate"))
        elif rec.created_date is None or not in_scope(rec.created_date, window, months):
            result.excluded.append((rid, "outside window/months"))
        elif not rec.tract_id:
            result.excluded.append((rid, "no tract"))
        elif rec.tract_id not in populations:
            result.excluded.append((rid, "tract has no population record"))
        elif not populations[rec.tract_id] > 0:
            result.excluded.append((rid, "tract population is zero"))
        else:
            result.included += 1
            counts[rec.tract_id] += 1
    for tract in sorted(populations):
        pop = populations[tract]
        if pop is not None and pop > 0:
            result.values[tract] = 1000.0 * counts.get(tract, 0) / pop
        else:
            result.dropped_units.append((tract, "population is zero or missing"))
    return result


def impact_ranking(values: Mapping[str, float]) -> dict[str, float]:
    """Tie-aware percentile ranks of an outcome column (ties share the average rank)."""
    ids = sorted(values)
    pct = percentile_rank(np.array([values[u] for u in ids], dtype=float))
    return {u: float(p) for u, p in zip(ids, pct) if not math.isnan(p)}


# -- CSV readers -------------------------------------------------------------

OUTAGE_COLUMNS = {
    "locality_id": "locality_id",
    "timestamp": "timestamp",
    "system": "system",
    "customers_out": "customers_out",
    "customers_total": "customers_total",
}
# NYC Open Data "EMS Incident Dispatch Data" layout
DISPATCH_COLUMNS = {
    "incident_id": "CAD_INCIDENT_ID",
    "date": "INCIDENT_DATETIME",
    "zipcode": "ZIPCODE",
    "initial_call_type": "INITIAL_CALL_TYPE",
    "final_call_type": "FINAL_CALL_TYPE",
}
# NYC Open Data "311 Service Requests" layout; the tract column must be joined beforehand
COMPLAINT_COLUMNS = {
    "complaint_id": "Unique Key",
    "created_date": "Created Date",
    "tract_id": "tract_id",
    "descriptor": "Descriptor",
    "resolution": "Resolution Description",
}

_DATETIME_FORMATS = ("%m/%d/%Y %I:%M:%S %p", "%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M", "%m/%d/%Y")


def parse_datetime(text: str | None) -> datetime | None:
    if text is None or not str(text).strip():
        return None
    text = str(text).strip()
    try:
        return datetime.fromisoformat(text.replace("Z", ""))
    except ValueError:
        pass
    for fmt in _DATETIME_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise RecordError(f"cannot parse date {text!r}")


def _columns(defaults: Mapping[str, str], overrides: Mapping[str, str] | None) -> dict[str, str]:
    cols = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in cols:
            raise RecordError(f"unknown column mapping key {key!r}")
        cols[key] = value
    return cols


def _get(row: Mapping[str, str], column: str) -> str:
    if column not in row:
        raise RecordError(f"input has no column {column!r}")
    return (row[column] or "").strip()


def outages_from_rows(rows: Iterable[Mapping[str, str]], columns: Mapping[str, str] | None = None) -> list[OutageInterval]:
    c = _columns(OUTAGE_COLUMNS, columns)
    out = []
    for i, row in enumerate(rows, start=1):
        ts = parse_datetime(_get(row, c["timestamp"]))
        if ts is None:
            raise RecordError(f"outage row {i}: missing timestamp")
        try:
            out.append(OutageInterval(
                _get(row, c["locality_id"]), ts, _get(row, c["system"]).lower(),
                int(float(_get(row, c["customers_out"]) or 0)), int(float(_get(row, c["customers_total"]) or 0)),
                record_id=f"row{i}",
            ))
        except ValueError as exc:
            raise RecordError(f"outage row {i}: {exc}") from exc
    return out


def dispatches_from_rows(rows: Iterable[Mapping[str, str]], columns: Mapping[str, str] | None = None) -> list[DispatchRecord]:
    c = _columns(DISPATCH_COLUMNS, columns)
    out = []
    for row in rows:
        ts = parse_datetime(_get(row, c["date"]))
        out.append(DispatchRecord(
            _get(row, c["incident_id"]), None if ts is None else ts.date(),
            _get(row, c["zipcode"]) or None,
            _get(row, c["initial_call_type"]), _get(row, c["final_call_type"]),
        ))
    return out


def complaints_from_rows(rows: Iterable[Mapping[str, str]], columns: Mapping[str, str] | None = None) -> list[ComplaintRecord]:
    c = _columns(COMPLAINT_COLUMNS, columns)
    out = []
    for row in rows:
        ts = parse_datetime(_get(row, c["created_date"]))
        out.append(ComplaintRecord(
            _get(row, c["complaint_id"]), None if ts is None else ts.date(),
            _get(row, c["tract_id"]) or None, _get(row, c["descriptor"]), _get(row, c["resolution"]),
        ))
    return out
