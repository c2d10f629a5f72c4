"""Index evaluation: z-scores, composite specs, percentile ranks and quintiles."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    ConfigError,
    DomainError,
    InsufficientData,
    MethodError,
    SchemaError,
    SpecError,
)
from .frame import SpatialFrame

METHODS = ("additive-z", "hierarchical", "risk-formula")
ZSCORE_MODES = ("population", "sample")
QUINTILE_THRESHOLDS = (20.0, 40.0, 60.0, 80.0)
MISSING_QUINTILE = 0
# raws are rounded to this many decimals before ranking so that float noise
# cannot split values that are equal in exact arithmetic
TIE_DECIMALS = 9


@dataclass(frozen=True)
class IndexTerm:
    attribute: str
    sign: int = 1
    group: str | None = None

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise SpecError(f"term {self.attribute!r}: sign must be +1 or -1, got {self.sign!r}")


@dataclass(frozen=True)
class RiskInputs:
    eal: str
    sv: str
    cr: str
    transform: str = "identity"
    f_lo: float = 0.0
    f_hi: float = 1.0


@dataclass(frozen=True)
class IndexSpec:
    name: str
    method: str = "additive-z"
    terms: tuple[IndexTerm, ...] = ()
    risk_inputs: RiskInputs | None = None
    zscore_mode: str = "population"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.method not in METHODS:
            raise SpecError(f"{self.name}: unknown method {self.method!r}")
        if self.zscore_mode not in ZSCORE_MODES:
            raise SpecError(f"{self.name}: unknown zscore_mode {self.zscore_mode!r}")
        if self.method in ("additive-z", "hierarchical") and not self.terms:
            raise SpecError(f"{self.name}: {self.method} needs at least one term")
        if self.method == "hierarchical" and any(t.group is None for t in self.terms):
            raise SpecError(f"{self.name}: every hierarchical term needs a group")
        if self.method == "risk-formula" and self.risk_inputs is None:
            raise SpecError(f"{self.name}: risk-formula needs eal, sv and cr inputs")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "IndexSpec":
        unknown = set(doc) - {"name", "method", "zscore_mode", "terms", "risk_inputs"}
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        if "name" not in doc:
            raise SpecError("spec needs a 'name'")
        terms = []
        for t in doc.get("terms", []):
            extra = set(t) - {"attribute", "sign", "group"}
            if extra:
                raise SpecError(f"unknown term keys: {sorted(extra)}")
            terms.append(IndexTerm(t["attribute"], int(t.get("sign", 1)), t.get("group")))
        risk = doc.get("risk_inputs")
        if risk is not None:
            extra = set(risk) - {"eal", "sv", "cr", "transform", "f_lo", "f_hi"}
            if extra:
                raise SpecError(f"unknown risk_inputs keys: {sorted(extra)}")
            try:
                risk = RiskInputs(**risk)
            except TypeError as exc:
                raise SpecError(f"risk_inputs: {exc}") from exc
        return cls(
            name=doc["name"],
            method=doc.get("method", "additive-z"),
            terms=tuple(terms),
            risk_inputs=risk,
            zscore_mode=doc.get("zscore_mode", "population"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "IndexSpec":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {"name": self.name, "method": self.method, "zscore_mode": self.zscore_mode}
        doc["terms"] = [
            {"attribute": t.attribute, "sign": t.sign, **({"group": t.group} if t.group else {})}
            for t in self.terms
        ]
        if self.risk_inputs is not None:
            doc["risk_inputs"] = asdict(self.risk_inputs)
        return doc

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_zscore_mode(self, mode: str) -> "IndexSpec":
        return IndexSpec(self.name, self.method, self.terms, self.risk_inputs, mode)


def zscore(values: Sequence[float], mode: str = "population") -> tuple[np.ndarray, bool]:
    """Standardize a column, returning ``(z, degenerate)``.

    Missing entries (NaN) stay missing. A constant column standardizes to
    all zeros with ``degenerate`` set instead of dividing by zero.
    """
    if mode not in ZSCORE_MODES:
        raise ValueError(f"unknown zscore mode {mode!r}")
    x = np.asarray(values, dtype=float)
    ok = ~np.isnan(x)
    n = int(ok.sum())
    if n < 2:
        raise InsufficientData(f"z-score needs at least 2 non-missing values, got {n}")
    out = np.full(x.shape, np.nan)
    present = x[ok]
    if np.all(present == present[0]):
        out[ok] = 0.0
        return out, True
    mean = present.mean()
    dev = present - mean
    sd = math.sqrt(float(np.dot(dev, dev)) / (n if mode == "population" else n - 1))
    out[ok] = dev / sd
    return out, False


def _term_matrix(spec: IndexSpec, frame: SpatialFrame, terms: Sequence[IndexTerm]):
    zs = []
    degenerate = []
    for term in terms:
        if not frame.has(term.attribute):
            raise SchemaError(f"spec {spec.name!r}: frame {frame.scale!r} has no attribute {term.attribute!r}")
        z, flat = zscore(frame.column(term.attribute), spec.zscore_mode)
        if flat:
            degenerate.append(term.attribute)
        zs.append(term.sign * z)
    return zs, degenerate


def _signed_sum(zs: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(zs[0])
    for z in zs:
        total = total + z  # NaN propagates: any missing term -> missing raw
    return total


def evaluate_spec(spec: IndexSpec, frame: SpatialFrame) -> np.ndarray:
    """Raw additive composite: sum of signed z-scores per unit."""
    return _evaluate_additive(spec, frame)[0]


def _evaluate_additive(spec: IndexSpec, frame: SpatialFrame):
    if spec.method != "additive-z":
        raise MethodError(f"spec {spec.name!r} is {spec.method}, not additive-z")
    zs, degenerate = _term_matrix(spec, frame, spec.terms)
    return _signed_sum(zs), degenerate


def evaluate_hierarchical(spec: IndexSpec, frame: SpatialFrame) -> np.ndarray:
    return _evaluate_hierarchical(spec, frame)[0]


def _evaluate_hierarchical(spec: IndexSpec, frame: SpatialFrame):
    if spec.method != "hierarchical":
        raise MethodError(f"spec {spec.name!r} is {spec.method}, not hierarchical")
    groups: dict[str, list[IndexTerm]] = {}
    for term in spec.terms:
        groups.setdefault(term.group, []).append(term)
    sub_percentiles = []
    degenerate = []
    for label in sorted(groups):
        if not groups[label]:
            raise SpecError(f"spec {spec.name!r}: group {label!r} is empty")
        zs, flat = _term_matrix(spec, frame, groups[label])
        degenerate.extend(flat)
        sub_percentiles.append(percentile_rank(np.round(_signed_sum(zs), TIE_DECIMALS)))
    # groups are weighted evenly
    return np.vstack(sub_percentiles).mean(axis=0), degenerate


def _identity(ratio: np.ndarray, risk: RiskInputs) -> np.ndarray:
    return ratio


def _constant_one(ratio: np.ndarray, risk: RiskInputs) -> np.ndarray:
    return np.where(np.isnan(ratio), np.nan, 1.0)


def _minmax(ratio: np.ndarray, risk: RiskInputs) -> np.ndarray:
    ok = ~np.isnan(ratio)
    if not ok.any():
        return ratio.copy()
    lo, hi = ratio[ok].min(), ratio[ok].max()
    out = np.full(ratio.shape, np.nan)
    if hi == lo:
        out[ok] = (risk.f_lo + risk.f_hi) / 2
    else:
        out[ok] = risk.f_lo + (risk.f_hi - risk.f_lo) * (ratio[ok] - lo) / (hi - lo)
    return out


TRANSFORMS: dict[str, Callable[[np.ndarray, RiskInputs], np.ndarray]] = {
    "identity": _identity,
    "one": _constant_one,
    "minmax": _minmax,
}


def register_transform(name: str, fn: Callable[[np.ndarray, RiskInputs], np.ndarray]) -> None:
    """Make ``fn(ratio, risk_inputs) -> f`` available to risk-formula specs."""
    TRANSFORMS[name] = fn


def evaluate_risk_formula(spec: IndexSpec, frame: SpatialFrame) -> np.ndarray:
    """raw = EAL * f(SV / CR) using the IndexSpec's named transform ``f``."""
    if spec.method != "risk-formula":
        raise MethodError(f"spec {spec.name!r} is {spec.method}, not risk-formula")
    risk = spec.risk_inputs
    if risk.transform not in TRANSFORMS:
        raise SpecError(f"spec {spec.name!r}: unknown transform {risk.transform!r}")
    for attr in (risk.eal, risk.sv, risk.cr):
        if not frame.has(attr):
            raise SchemaError(f"spec {spec.name!r}: frame {frame.scale!r} has no attribute {attr!r}")
    eal, sv, cr = frame.column(risk.eal), frame.column(risk.sv), frame.column(risk.cr)
    for uid, e, c in zip(frame.unit_ids, eal, cr):
        if c <= 0:
            raise DomainError(f"unit {uid!r}: community resilience must be positive, got {c}", uid)
        if e < 0:
            raise DomainError(f"unit {uid!r}: expected annual loss must be nonnegative, got {e}", uid)
    with np.errstate(invalid="ignore"):
        ratio = sv / cr
    return eal * TRANSFORMS[risk.transform](ratio, risk)


def percentile_rank(values: Sequence[float]) -> np.ndarray:
    """100 * average rank / n over the non-missing values; ties share a rank."""
    x = np.asarray(values, dtype=float)
    ok = ~np.isnan(x)
    n = int(ok.sum())
    if n == 0:
        raise InsufficientData("percentile rank needs at least one non-missing value")
    out = np.full(x.shape, np.nan)
    out[ok] = 100.0 * rankdata(x[ok], method="average") / n
    return out


def quintile_score(percentiles: Sequence[float]) -> np.ndarray:
    """Map percentiles in (0, 100] to 1-5 with <= semantics at 20/40/60/80.

    Missing percentiles map to MISSING_QUINTILE (0).
    """
    p = np.asarray(percentiles, dtype=float)
    ok = ~np.isnan(p)
    bad = ok & ((p <= 0) | (p > 100))
    if bad.any():
        raise DomainError(f"percentile out of (0, 100]: {p[bad][0]!r}")
    out = np.full(p.shape, MISSING_QUINTILE, dtype=int)
    out[ok] = 1 + np.searchsorted(QUINTILE_THRESHOLDS, p[ok], side="left")
    return out


@dataclass(frozen=True, eq=False)
class RankedIndex:
    spec_name: str
    scale: str
    unit_ids: tuple[str, ...]
    raw: np.ndarray
    percentile: np.ndarray
    quintile: np.ndarray
    degenerate_inputs: tuple[str, ...] = ()
    spec_digest: str = ""
    meta: Mapping = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.unit_ids)

    def column(self, kind: str = "percentile") -> dict[str, float]:
        """Per-unit values of ``raw``, ``percentile`` or ``quintile``; missing omitted."""
        if kind == "quintile":
            return {u: int(q) for u, q in zip(self.unit_ids, self.quintile) if q != MISSING_QUINTILE}
        if kind not in ("raw", "percentile"):
            raise ValueError(f"unknown column kind {kind!r}")
        arr = getattr(self, kind)
        return {u: float(v) for u, v in zip(self.unit_ids, arr) if not math.isnan(v)}

    @property
    def missing(self) -> list[str]:
        return [u for u, q in zip(self.unit_ids, self.quintile) if q == MISSING_QUINTILE]

    def near_threshold(self, eps: float) -> list[str]:
        """Units whose percentile sits within ``eps`` of a quintile boundary."""
        out = []
        for uid, p in zip(self.unit_ids, self.percentile):
            if not math.isnan(p) and any(abs(p - t) < eps for t in QUINTILE_THRESHOLDS):
                out.append(uid)
        return out


_EVALUATORS = {
    "additive-z": _evaluate_additive,
    "hierarchical": _evaluate_hierarchical,
    "risk-formula": lambda spec, frame: (evaluate_risk_formula(spec, frame), []),
}


def rank_index(spec: IndexSpec, frame: SpatialFrame) -> RankedIndex:
    raw, degenerate = _EVALUATORS[spec.method](spec, frame)
    raw = np.asarray(raw, dtype=float)
    pct = percentile_rank(np.round(raw, TIE_DECIMALS))
    for arr in (raw, pct):
        arr.setflags(write=False)
    q = quintile_score(pct)
    q.setflags(write=False)
    return RankedIndex(
        spec_name=spec.name,
        scale=frame.scale,
        unit_ids=frame.unit_ids,
        raw=raw,
        percentile=pct,
        quintile=q,
        degenerate_inputs=tuple(dict.fromkeys(degenerate)),
        spec_digest=spec.digest,
        meta={"method": spec.method, "zscore_mode": spec.zscore_mode},
    )


def fmt(value: float) -> str:
    """Shortest round-trip text for a float; missing becomes an empty cell."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def write_ranked(ranked: RankedIndex, csv_path: str | Path, json_path: str | Path, eps: float = 0.5) -> None:
    """Write unit_id,raw,percentile,quintile plus a JSON metadata sidecar."""
    lines = ["unit_id,raw,percentile,quintile"]
    for uid, r, p, q in zip(ranked.unit_ids, ranked.raw, ranked.percentile, ranked.quintile):
        lines.append(f"{uid},{fmt(r)},{fmt(p)},{'' if q == MISSING_QUINTILE else int(q)}")
    Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "spec": ranked.spec_name,
        "spec_sha256": ranked.spec_digest,
        "scale": ranked.scale,
        "n_units": len(ranked),
        "missing_units": ranked.missing,
        "degenerate_inputs": list(ranked.degenerate_inputs),
        "near_threshold_eps": eps,
        "near_threshold_units": ranked.near_threshold(eps),
        **dict(ranked.meta),
    }
    Path(json_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_ranked(csv_path: str | Path, spec_name: str, scale: str) -> RankedIndex:
    from .frame import read_csv_rows, _parse_cell

    rows = sorted(read_csv_rows(csv_path), key=lambda r: r["unit_id"])
    raw = [_parse_cell(r["raw"], i, "raw") for i, r in enumerate(rows, 1)]
    pct = [_parse_cell(r["percentile"], i, "percentile") for i, r in enumerate(rows, 1)]
    q = [int(r["quintile"]) if r["quintile"] else MISSING_QUINTILE for r in rows]
    return RankedIndex(spec_name, scale, tuple(r["unit_id"] for r in rows),
                       np.array(raw), np.array(pct), np.array(q, dtype=int))
