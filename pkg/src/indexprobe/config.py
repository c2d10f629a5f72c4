"""Run configuration for the command-line tool."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .impacts import DEFAULT_MONTHS, DEFAULT_WINDOW

OUT_ENV = "INDEXPROBE_OUT"
PIPELINE_SCALES = {"outage": "locality", "ems": "zcta", "hydrant": "tract"}

_TOP_KEYS = {"frames", "crosswalks", "specs", "variants", "sensitivity", "rankings",
             "impacts", "outcomes", "outputs", "options"}
_OPTION_DEFAULTS = {
    "zscore_mode": None,
    "months": list(DEFAULT_MONTHS),
    "window": [DEFAULT_WINDOW[0].isoformat(), DEFAULT_WINDOW[1].isoformat()],
    "quintile_eps": 0.5,
    "fixed_universe": False,
    "jump_threshold": 2,
    "direction": "fine",
    "method": "both",
}


@dataclass
class FrameEntry:
    scale: str
    data: Path
    schema: Path
    filter_populated: bool = False


@dataclass
class CrosswalkEntry:
    path: Path
    source_scale: str
    target_scale: str
    resolve: bool = True


@dataclass
class SpecEntry:
    path: Path
    scale: str


@dataclass
class RunConfig:
    path: Path
    frames: list[FrameEntry]
    crosswalks: list[CrosswalkEntry] = field(default_factory=list)
    specs: list[SpecEntry] = field(default_factory=list)
    variants: list[SpecEntry] = field(default_factory=list)
    sensitivity: dict[str, Any] = field(default_factory=dict)
    rankings: list[dict[str, Any]] = field(default_factory=list)
    impacts: list[dict[str, Any]] = field(default_factory=list)
    outcomes: list[dict[str, Any]] = field(default_factory=list)
    outputs: Path = Path("out")
    options: dict[str, Any] = field(default_factory=dict)
    digest: str = ""

    @property
    def window(self) -> tuple[date, date]:
        lo, hi = self.options["window"]
        return date.fromisoformat(lo), date.fromisoformat(hi)

    @property
    def months(self) -> tuple[int, ...]:
        return tuple(int(m) for m in self.options["months"])

    def input_paths(self) -> list[Path]:
        paths = [p for f in self.frames for p in (f.data, f.schema)]
        paths += [c.path for c in self.crosswalks]
        paths += [s.path for s in self.specs + self.variants]
        paths += [Path(r["path"]) for r in self.rankings + self.outcomes]
        for imp in self.impacts:
            paths.append(Path(imp["input"]))
            if "populations" in imp:
                paths.append(Path(imp["populations"]["path"]))
        return paths


def _path(base: Path, value, what: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{what}: expected a path string, got {value!r}")
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ConfigError(f"{what}: path does not exist: {value}")
    return p


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = path.parent
    try:
        frames = [
            FrameEntry(f["scale"], _path(base, f["data"], "frame data"), _path(base, f["schema"], "frame schema"),
                       bool(f.get("filter_populated", False)))
            for f in doc.get("frames", [])
        ]
        scales = {f.scale for f in frames}
        if len(scales) != len(frames):
            raise ConfigError("each frame scale may be declared once")
        default_scale = frames[0].scale if frames else None

        def spec_entry(item, what):
            if isinstance(item, str):
                item = {"path": item}
            scale = item.get("scale", default_scale)
            if scale not in scales:
                raise ConfigError(f"{what} {item['path']}: scale {scale!r} is not a declared frame")
            return SpecEntry(_path(base, item["path"], what), scale)

        rankings = [dict(r, path=str(_path(base, r["path"], "ranking"))) for r in doc.get("rankings", [])]
        outcomes = [dict(r, path=str(_path(base, r["path"], "outcome"))) for r in doc.get("outcomes", [])]
        impacts = []
        for imp in doc.get("impacts", []):
            if imp.get("pipeline") not in PIPELINE_SCALES:
                raise ConfigError(f"unknown impact pipeline {imp.get('pipeline')!r}")
            imp = dict(imp, scale=imp.get("scale", PIPELINE_SCALES[imp["pipeline"]]), name=imp.get("name", imp["pipeline"]))
            imp = dict(imp, input=str(_path(base, imp["input"], f"impact {imp.get('name')}")))
            if "populations" in imp:
                pops = dict(imp["populations"])
                pops["path"] = str(_path(base, pops["path"], "populations"))
                imp["populations"] = pops
            impacts.append(imp)
        declared = scales | {r["scale"] for r in rankings + outcomes + impacts}
        crosswalks = []
        for c in doc.get("crosswalks", []):
            for key in ("source_scale", "target_scale"):
                if c[key] not in declared:
                    raise ConfigError(f"crosswalk {c['path']}: {key} {c[key]!r} is not a declared scale")
            crosswalks.append(CrosswalkEntry(_path(base, c["path"], "crosswalk"), c["source_scale"],
                                             c["target_scale"], bool(c.get("resolve", True))))
        options = dict(_OPTION_DEFAULTS)
        bad = set(doc.get("options", {})) - set(_OPTION_DEFAULTS)
        if bad:
            raise ConfigError(f"unknown options: {sorted(bad)}")
        options.update(doc.get("options", {}))
        for key, value in (overrides or {}).items():
            if value is not None:
                options[key] = value
        outputs = Path(doc.get("outputs", "out"))
        outputs = outputs if outputs.is_absolute() else base / outputs
        if overrides and overrides.get("out"):
            outputs = Path(overrides["out"])
        elif os.environ.get(OUT_ENV):
            outputs = Path(os.environ[OUT_ENV])
        options.pop("out", None)
        cfg = RunConfig(
            path=path,
            frames=frames,
            crosswalks=crosswalks,
            specs=[spec_entry(s, "spec") for s in doc.get("specs", [])],
            variants=[spec_entry(s, "variant") for s in doc.get("variants", [])],
            sensitivity=dict(doc.get("sensitivity", {})),
            rankings=rankings,
            impacts=impacts,
            outcomes=outcomes,
            outputs=outputs,
            options=options,
        )
        cfg.window, cfg.months  # validate early
    except KeyError as exc:
        raise ConfigError(f"config {path}: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config {path}: {exc}") from exc
    if options["zscore_mode"] not in (None, "population", "sample"):
        raise ConfigError(f"unknown zscore_mode {options['zscore_mode']!r}")
    if options["direction"] not in ("fine", "coarse"):
        raise ConfigError(f"unknown direction {options['direction']!r}")
    if options["method"] not in ("spearman", "kendall", "both"):
        raise ConfigError(f"unknown correlation method {options['method']!r}")
    blob = json.dumps({"config": doc, "options": options}, sort_keys=True)
    cfg.digest = hashlib.sha256(blob.encode()).hexdigest()
    return cfg


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
