"""``indexprobe`` command line: rank, sensitivity, validity, ingest."""

from __future__ import annotations

import json
import logging
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import impacts as imp
from .config import RunConfig, file_digest, load_config
from .errors import ConfigError, IndexProbeError
from .frame import SpatialFrame, filter_populated, load_crosswalk, load_frame, read_csv_rows, _parse_cell
from .index import IndexSpec, RankedIndex, rank_index, write_ranked
from .sensitivity import (
    VariantRun,
    classify_transitions,
    pair_runs,
    plot_points,
    plot_svg,
    scale_sensitivity,
    stability_summary,
    transitions_csv,
)
from .validity import (
    AlignmentEntry,
    Ranking,
    alignment_fraction,
    correlation_matrix,
    impact_validity,
    specification_report,
    specification_table_csv,
)

log = logging.getLogger("indexprobe")


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") or "unnamed"


class Run:
    """Shared state for one command: loaded inputs and the files written."""

    def __init__(self, cfg: RunConfig, command: str, stamp: bool = False):
        self.cfg = cfg
        self.command = command
        self.stamp = stamp
        self.root = cfg.outputs / command
        self.written: list[Path] = []
        self._frames: dict[str, SpatialFrame] = {}
        self._crosswalks = None
        self._ranked: dict = {}

    def frame(self, scale: str) -> SpatialFrame:
        if scale not in self._frames:
            entry = next((f for f in self.cfg.frames if f.scale == scale), None)
            if entry is None:
                raise ConfigError(f"no frame declared for scale {scale!r}")
            frame = load_frame(entry.scale, entry.data, entry.schema)
            if entry.filter_populated:
                frame = filter_populated(frame)
            self._frames[scale] = frame
        return self._frames[scale]

    @property
    def crosswalks(self):
        if self._crosswalks is None:
            self._crosswalks = [
                load_crosswalk(c.path, c.source_scale, c.target_scale, c.resolve) for c in self.cfg.crosswalks
            ]
        return self._crosswalks

    def crosswalk(self, source: str, target: str):
        for cw in self.crosswalks:
            if cw.source_scale == source and cw.target_scale == target:
                return cw
        raise ConfigError(f"no crosswalk declared from {source!r} to {target!r}")

    def spec(self, entry) -> IndexSpec:
        spec = IndexSpec.load(entry.path)
        mode = self.cfg.options.get("zscore_mode")
        return spec.with_zscore_mode(mode) if mode else spec

    def rank(self, entry) -> RankedIndex:
        key = (entry.path, entry.scale)
        if key not in self._ranked:
            self._ranked[key] = rank_index(self.spec(entry), self.frame(entry.scale))
        return self._ranked[key]

    def write(self, rel: str, text: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        self.written.append(path)
        return path

    def finish(self) -> None:
        base = self.cfg.path.parent
        manifest = {
            "command": self.command,
            "config": os.path.relpath(self.cfg.path, base),
            "config_sha256": self.cfg.digest,
            "options": self.cfg.options,
            "inputs": [
                {"path": os.path.relpath(p, base), "sha256": file_digest(p)}
                for p in sorted(set(self.cfg.input_paths()))
            ],
            "outputs": [
                {"path": p.relative_to(self.root).as_posix(), "sha256": file_digest(p)}
                for p in sorted(self.written)
            ],
        }
        if self.stamp:
            manifest["generated_at"] = datetime.now(timezone.utc).isoformat()
        self.write("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def do_rank(run: Run) -> None:
    if not run.cfg.specs:
        raise ConfigError("rank needs at least one entry in 'specs'")
    eps = float(run.cfg.options["quintile_eps"])
    for entry in run.cfg.specs:
        ranked = run.rank(entry)
        stem = f"{_slug(ranked.spec_name)}__{_slug(ranked.scale)}"
        csv_path = run.root / f"{stem}.csv"
        json_path = run.root / f"{stem}.json"
        run.root.mkdir(parents=True, exist_ok=True)
        write_ranked(ranked, csv_path, json_path, eps)
        run.written += [csv_path, json_path]


def _emit_run(run: Run, r: VariantRun, tag: str) -> None:
    run.write(f"transitions__{tag}.csv", transitions_csv(classify_transitions(r)))
    run.write(f"plot__{tag}.json", json.dumps(plot_points(r), indent=2, sort_keys=True) + "\n")
    run.write(f"plot__{tag}.svg", plot_svg(r))


def do_sensitivity(run: Run) -> None:
    cfg = run.cfg
    if not cfg.specs:
        raise ConfigError("sensitivity needs a base spec (first entry of 'specs')")
    base_entry = cfg.specs[0]
    base = run.rank(base_entry)
    jump = int(cfg.options["jump_threshold"])
    if cfg.variants:
        runs = []
        for entry in cfg.variants:
            if entry.scale != base_entry.scale:
                raise ConfigError(f"variant {entry.path.name} is at {entry.scale!r}, base at {base_entry.scale!r}")
            runs.append(pair_runs(base, run.rank(entry)))
        for r in runs:
            _emit_run(run, r, _slug(r.name))
        run.write("summary.json", stability_summary(runs, jump).to_json())
    scale_cfg = cfg.sensitivity.get("scale")
    if scale_cfg:
        fine_scale = scale_cfg["fine_scale"]
        spec = run.spec(base_entry)
        r = scale_sensitivity(
            spec,
            run.frame(fine_scale),
            run.crosswalk(fine_scale, base_entry.scale),
            base,
            run.frame(base_entry.scale),
            scale_cfg.get("broadcast_attributes", ()),
        )
        tag = f"scale-{_slug(fine_scale)}"
        _emit_run(run, r, tag)
        run.write(f"summary__{tag}.json", stability_summary([r], jump).to_json())
    if not cfg.variants and not scale_cfg:
        raise ConfigError("sensitivity needs 'variants' or a 'sensitivity.scale' block")


def _read_ranking(entry: dict, kind_default: str = "percentile") -> Ranking:
    rows = read_csv_rows(entry["path"])
    id_col = entry.get("id_column", "unit_id")
    val_col = entry.get("value_column", kind_default)
    values = {}
    for i, row in enumerate(rows, 1):
        try:
            values[row[id_col]] = _parse_cell(row[val_col], i, val_col)
        except KeyError as exc:
            raise ConfigError(f"{entry['path']}: no column {exc}") from exc
    if entry.get("rank", False):
        values = imp.impact_ranking({k: v for k, v in values.items()})
    return Ranking(entry["label"], entry["scale"], values)


def _run_pipeline(entry: dict, cfg: RunConfig) -> imp.IngestResult:
    rows = read_csv_rows(entry["input"])
    columns = entry.get("columns")
    window, months = cfg.window, cfg.months
    opts = entry.get("options", {})
    pipeline = entry["pipeline"]
    if pipeline == "outage":
        return imp.outage_rate(imp.outages_from_rows(rows, columns), window, months,
                               localities=opts.get("localities"), metric=opts.get("metric", "daily_max"))
    if pipeline == "ems":
        return imp.ems_heat_counts(imp.dispatches_from_rows(rows, columns), window, months,
                                   call_type=opts.get("call_type", "HEAT"),
                                   include_initial=bool(opts.get("include_initial", False)),
                                   zipcodes=opts.get("zipcodes"))
    if pipeline == "hydrant":
        pops_cfg = entry.get("populations")
        if not pops_cfg:
            raise ConfigError(f"impact {entry['name']}: hydrant pipeline needs 'populations'")
        prow = read_csv_rows(pops_cfg["path"])
        pid, pcol = pops_cfg.get("id_column", "unit_id"), pops_cfg.get("population_column", "population")
        pops = {r[pid]: _parse_cell(r[pcol], i, pcol) for i, r in enumerate(prow, 1)}
        return imp.hydrant_complaints(imp.complaints_from_rows(rows, columns), pops, window, months,
                                      descriptors=opts.get("descriptors", imp.HYDRANT_DESCRIPTORS),
                                      duplicate_markers=opts.get("duplicate_markers", imp.DUPLICATE_MARKERS))
    raise ConfigError(f"unknown impact pipeline {pipeline!r}")


def do_ingest(run: Run) -> None:
    if not run.cfg.impacts:
        raise ConfigError("ingest needs at least one entry in 'impacts'")
    summary = {}
    for entry in run.cfg.impacts:
        result = _run_pipeline(entry, run.cfg)
        name = _slug(entry["name"])
        lines = ["unit_id,value"] + [f"{k},{v!r}" for k, v in sorted(result.values.items())]
        run.write(f"{name}.csv", "\n".join(lines) + "\n")
        log_lines = ["record_id,reason"] + [f"{rid},{why}" for rid, why in result.excluded]
        run.write(f"{name}.excluded.csv", "\n".join(log_lines) + "\n")
        summary[entry["name"]] = {
            "pipeline": entry["pipeline"],
            "scale": entry["scale"],
            "input_records": result.n_input,
            "included": result.included,
            "excluded": len(result.excluded),
            "dropped_units": [list(x) for x in result.dropped_units],
            "units": len(result.values),
        }
    run.write("ingest_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


def do_validity(run: Run) -> None:
    cfg = run.cfg
    opts = cfg.options
    indices = [Ranking.from_index(run.rank(e)) for e in cfg.specs]
    indices += [_read_ranking(r) for r in cfg.rankings]
    impacts = [
        Ranking(e["name"], e["scale"], imp.impact_ranking(_run_pipeline(e, cfg).values)) for e in cfg.impacts
    ]
    impacts += [_read_ranking(dict(o, rank=o.get("rank", True)), "value") for o in cfg.outcomes]
    wrote = False
    crosswalks = run.crosswalks if cfg.crosswalks else []
    if len(indices) >= 2:
        report = correlation_matrix(indices, crosswalks, opts["method"], opts["direction"], bool(opts["fixed_universe"]))
        quint = [Ranking.from_index(run.rank(e), "quintile") for e in cfg.specs]
        for i, a in enumerate(quint):
            for b in quint[i + 1:]:
                if a.scale == b.scale and set(a.values) == set(b.values):
                    frac = alignment_fraction(a.values, b.values)
                    matches = sum(1 for u in a.values if a.values[u] == b.values[u])
                    report.alignments.append(AlignmentEntry(a.label, b.label, float(frac * 100), matches, len(a.values)))
        run.write("indices.json", report.to_json())
        if opts["method"] in ("spearman", "both"):
            run.write("indices_spearman.csv", report.matrix_csv("spearman"))
        if opts["method"] in ("kendall", "both"):
            run.write("indices_kendall.csv", report.matrix_csv("kendall"))
        wrote = True
    if impacts and indices:
        report = impact_validity(indices, impacts, crosswalks, opts["method"], opts["direction"],
                                 bool(opts["fixed_universe"]))
        run.write("impacts.json", report.to_json())
        if opts["method"] in ("spearman", "both"):
            run.write("impacts_spearman.csv", report.matrix_csv("spearman"))
        if opts["method"] in ("kendall", "both"):
            run.write("impacts_kendall.csv", report.matrix_csv("kendall"))
        wrote = True
    if cfg.variants and cfg.specs:
        base = run.rank(cfg.specs[0])
        rows = specification_report(base, [run.rank(e) for e in cfg.variants])
        run.write("specifications.csv", specification_table_csv(rows))
        wrote = True
    if not wrote:
        raise ConfigError("validity needs two rankings, an index plus an impact, or variants")


def _months(text):
    if text is None:
        return None
    try:
        return [int(m) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated month numbers, got {text!r}") from exc


def _window(text):
    if text is None:
        return None
    parts = text.split(":")
    if len(parts) != 2:
        raise click.BadParameter("expected START:END dates, e.g. 2021-01-01:2025-12-31")
    return parts


def _execute(command: str, fn, config: str, stamp: bool, **overrides) -> None:
    try:
        cfg = load_config(config, {
            "months": _months(overrides.get("months")),
            "window": _window(overrides.get("window")),
            "zscore_mode": overrides.get("zscore_mode"),
            "out": overrides.get("out"),
        })
        run = Run(cfg, command, stamp)
        fn(run)
        run.finish()
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(2)
    except IndexProbeError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(1)
    click.echo(f"{command}: wrote {len(run.written)} files under {run.root}")


def _common(f):
    f = click.option("--config", "config", required=True, type=str, help="Run configuration JSON.")(f)
    f = click.option("--months", default=None, help="Comma-separated months, e.g. 5,6,7,8,9.")(f)
    f = click.option("--window", default=None, help="Date window START:END (ISO dates).")(f)
    f = click.option("--zscore-mode", type=click.Choice(["population", "sample"]), default=None)(f)
    f = click.option("--out", default=None, help="Output directory (overrides INDEXPROBE_OUT and config).")(f)
    f = click.option("--stamp", is_flag=True, help="Record wall-clock time in the manifest.")(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Build composite indices and probe their sensitivity and validity."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@_common
def rank(config, stamp, **kw):
    """Rank every configured spec on its frame."""
    _execute("rank", do_rank, config, stamp, **kw)


@main.command()
@_common
def sensitivity(config, stamp, **kw):
    """Compare variants (and optionally a finer scale) against the base spec."""
    _execute("sensitivity", do_sensitivity, config, stamp, **kw)


@main.command()
@_common
def validity(config, stamp, **kw):
    """Correlation matrices, impact correlations and specification tables."""
    _execute("validity", do_validity, config, stamp, **kw)


@main.command()
@_common
def ingest(config, stamp, **kw):
    """Turn raw impact records into per-unit outcome tables."""
    _execute("ingest", do_ingest, config, stamp, **kw)


if __name__ == "__main__":
    main()
