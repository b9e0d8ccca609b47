"""
Report tables and charts over a completed run directory.

Inputs are the files the pipeline leaves in the run directory
(records.jsonl, checkpoint.jsonl, metrics_*.json, iocs.csv) plus the scan
cache. Every analysis writes one CSV and, where a chart makes sense, one
SVG next to it under `report/`.
"""

import json
import logging
import os
import re
from collections import Counter
from typing import Dict, Iterable, List, Optional

import pandas as pd

from .charts import ChartKind, emit_chart
from .checkpoint import read_checkpoint
from .config import RunConfig
from .db import ReportCache
from .errors import EvaluationError
from .geopolitics import (
    Bucket,
    EnergyFilter,
    GeoPair,
    Gazetteer,
    Role,
    alliance_table,
    dyad_table,
    energy_incident_table,
    explode_pairs,
    incident_timeline,
    load_roster,
    overlay_hints,
    rank_categorical,
    ranking_table,
    top_k,
)
from .ingest import RawRecord, read_records
from .ioc import detection_rates, read_iocs
from .metrics import ClassificationMetrics, comparison_table
from .runmeta import RunMeta, write_csv

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
CHECKPOINT_FILE = "checkpoint.jsonl"
IOCS_FILE = "iocs.csv"
REPORT_DIR = "report"


def slug(*parts: str) -> str:
    return "_".join(re.sub(r"[^0-9a-z]+", "-", p.lower()).strip("-") for p in parts if p)


def ranking_chart_table(pairs: List[GeoPair], role: Role, k: int) -> pd.DataFrame:
    """Overall top-k places with their energy / non-energy split."""
    top = top_k(pairs, role, k, EnergyFilter.ALL)
    split = Counter((p.place, p.energy_related) for p in pairs if p.role is role)
    rows = [{"place": place.name, "energy": split[(place, True)], "non-energy": split[(place, False)]} for place, _ in top]
    return pd.DataFrame(rows, columns=["place", "energy", "non-energy"])


def _metrics_from_file(path: str) -> Optional[ClassificationMetrics]:
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return ClassificationMetrics(data["accuracy"], data["precision"], data["recall"], data["f1"])


class ReportWriter:
    def __init__(self, out_dir: str, meta: Optional[RunMeta]):
        self.out_dir = out_dir
        self.meta = meta
        self.written: List[str] = []

    def table(self, df: pd.DataFrame, name: str, index: bool = False) -> str:
        path = os.path.join(self.out_dir, name + ".csv")
        write_csv(df.reset_index() if index else df, path, self.meta)
        self.written.append(path)
        return path

    def chart(self, df: pd.DataFrame, name: str, kind: ChartKind, title: str, highlight: Iterable[str] = ()) -> None:
        path = emit_chart(df, kind, os.path.join(self.out_dir, name + ".svg"), title, highlight, self.meta)
        if path:
            self.written.append(path)


def build_report(run_dir: str, config: RunConfig, meta: Optional[RunMeta] = None) -> List[str]:
    """Write every analysis the run's files support; returns the written paths."""
    out = ReportWriter(os.path.join(run_dir, REPORT_DIR), meta)
    raw: List[RawRecord] = read_records(os.path.join(run_dir, RECORDS_FILE))
    checkpoint_path = os.path.join(run_dir, CHECKPOINT_FILE)
    threats = read_checkpoint(checkpoint_path) if os.path.exists(checkpoint_path) else []
    threats = sorted(overlay_hints(threats, raw), key=lambda r: r.ref)
    gazetteer = Gazetteer.load(config.aliases_path, config.regions_path)
    roster = load_roster(config.roster_path, gazetteer)

    named = {}
    for label, fname in (("extractor", "metrics_extractor.json"), ("baseline", "metrics_baseline.json")):
        m = _metrics_from_file(os.path.join(run_dir, fname))
        if m is not None:
            named[label] = m
    if named:
        out.table(comparison_table(named), "comparison", index=True)

    for source_id in sorted({r.source_id for r in threats}):
        subset = [r for r in threats if r.source_id == source_id]
        pairs = explode_pairs(subset, gazetteer)
        for role in Role:
            name = slug("top", role.value, source_id)
            out.table(ranking_table(pairs, role, config.top_k), name)
            out.chart(
                ranking_chart_table(pairs, role, config.top_k), name, ChartKind.GROUPED_BAR,
                f"Top {config.top_k} threat {role.value}s ({source_id})",
            )
            name = slug("alliances", role.value, source_id)
            table = alliance_table(roster, pairs, role)
            out.table(table, name)
            out.chart(table, name, ChartKind.GROUPED_BAR, f"Threat {role.value}s by alliance ({source_id})")

    for dyad in config.dyads:
        name = slug("dyad", dyad.origin, dyad.target)
        title = f"{dyad.origin} -> {dyad.target}"
        table = dyad_table(threats, dyad.origin, dyad.target, dyad.bucket, gazetteer)
        out.table(table, name)
        out.chart(table.drop(columns="count"), name, ChartKind.TIMELINE, title)
        for source_id in sorted({r.source_id for r in threats}):
            per_source = dyad_table(
                [r for r in threats if r.source_id == source_id], dyad.origin, dyad.target, dyad.bucket, gazetteer
            )
            if per_source.empty:
                continue
            out.table(per_source, slug(name, source_id))
            out.chart(per_source.drop(columns="count"), slug(name, source_id), ChartKind.TIMELINE,
                      f"{title} ({source_id})")
        listing = energy_incident_table(threats, raw, dyad=(dyad.origin, dyad.target), gazetteer=gazetteer)
        out.table(listing, slug("energy", "incidents", dyad.origin, dyad.target))

    timeline = incident_timeline(threats, Bucket.YEAR)
    out.table(timeline, "incidents_timeline")
    out.chart(timeline, "incidents_timeline", ChartKind.TIMELINE, "Incidents per year")
    out.table(energy_incident_table(threats, raw), "energy_incidents")

    for cat in config.categorical:
        ranked = rank_categorical([r for r in raw if r.source_id == cat.source_id], cat.field, cat.k)
        table = pd.DataFrame(ranked, columns=["value", "count"])
        name = slug("top", cat.field, cat.source_id)
        out.table(table, name)
        out.chart(table, name, ChartKind.GROUPED_BAR, f"Top {cat.k} {cat.field} ({cat.source_id})")

    iocs_path = os.path.join(run_dir, IOCS_FILE)
    if config.ioc is not None and os.path.exists(iocs_path):
        _detection_report(out, config, iocs_path)

    logger.info("report: %d files under %s", len(out.written), out.out_dir)
    return out.written


def _detection_report(out: ReportWriter, config: RunConfig, iocs_path: str) -> None:
    iocs = read_iocs(iocs_path)
    cache = ReportCache(config.cache_dir, config.ioc.static_ml)
    wanted = {r.hash for r in iocs}
    reports = [r for r in cache.reports() if r.hash in wanted]
    if not reports:
        logger.warning("no cached scan reports for the run's IOCs; detection report skipped")
        return
    for flt in ("all", "energy"):
        try:
            stats = detection_rates(
                reports, iocs, flt, config.ioc.static_ml, config.ioc.miss_on_unsupported, config.ioc.averaging
            )
        except EvaluationError as e:
            logger.warning("detection rates (%s) skipped: %s", flt, e)
            continue
        engines = stats.engine_table()
        out.table(engines, slug("detection", "engines", flt))
        out.table(stats.group_table(), slug("detection", "groups", flt))
        static_ml = [e for e in engines["engine"] if e in set(config.ioc.static_ml)]
        out.chart(
            engines[["engine", "rate"]], slug("detection", "engines", flt), ChartKind.GROUPED_BAR,
            f"Detection rate by engine ({flt} IOCs)", highlight=static_ml,
        )


def write_run_meta(run_dir: str, meta: RunMeta, extra: Dict) -> str:
    """The one file allowed to hold wall-clock timestamps."""
    path = os.path.join(run_dir, "run_meta.json")
    payload = dict(meta.as_dict())
    payload.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path
