"""
threatgeo command-line tool.

  python -m threatgeo.cli pipeline --config run.json
  python -m threatgeo.cli evaluate --matrix 91,9,23,77
  python -m threatgeo.cli geo-top --checkpoint out/checkpoint.jsonl --role target --out top.csv

Exit status: 0 ok, 1 pipeline failure, 2 invalid configuration or usage.
"""

import argparse
import datetime as dt
import json
import logging
import os
import sys
from typing import List, Optional

import coloredlogs

from . import __version__, baseline, evaluate, extract
from .backends import MockBackend
from .charts import ChartKind, emit_chart
from .checkpoint import read_checkpoint
from .config import LoadedConfig, load_config
from .db import ReportCache
from .errors import ConfigError, ThreatGeoError
from .evaluate import GroundTruth
from .geopolitics import (
    Bucket,
    Gazetteer,
    Role,
    alliance_table,
    dyad_table,
    explode_pairs,
    load_roster,
    overlay_hints,
    ranking_table,
)
from .ingest import SourceDescriptor, ingest_all, read_records, write_records
from .ioc import (
    Averaging,
    detection_rates,
    fetch_many,
    group_tools,
    harvest_iocs,
    load_family_index,
    read_hash_list,
    read_iocs,
    write_iocs,
)
from .ratelimit import RateLimiter
from .report import CHECKPOINT_FILE, IOCS_FILE, RECORDS_FILE, build_report, ranking_chart_table, write_run_meta
from .runmeta import RunMeta, command_meta, write_csv
from .scan_client import DEFAULT_STATIC_ML, RecordedScanClient, VirusTotalClient
from .schema import load_schema

logger = logging.getLogger("threatgeo")

LOG_LEVELS = [logging.WARNING, logging.INFO, logging.DEBUG]


class UsageError(ValueError):
    pass


def setup_logging(verbose: int) -> None:
    level = LOG_LEVELS[min(len(LOG_LEVELS) - 1, verbose)]
    # main() may run several times in one process
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    coloredlogs.install(level=level, logger=logger, stream=sys.stderr)


def _threats_with_hints(checkpoint: str, records: Optional[str]):
    threats = read_checkpoint(checkpoint)
    if records:
        threats = overlay_hints(threats, read_records(records))
    return threats


# --- subcommands ---
def _meta(args) -> RunMeta:
    return command_meta(args.command, vars(args), seed=getattr(args, "seed", 0) or 0)


def cmd_ingest(args) -> int:
    descriptors = [SourceDescriptor.parse(s) for s in args.source]
    records, report = ingest_all(descriptors, max_workers=args.workers)
    write_records(records, args.out, _meta(args))
    for stats in report.values():
        if stats.malformed:
            print(f"ingest: {stats.source_id}: {len(stats.malformed)} malformed entries skipped", file=sys.stderr)
    return 0


def cmd_sample(args) -> int:
    if args.config:
        cfg = load_config(args.config).config
        if cfg.ground_truth is None:
            raise ConfigError("invalid run configuration", ["ground_truth: required for sampling"])
        gt = cfg.ground_truth.ground_truth()
    else:
        if not args.category:
            raise UsageError("give --config or at least one --category NAME=true|false")
        table = {}
        for item in args.category:
            name, _, value = item.rpartition("=")
            if not name or value.lower() not in ("true", "false"):
                raise UsageError(f"--category expects NAME=true|false, got {item!r}")
            table[name] = value.lower() == "true"
        gt = GroundTruth(table, source_id=args.gt_source)
    sample = evaluate.stratified_sample(read_records(args.records), args.n_per_class, args.seed, gt)
    evaluate.write_labels(sample, args.out, _meta(args))
    return 0


def _chart(args, table, kind: ChartKind, title: str, highlight=()) -> None:
    if getattr(args, "chart", None):
        emit_chart(table, kind, args.chart, title, highlight, _meta(args))


def cmd_geo_top(args) -> int:
    gazetteer = Gazetteer.load(args.aliases, args.regions)
    pairs = explode_pairs(_threats_with_hints(args.checkpoint, args.records), gazetteer)
    table = ranking_table(pairs, Role(args.role), args.k)
    write_csv(table, args.out, _meta(args))
    _chart(args, ranking_chart_table(pairs, Role(args.role), args.k), ChartKind.GROUPED_BAR, f"Top {args.k} threat {args.role}s")
    return 0


def cmd_geo_alliances(args) -> int:
    gazetteer = Gazetteer.load(args.aliases, args.regions)
    roster = load_roster(args.roster, gazetteer)
    pairs = explode_pairs(_threats_with_hints(args.checkpoint, args.records), gazetteer)
    table = alliance_table(roster, pairs, Role(args.role))
    write_csv(table, args.out, _meta(args))
    _chart(args, table, ChartKind.GROUPED_BAR, f"Threat {args.role}s by alliance")
    return 0


def cmd_geo_timeline(args) -> int:
    gazetteer = Gazetteer.load(args.aliases, args.regions)
    threats = _threats_with_hints(args.checkpoint, args.records)
    if args.source:
        threats = [r for r in threats if r.source_id == args.source]
    table = dyad_table(threats, args.origin, args.target, Bucket(args.bucket), gazetteer)
    write_csv(table, args.out, _meta(args))
    _chart(args, table.drop(columns="count"), ChartKind.TIMELINE, f"{args.origin} -> {args.target}")
    return 0


def cmd_ioc_harvest(args) -> int:
    index = load_family_index(args.families)
    groups = group_tools(read_checkpoint(args.checkpoint), read_records(args.records), index)
    iocs = harvest_iocs(groups, index, max_per_family=args.max_per_family, seed=args.seed)
    write_iocs(iocs, args.out, _meta(args))
    return 0


def _scan_client(fixtures: Optional[str], rpm: float, api_key_env: str = "VT_API_KEY"):
    if fixtures:
        return RecordedScanClient.from_dir(fixtures)
    return VirusTotalClient(api_key_env=api_key_env, limiter=RateLimiter.per_minute(rpm))


def cmd_ioc_fetch(args) -> int:
    client = _scan_client(args.fixtures, args.rpm)
    cache = ReportCache(args.cache, args.static_ml or DEFAULT_STATIC_ML)
    _, failures = fetch_many(client, cache, read_hash_list(args.hashes), max_workers=args.workers)
    if failures:
        print(f"ioc-fetch: {len(failures)} hashes failed", file=sys.stderr)
    return 0


def cmd_ioc_rates(args) -> int:
    static_ml = args.static_ml or sorted(DEFAULT_STATIC_ML)
    iocs = read_iocs(args.iocs)
    cache = ReportCache(args.cache, static_ml)
    wanted = {r.hash for r in iocs}
    reports = [r for r in cache.reports() if r.hash in wanted]
    averaging = Averaging.MACRO if args.macro else Averaging.MICRO
    stats = detection_rates(reports, iocs, args.filter, static_ml, args.miss_on_unsupported, averaging)
    table = stats.engine_table()
    write_csv(table, args.out, _meta(args))
    groups_path = os.path.splitext(args.out)[0] + "_groups.csv"
    write_csv(stats.group_table(), groups_path, _meta(args))
    highlight = [e for e in table["engine"] if e in set(static_ml)]
    _chart(args, table[["engine", "rate"]], ChartKind.GROUPED_BAR, "Detection rate by engine", highlight)
    return 0


def cmd_report(args) -> int:
    loaded = load_config(args.config, output_dir=args.out)
    build_report(loaded.config.output_dir, loaded.config, loaded.meta)
    return 0


def run_pipeline(loaded: LoadedConfig) -> int:
    """Full run into the configured output directory, then the report."""
    cfg, meta = loaded.config, loaded.meta
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    started = dt.datetime.now(dt.timezone.utc)
    status = {}

    records, ingest_report = ingest_all(cfg.descriptors())
    records_path = os.path.join(out, RECORDS_FILE)
    write_records(records, records_path, meta)
    with open(os.path.join(out, "ingest_report.json"), "w", encoding="utf-8", newline="\n") as f:
        json.dump(
            {"_meta": meta.as_dict(), "sources": {k: vars(v) for k, v in ingest_report.items()}},
            f, indent=2, sort_keys=True,
        )
        f.write("\n")

    schema = load_schema(cfg.schema_path)
    if cfg.backend.provider == "mock":
        backend = MockBackend.from_file(cfg.backend.mock_table)
    else:
        backend = extract.make_backend(None, api_key_env=cfg.backend.api_key_env)
    checkpoint = extract.run_pipeline(
        backend, schema, records, os.path.join(out, CHECKPOINT_FILE),
        config=cfg.backend.backend_config(), meta=meta,
    )
    status["extraction"] = checkpoint.run_stats.by_status
    if checkpoint.run_stats.failures:
        print(
            f"pipeline: {checkpoint.run_stats.failures} records failed extraction "
            f"({checkpoint.run_stats.by_status})",
            file=sys.stderr,
        )

    lexicon = baseline.load_lexicon(cfg.lexicon_path)
    baseline_path = os.path.join(out, "baseline_predictions.jsonl")
    baseline.write_predictions(baseline.predict(lexicon, records), baseline_path, meta)

    if cfg.ground_truth is not None:
        sample = evaluate.stratified_sample(records, cfg.eval_n_per_class, cfg.seed, cfg.ground_truth.ground_truth())
        labels_path = os.path.join(out, "labels.jsonl")
        evaluate.write_labels(sample, labels_path, meta)
        labels = evaluate.read_labels(labels_path)
        for name, pred_path in (("extractor", checkpoint.path), ("baseline", baseline_path)):
            cm = evaluate.evaluate(evaluate.read_predictions(pred_path), labels)
            evaluate.write_metrics(evaluate.metrics_payload(cm, meta), os.path.join(out, f"metrics_{name}.json"))

    if cfg.ioc is not None:
        index = load_family_index(cfg.ioc.family_index)
        groups = group_tools(checkpoint.records(), records, index)
        iocs = harvest_iocs(groups, index, cfg.ioc.max_per_family, cfg.seed)
        write_iocs(iocs, os.path.join(out, IOCS_FILE), meta)
        client = _scan_client(cfg.ioc.scan_fixtures, cfg.ioc.requests_per_minute, cfg.ioc.api_key_env)
        cache = ReportCache(cfg.cache_dir, cfg.ioc.static_ml)
        _, failures = fetch_many(client, cache, [r.hash for r in iocs], max_workers=cfg.ioc.max_workers)
        status["scan_failures"] = len(failures)
        if failures:
            print(f"pipeline: {len(failures)} hashes could not be scanned", file=sys.stderr)

    written = build_report(out, cfg, meta)
    write_run_meta(out, meta, {
        "started_at": started.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "finished_at": dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "version": __version__,
        "status": status,
        "report_files": len(written),
        "max_per_family": cfg.ioc.max_per_family if cfg.ioc else None,
    })
    return 0


def cmd_pipeline(args) -> int:
    return run_pipeline(load_config(args.config, output_dir=args.out))


# --- parser ---
def _geo_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True, help="Extraction checkpoint")
    p.add_argument("--records", default=None, help="Normalized records; their source hints override extracted countries")
    p.add_argument("--aliases", default=None, help="Country alias table")
    p.add_argument("--regions", default=None, help="Region alias table")
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--chart", default=None, help="Also write an SVG chart here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threatgeo", description="Cyber-threat geopolitics pipeline")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="Repeat for more detail")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("ingest", help="Normalize source dumps into one records file")
    p.add_argument("--source", action="append", required=True, help="source_id:kind:format:path (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract", help="Structured extraction with the generative model")
    extract.add_arguments(p)
    p.set_defaults(func=extract.run_from_args)

    p = sub.add_parser("baseline", help="Lexicon baseline predictions")
    baseline.add_arguments(p)
    p.set_defaults(func=baseline.run_from_args)

    p = sub.add_parser("sample", help="Stratified evaluation set -> labels file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="Take the category table from this run config")
    p.add_argument("--category", action="append", default=[], help="NAME=true|false (repeatable)")
    p.add_argument("--gt-source", default=None, help="Only label records of this source")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="Metrics of predictions against labels")
    evaluate.add_arguments(p)
    p.set_defaults(func=evaluate.run_from_args)

    p = sub.add_parser("geo-top", help="Top-k origins or targets")
    _geo_common(p)
    p.add_argument("--role", choices=[r.value for r in Role], default=Role.ORIGIN.value)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_geo_top)

    p = sub.add_parser("geo-alliances", help="NATO / BRICS / OTHER split")
    _geo_common(p)
    p.add_argument("--role", choices=[r.value for r in Role], default=Role.ORIGIN.value)
    p.add_argument("--roster", default=None, help="Alliance roster file")
    p.set_defaults(func=cmd_geo_alliances)

    p = sub.add_parser("geo-timeline", help="Incidents per period for one origin -> target dyad")
    _geo_common(p)
    p.add_argument("--origin", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--bucket", choices=[b.value for b in Bucket], default=Bucket.YEAR.value)
    p.add_argument("--source", default=None, help="Only records from this source id")
    p.set_defaults(func=cmd_geo_timeline)

    p = sub.add_parser("ioc-harvest", help="IOC hashes for the tool families of threat groups")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--families", required=True, help="Family index (JSON or family,hash table)")
    p.add_argument("--max-per-family", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ioc_harvest)

    p = sub.add_parser("ioc-fetch", help="Fetch scan reports into the local cache")
    p.add_argument("--hashes", required=True, help="IOC table or one hash per line")
    p.add_argument("--cache", required=True)
    p.add_argument("--fixtures", default=None, help="Replay recorded responses from this directory")
    p.add_argument("--rpm", type=float, default=4.0, help="Requests per minute for the live API")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--static-ml", action="append", default=None, help="Static-ML engine name (repeatable)")
    p.set_defaults(func=cmd_ioc_fetch)

    p = sub.add_parser("ioc-rates", help="Per-engine detection rates from the cache")
    p.add_argument("--cache", required=True)
    p.add_argument("--iocs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter", choices=["all", "energy"], default="all")
    p.add_argument("--miss-on-unsupported", action="store_true")
    p.add_argument("--macro", action="store_true", help="Macro-average group rates")
    p.add_argument("--static-ml", action="append", default=None)
    p.add_argument("--chart", default=None)
    p.set_defaults(func=cmd_ioc_rates)

    p = sub.add_parser("report", help="Tables and charts for a completed run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="Run directory (default: the config's output_dir)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="Full run from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="Output directory (default: the config's output_dir)")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        for problem in e.problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    except UsageError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (ThreatGeoError, ValueError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"{args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
