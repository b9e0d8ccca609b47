"""
IOC analytics: from threat groups to per-engine detection rates.

  group_tools      threat groups and the malware families they use
  harvest_iocs     family -> file hashes, energy flag inherited from groups
  fetch_report(s)  verdicts per hash, through the local cache
  detection_rates  per-engine and static-ML / others / all aggregates
"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .db import ReportCache
from .errors import EvaluationError, InvalidHashError, ScanError
from .ingest import RawRecord, RecordRef, as_list
from .records import ThreatRecord
from .runmeta import RunMeta, provenance_clock, read_csv, utc_stamp, write_csv
from .scan_client import (
    DEFAULT_STATIC_ML,
    Outcome,
    ScanClient,
    ScanReport,
    normalize_hash,
    parse_scan_response,
)

logger = logging.getLogger(__name__)

STATIC_ML_GROUP = "static-ml"
OTHERS_GROUP = "others"
ALL_GROUP = "all"


class Averaging(str, Enum):
    MICRO = "micro"
    MACRO = "macro"


@dataclass(frozen=True)
class IocRecord:
    family: str
    hash: str
    energy_related: bool

    def __post_init__(self):
        object.__setattr__(self, "hash", normalize_hash(self.hash))


@dataclass(frozen=True)
class GroupTools:
    source_id: str
    record_id: str
    energy_related: bool
    families: Tuple[str, ...]

    @property
    def ref(self) -> RecordRef:
        return (self.source_id, self.record_id)


# --- Family index ---
_HASH_KEYS = ("sha256", "sha1", "md5", "hash")


@dataclass(frozen=True)
class FamilyEntry:
    hashes: Tuple[str, ...]
    # threat-group names the family is attributed to
    attribution: Tuple[str, ...] = ()


FamilyIndex = Dict[str, FamilyEntry]


def _hash_of(entry: Any) -> Optional[str]:
    if isinstance(entry, str):
        return entry
    if isinstance(entry, dict):
        for key in _HASH_KEYS:
            if entry.get(key):
                return entry[key]
    return None


def _family_entry(value: Any) -> FamilyEntry:
    if isinstance(value, dict):
        samples = value.get("samples") or value.get("hashes") or []
        attribution = as_list(value.get("attribution"))
    else:
        samples, attribution = value or [], []
    hashes = [_hash_of(s) for s in samples]
    return FamilyEntry(tuple(h for h in hashes if h), tuple(attribution))


def load_family_index(path: str) -> FamilyIndex:
    """Family -> hashes (+ attribution).

    JSON: `{"win.industroyer": ["<sha256>", ...]}` or
    `{"win.industroyer": {"samples": [{"sha256": ...}], "attribution": ["Sandworm"]}}`.
    Anything else is read as a table with `family`, `hash` and optional
    `attribution` (`;`-joined) columns.
    """
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        return {str(family): _family_entry(value) for family, value in doc.items()}
    df = read_csv(path, dtype=str)
    index: FamilyIndex = {}
    for family, group in df.groupby("family", sort=True):
        attribution: List[str] = []
        if "attribution" in group:
            for cell in group["attribution"]:
                attribution += [a for a in as_list(cell) if a not in attribution]
        index[str(family)] = FamilyEntry(tuple(str(h) for h in group["hash"] if str(h)), tuple(attribution))
    return index


def _fold(name: str) -> str:
    return re.sub(r"[^0-9a-z]", "", name.lower())


def _family_lookup(family_index: FamilyIndex) -> Dict[str, List[str]]:
    """Folded names -> index keys; `win.industroyer` also answers to `industroyer`."""
    lookup: Dict[str, List[str]] = {}
    for key in family_index:
        names = {_fold(key)}
        if "." in key:
            names.add(_fold(key.split(".", 1)[1]))
        for n in names:
            lookup.setdefault(n, []).append(key)
    return lookup


def _attribution_lookup(family_index: FamilyIndex) -> Dict[str, List[str]]:
    lookup: Dict[str, List[str]] = {}
    for key, entry in family_index.items():
        for group in entry.attribution:
            lookup.setdefault(_fold(group), []).append(key)
    return lookup


def group_tools(
    threat_records: Iterable[ThreatRecord],
    raw_records: Iterable[RawRecord],
    family_index: FamilyIndex,
) -> List[GroupTools]:
    """Families each ok threat group uses.

    A family counts when the group's `tools` hint names it, or when the
    family is attributed to the group's name, synonyms or aliases.
    """
    raw = {r.ref: r for r in raw_records}
    by_family = _family_lookup(family_index)
    by_group = _attribution_lookup(family_index)
    out: List[GroupTools] = []
    for rec in threat_records:
        source = raw.get(rec.ref)
        if not rec.ok or source is None:
            continue
        hints = source.structured_hints
        families = set()
        for tool in as_list(hints.get("tools")):
            families.update(by_family.get(_fold(tool), []))
        for key in ("name", "synonyms", "aliases"):
            for name in as_list(hints.get(key)):
                families.update(by_group.get(_fold(name), []))
        if families:
            out.append(GroupTools(rec.source_id, rec.record_id, bool(rec.energy_related), tuple(sorted(families))))
    logger.info("%d groups resolved to at least one tool family", len(out))
    return out


def harvest_iocs(
    groups: Iterable[GroupTools],
    family_index: FamilyIndex,
    max_per_family: Optional[int] = None,
    seed: int = 0,
) -> List[IocRecord]:
    """One IocRecord per (family, hash). A family is energy-related when any
    group using it is. `max_per_family` caps each family with a seeded draw."""
    energy: Dict[str, bool] = {}
    for g in groups:
        for family in g.families:
            energy[family] = energy.get(family, False) or g.energy_related
    rng = np.random.default_rng(seed)
    out: List[IocRecord] = []
    for family in sorted(energy):
        hashes: List[str] = []
        entry = family_index.get(family)
        for value in (entry.hashes if entry else ()):
            try:
                h = normalize_hash(value)
            except InvalidHashError:
                logger.warning("%s: skipping malformed hash %r", family, value)
                continue
            if h not in hashes:
                hashes.append(h)
        if not hashes:
            logger.warning("%s: no hashes in the family index", family)
            continue
        if max_per_family is not None and len(hashes) > max_per_family:
            keep = sorted(rng.choice(len(hashes), size=max_per_family, replace=False))
            hashes = [hashes[i] for i in keep]
        out.extend(IocRecord(family, h, energy[family]) for h in hashes)
    if out:
        share = sum(1 for r in out if r.energy_related) / len(out)
        logger.info("harvested %d IOCs from %d families (%.2f%% energy-related)", len(out), len(energy), 100 * share)
    return out


def write_iocs(iocs: Iterable[IocRecord], path: str, meta: Optional[RunMeta] = None) -> None:
    df = pd.DataFrame(
        [{"family": r.family, "hash": r.hash, "energy_related": r.energy_related} for r in iocs],
        columns=["family", "hash", "energy_related"],
    )
    write_csv(df, path, meta)


def read_iocs(path: str) -> List[IocRecord]:
    df = read_csv(path, dtype=str)
    return [
        IocRecord(str(row.family), str(row.hash), str(row.energy_related).strip().lower() == "true")
        for row in df.itertuples(index=False)
    ]


def read_hash_list(path: str) -> List[str]:
    """Hashes from an IOC table (`hash` column) or a plain one-per-line list."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [l.strip() for l in f if l.strip() and not l.startswith("#")]
    if lines and "hash" in lines[0].split(","):
        return [r.hash for r in read_iocs(path)]
    return lines


# --- Fetching ---
def fetch_report(
    client: ScanClient,
    cache: ReportCache,
    hash_value: str,
    clock=None,
) -> ScanReport:
    """Cached report, or one API call whose result is cached before returning."""
    h = normalize_hash(hash_value)
    cached = cache.get(h)
    if cached is not None:
        return cached

    def _fetch() -> ScanReport:
        again = cache.get(h)
        if again is not None:
            return again
        try:
            raw = client.fetch_raw(h)
        except ScanError:
            raise
        except Exception as e:
            raise ScanError(h, str(e)) from e
        stamp = utc_stamp(clock or provenance_clock(client))
        report = parse_scan_response(raw, h, cache.static_ml, fetched_at=stamp)
        cache.put(report, raw)
        return report

    return cache.flight.do(h, _fetch)


def fetch_many(
    client: ScanClient,
    cache: ReportCache,
    hashes: Iterable[str],
    max_workers: int = 4,
) -> Tuple[Dict[str, ScanReport], Dict[str, str]]:
    """Reports for every hash that could be fetched, plus hash -> error for the rest."""
    wanted: List[str] = []
    failures: Dict[str, str] = {}
    for value in hashes:
        try:
            h = normalize_hash(value)
        except InvalidHashError as e:
            failures[str(value)] = str(e)
            logger.warning("%s", e)
            continue
        if h not in wanted:
            wanted.append(h)

    def _one(h: str):
        try:
            return h, fetch_report(client, cache, h), None
        except ScanError as e:
            logger.warning("scan failed for %s: %s", h, e.detail)
            return h, None, e.detail

    reports: Dict[str, ScanReport] = {}
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        for h, report, error in pool.map(_one, wanted):
            if report is not None:
                reports[h] = report
            else:
                failures[h] = error
    logger.info("fetched %d reports, %d failures", len(reports), len(failures))
    return reports, failures


# --- Detection statistics ---
@dataclass(frozen=True)
class EngineRate:
    name: str
    scanned: int
    detected: int
    rate: float
    is_static_ml: bool = False


@dataclass(frozen=True)
class DetectionStats:
    engines: Dict[str, EngineRate]
    groups: Dict[str, EngineRate]
    averaging: Averaging = Averaging.MICRO

    def engine_table(self) -> pd.DataFrame:
        rows = [
            {"rank": i, "engine": name, "rate": round(rate, 4), "is_static_ml": flag,
             "scanned": self.engines[name].scanned, "detected": self.engines[name].detected}
            for i, (name, rate, flag) in enumerate(rank_engines(self), 1)
        ]
        return pd.DataFrame(rows, columns=["rank", "engine", "rate", "is_static_ml", "scanned", "detected"])

    def group_table(self) -> pd.DataFrame:
        rows = [
            {"group": g.name, "scanned": g.scanned, "detected": g.detected, "rate": round(g.rate, 4)}
            for g in self.groups.values()
        ]
        return pd.DataFrame(rows, columns=["group", "scanned", "detected", "rate"])


def _group_rate(name: str, engines: List[EngineRate], averaging: Averaging) -> EngineRate:
    scanned = sum(e.scanned for e in engines)
    detected = sum(e.detected for e in engines)
    if averaging is Averaging.MACRO:
        rates = [e.rate for e in engines if e.scanned > 0]
        rate = float(np.mean(rates)) if rates else 0.0
    else:
        rate = detected / scanned if scanned else 0.0
    return EngineRate(name, scanned, detected, rate)


def detection_rates(
    reports: Iterable[ScanReport],
    iocs: Iterable[IocRecord],
    energy_filter: str = "all",
    static_ml: Iterable[str] = DEFAULT_STATIC_ML,
    miss_on_unsupported: bool = False,
    averaging: Averaging = Averaging.MICRO,
) -> DetectionStats:
    """Per-engine rate = detected / scanned over the selected hashes.

    Unsupported verdicts leave the engine's denominator unless
    `miss_on_unsupported` counts them as misses.
    """
    static_ml = frozenset(static_ml)
    averaging = Averaging(averaging)
    energy_of = {r.hash: r.energy_related for r in iocs}
    reports = list(reports)
    unknown = sorted(r.hash for r in reports if r.hash not in energy_of)
    if unknown:
        raise EvaluationError(f"scan reports for hashes outside the IOC set: {unknown[:5]}")
    if energy_filter == "energy":
        reports = [r for r in reports if energy_of[r.hash]]
    elif energy_filter != "all":
        raise ValueError(f"energy_filter must be 'energy' or 'all', got {energy_filter!r}")
    if not reports:
        raise EvaluationError("no scan reports to aggregate")

    rows = [
        {"hash": r.hash, "engine": v.engine, "outcome": v.outcome.value}
        for r in reports
        for v in r.verdicts
    ]
    df = pd.DataFrame(rows, columns=["hash", "engine", "outcome"])
    df["counted"] = miss_on_unsupported | (df["outcome"] != Outcome.UNSUPPORTED.value)
    df["hit"] = df["outcome"] == Outcome.DETECTED.value
    per_engine = df.groupby("engine", sort=True).agg(scanned=("counted", "sum"), detected=("hit", "sum"))

    engines: Dict[str, EngineRate] = {}
    for name, row in per_engine.iterrows():
        scanned, detected = int(row["scanned"]), int(row["detected"])
        engines[name] = EngineRate(
            name, scanned, detected, detected / scanned if scanned else 0.0, name in static_ml
        )
    ml = [e for e in engines.values() if e.is_static_ml]
    others = [e for e in engines.values() if not e.is_static_ml]
    groups = {
        STATIC_ML_GROUP: _group_rate(STATIC_ML_GROUP, ml, averaging),
        OTHERS_GROUP: _group_rate(OTHERS_GROUP, others, averaging),
        ALL_GROUP: _group_rate(ALL_GROUP, list(engines.values()), averaging),
    }
    logger.info(
        "detection (%s, %s): static-ml %.1f%%, others %.1f%%",
        energy_filter, averaging.value,
        100 * groups[STATIC_ML_GROUP].rate, 100 * groups[OTHERS_GROUP].rate,
    )
    return DetectionStats(engines, groups, averaging)


def rank_engines(stats: DetectionStats) -> List[Tuple[str, float, bool]]:
    """(engine, rate, is_static_ml), best first; engines that scanned nothing are left out."""
    ranked = [e for e in stats.engines.values() if e.scanned > 0]
    ranked.sort(key=lambda e: (-e.rate, e.name))
    return [(e.name, e.rate, e.is_static_ml) for e in ranked]
