"""
Source adapters: turn heterogeneous threat-database dumps into RawRecords.

Each database reports origins, targets and sectors its own way (explicit
JSON fields, tabular columns or free text), so every source id gets its own
converter registered with `register_adapter`. Reading is driven by the
descriptor's format; converting is driven by its source id. Unregistered ids
fall back to a generic converter that looks for the usual column names.
"""

import csv
import datetime as dt
import hashlib
import io
import json
import logging
import os
import re
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple, Union

import pandas as pd
import requests

from .errors import IngestError
from .runmeta import RunMeta, is_meta_object

logger = logging.getLogger(__name__)

HintValue = Union[str, List[str]]
RecordRef = Tuple[str, str]


class SourceKind(str, Enum):
    ACTOR = "actor"
    INCIDENT = "incident"
    REPORT = "report"
    MALWARE = "malware"


class SourceFormat(str, Enum):
    JSON_OBJECTS = "json-objects"
    TABULAR = "tabular"
    TEXT_LIST = "text-list"


@dataclass(frozen=True)
class SourceDescriptor:
    source_id: str
    kind: SourceKind
    path: str
    format: SourceFormat

    def __post_init__(self):
        if not self.source_id or not self.source_id.strip():
            raise ValueError("source_id must be non-empty")
        object.__setattr__(self, "kind", SourceKind(self.kind))
        object.__setattr__(self, "format", SourceFormat(self.format))

    @classmethod
    def parse(cls, spec: str) -> "SourceDescriptor":
        """Parse the command-line form `source_id:kind:format:path`."""
        parts = spec.split(":", 3)
        if len(parts) != 4:
            raise ValueError(f"expected source_id:kind:format:path, got {spec!r}")
        return cls(parts[0], SourceKind(parts[1]), parts[3], SourceFormat(parts[2]))


@dataclass
class RawRecord:
    source_id: str
    record_id: str
    description: str
    date: Optional[dt.date] = None
    structured_hints: Dict[str, HintValue] = field(default_factory=dict)
    ground_truth_category: Optional[str] = None

    @property
    def ref(self) -> RecordRef:
        return (self.source_id, self.record_id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source_id": self.source_id,
            "record_id": self.record_id,
            "date": self.date.isoformat() if self.date else None,
            "description": self.description,
            "structured_hints": self.structured_hints,
            "ground_truth_category": self.ground_truth_category,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RawRecord":
        return cls(
            source_id=str(data["source_id"]),
            record_id=str(data["record_id"]),
            description=str(data["description"]),
            date=parse_date(data.get("date")),
            structured_hints=dict(data.get("structured_hints") or {}),
            ground_truth_category=data.get("ground_truth_category"),
        )


@dataclass
class SourceStats:
    source_id: str
    records: int = 0
    dropped: int = 0
    malformed: List[int] = field(default_factory=list)
    snapshot_sha256: str = ""


IngestReport = Dict[str, SourceStats]


# --- Dates ---
_PARTIAL_DATE = re.compile(r"^\s*(\d{4})(?:[-/.](\d{1,2}))?(?:[-/.](\d{1,2}))?\s*$")
_MONTHS = (
    "january|february|march|april|may|june|july|august|september|october|november|december"
)
_LEADING_DATE = re.compile(
    rf"^\s*((?:(?:{_MONTHS})\s+\d{{4}})|(?:\d{{4}}(?:-\d{{1,2}}){{0,2}}))\s*[.:\-–]\s+",
    re.IGNORECASE,
)
_MISSING = {"", "nan", "none", "null", "unknown", "n/a", "na"}


def parse_date(value: Any) -> Optional[dt.date]:
    """Lenient date parsing; `2015` and `2015-12` become the first day of the period."""
    if value is None:
        return None
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    text = str(value).strip()
    if text.lower() in _MISSING:
        return None
    m = _PARTIAL_DATE.match(text)
    if m:
        try:
            return dt.date(int(m.group(1)), int(m.group(2) or 1), int(m.group(3) or 1))
        except ValueError:
            return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = pd.to_datetime(text, errors="coerce", utc=True)
    if pd.isna(ts):
        return None
    return ts.date()


def split_leading_date(text: str) -> Tuple[Optional[dt.date], str]:
    """`"May 2023. Denmark suffered ..."` -> (2023-05-01, "Denmark suffered ...")."""
    m = _LEADING_DATE.match(text or "")
    if not m:
        return None, text
    return parse_date(m.group(1)), text[m.end():]


# --- Value helpers ---
def _lower_keys(entry: Dict[str, Any]) -> Dict[str, Any]:
    return {str(k).strip().lower().replace(" ", "_"): v for k, v in entry.items()}


def _blank(value: Any) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and value != value:
        return True
    if isinstance(value, (list, dict)):
        return not value
    return str(value).strip() == ""


def _first(row: Dict[str, Any], *keys: str) -> Any:
    for key in keys:
        value = row.get(key)
        if not _blank(value):
            return value
    return None


def as_list(value: Any) -> List[str]:
    """Multi-valued fields arrive as lists, JSON-ish strings or `;`-joined text."""
    if _blank(value):
        return []
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if not _blank(v)]
    text = str(value).strip()
    if text.startswith("["):
        try:
            loaded = json.loads(text)
            if isinstance(loaded, list):
                return [str(v).strip() for v in loaded if not _blank(v)]
        except json.JSONDecodeError:
            text = text.strip("[]").replace("'", "").replace('"', "")
            return [p.strip() for p in text.split(",") if p.strip()]
    return [p.strip() for p in re.split(r"[;\n]", text) if p.strip()]


def synthetic_record_id(payload: Any) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# --- Adapter registry ---
Converter = Callable[[Any], Optional[Dict[str, Any]]]
_ADAPTERS: Dict[str, Converter] = {}


def register_adapter(source_id: str) -> Callable[[Converter], Converter]:
    """Register a converter from one raw dump entry to RawRecord fields.

    The converter returns a dict with `description` and optionally
    `record_id`, `date`, `structured_hints` and `ground_truth_category`, or
    None when the entry is not a logical record of the source (e.g. STIX
    relationship objects). Raising ValueError/KeyError/TypeError marks the
    entry as malformed.
    """

    def deco(fn: Converter) -> Converter:
        _ADAPTERS[source_id] = fn
        return fn

    return deco


def registered_sources() -> List[str]:
    return sorted(_ADAPTERS)


def _clean_hints(hints: Dict[str, Any]) -> Dict[str, HintValue]:
    out: Dict[str, HintValue] = {}
    for key, value in hints.items():
        if _blank(value):
            continue
        out[key] = [str(v) for v in value] if isinstance(value, list) else str(value).strip()
    return out


@register_adapter("csis")
def _convert_csis(entry: Any) -> Dict[str, Any]:
    if isinstance(entry, str):
        when, text = split_leading_date(entry)
        return {"description": text, "date": when}
    row = _lower_keys(entry)
    text = _first(row, "description", "event", "text") or ""
    when = _first(row, "date", "month")
    if when is None:
        when, text = split_leading_date(str(text))
    return {"record_id": _first(row, "id", "record_id"), "description": text, "date": when}


@register_adapter("eurepoc")
def _convert_eurepoc(entry: Dict[str, Any]) -> Dict[str, Any]:
    row = _lower_keys(entry)
    return {
        "record_id": _first(row, "incident_id", "id"),
        "description": _first(row, "description", "incident_description", "name"),
        "date": _first(row, "start_date", "date"),
        "ground_truth_category": _first(row, "receiver_category"),
        "structured_hints": {
            "origin": as_list(_first(row, "initiator_country")),
            "target": as_list(_first(row, "receiver_country")),
            "receiver_category": as_list(_first(row, "receiver_category")),
        },
    }


@register_adapter("malpedia")
def _convert_malpedia(entry: Dict[str, Any]) -> Dict[str, Any]:
    meta = entry.get("meta") or {}
    if not isinstance(meta, dict):
        raise TypeError("meta is not an object")
    return {
        "record_id": entry.get("uuid") or entry.get("_key"),
        "description": entry.get("description"),
        "structured_hints": {
            "name": entry.get("value") or entry.get("_key"),
            # origin is explicit in the JSON; victims are only suspected
            "origin": meta.get("country"),
            "suspected_victims": as_list(meta.get("cfr-suspected-victims")),
            "synonyms": as_list(meta.get("synonyms")),
            "tools": as_list(entry.get("families") or meta.get("families")),
        },
    }


@register_adapter("mitre")
def _convert_mitre(entry: Dict[str, Any]) -> Optional[Dict[str, Any]]:
    if entry.get("type") != "intrusion-set":
        return None
    if entry.get("revoked") or entry.get("x_mitre_deprecated"):
        return None
    external_id = None
    for ref in entry.get("external_references") or []:
        if ref.get("source_name") == "mitre-attack":
            external_id = ref.get("external_id")
    return {
        "record_id": entry["id"],
        "description": entry.get("description"),
        "date": entry.get("created"),
        "structured_hints": {
            "name": entry.get("name"),
            "aliases": as_list(entry.get("aliases")),
            "external_id": external_id,
        },
    }


@register_adapter("aiid")
def _convert_aiid(entry: Dict[str, Any]) -> Dict[str, Any]:
    row = _lower_keys(entry)
    return {
        "record_id": _first(row, "incident_id", "id"),
        "description": _first(row, "description", "text"),
        "date": _first(row, "date"),
        "structured_hints": {
            "title": _first(row, "title"),
            "harmed_parties": as_list(
                _first(row, "alleged_harmed_or_nearly_harmed_parties", "harmed_parties")
            ),
            "deployer": as_list(_first(row, "alleged_deployer_of_ai_system", "deployer")),
            "developer": as_list(_first(row, "alleged_developer_of_ai_system", "developer")),
        },
    }


def _convert_generic(entry: Any) -> Dict[str, Any]:
    if isinstance(entry, str):
        return {"description": entry}
    row = _lower_keys(entry)
    hints = row.get("structured_hints")
    return {
        "record_id": _first(row, "record_id", "id", "uuid", "incident_id"),
        "description": _first(row, "description", "text", "summary", "content", "body"),
        "date": _first(row, "date", "created", "published"),
        "ground_truth_category": _first(row, "ground_truth_category", "category"),
        "structured_hints": hints if isinstance(hints, dict) else {},
    }


def get_adapter(source_id: str) -> Converter:
    return _ADAPTERS.get(source_id, _convert_generic)


# --- Readers ---
class _Malformed:
    def __init__(self, reason: str):
        self.reason = reason


def read_source_text(location: str) -> str:
    try:
        if location.startswith(("http://", "https://")):
            resp = requests.get(location, timeout=60)
            resp.raise_for_status()
            return resp.text
        with open(location, "r", encoding="utf-8") as f:
            return f.read()
    except (OSError, UnicodeDecodeError, requests.RequestException) as e:
        raise IngestError(f"cannot read source {location}: {e}") from e


def _iter_json_objects(text: str) -> Iterator[Tuple[int, Any]]:
    stripped = text.strip()
    if not stripped:
        return
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        # Not a single document: treat as one object per line
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                yield lineno, _Malformed(f"invalid JSON: {e.msg}")
        return
    if isinstance(doc, list):
        items = doc
    elif isinstance(doc, dict):
        if isinstance(doc.get("objects"), list):
            items = doc["objects"]
        elif doc and all(isinstance(v, dict) for v in doc.values()):
            # Malpedia-style mapping keyed by actor/family name
            items = [{"_key": k, **v} for k, v in doc.items()]
        else:
            items = [doc]
    else:
        raise IngestError("top-level JSON value is neither an array nor an object")
    for position, item in enumerate(items, 1):
        yield position, item


def _iter_tabular(text: str, location: str) -> Iterator[Tuple[int, Any]]:
    """Rows keyed by header, positioned at the physical line they start on."""
    if not text.strip():
        return
    sep = "\t" if os.path.splitext(location)[1].lower() in {".tsv", ".tab"} else ","
    reader = csv.reader(io.StringIO(text), delimiter=sep)
    header: Optional[List[str]] = None
    positions: List[int] = []
    rows: List[List[str]] = []
    start = 1
    try:
        for fields in reader:
            line, start = start, reader.line_num + 1
            if not any(f.strip() for f in fields):
                continue
            if header is None:
                header = [f.strip() for f in fields]
                continue
            if len(fields) > len(header):
                yield line, _Malformed(f"wrong field count: {len(fields)} fields, header has {len(header)}")
                continue
            positions.append(line)
            rows.append(fields + [""] * (len(header) - len(fields)))
    except csv.Error as e:
        raise IngestError(f"cannot parse table {location} near line {reader.line_num}: {e}") from e
    if header is None:
        return
    df = pd.DataFrame(rows, columns=header, dtype=str)
    for position, row in zip(positions, df.to_dict(orient="records")):
        yield position, row


def _iter_text_list(text: str) -> Iterator[Tuple[int, Any]]:
    for lineno, line in enumerate(text.splitlines(), 1):
        yield lineno, line


def ingest_source(
    descriptor: SourceDescriptor, stats: Optional[SourceStats] = None
) -> Iterator[RawRecord]:
    """Yield one RawRecord per logical entry of the dump.

    Entries with blank descriptions are dropped and counted; malformed
    entries are skipped and logged with their position. An unreadable dump
    raises IngestError.
    """
    stats = stats if stats is not None else SourceStats(descriptor.source_id)
    text = read_source_text(descriptor.path)
    stats.snapshot_sha256 = hashlib.sha256(text.encode("utf-8")).hexdigest()
    convert = get_adapter(descriptor.source_id)

    if descriptor.format is SourceFormat.JSON_OBJECTS:
        entries = _iter_json_objects(text)
    elif descriptor.format is SourceFormat.TABULAR:
        entries = _iter_tabular(text, descriptor.path)
    else:
        entries = _iter_text_list(text)

    seen: Counter = Counter()
    for position, entry in entries:
        if isinstance(entry, _Malformed):
            stats.malformed.append(position)
            logger.warning("%s: skipping malformed entry at %s: %s", descriptor.source_id, position, entry.reason)
            continue
        try:
            fields = convert(entry)
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            stats.malformed.append(position)
            logger.warning("%s: skipping malformed entry at %s: %s", descriptor.source_id, position, e)
            continue
        if fields is None:
            continue
        description = str(fields.get("description") or "").strip()
        if not description:
            stats.dropped += 1
            logger.info("%s: dropped entry at %s (empty description)", descriptor.source_id, position)
            continue
        record_id = fields.get("record_id")
        record_id = str(record_id).strip() if not _blank(record_id) else synthetic_record_id(entry)
        seen[record_id] += 1
        if seen[record_id] > 1:
            # identical entries repeated inside one dump
            record_id = f"{record_id}-{seen[record_id]}"
        category = fields.get("ground_truth_category")
        stats.records += 1
        yield RawRecord(
            source_id=descriptor.source_id,
            record_id=record_id,
            description=description,
            date=parse_date(fields.get("date")),
            structured_hints=_clean_hints(fields.get("structured_hints") or {}),
            ground_truth_category=None if _blank(category) else str(category).strip(),
        )


def ingest_all(
    descriptors: Iterable[SourceDescriptor], max_workers: int = 4
) -> Tuple[List[RawRecord], IngestReport]:
    """Run the adapters concurrently; output keeps descriptor order."""
    descriptors = list(descriptors)
    ids = [d.source_id for d in descriptors]
    dupes = sorted(k for k, n in Counter(ids).items() if n > 1)
    if dupes:
        raise IngestError(f"duplicate source_id in run: {dupes}")
    report: IngestReport = {d.source_id: SourceStats(d.source_id) for d in descriptors}
    if not descriptors:
        return [], report
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = [pool.submit(lambda d=d: list(ingest_source(d, report[d.source_id]))) for d in descriptors]
        batches = [f.result() for f in futures]
    records = [r for batch in batches for r in batch]
    for d in descriptors:
        s = report[d.source_id]
        logger.info(
            "%s: %d records, %d dropped, %d malformed", d.source_id, s.records, s.dropped, len(s.malformed)
        )
    return records, report


def count_by_source(records: Iterable[RawRecord]) -> Dict[str, int]:
    return dict(Counter(r.source_id for r in records))


def write_records(records: Iterable[RawRecord], path: str, meta: Optional[RunMeta] = None) -> int:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if meta is not None:
            f.write(meta.jsonl_line())
        for r in records:
            f.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_records(path: str) -> List[RawRecord]:
    out: List[RawRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            if is_meta_object(obj):
                continue
            out.append(RawRecord.from_dict(obj))
    return out
