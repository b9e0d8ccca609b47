"""
Geopolitical analytics over extracted threat records.

Country names arrive in every spelling the sources and the model produce
("USA", "Russian Federation", "PRC"), so everything starts with
canonicalization against versioned alias tables. Each (record, place, role)
then becomes one GeoPair row, and rankings, alliance buckets and timelines
are counts over those rows.
"""

import dataclasses
import datetime as dt
import logging
import os
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import pandas as pd
import pycountry

from .ingest import RawRecord, RecordRef, as_list
from .records import ThreatRecord

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_COUNTRIES_PATH = os.path.join(DATA_DIR, "countries.txt")
DEFAULT_REGIONS_PATH = os.path.join(DATA_DIR, "regions.txt")
DEFAULT_ROSTER_PATH = os.path.join(DATA_DIR, "alliances.txt")


class PlaceKind(str, Enum):
    COUNTRY = "country"
    REGION = "region"
    UNKNOWN = "unknown"


class Alliance(str, Enum):
    NATO = "NATO"
    BRICS = "BRICS"
    OTHER = "OTHER"


class Role(str, Enum):
    ORIGIN = "origin"
    TARGET = "target"


class EnergyFilter(str, Enum):
    ENERGY = "energy"
    NON_ENERGY = "non-energy"
    ALL = "all"


class Bucket(str, Enum):
    MONTH = "month"
    YEAR = "year"


@dataclass(frozen=True)
class CanonicalPlace:
    name: str
    kind: PlaceKind

    def __str__(self) -> str:
        return self.name


def _read_table(path: str) -> Dict[str, List[str]]:
    """`canonical|alias|alias...` per line, `#` comments."""
    table: Dict[str, List[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.lstrip().startswith("#") or not line.strip():
                continue
            parts = [p.strip() for p in line.split("|")]
            canonical, aliases = parts[0], [a for a in parts[1:] if a]
            if canonical in table:
                raise ValueError(f"{path}: {canonical!r} listed twice")
            table[canonical] = aliases
    return table


def _is_code(alias: str) -> bool:
    return len(alias) <= 3 and alias.isupper()


class Gazetteer:
    """Alias tables for countries and regions plus the ISO 3166 fallback."""

    def __init__(
        self,
        countries: Mapping[str, Iterable[str]],
        regions: Mapping[str, Iterable[str]] = (),
        iso_fallback: bool = True,
    ):
        self.iso_fallback = iso_fallback
        self._codes: Dict[str, CanonicalPlace] = {}
        self._names: Dict[str, CanonicalPlace] = {}
        for kind, table in ((PlaceKind.COUNTRY, countries), (PlaceKind.REGION, dict(regions))):
            for canonical, aliases in table.items():
                place = CanonicalPlace(canonical, kind)
                self._names[canonical.casefold()] = place
                for alias in aliases:
                    if _is_code(alias):
                        self._codes[alias] = place
                    else:
                        self._names[alias.casefold()] = place

    @classmethod
    def load(cls, countries_path: Optional[str] = None, regions_path: Optional[str] = None) -> "Gazetteer":
        countries = _read_table(countries_path or DEFAULT_COUNTRIES_PATH)
        regions = _read_table(regions_path or DEFAULT_REGIONS_PATH)
        return cls(countries, regions)

    def _iso_lookup(self, text: str) -> Optional[CanonicalPlace]:
        if not self.iso_fallback or len(text) <= 3:
            return None
        try:
            country = pycountry.countries.lookup(text)
        except LookupError:
            return None
        known = self._codes.get(country.alpha_2)
        if known is not None:
            return known
        name = getattr(country, "common_name", None) or country.name
        return CanonicalPlace(name, PlaceKind.COUNTRY)

    def canonicalize(self, raw: str) -> CanonicalPlace:
        text = " ".join(str(raw or "").split()).strip(" ,;")
        # "U.S." is an alias as written; "Ukraine." only matches without the dot
        for candidate in dict.fromkeys((text, text.rstrip("."))):
            if candidate in self._codes:
                return self._codes[candidate]
            folded = candidate.casefold()
            if folded.startswith("the "):
                folded = folded[4:]
            if folded in self._names:
                return self._names[folded]
        text = text.rstrip(".")
        hit = self._iso_lookup(text)
        if hit is not None:
            return hit
        return CanonicalPlace(text, PlaceKind.UNKNOWN)


@lru_cache(maxsize=1)
def default_gazetteer() -> Gazetteer:
    return Gazetteer.load()


def canonicalize(raw_name: str, gazetteer: Optional[Gazetteer] = None) -> CanonicalPlace:
    return (gazetteer or default_gazetteer()).canonicalize(raw_name)


# --- Alliances ---
@dataclass(frozen=True)
class AllianceRoster:
    as_of: dt.date
    nato: frozenset
    brics: frozenset

    def __post_init__(self):
        overlap = self.nato & self.brics
        if overlap:
            raise ValueError(f"countries in both NATO and BRICS: {sorted(overlap)}")

    def classify(self, place: Union[CanonicalPlace, str]) -> Alliance:
        if isinstance(place, CanonicalPlace):
            if place.kind is not PlaceKind.COUNTRY:
                return Alliance.OTHER
            place = place.name
        if place in self.nato:
            return Alliance.NATO
        if place in self.brics:
            return Alliance.BRICS
        return Alliance.OTHER


def load_roster(path: Optional[str] = None, gazetteer: Optional[Gazetteer] = None) -> AllianceRoster:
    """Lines `ALLIANCE|country`; the `# as_of: YYYY-MM-DD` comment dates the snapshot."""
    path = path or DEFAULT_ROSTER_PATH
    gazetteer = gazetteer or default_gazetteer()
    as_of: Optional[dt.date] = None
    members: Dict[Alliance, set] = {Alliance.NATO: set(), Alliance.BRICS: set()}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            text = line.strip()
            if text.startswith("#"):
                body = text.lstrip("#").strip()
                if body.lower().startswith("as_of:"):
                    as_of = dt.date.fromisoformat(body.split(":", 1)[1].strip())
                continue
            if not text:
                continue
            label, _, country = text.partition("|")
            try:
                alliance = Alliance(label.strip().upper())
            except ValueError:
                raise ValueError(f"{path}:{lineno}: unknown alliance {label!r}") from None
            if alliance is Alliance.OTHER:
                raise ValueError(f"{path}:{lineno}: OTHER is implicit and cannot be listed")
            place = gazetteer.canonicalize(country)
            if place.kind is not PlaceKind.COUNTRY:
                raise ValueError(f"{path}:{lineno}: {country.strip()!r} is not a known country")
            members[alliance].add(place.name)
    if as_of is None:
        raise ValueError(f"{path}: missing '# as_of:' line")
    roster = AllianceRoster(as_of, frozenset(members[Alliance.NATO]), frozenset(members[Alliance.BRICS]))
    logger.debug("roster %s: %d NATO, %d BRICS", as_of, len(roster.nato), len(roster.brics))
    return roster


# --- Pairs ---
@dataclass(frozen=True)
class GeoPair:
    source_id: str
    record_id: str
    place: CanonicalPlace
    role: Role
    energy_related: bool
    date: Optional[dt.date] = None

    @property
    def ref(self) -> RecordRef:
        return (self.source_id, self.record_id)


def overlay_hints(threat_records: Iterable[ThreatRecord], raw_records: Iterable[RawRecord]) -> List[ThreatRecord]:
    """Explicit source fields win over extracted countries.

    An `origin` hint replaces the extracted origins, a `target` hint the
    extracted targets. The input records are not modified.
    """
    hints = {r.ref: r.structured_hints for r in raw_records}
    out: List[ThreatRecord] = []
    replaced = 0
    for rec in threat_records:
        h = hints.get(rec.ref) or {}
        if not rec.ok or not (h.get("origin") or h.get("target")):
            out.append(rec)
            continue
        changes = {}
        if h.get("origin"):
            changes["country_of_origin"] = as_list(h["origin"])
        if h.get("target"):
            changes["country_of_target"] = as_list(h["target"])
        out.append(dataclasses.replace(rec, **changes))
        replaced += 1
    logger.debug("source hints overrode extracted countries on %d records", replaced)
    return out


def explode_pairs(records: Iterable[ThreatRecord], gazetteer: Optional[Gazetteer] = None) -> List[GeoPair]:
    gazetteer = gazetteer or default_gazetteer()
    pairs: List[GeoPair] = []
    skipped = 0
    for rec in records:
        if not rec.ok:
            skipped += 1
            continue
        seen = set()
        for role, names in ((Role.ORIGIN, rec.country_of_origin), (Role.TARGET, rec.country_of_target)):
            for name in names:
                place = gazetteer.canonicalize(name)
                if (place, role) in seen:
                    continue
                seen.add((place, role))
                pairs.append(GeoPair(rec.source_id, rec.record_id, place, role, bool(rec.energy_related), rec.date))
    if skipped:
        logger.debug("explode_pairs: %d non-ok records skipped", skipped)
    return pairs


def _passes(energy_related: bool, energy_filter: EnergyFilter) -> bool:
    if energy_filter is EnergyFilter.ENERGY:
        return energy_related
    if energy_filter is EnergyFilter.NON_ENERGY:
        return not energy_related
    return True


def _keep(pair: GeoPair, energy_filter: EnergyFilter) -> bool:
    return _passes(pair.energy_related, energy_filter)


def _ranked(counts: Counter, k: int) -> List[Tuple]:
    return sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))[:k]


def top_k(
    pairs: Iterable[GeoPair], role: Role, k: int, energy_filter: EnergyFilter = EnergyFilter.ALL
) -> List[Tuple[CanonicalPlace, int]]:
    """Most frequent places for `role`; ties by name; unknown places excluded."""
    if k < 1:
        raise ValueError("k must be >= 1")
    role, energy_filter = Role(role), EnergyFilter(energy_filter)
    counts: Counter = Counter(
        p.place
        for p in pairs
        if p.role is role and p.place.kind is not PlaceKind.UNKNOWN and _keep(p, energy_filter)
    )
    return _ranked(counts, k)


def ranking_table(pairs: Iterable[GeoPair], role: Role, k: int) -> pd.DataFrame:
    """Rows for the energy, non-energy and all rankings of one role."""
    pairs = list(pairs)
    rows = []
    for flt in (EnergyFilter.ENERGY, EnergyFilter.NON_ENERGY, EnergyFilter.ALL):
        for rank, (place, count) in enumerate(top_k(pairs, role, k, flt), 1):
            rows.append({"rank": rank, "place": place.name, "count": count, "energy_flag": flt.value})
    return pd.DataFrame(rows, columns=["rank", "place", "count", "energy_flag"])


def _flag(energy: bool) -> str:
    return EnergyFilter.ENERGY.value if energy else EnergyFilter.NON_ENERGY.value


def alliance_counts(
    roster: AllianceRoster, pairs: Iterable[GeoPair], role: Role
) -> Dict[Tuple[str, str], int]:
    """(alliance, "energy" | "non-energy") -> pair count; empty cells omitted."""
    role = Role(role)
    counts: Counter = Counter(
        (roster.classify(p.place).value, _flag(p.energy_related)) for p in pairs if p.role is role
    )
    return dict(counts)


def alliance_table(roster: AllianceRoster, pairs: Iterable[GeoPair], role: Role) -> pd.DataFrame:
    """Full 3 x 2 grid, zeros included, in NATO/BRICS/OTHER order."""
    counts = alliance_counts(roster, pairs, role)
    rows = [
        {
            "alliance": a.value,
            "energy": counts.get((a.value, "energy"), 0),
            "non-energy": counts.get((a.value, "non-energy"), 0),
        }
        for a in Alliance
    ]
    return pd.DataFrame(rows, columns=["alliance", "energy", "non-energy"])


# --- Timelines ---
def period_label(date: dt.date, bucket: Bucket) -> str:
    if Bucket(bucket) is Bucket.YEAR:
        return f"{date.year:04d}"
    return f"{date.year:04d}-{date.month:02d}"


def in_dyad(rec: ThreatRecord, origin: CanonicalPlace, target: CanonicalPlace, gazetteer: Gazetteer) -> bool:
    return origin in {gazetteer.canonicalize(n) for n in rec.country_of_origin} and target in {
        gazetteer.canonicalize(n) for n in rec.country_of_target
    }


def dyad_timeline(
    records: Iterable[ThreatRecord],
    origin_country: str,
    target_country: str,
    bucket: Bucket = Bucket.YEAR,
    gazetteer: Optional[Gazetteer] = None,
    energy_filter: EnergyFilter = EnergyFilter.ALL,
) -> List[Tuple[str, int]]:
    """Per-period count of ok records naming both ends of the dyad."""
    gazetteer = gazetteer or default_gazetteer()
    energy_filter = EnergyFilter(energy_filter)
    origin = gazetteer.canonicalize(origin_country)
    target = gazetteer.canonicalize(target_country)
    counts: Counter = Counter()
    undated = 0
    for rec in records:
        if not rec.ok or not _passes(bool(rec.energy_related), energy_filter):
            continue
        if not in_dyad(rec, origin, target, gazetteer):
            continue
        if rec.date is None:
            undated += 1
            continue
        counts[period_label(rec.date, bucket)] += 1
    if undated:
        logger.info("%s -> %s: %d matching records without a date", origin.name, target.name, undated)
    return sorted(counts.items())


def dyad_table(
    records: Iterable[ThreatRecord],
    origin_country: str,
    target_country: str,
    bucket: Bucket = Bucket.YEAR,
    gazetteer: Optional[Gazetteer] = None,
) -> pd.DataFrame:
    """Dyad timeline split into energy and non-energy; `count` is their sum."""
    records = list(records)
    split = {
        flt: dict(dyad_timeline(records, origin_country, target_country, bucket, gazetteer, flt))
        for flt in (EnergyFilter.ENERGY, EnergyFilter.NON_ENERGY)
    }
    energy, other = split[EnergyFilter.ENERGY], split[EnergyFilter.NON_ENERGY]
    rows = [
        {
            "period": period,
            "energy": energy.get(period, 0),
            "non-energy": other.get(period, 0),
            "count": energy.get(period, 0) + other.get(period, 0),
        }
        for period in sorted(set(energy) | set(other))
    ]
    return pd.DataFrame(rows, columns=["period", "energy", "non-energy", "count"])


def incident_timeline(records: Iterable[ThreatRecord], bucket: Bucket = Bucket.YEAR) -> pd.DataFrame:
    """Energy vs non-energy ok records per period (dated records only)."""
    rows = [
        {"period": period_label(r.date, bucket), "energy": bool(r.energy_related)}
        for r in records
        if r.ok and r.date is not None
    ]
    if not rows:
        return pd.DataFrame(columns=["period", "energy", "non-energy"])
    df = pd.DataFrame(rows)
    grid = (
        df.groupby(["period", "energy"]).size().unstack("energy", fill_value=0)
        .reindex(columns=[True, False], fill_value=0)
        .rename(columns={True: "energy", False: "non-energy"})
        .sort_index()
        .reset_index()
    )
    grid.columns.name = None
    return grid[["period", "energy", "non-energy"]].astype({"energy": int, "non-energy": int})


# --- Categorical rankings and listings ---
def rank_categorical(records: Iterable[RawRecord], field_name: str, k: int) -> List[Tuple[str, int]]:
    """Top-k values of a structured hint (e.g. harmed parties), one count per record and value."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: Counter = Counter()
    present = False
    for r in records:
        if field_name not in r.structured_hints:
            continue
        present = True
        counts.update(set(as_list(r.structured_hints[field_name])))
    if not present:
        logger.warning("field %r missing on every record", field_name)
        return []
    return _ranked(counts, k)


def energy_incident_table(
    threat_records: Iterable[ThreatRecord],
    raw_records: Iterable[RawRecord],
    excerpt: int = 160,
    dyad: Optional[Tuple[str, str]] = None,
    gazetteer: Optional[Gazetteer] = None,
) -> pd.DataFrame:
    """Energy-related incidents, oldest first, with a description excerpt.

    With `dyad` = (origin, target) only incidents naming both countries are listed.
    """
    raw = {r.ref: r for r in raw_records}
    if dyad is not None:
        gazetteer = gazetteer or default_gazetteer()
        origin, target = (gazetteer.canonicalize(name) for name in dyad)
        threat_records = [r for r in threat_records if in_dyad(r, origin, target, gazetteer)]
    rows = []
    for rec in threat_records:
        if not (rec.ok and rec.energy_related):
            continue
        source = raw.get(rec.ref)
        text = source.description if source else ""
        if len(text) > excerpt:
            text = text[: excerpt - 3].rstrip() + "..."
        rows.append({
            "date": rec.date.isoformat() if rec.date else "",
            "source_id": rec.source_id,
            "record_id": rec.record_id,
            "origin": ";".join(rec.country_of_origin),
            "target": ";".join(rec.country_of_target),
            "excerpt": text,
        })
    columns = ["date", "source_id", "record_id", "origin", "target", "excerpt"]
    if not rows:
        return pd.DataFrame(columns=columns)
    df = pd.DataFrame(rows, columns=columns)
    # undated incidents sort last
    df["_undated"] = df["date"] == ""
    df = df.sort_values(["_undated", "date", "source_id", "record_id"], kind="mergesort")
    return df.drop(columns="_undated").reset_index(drop=True)
