"""
Hash lookups against a scanning-aggregator API (per-engine verdicts).

Only lookups by hash are made, never submissions. The live client reads its
key from VT_API_KEY and spends a requests-per-minute budget through a
RateLimiter; RecordedScanClient replays stored responses and records every
request, so cache behaviour can be asserted without a network.
"""

import json
import logging
import os
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Tuple

import requests

from .errors import InvalidHashError, ScanError
from .ratelimit import RateLimiter

logger = logging.getLogger(__name__)

VT_FILE_ENDPOINT = "https://www.virustotal.com/api/v3/files/{hash}"
DEFAULT_STATIC_ML = frozenset({"Acronis", "SentinelOne"})

_HASH_RE = re.compile(r"^(?:[0-9a-f]{32}|[0-9a-f]{40}|[0-9a-f]{64})$")

# aggregator categories that mean "engine did not really scan the file"
UNSUPPORTED_CATEGORIES = frozenset({"type-unsupported", "timeout", "confirmed-timeout", "failure"})


def normalize_hash(value: str) -> str:
    """Lowercase hex MD5/SHA-1/SHA-256, or InvalidHashError."""
    h = str(value or "").strip().lower()
    if not _HASH_RE.match(h):
        raise InvalidHashError(f"not an MD5/SHA-1/SHA-256 hex digest: {value!r}")
    return h


def is_valid_hash(value: str) -> bool:
    return bool(_HASH_RE.match(str(value or "").strip().lower()))


class Outcome(str, Enum):
    DETECTED = "detected"
    UNDETECTED = "undetected"
    UNSUPPORTED = "unsupported"


@dataclass(frozen=True)
class EngineVerdict:
    engine: str
    outcome: Outcome
    is_static_ml: bool = False


@dataclass(frozen=True)
class ScanReport:
    hash: str
    verdicts: Tuple[EngineVerdict, ...]
    fetched_at: str

    def __post_init__(self):
        names = [v.engine for v in self.verdicts]
        if len(names) != len(set(names)):
            raise ValueError(f"{self.hash}: duplicate engine names in report")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "hash": self.hash,
            "fetched_at": self.fetched_at,
            "verdicts": [{"engine": v.engine, "outcome": v.outcome.value} for v in self.verdicts],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], static_ml: Iterable[str] = DEFAULT_STATIC_ML) -> "ScanReport":
        static_ml = frozenset(static_ml)
        return cls(
            hash=data["hash"],
            fetched_at=data.get("fetched_at", ""),
            verdicts=tuple(
                EngineVerdict(v["engine"], Outcome(v["outcome"]), v["engine"] in static_ml)
                for v in data.get("verdicts", [])
            ),
        )


def parse_scan_response(
    raw: Dict[str, Any],
    hash_value: str,
    static_ml: Iterable[str] = DEFAULT_STATIC_ML,
    fetched_at: str = "",
) -> ScanReport:
    """Aggregator file object -> ScanReport, engines sorted by name.

    `malicious` is a detection; categories in UNSUPPORTED_CATEGORIES mean
    the engine did not scan; everything else (undetected, harmless,
    suspicious) counts as not detected. An empty object (hash unknown to
    the aggregator) gives a report without verdicts.
    """
    static_ml = frozenset(static_ml)
    results = ((raw or {}).get("data") or {}).get("attributes", {}).get("last_analysis_results") or {}
    verdicts = []
    for engine in sorted(results):
        category = str((results[engine] or {}).get("category", "")).lower()
        if category == "malicious":
            outcome = Outcome.DETECTED
        elif category in UNSUPPORTED_CATEGORIES:
            outcome = Outcome.UNSUPPORTED
        else:
            outcome = Outcome.UNDETECTED
        verdicts.append(EngineVerdict(engine, outcome, engine in static_ml))
    return ScanReport(hash=hash_value, verdicts=tuple(verdicts), fetched_at=fetched_at)


class ScanClient(ABC):
    deterministic: bool = False

    @abstractmethod
    def fetch_raw(self, hash_value: str) -> Dict[str, Any]:
        """Return the aggregator's JSON object for the hash ({} when unknown).

        Raises ScanError on quota or transport failure.
        """


class VirusTotalClient(ScanClient):
    def __init__(
        self,
        api_key_env: str = "VT_API_KEY",
        requests_per_minute: float = 4.0,
        limiter: Optional[RateLimiter] = None,
        session: Optional[requests.Session] = None,
        timeout: float = 30.0,
    ):
        self.api_key_env = api_key_env
        self.limiter = limiter or RateLimiter.per_minute(requests_per_minute)
        self.session = session or requests.Session()
        self.timeout = timeout

    def fetch_raw(self, hash_value: str) -> Dict[str, Any]:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ScanError(hash_value, f"{self.api_key_env} is not set")
        self.limiter.acquire()
        try:
            resp = self.session.get(
                VT_FILE_ENDPOINT.format(hash=hash_value),
                headers={"x-apikey": api_key, "Accept": "application/json"},
                timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise ScanError(hash_value, f"transport error: {e}") from e
        if resp.status_code == 404:
            logger.info("%s: not known to the aggregator", hash_value)
            return {}
        if resp.status_code in (204, 429):
            raise ScanError(hash_value, f"quota exceeded (HTTP {resp.status_code})")
        if resp.status_code != 200:
            raise ScanError(hash_value, f"HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as e:
            raise ScanError(hash_value, f"non-JSON response: {e}") from e


class RecordedScanClient(ScanClient):
    """Replays stored responses; unknown hashes answer like a 404."""

    deterministic = True

    def __init__(self, responses: Dict[str, Dict[str, Any]], fail: Iterable[str] = ()):
        self.responses = {normalize_hash(h): r for h, r in responses.items()}
        self.fail = {normalize_hash(h) for h in fail}
        self.requested: List[str] = []
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return len(self.requested)

    @classmethod
    def from_dir(cls, path: str) -> "RecordedScanClient":
        """One `<hash>.json` file per recorded response."""
        responses = {}
        for name in sorted(os.listdir(path)):
            stem, ext = os.path.splitext(name)
            if ext != ".json" or not is_valid_hash(stem):
                continue
            with open(os.path.join(path, name), "r", encoding="utf-8") as f:
                responses[stem] = json.load(f)
        logger.debug("loaded %d recorded scan responses from %s", len(responses), path)
        return cls(responses)

    def fetch_raw(self, hash_value: str) -> Dict[str, Any]:
        with self._lock:
            self.requested.append(hash_value)
        if hash_value in self.fail:
            raise ScanError(hash_value, "simulated quota failure")
        return self.responses.get(hash_value, {})
