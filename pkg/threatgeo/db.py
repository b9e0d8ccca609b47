"""
Local scan-report cache.

Layout under the cache root:
  reports/<h[:2]>/<hash>.json      parsed report
  reports/<h[:2]>/<hash>.raw.json  aggregator response, verbatim
  index.sqlite                     one row per cached hash

Files are written to a temp name and renamed into place; the index row is
inserted only after both files exist, so a report is either fully cached or
not cached at all.
"""

import json
import logging
import os
import sqlite3
import tempfile
import threading
from concurrent.futures import Future
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar

from .scan_client import DEFAULT_STATIC_ML, ScanReport

logger = logging.getLogger(__name__)

T = TypeVar("T")


class SingleFlight:
    """Concurrent calls for the same key share one execution."""

    def __init__(self):
        self._lock = threading.Lock()
        self._inflight: Dict[str, Future] = {}

    def do(self, key: str, fn: Callable[[], T]) -> T:
        with self._lock:
            fut = self._inflight.get(key)
            owner = fut is None
            if owner:
                fut = Future()
                self._inflight[key] = fut
        if not owner:
            return fut.result()
        try:
            result = fn()
        except BaseException as e:
            fut.set_exception(e)
            raise
        else:
            fut.set_result(result)
            return result
        finally:
            with self._lock:
                self._inflight.pop(key, None)


class ReportCache:
    def __init__(self, root: str, static_ml: Iterable[str] = DEFAULT_STATIC_ML):
        self.root = root
        self.static_ml = frozenset(static_ml)
        self.index_path = os.path.join(root, "index.sqlite")
        self.flight = SingleFlight()
        self._write_lock = threading.Lock()
        self.init_db()

    def init_db(self) -> None:
        os.makedirs(os.path.join(self.root, "reports"), exist_ok=True)
        with sqlite3.connect(self.index_path) as conn:
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS reports (
                    hash TEXT PRIMARY KEY,
                    path TEXT NOT NULL,
                    fetched_at TEXT NOT NULL,
                    verdicts INTEGER NOT NULL
                )
                """
            )
            conn.commit()

    def _report_path(self, hash_value: str, raw: bool = False) -> str:
        suffix = ".raw.json" if raw else ".json"
        return os.path.join("reports", hash_value[:2], hash_value + suffix)

    def __contains__(self, hash_value: str) -> bool:
        with sqlite3.connect(self.index_path) as conn:
            row = conn.execute("SELECT 1 FROM reports WHERE hash = ?", (hash_value,)).fetchone()
        return row is not None

    def __len__(self) -> int:
        with sqlite3.connect(self.index_path) as conn:
            return int(conn.execute("SELECT COUNT(*) FROM reports").fetchone()[0])

    def hashes(self) -> List[str]:
        with sqlite3.connect(self.index_path) as conn:
            return [r[0] for r in conn.execute("SELECT hash FROM reports ORDER BY hash")]

    def get(self, hash_value: str) -> Optional[ScanReport]:
        with sqlite3.connect(self.index_path) as conn:
            row = conn.execute("SELECT path FROM reports WHERE hash = ?", (hash_value,)).fetchone()
        if row is None:
            return None
        path = os.path.join(self.root, row[0])
        try:
            with open(path, "r", encoding="utf-8") as f:
                return ScanReport.from_dict(json.load(f), self.static_ml)
        except (OSError, ValueError, KeyError) as e:
            logger.warning("%s: cached report unreadable (%s); treating as miss", hash_value, e)
            return None

    def get_raw(self, hash_value: str) -> Optional[Dict[str, Any]]:
        path = os.path.join(self.root, self._report_path(hash_value, raw=True))
        if not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    def _atomic_write(self, rel_path: str, payload: Any) -> None:
        path = os.path.join(self.root, rel_path)
        directory = os.path.dirname(path)
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                json.dump(payload, f, sort_keys=True, indent=2)
                f.write("\n")
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def put(self, report: ScanReport, raw: Dict[str, Any]) -> None:
        rel = self._report_path(report.hash)
        with self._write_lock:
            self._atomic_write(self._report_path(report.hash, raw=True), raw)
            self._atomic_write(rel, report.to_dict())
            with sqlite3.connect(self.index_path) as conn:
                conn.execute(
                    "INSERT OR REPLACE INTO reports (hash, path, fetched_at, verdicts) VALUES (?, ?, ?, ?)",
                    (report.hash, rel, report.fetched_at, len(report.verdicts)),
                )
                conn.commit()
        logger.debug("cached %s (%d verdicts)", report.hash, len(report.verdicts))

    def reports(self) -> List[ScanReport]:
        out = []
        for h in self.hashes():
            report = self.get(h)
            if report is not None:
                out.append(report)
        return out
