"""
Append-only JSON-lines checkpoint of ThreatRecords.

One object per line, flushed and fsynced per entry, so any prefix of the
file is readable. A torn last line (crash mid-write) is cut off on open.
"""

import json
import logging
import os
from typing import Dict, Iterator, List, Optional, Tuple

from .errors import CheckpointError
from .ingest import RecordRef
from .records import ThreatRecord
from .runmeta import RunMeta, is_meta_object

logger = logging.getLogger(__name__)


class Checkpoint:
    def __init__(self, path: str):
        self.path = path
        self._entries: Dict[RecordRef, ThreatRecord] = {}
        # set by extract.run_pipeline
        self.run_stats = None

    @classmethod
    def open(cls, path: str, meta: Optional[RunMeta] = None) -> "Checkpoint":
        ckpt = cls(path)
        if os.path.exists(path):
            ckpt._load()
        else:
            try:
                os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
                with open(path, "w", encoding="utf-8", newline="\n") as f:
                    if meta is not None:
                        f.write(meta.jsonl_line())
            except OSError as e:
                raise CheckpointError(f"cannot create checkpoint {path}: {e}") from e
        return ckpt

    def _load(self) -> None:
        with open(self.path, "rb") as f:
            data = f.read()
        if data and not data.endswith(b"\n"):
            cut = data.rfind(b"\n") + 1
            logger.warning("%s: truncating torn final entry (%d bytes)", self.path, len(data) - cut)
            with open(self.path, "r+b") as f:
                f.truncate(cut)
            data = data[:cut]
        for lineno, record in _decode_entries(self.path, data):
            if record.ref in self._entries:
                logger.warning("%s:%d: duplicate entry for %s ignored", self.path, lineno, record.ref)
                continue
            self._entries[record.ref] = record

    def __contains__(self, ref: RecordRef) -> bool:
        return ref in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ThreatRecord]:
        return iter(self._entries.values())

    def get(self, ref: RecordRef) -> Optional[ThreatRecord]:
        return self._entries.get(ref)

    def records(self) -> List[ThreatRecord]:
        return list(self._entries.values())

    def as_map(self) -> Dict[RecordRef, ThreatRecord]:
        return dict(self._entries)

    def append(self, record: ThreatRecord) -> None:
        """Write one entry and fsync it; on failure the file is cut back to its previous end."""
        if record.ref in self._entries:
            raise CheckpointError(f"checkpoint already holds {record.ref}")
        line = (json.dumps(record.to_dict(), ensure_ascii=False) + "\n").encode("utf-8")
        try:
            with open(self.path, "ab", buffering=0) as f:
                end = f.seek(0, os.SEEK_END)
                try:
                    written = 0
                    while written < len(line):
                        written += f.write(line[written:])
                    os.fsync(f.fileno())
                except OSError:
                    f.truncate(end)
                    raise
        except OSError as e:
            raise CheckpointError(f"cannot write checkpoint {self.path}: {e}") from e
        self._entries[record.ref] = record


def _decode_entries(path: str, data: bytes) -> Iterator[Tuple[int, ThreatRecord]]:
    """(line number, record) for every complete, readable entry; bad lines are logged and skipped."""
    lines = data.split(b"\n")
    # the last piece is either empty or a torn entry without its newline
    for lineno, raw in enumerate(lines[:-1], 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw.decode("utf-8"))
            if is_meta_object(obj):
                continue
            record = ThreatRecord.from_dict(obj)
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            logger.warning("%s:%d: unreadable entry skipped: %s", path, lineno, e)
            continue
        yield lineno, record


def read_checkpoint(path: str) -> List[ThreatRecord]:
    """Read-only view for reporting tools; never modifies the file."""
    with open(path, "rb") as f:
        data = f.read()
    out: List[ThreatRecord] = []
    seen = set()
    for lineno, record in _decode_entries(path, data):
        if record.ref in seen:
            logger.warning("%s:%d: duplicate entry for %s ignored", path, lineno, record.ref)
            continue
        seen.add(record.ref)
        out.append(record)
    return out
