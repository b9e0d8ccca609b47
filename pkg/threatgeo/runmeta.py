"""Metadata header written at the top of every artifact a run produces."""

import datetime as dt
import hashlib
import json
import os
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, Mapping, Optional

import pandas as pd

META_KEY = "__meta__"


@dataclass(frozen=True)
class RunMeta:
    run_id: str
    seed: int
    config_hash: str

    @classmethod
    def derive(cls, config_payload: Dict[str, Any], seed: int) -> "RunMeta":
        """Run id and config hash are pure functions of the config, so two
        runs of the same config label their outputs identically."""
        canonical = json.dumps(config_payload, sort_keys=True, ensure_ascii=False, default=str)
        config_hash = hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
        run_id = hashlib.sha256(f"{config_hash}:{seed}".encode("utf-8")).hexdigest()[:12]
        return cls(run_id=run_id, seed=int(seed), config_hash=config_hash)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def header_text(self) -> str:
        return f"run_id={self.run_id};seed={self.seed};config_hash={self.config_hash}"

    def csv_header(self) -> str:
        return f"# {self.header_text()}\n"

    def jsonl_line(self) -> str:
        return json.dumps({META_KEY: self.as_dict()}, sort_keys=True) + "\n"

    def svg_comment(self) -> str:
        return f"<!-- {self.header_text()} -->\n"


# argparse destinations that name outputs or logging, not inputs
_NON_IDENTITY_ARGS = frozenset({"out", "chart", "verbose", "func", "command"})


def command_meta(command: str, options: Mapping[str, Any], seed: int = 0) -> RunMeta:
    """Identity of a standalone command: its name and inputs, output paths excluded."""
    declared = {k: v for k, v in options.items() if k not in _NON_IDENTITY_ARGS and not callable(v)}
    return RunMeta.derive({"command": command, "options": declared}, seed)


def is_meta_object(obj: Any) -> bool:
    return isinstance(obj, dict) and META_KEY in obj


def parse_header_text(text: str) -> Optional[RunMeta]:
    fields = {}
    for part in text.strip().lstrip("#").strip().split(";"):
        if "=" in part:
            key, value = part.split("=", 1)
            fields[key.strip()] = value.strip()
    try:
        return RunMeta(fields["run_id"], int(fields["seed"]), fields["config_hash"])
    except (KeyError, ValueError):
        return None


def write_csv(df: pd.DataFrame, path: str, meta: Optional[RunMeta] = None) -> None:
    """DataFrame -> UTF-8 CSV with header row, preceded by the metadata comment line."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if meta is not None:
            f.write(meta.csv_header())
        df.to_csv(f, index=False, lineterminator="\n")


def read_csv(path: str, **kwargs) -> pd.DataFrame:
    """Inverse of write_csv; a leading metadata line is skipped."""
    with open(path, "r", encoding="utf-8") as f:
        has_meta = f.readline().startswith("# run_id=")
    return pd.read_csv(path, skiprows=1 if has_meta else 0, keep_default_na=False, **kwargs)


# --- Provenance clock ---
Clock = Callable[[], dt.datetime]


def utc_now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


def frozen_clock(epoch_seconds: int) -> Clock:
    frozen = dt.datetime.fromtimestamp(int(epoch_seconds), dt.timezone.utc)
    return lambda: frozen


def provenance_clock(source: Any) -> Clock:
    """SOURCE_DATE_EPOCH freezes provenance timestamps; a source marked
    `deterministic` (mock backend, recorded scans) freezes them at the epoch."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return frozen_clock(int(epoch))
    if getattr(source, "deterministic", False):
        return frozen_clock(0)
    return utc_now


def utc_stamp(clock: Clock = utc_now) -> str:
    return clock().astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
