"""
Rule-based domain classifier used as the comparison baseline.

A description is positive when any lexicon phrase occurs in it,
case-insensitively and on word boundaries ("energy" must not fire inside
"synergy"). Phrases are located with an Aho-Corasick automaton and every hit
is then checked against the boundary rule.

Run:
  python -m threatgeo.baseline --in records.jsonl --out predictions.jsonl
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, List, Optional, Tuple

import ahocorasick

from .errors import ThreatGeoError
from .ingest import RawRecord, read_records
from .runmeta import RunMeta, command_meta

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_LEXICON_PATH = os.path.join(DATA_DIR, "energy_lexicon.txt")


@dataclass(frozen=True)
class Lexicon:
    domain_label: str
    phrases: Tuple[str, ...]

    def __post_init__(self):
        cleaned = []
        for phrase in self.phrases:
            p = phrase.strip().lower()
            if not p:
                raise ValueError("lexicon phrases must not be blank")
            if p not in cleaned:
                cleaned.append(p)
        object.__setattr__(self, "phrases", tuple(cleaned))

    def with_phrase(self, phrase: str) -> "Lexicon":
        return Lexicon(self.domain_label, self.phrases + (phrase,))


def load_lexicon(path: Optional[str] = None, domain_label: str = "energy") -> Lexicon:
    """One phrase per line; `#` starts a comment; blank lines ignored."""
    path = path or DEFAULT_LEXICON_PATH
    phrases: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            text = line.split("#", 1)[0].strip()
            if text:
                phrases.append(text)
    lexicon = Lexicon(domain_label, tuple(phrases))
    logger.debug("loaded %d phrases from %s", len(lexicon.phrases), path)
    return lexicon


@lru_cache(maxsize=16)
def _automaton(phrases: Tuple[str, ...]):
    automaton = ahocorasick.Automaton()
    for phrase in phrases:
        automaton.add_word(phrase, len(phrase))
    automaton.make_automaton()
    return automaton


def _on_boundary(text: str, start: int, end: int) -> bool:
    """`end` is exclusive."""
    if start > 0 and text[start - 1].isalnum():
        return False
    if end < len(text) and text[end].isalnum():
        return False
    return True


def matches(lexicon: Lexicon, text: str) -> List[str]:
    """All boundary-respecting phrase hits, in text order."""
    if not lexicon.phrases or not text:
        return []
    lowered = text.lower()
    hits = []
    for end_index, length in _automaton(lexicon.phrases).iter(lowered):
        start = end_index - length + 1
        if _on_boundary(lowered, start, end_index + 1):
            hits.append(lowered[start:end_index + 1])
    return hits


def classify(lexicon: Lexicon, text: str) -> bool:
    if not lexicon.phrases or not text:
        return False
    lowered = text.lower()
    for end_index, length in _automaton(lexicon.phrases).iter(lowered):
        if _on_boundary(lowered, end_index - length + 1, end_index + 1):
            return True
    return False


def predict(lexicon: Lexicon, records: Iterable[RawRecord]) -> List[dict]:
    return [
        {"source_id": r.source_id, "record_id": r.record_id, "energy_related": classify(lexicon, r.description)}
        for r in records
    ]


def write_predictions(rows: List[dict], path: str, meta: Optional[RunMeta] = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if meta is not None:
            f.write(meta.jsonl_line())
        for row in rows:
            f.write(json.dumps(row) + "\n")


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lexicon", default=None, help="Phrase file (default: packaged 16-term energy lexicon)")
    parser.add_argument("--in", dest="inp", required=True, help="Normalized records file")
    parser.add_argument("--out", required=True, help="Predictions file (JSON lines)")


def run_from_args(args: argparse.Namespace, meta: Optional[RunMeta] = None) -> int:
    lexicon = load_lexicon(args.lexicon)
    rows = predict(lexicon, read_records(args.inp))
    write_predictions(rows, args.out, meta or command_meta("baseline", vars(args)))
    positives = sum(1 for r in rows if r["energy_related"])
    logger.info("baseline: %d of %d records matched", positives, len(rows))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Lexicon baseline for domain classification")
    add_arguments(parser)
    args = parser.parse_args(argv)
    try:
        return run_from_args(args)
    except (ThreatGeoError, ValueError, OSError) as e:
        print(f"baseline: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
