"""
Evaluate a domain classifier against a stratified, labeled sample.

Two steps, both deterministic given the seed:
  sample    pick n energy + n non-energy records whose ground truth comes
            from a source category (category -> bool table)
  evaluate  compare a predictions file (extractor checkpoint or baseline
            output) with the labels and write metrics + raw matrix

Run:
  python -m threatgeo.evaluate --pred checkpoint.jsonl --labels labels.jsonl --out metrics.json
  python -m threatgeo.evaluate --matrix 91,9,23,77
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional

import pandas as pd

from .errors import EvaluationError, ThreatGeoError
from .ingest import RawRecord, RecordRef
from .metrics import ClassificationMetrics, ConfusionMatrix, confusion, metrics
from .runmeta import RunMeta, command_meta, is_meta_object

logger = logging.getLogger(__name__)

CLASS_NAMES = {True: "energy", False: "non-energy"}


@dataclass(frozen=True)
class GroundTruth:
    """Maps a source's category attribute onto the binary label.

    Records whose category is missing or unmapped are unlabeled unless
    `default` is set. A category may hold several values joined by
    `separator`; any positive value makes the record positive.
    """

    categories: Mapping[str, bool]
    source_id: Optional[str] = None
    default: Optional[bool] = None
    separator: str = ";"

    def __post_init__(self):
        folded = {str(k).strip().lower(): bool(v) for k, v in dict(self.categories).items()}
        object.__setattr__(self, "categories", folded)

    def label(self, category: Optional[str]) -> Optional[bool]:
        if not category:
            return self.default
        values = [v.strip().lower() for v in str(category).split(self.separator) if v.strip()]
        known = [self.categories[v] for v in values if v in self.categories]
        if not known:
            return self.default
        return any(known)


@dataclass
class LabeledRecord:
    record: RawRecord
    label: bool
    category: Optional[str] = field(default=None)

    @property
    def ref(self) -> RecordRef:
        return self.record.ref


def label_records(records: Iterable[RawRecord], ground_truth: GroundTruth) -> List[LabeledRecord]:
    out: List[LabeledRecord] = []
    unlabeled = 0
    for r in records:
        if ground_truth.source_id and r.source_id != ground_truth.source_id:
            continue
        value = ground_truth.label(r.ground_truth_category)
        if value is None:
            unlabeled += 1
            continue
        out.append(LabeledRecord(r, value, r.ground_truth_category))
    if unlabeled:
        logger.info("%d records left unlabeled (category missing or unmapped)", unlabeled)
    return out


def stratified_sample(
    records: Iterable[RawRecord], n_per_class: int, seed: int, ground_truth: GroundTruth
) -> List[LabeledRecord]:
    """Exactly `n_per_class` records per class, drawn without replacement.

    Output lists the energy class first, each class in sampled order.
    """
    if n_per_class < 0:
        raise ValueError("n_per_class must be >= 0")
    labeled = label_records(records, ground_truth)
    df = pd.DataFrame({"pos": range(len(labeled)), "label": [lr.label for lr in labeled]}, dtype=object)
    counts = df["label"].value_counts().to_dict() if len(df) else {}
    for cls in (True, False):
        have = int(counts.get(cls, 0))
        if have < n_per_class:
            raise EvaluationError(
                f"insufficient labeled records for class {CLASS_NAMES[cls]!r}: need {n_per_class}, have {have}"
            )
    if n_per_class == 0:
        return []
    picked: List[LabeledRecord] = []
    for cls in (True, False):
        group = df[df["label"] == cls]
        sampled = group.sample(n=n_per_class, replace=False, random_state=seed)
        picked.extend(labeled[int(p)] for p in sampled["pos"])
    logger.info("sampled %d records (%d per class, seed=%d)", len(picked), n_per_class, seed)
    return picked


def write_labels(sample: List[LabeledRecord], path: str, meta: Optional[RunMeta] = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if meta is not None:
            f.write(meta.jsonl_line())
        for lr in sample:
            row = {
                "source_id": lr.record.source_id,
                "record_id": lr.record.record_id,
                "energy_related": lr.label,
                "category": lr.category,
            }
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def _iter_rows(path: str) -> Iterable[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as e:
                raise EvaluationError(f"{path}:{lineno}: not JSON: {e}") from e
            if not is_meta_object(obj):
                yield obj


def read_labels(path: str) -> Dict[RecordRef, bool]:
    return {(str(o["source_id"]), str(o["record_id"])): bool(o["energy_related"]) for o in _iter_rows(path)}


def read_predictions(path: str) -> Dict[RecordRef, bool]:
    """Baseline rows or checkpoint records. A checkpoint entry that failed
    extraction counts as a negative prediction."""
    out: Dict[RecordRef, bool] = {}
    failed = 0
    for o in _iter_rows(path):
        ref = (str(o["source_id"]), str(o["record_id"]))
        if o.get("status", "ok") != "ok":
            failed += 1
            out[ref] = False
            continue
        out[ref] = bool(o["energy_related"])
    if failed:
        logger.warning("%s: %d failed extractions counted as negative predictions", path, failed)
    return out


def evaluate(predictions: Mapping[RecordRef, bool], labels: Mapping[RecordRef, bool]) -> ConfusionMatrix:
    """Confusion over the labeled refs; predictions for unlabeled refs are ignored."""
    extra = set(predictions) - set(labels)
    if extra:
        logger.info("ignoring %d predictions without a label", len(extra))
    scoped = {k: v for k, v in predictions.items() if k in labels}
    return confusion(scoped, labels)


def metrics_payload(cm: ConfusionMatrix, meta: Optional[RunMeta] = None) -> dict:
    m: ClassificationMetrics = metrics(cm)
    payload = {}
    if meta is not None:
        payload["_meta"] = meta.as_dict()
    payload.update(m.rounded(4))
    payload["n"] = cm.total
    payload["matrix"] = {"tn": cm.tn, "fp": cm.fp, "fn": cm.fn, "tp": cm.tp}
    payload["rows"] = [list(r) for r in cm.rows()]
    return payload


def write_metrics(payload: dict, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=False)
        f.write("\n")


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pred", help="Predictions (checkpoint or baseline JSON lines)")
    parser.add_argument("--labels", help="Labels file written by `sample`")
    parser.add_argument("--matrix", help="Skip the files and score a stored matrix tn,fp,fn,tp")
    parser.add_argument("--out", default=None, help="Metrics JSON (default: stdout)")


def run_from_args(args: argparse.Namespace, meta: Optional[RunMeta] = None) -> int:
    meta = meta or command_meta("evaluate", vars(args))
    if args.matrix:
        cm = ConfusionMatrix.parse(args.matrix)
    elif args.pred and args.labels:
        cm = evaluate(read_predictions(args.pred), read_labels(args.labels))
    else:
        raise ValueError("either --matrix or both --pred and --labels are required")
    payload = metrics_payload(cm, meta)
    if args.out:
        write_metrics(payload, args.out)
        logger.info("metrics written to %s", args.out)
    else:
        print(json.dumps(payload, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Score domain predictions against labels")
    add_arguments(parser)
    args = parser.parse_args(argv)
    try:
        return run_from_args(args)
    except (ThreatGeoError, ValueError) as e:
        print(f"evaluate: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
