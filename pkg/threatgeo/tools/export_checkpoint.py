"""
Flatten an extraction checkpoint into a CSV for review in a spreadsheet.

    python -m threatgeo.tools.export_checkpoint --checkpoint out/checkpoint.jsonl --out review.csv
"""

import argparse
import logging
import os
import sys
from typing import Optional

import pandas as pd

from ..checkpoint import read_checkpoint

logger = logging.getLogger(__name__)

COLUMNS = [
    "source_id",
    "record_id",
    "date",
    "status",
    "energy_related",
    "country_of_origin",
    "country_of_target",
    "model_id",
    "temperature",
    "error_message",
]


def export_checkpoint(checkpoint: str, out_path: str, source: Optional[str] = None) -> str:
    """Flatten a checkpoint into a CSV, one row per record; list fields joined with ';'."""
    rows = []
    for r in read_checkpoint(checkpoint):
        if source and r.source_id != source:
            continue
        rows.append(
            {
                "source_id": r.source_id,
                "record_id": r.record_id,
                "date": r.date.isoformat() if r.date else "",
                "status": r.status.value,
                "energy_related": "" if r.energy_related is None else r.energy_related,
                "country_of_origin": ";".join(r.country_of_origin),
                "country_of_target": ";".join(r.country_of_target),
                "model_id": r.provenance.model_id,
                "temperature": r.provenance.temperature,
                "error_message": r.error_message or "",
            }
        )
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    pd.DataFrame(rows, columns=COLUMNS).to_csv(out_path, index=False, lineterminator="\n")
    logger.info("exported %d records to %s", len(rows), out_path)
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Export an extraction checkpoint to CSV")
    parser.add_argument("--checkpoint", required=True, help="Checkpoint file (JSON lines)")
    parser.add_argument("--out", required=True, help="CSV to write")
    parser.add_argument(
        "--source",
        default=None,
        help="Only export records of this source id (e.g. 'eurepoc')",
    )
    args = parser.parse_args(argv)
    path = export_checkpoint(args.checkpoint, args.out, source=args.source)
    print({"export_csv": path})
    return 0


if __name__ == "__main__":
    sys.exit(main())
