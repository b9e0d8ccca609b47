"""
Generative-AI parsing pipeline: raw description -> structured ThreatRecord.

Flow per record: build the schema-enforced prompt, wait for the rate
limiter, call the backend (retrying transport failures), validate the body
against the schema, and append the result to the checkpoint before the next
call starts. Records already in the checkpoint are skipped, so an
interrupted run resumes where it stopped.

Run:
  python -m threatgeo.extract --in records.jsonl --out checkpoint.jsonl --mock table.jsonl
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

from .backends import Backend, BackendConfig, GeminiBackend, MockBackend
from .checkpoint import Checkpoint
from .errors import ThreatGeoError
from .ingest import RawRecord, read_records
from .ratelimit import RateLimiter
from .records import Provenance, Status, ThreatRecord
from .runmeta import Clock, RunMeta, command_meta, provenance_clock, utc_stamp
from .schema import ExtractionSchema, build_prompt, load_schema, parse_response

logger = logging.getLogger(__name__)


def extract_one(
    backend: Backend,
    schema: ExtractionSchema,
    record: RawRecord,
    config: Optional[BackendConfig] = None,
    limiter: Optional[RateLimiter] = None,
    clock: Optional[Clock] = None,
) -> ThreatRecord:
    """Exactly one ThreatRecord per call; failures are encoded in `status`."""
    config = config or BackendConfig()
    limiter = limiter or RateLimiter(config.inter_call_delay)
    clock = clock or provenance_clock(backend)
    prompt = build_prompt(schema, record.description)

    body = None
    last_error: Optional[Exception] = None
    attempts = config.max_retries + 1
    for attempt in range(1, attempts + 1):
        limiter.acquire()
        try:
            body = backend.generate(prompt, config)
            break
        except Exception as e:  # any transport failure stays inside the record
            last_error = e
            logger.warning("%s/%s: backend attempt %d/%d failed: %s", *record.ref, attempt, attempts, e)

    provenance = Provenance(
        model_id=backend.answering_model(config), temperature=config.temperature, timestamp=utc_stamp(clock)
    )
    if body is None:
        return ThreatRecord.failed(
            record, Status.BACKEND_ERROR, f"failed after {attempts} attempts: {last_error}", provenance
        )

    outcome = parse_response(schema, body)
    if not outcome.ok:
        logger.warning("%s/%s: parse error: %s", *record.ref, outcome.error)
        logger.debug("offending body: %r", body[:500])
        return ThreatRecord.failed(record, Status.PARSE_ERROR, outcome.error, provenance)

    values = dict(outcome.values)
    flag = schema.domain_flag
    origin = values.pop("country_of_origin", [])
    target = values.pop("country_of_target", [])
    return ThreatRecord(
        source_id=record.source_id,
        record_id=record.record_id,
        country_of_origin=origin,
        country_of_target=target,
        energy_related=values.pop(flag),
        status=Status.OK,
        provenance=provenance,
        date=record.date,
        extra=values,
    )


@dataclass
class PipelineStats:
    calls: int = 0
    skipped: int = 0
    by_status: Dict[str, int] = field(default_factory=lambda: {s.value: 0 for s in Status})

    @property
    def failures(self) -> int:
        return self.by_status[Status.PARSE_ERROR.value] + self.by_status[Status.BACKEND_ERROR.value]


def run_pipeline(
    backend: Backend,
    schema: ExtractionSchema,
    records: Iterable[RawRecord],
    checkpoint_path: str,
    config: Optional[BackendConfig] = None,
    limiter: Optional[RateLimiter] = None,
    clock: Optional[Clock] = None,
    meta: Optional[RunMeta] = None,
) -> Checkpoint:
    """Extract every record not yet checkpointed, one backend call at a time.

    The returned checkpoint carries `run_stats` (PipelineStats). A checkpoint
    write failure aborts the run with CheckpointError; the file stays valid
    up to the last flushed entry.
    """
    schema.require_extractable()
    config = config or BackendConfig()
    limiter = limiter or RateLimiter(config.inter_call_delay)
    clock = clock or provenance_clock(backend)
    checkpoint = Checkpoint.open(checkpoint_path, meta=meta)
    stats = PipelineStats()
    calls_before = limiter.calls

    for record in records:
        if record.ref in checkpoint:
            stats.skipped += 1
            continue
        result = extract_one(backend, schema, record, config=config, limiter=limiter, clock=clock)
        checkpoint.append(result)
        stats.by_status[result.status.value] += 1
        logger.info("%s/%s -> %s", record.source_id, record.record_id, result.status.value)

    stats.calls = limiter.calls - calls_before
    checkpoint.run_stats = stats
    logger.info(
        "extraction done: %d calls, %d skipped, %s", stats.calls, stats.skipped, stats.by_status
    )
    return checkpoint


def make_backend(mock_table: Optional[str], api_key_env: str = "GEMINI_API_KEY") -> Backend:
    if mock_table:
        return MockBackend.from_file(mock_table)
    return GeminiBackend(api_key_env=api_key_env)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--schema", default=None, help="Schema JSON file (default: packaged energy schema)")
    parser.add_argument("--in", dest="inp", required=True, help="Normalized records file (JSON lines)")
    parser.add_argument("--out", required=True, help="Checkpoint file (JSON lines, appended)")
    parser.add_argument("--delay", type=float, default=7.0, help="Seconds between backend calls")
    parser.add_argument("--temperature", type=float, default=0.1)
    parser.add_argument("--model", default=BackendConfig.model_id)
    parser.add_argument("--max-retries", type=int, default=2)
    parser.add_argument("--mock", default=None, help="Mock response table instead of the live model")


def run_from_args(args: argparse.Namespace, meta: Optional[RunMeta] = None) -> int:
    meta = meta or command_meta("extract", vars(args))
    schema = load_schema(args.schema)
    config = BackendConfig(
        model_id=args.model,
        temperature=args.temperature,
        inter_call_delay=args.delay,
        max_retries=args.max_retries,
    )
    backend = make_backend(args.mock)
    records = read_records(args.inp)
    checkpoint = run_pipeline(backend, schema, records, args.out, config=config, meta=meta)
    stats = checkpoint.run_stats
    if stats.failures:
        print(
            f"extract: {stats.by_status['parse_error']} parse_error, "
            f"{stats.by_status['backend_error']} backend_error",
            file=sys.stderr,
        )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Extract structured threat records with a generative model")
    add_arguments(parser)
    args = parser.parse_args(argv)
    try:
        return run_from_args(args)
    except (ThreatGeoError, ValueError) as e:
        print(f"extract: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
