import datetime as dt
import os

import pytest

from threatgeo.ingest import RawRecord
from threatgeo.records import Provenance, Status, ThreatRecord

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


class FakeClock:
    """Monotonic clock whose sleep() just advances time."""

    def __init__(self, start: float = 1000.0):
        self.now = start
        self.sleeps = []

    def __call__(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self.now += seconds


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def fake_clock():
    return FakeClock()


PROV = Provenance(model_id="mock", temperature=0.1, timestamp="1970-01-01T00:00:00Z")


def threat(record_id, origin=(), target=(), energy=False, date=None, source_id="src"):
    return ThreatRecord(
        source_id=source_id,
        record_id=record_id,
        country_of_origin=list(origin),
        country_of_target=list(target),
        energy_related=energy,
        status=Status.OK,
        provenance=PROV,
        date=dt.date.fromisoformat(date) if isinstance(date, str) else date,
    )


def raw(record_id, description="some incident", source_id="src", hints=None, category=None, date=None):
    return RawRecord(
        source_id=source_id,
        record_id=record_id,
        description=description,
        date=dt.date.fromisoformat(date) if isinstance(date, str) else date,
        structured_hints=dict(hints or {}),
        ground_truth_category=category,
    )
