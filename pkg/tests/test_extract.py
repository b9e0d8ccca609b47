import json

import pytest

from threatgeo.backends import BackendConfig, GeminiBackend, MockBackend
from threatgeo.checkpoint import Checkpoint
from threatgeo.extract import extract_one, run_pipeline
from threatgeo.ratelimit import RateLimiter
from threatgeo.records import Status
from threatgeo.schema import default_schema

from conftest import raw

SCHEMA = default_schema()
OK_BODY = json.dumps({"country_of_origin": ["Russia"], "country_of_target": ["Ukraine"], "energy_related": True})


@pytest.fixture(autouse=True)
def _no_epoch(monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)


def _records(n):
    return [raw(f"r{i:02d}", f"incident number {i}") for i in range(n)]


class CrashingBackend(MockBackend):
    """Simulates the process dying after `crash_after` calls."""

    def __init__(self, table, crash_after, **kwargs):
        super().__init__(table, **kwargs)
        self.crash_after = crash_after

    def generate(self, prompt, config):
        if self.calls >= self.crash_after:
            raise KeyboardInterrupt
        return super().generate(prompt, config)


def test_ok_record(fake_clock):
    backend = MockBackend({"*": OK_BODY})
    limiter = RateLimiter(0.0, clock=fake_clock, sleep=fake_clock.sleep)
    result = extract_one(backend, SCHEMA, raw("1", "grid attack", date="2022-03-01"),
                         BackendConfig(inter_call_delay=0.0), limiter)
    assert result.status is Status.OK
    assert result.country_of_origin == ["Russia"]
    assert result.energy_related is True
    assert result.date.isoformat() == "2022-03-01"
    assert result.provenance.timestamp == "1970-01-01T00:00:00Z"
    assert result.provenance.temperature == 0.1
    assert result.provenance.model_id == "mock"


def test_provenance_names_the_answering_model():
    config = BackendConfig(model_id="gemini-1.5-pro", inter_call_delay=0.0, max_retries=0)
    replay = MockBackend({"*": OK_BODY}, model_id="replay-2024")
    assert extract_one(replay, SCHEMA, raw("1"), config).provenance.model_id == "replay-2024"
    broken = MockBackend({"*": OK_BODY}, failures=5, model_id="replay-2024")
    assert extract_one(broken, SCHEMA, raw("2"), config).provenance.model_id == "replay-2024"
    assert GeminiBackend().answering_model(config) == "gemini-1.5-pro"


def test_parse_error_is_recorded_not_raised():
    backend = MockBackend({"*": "Sorry, I cannot help with that."})
    result = extract_one(backend, SCHEMA, raw("1"), BackendConfig(inter_call_delay=0.0))
    assert result.status is Status.PARSE_ERROR
    assert "malformed JSON" in result.error_message
    assert result.energy_related is None


def test_transient_failures_are_retried():
    backend = MockBackend({"*": OK_BODY}, failures=2)
    result = extract_one(backend, SCHEMA, raw("1"), BackendConfig(inter_call_delay=0.0, max_retries=2))
    assert result.status is Status.OK
    assert backend.calls == 3


def test_exhausted_retries_give_backend_error():
    backend = MockBackend({"*": OK_BODY}, failures=5)
    result = extract_one(backend, SCHEMA, raw("1"), BackendConfig(inter_call_delay=0.0, max_retries=2))
    assert result.status is Status.BACKEND_ERROR
    assert "3 attempts" in result.error_message
    assert backend.calls == 3


def test_custom_domain_flag_lands_in_energy_related():
    schema = default_schema("automotive")
    body = json.dumps({"country_of_origin": [], "country_of_target": ["Germany"], "automotive_related": True})
    result = extract_one(MockBackend({"*": body}), schema, raw("1"), BackendConfig(inter_call_delay=0.0))
    assert result.ok and result.energy_related is True


@pytest.mark.parametrize("delay", [7.0, 0.2])
def test_call_starts_respect_the_delay(tmp_path, fake_clock, delay):
    backend = MockBackend({"*": OK_BODY}, clock=fake_clock)
    limiter = RateLimiter(delay, clock=fake_clock, sleep=fake_clock.sleep)
    run_pipeline(backend, SCHEMA, _records(5), str(tmp_path / "ckpt.jsonl"),
                 BackendConfig(inter_call_delay=delay), limiter)
    gaps = [b - a for a, b in zip(backend.call_times, backend.call_times[1:])]
    assert len(gaps) == 4
    assert all(g >= delay - 1e-9 for g in gaps)
    assert fake_clock.now - 1000.0 == pytest.approx(4 * delay)


def test_interrupted_run_resumes_without_repeating_calls(tmp_path, fake_clock):
    path = str(tmp_path / "ckpt.jsonl")
    records = _records(50)
    config = BackendConfig(inter_call_delay=0.0)

    crashing = CrashingBackend({"*": OK_BODY}, crash_after=20, clock=fake_clock)
    with pytest.raises(KeyboardInterrupt):
        run_pipeline(crashing, SCHEMA, records, path, config)
    assert len(Checkpoint.open(path)) == 20

    backend = MockBackend({"*": OK_BODY}, clock=fake_clock)
    checkpoint = run_pipeline(backend, SCHEMA, records, path, config)
    assert backend.calls == 30
    assert checkpoint.run_stats.skipped == 20
    assert len(checkpoint) == 50
    assert {r.record_id for r in checkpoint} == {r.record_id for r in records}

    # a finished run makes no calls at all
    idle = MockBackend({"*": OK_BODY})
    run_pipeline(idle, SCHEMA, records, path, config)
    assert idle.calls == 0


def _varied_table(records):
    table = {}
    for i, rec in enumerate(records):
        if i % 7 == 3:
            table[rec.description] = "{not json"
        else:
            table[rec.description] = json.dumps({
                "country_of_origin": [["Russia"], ["China"], []][i % 3],
                "country_of_target": [["Ukraine"], ["Germany", "Poland"]][i % 2],
                "energy_related": i % 2 == 0,
            })
    return table


def test_resumed_checkpoint_equals_an_uninterrupted_one(tmp_path):
    records = _records(30)
    table = _varied_table(records)
    config = BackendConfig(inter_call_delay=0.0)

    straight = str(tmp_path / "straight.jsonl")
    run_pipeline(MockBackend(table), SCHEMA, records, straight, config)

    resumed = str(tmp_path / "resumed.jsonl")
    for crash_after in (4, 11):
        with pytest.raises(KeyboardInterrupt):
            run_pipeline(CrashingBackend(table, crash_after=crash_after), SCHEMA, records, resumed, config)
    run_pipeline(MockBackend(table), SCHEMA, records, resumed, config)

    expected = [r.to_dict() for r in Checkpoint.open(straight)]
    assert [r.to_dict() for r in Checkpoint.open(resumed)] == expected
    assert {r["status"] for r in expected} == {"ok", "parse_error"}
    with open(straight, "rb") as a, open(resumed, "rb") as b:
        assert a.read() == b.read()


def test_pipeline_counts_failures(tmp_path):
    table = {"incident number 0": OK_BODY, "*": "{not json"}
    checkpoint = run_pipeline(MockBackend(table), SCHEMA, _records(3), str(tmp_path / "c.jsonl"),
                              BackendConfig(inter_call_delay=0.0))
    stats = checkpoint.run_stats
    assert stats.by_status == {"ok": 1, "parse_error": 2, "backend_error": 0}
    assert stats.failures == 2
    assert stats.calls == 3


def test_source_date_epoch_freezes_timestamps(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    result = extract_one(MockBackend({"*": OK_BODY}), SCHEMA, raw("1"), BackendConfig(inter_call_delay=0.0))
    assert result.provenance.timestamp == "2023-11-14T22:13:20Z"


def test_backend_config_bounds():
    with pytest.raises(ValueError):
        BackendConfig(temperature=1.5)
    with pytest.raises(ValueError):
        BackendConfig(inter_call_delay=-1)
