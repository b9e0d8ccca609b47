import json
import os

import pytest

from threatgeo.config import load_config, parse_config
from threatgeo.errors import ConfigError


def _minimal(**overrides):
    data = {
        "seed": 3,
        "sources": [{"source_id": "eurepoc", "kind": "incident", "format": "tabular", "path": "eurepoc_sample.csv"}],
        "backend": {"provider": "mock", "mock_table": "mock_responses.jsonl"},
    }
    data.update(overrides)
    return data


def test_fixture_config_loads(fixtures_dir):
    loaded = load_config(os.path.join(fixtures_dir, "run_config.json"))
    cfg = loaded.config
    assert cfg.seed == 7
    assert cfg.sources[0].path == os.path.join(fixtures_dir, "eurepoc_sample.csv")
    assert cfg.backend.mock_table == os.path.join(fixtures_dir, "mock_responses.jsonl")
    assert cfg.ioc.scan_fixtures == os.path.join(fixtures_dir, "scans")
    assert cfg.cache_dir == os.path.join(fixtures_dir, "cache")
    assert cfg.backend.backend_config().inter_call_delay == 0.0
    assert cfg.ground_truth.ground_truth().label("Media") is False
    assert [d.source_id for d in cfg.descriptors()] == ["eurepoc", "malpedia"]


def test_run_identity_ignores_output_dir(fixtures_dir, tmp_path):
    path = os.path.join(fixtures_dir, "run_config.json")
    a = load_config(path, output_dir=str(tmp_path / "a"))
    b = load_config(path, output_dir=str(tmp_path / "b"))
    assert a.meta == b.meta
    assert a.config.output_dir == str(tmp_path / "a")


def test_run_identity_follows_the_seed(fixtures_dir):
    a = parse_config(_minimal(seed=1), fixtures_dir).meta
    b = parse_config(_minimal(seed=2), fixtures_dir).meta
    assert a.run_id != b.run_id
    assert a.config_hash != b.config_hash


def test_all_problems_are_reported_together(fixtures_dir):
    data = _minimal(
        sources=[
            {"source_id": "x", "kind": "incident", "format": "tabular", "path": "missing.csv"},
            {"source_id": "x", "kind": "incident", "format": "tabular", "path": "eurepoc_sample.csv"},
        ],
        backend={"provider": "mock"},
        lexicon_path="nope.txt",
    )
    with pytest.raises(ConfigError) as exc:
        parse_config(data, fixtures_dir)
    problems = "\n".join(exc.value.problems)
    assert "sources.0.path: path not found" in problems
    assert "lexicon_path: path not found" in problems
    assert "backend.mock_table: required" in problems
    assert "duplicate source_id ['x']" in problems


def test_schema_violations_name_the_field(fixtures_dir):
    with pytest.raises(ConfigError) as exc:
        parse_config(_minimal(top_k=0, colour="blue"), fixtures_dir)
    locs = [p.split(":")[0] for p in exc.value.problems]
    assert "top_k" in locs
    assert "colour" in locs
    with pytest.raises(ConfigError):
        parse_config(_minimal(backend={"provider": "openai"}), fixtures_dir)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{seed: 1", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_absolute_paths_untouched(fixtures_dir, tmp_path):
    table = os.path.join(fixtures_dir, "mock_responses.jsonl")
    data = _minimal(backend={"provider": "mock", "mock_table": table}, cache_dir="scan-cache")
    data["sources"][0]["path"] = os.path.join(fixtures_dir, "eurepoc_sample.csv")
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    loaded = load_config(str(path))
    assert loaded.config.backend.mock_table == table
    assert loaded.config.cache_dir == str(tmp_path / "scan-cache")
    assert loaded.config.output_dir == str(tmp_path / "out")
