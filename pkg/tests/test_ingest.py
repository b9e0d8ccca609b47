import datetime as dt
import json
import os

import pytest

from threatgeo.errors import IngestError
from threatgeo.ingest import (
    SourceDescriptor,
    SourceFormat,
    SourceKind,
    SourceStats,
    as_list,
    ingest_all,
    ingest_source,
    parse_date,
    read_records,
    split_leading_date,
    write_records,
)
from threatgeo.runmeta import RunMeta


def _src(tmp_path, name, body, source_id="generic", fmt="json-objects", kind="incident"):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return SourceDescriptor(source_id, SourceKind(kind), str(path), SourceFormat(fmt))


def test_descriptor_parse():
    d = SourceDescriptor.parse("eurepoc:incident:tabular:data/eurepoc.csv")
    assert d.source_id == "eurepoc"
    assert d.kind is SourceKind.INCIDENT
    assert d.format is SourceFormat.TABULAR
    assert d.path == "data/eurepoc.csv"
    with pytest.raises(ValueError):
        SourceDescriptor.parse("eurepoc:incident")


def test_parse_date_partial_and_missing():
    assert parse_date("2015") == dt.date(2015, 1, 1)
    assert parse_date("2015-12") == dt.date(2015, 12, 1)
    assert parse_date("2022-04-08") == dt.date(2022, 4, 8)
    assert parse_date("unknown") is None
    assert parse_date("") is None
    assert parse_date(None) is None


def test_split_leading_date():
    when, text = split_leading_date("May 2023. Danish energy companies were compromised.")
    assert when == dt.date(2023, 5, 1)
    assert text == "Danish energy companies were compromised."
    assert split_leading_date("No date here.") == (None, "No date here.")


def test_as_list_forms():
    assert as_list("Belgium;Netherlands") == ["Belgium", "Netherlands"]
    assert as_list('["Ukraine", "Poland"]') == ["Ukraine", "Poland"]
    assert as_list(["Iran", ""]) == ["Iran"]
    assert as_list(None) == []


def test_eurepoc_adapter(fixtures_dir):
    desc = SourceDescriptor("eurepoc", SourceKind.INCIDENT, os.path.join(fixtures_dir, "eurepoc_sample.csv"),
                            SourceFormat.TABULAR)
    records = list(ingest_source(desc))
    assert [r.record_id for r in records] == [f"EU-00{i}" for i in range(1, 9)]
    first = records[0]
    assert first.date == dt.date(2023, 5, 11)
    assert first.structured_hints["origin"] == ["Russia"]
    assert first.ground_truth_category == "Critical infrastructure: Energy"
    oil = records[3]
    assert "origin" not in oil.structured_hints
    assert oil.structured_hints["target"] == ["Belgium", "Netherlands"]


def test_malpedia_adapter(fixtures_dir):
    desc = SourceDescriptor("malpedia", SourceKind.ACTOR, os.path.join(fixtures_dir, "malpedia_actors.json"),
                            SourceFormat.JSON_OBJECTS)
    records = list(ingest_source(desc))
    assert len(records) == 3
    sandworm = records[0]
    assert sandworm.record_id == "a1b2c3d4-0000-4000-8000-000000000001"
    assert sandworm.structured_hints["name"] == "Sandworm"
    assert sandworm.structured_hints["origin"] == "RU"
    assert sandworm.structured_hints["suspected_victims"] == ["Ukraine", "United States"]
    assert sandworm.structured_hints["synonyms"] == ["ELECTRUM", "Voodoo Bear"]
    assert sandworm.date is None


def test_mitre_keeps_only_intrusion_sets(tmp_path):
    bundle = {
        "type": "bundle",
        "objects": [
            {"type": "intrusion-set", "id": "intrusion-set--1", "name": "APT28",
             "description": "APT28 is a threat group attributed to Russia.", "aliases": ["APT28", "Fancy Bear"],
             "external_references": [{"source_name": "mitre-attack", "external_id": "G0007"}]},
            {"type": "relationship", "id": "relationship--1", "description": "uses"},
            {"type": "intrusion-set", "id": "intrusion-set--2", "name": "Old", "description": "gone",
             "revoked": True},
        ],
    }
    desc = _src(tmp_path, "mitre.json", json.dumps(bundle), source_id="mitre", kind="actor")
    records = list(ingest_source(desc))
    assert [r.record_id for r in records] == ["intrusion-set--1"]
    assert records[0].structured_hints["external_id"] == "G0007"
    assert records[0].structured_hints["aliases"] == ["APT28", "Fancy Bear"]


def test_csis_text_list_with_leading_dates(tmp_path):
    body = "May 2023. Hackers hit Danish energy firms.\n\nJune 2023. Another event.\n"
    desc = _src(tmp_path, "csis.txt", body, source_id="csis", fmt="text-list")
    stats = SourceStats("csis")
    records = list(ingest_source(desc, stats))
    assert [r.date for r in records] == [dt.date(2023, 5, 1), dt.date(2023, 6, 1)]
    assert records[0].description == "Hackers hit Danish energy firms."
    # the blank line is dropped, not malformed
    assert stats.records == 2 and stats.dropped == 1 and stats.malformed == []
    # ids are synthesized from content and stable across runs
    again = list(ingest_source(desc))
    assert [r.record_id for r in again] == [r.record_id for r in records]


def test_aiid_adapter(tmp_path):
    body = ("incident_id,date,title,description,Alleged harmed or nearly harmed parties\n"
            "17,2019-03-01,Grid model,A forecasting model misled grid operators.,utilities;consumers\n")
    desc = _src(tmp_path, "aiid.csv", body, source_id="aiid", fmt="tabular", kind="report")
    (record,) = list(ingest_source(desc))
    assert record.record_id == "17"
    assert record.structured_hints["title"] == "Grid model"
    assert record.structured_hints["harmed_parties"] == ["utilities", "consumers"]


def test_malformed_lines_are_skipped_with_position(tmp_path, caplog):
    body = '{"id": "a", "description": "first"}\nnot json\n{"id": "b", "description": "second"}\n'
    desc = _src(tmp_path, "lines.jsonl", body)
    stats = SourceStats("generic")
    records = list(ingest_source(desc, stats))
    assert [r.record_id for r in records] == ["a", "b"]
    assert stats.malformed == [2]
    assert "malformed entry at 2" in caplog.text


def test_malformed_table_rows_are_skipped_with_line_number(tmp_path, caplog):
    body = 'id,description\na,first\nb,bad,extra\n"c","two\nlines"\nd,bad,x,y\n\ne,last\n'
    desc = _src(tmp_path, "table.csv", body, fmt="tabular")
    stats = SourceStats("generic")
    records = list(ingest_source(desc, stats))
    assert [r.record_id for r in records] == ["a", "c", "e"]
    assert records[1].description == "two\nlines"
    # rows start on physical lines 3 and 6; the quoted field spans lines 4-5
    assert stats.malformed == [3, 6]
    assert "malformed entry at 3" in caplog.text


def test_empty_dump_yields_nothing(tmp_path):
    desc = _src(tmp_path, "empty.json", "")
    assert list(ingest_source(desc)) == []


def test_unreadable_dump_raises(tmp_path):
    desc = SourceDescriptor("generic", SourceKind.INCIDENT, str(tmp_path / "missing.json"),
                            SourceFormat.JSON_OBJECTS)
    with pytest.raises(IngestError):
        list(ingest_source(desc))


def test_ingest_all_keeps_order_and_rejects_duplicates(tmp_path, fixtures_dir):
    eurepoc = SourceDescriptor("eurepoc", SourceKind.INCIDENT, os.path.join(fixtures_dir, "eurepoc_sample.csv"),
                               SourceFormat.TABULAR)
    malpedia = SourceDescriptor("malpedia", SourceKind.ACTOR, os.path.join(fixtures_dir, "malpedia_actors.json"),
                                SourceFormat.JSON_OBJECTS)
    records, report = ingest_all([malpedia, eurepoc])
    assert [r.source_id for r in records] == ["malpedia"] * 3 + ["eurepoc"] * 8
    assert report["eurepoc"].records == 8
    assert len(report["malpedia"].snapshot_sha256) == 64
    with pytest.raises(IngestError):
        ingest_all([eurepoc, eurepoc])


def test_records_file_skips_meta_line(tmp_path, fixtures_dir):
    desc = SourceDescriptor("eurepoc", SourceKind.INCIDENT, os.path.join(fixtures_dir, "eurepoc_sample.csv"),
                            SourceFormat.TABULAR)
    records = list(ingest_source(desc))
    path = str(tmp_path / "records.jsonl")
    meta = RunMeta("run", 7, "abc")
    assert write_records(records, path, meta) == 8
    with open(path, encoding="utf-8") as f:
        assert f.readline().startswith('{"__meta__"')
    loaded = read_records(path)
    assert [r.to_dict() for r in loaded] == [r.to_dict() for r in records]
