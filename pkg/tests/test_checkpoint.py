import json

import pytest

from threatgeo.checkpoint import Checkpoint, read_checkpoint
from threatgeo.errors import CheckpointError
from threatgeo.records import ThreatRecord
from threatgeo.runmeta import RunMeta

from conftest import threat


def test_append_and_reload(tmp_path):
    path = str(tmp_path / "ckpt.jsonl")
    ckpt = Checkpoint.open(path, meta=RunMeta("run", 1, "hash"))
    ckpt.append(threat("a", origin=["Russia"], energy=True, date="2022-01-05"))
    ckpt.append(threat("b"))
    again = Checkpoint.open(path)
    assert len(again) == 2
    assert ("src", "a") in again
    assert again.get(("src", "a")).date.isoformat() == "2022-01-05"
    assert [r.record_id for r in read_checkpoint(path)] == ["a", "b"]


def test_duplicate_append_rejected(tmp_path):
    ckpt = Checkpoint.open(str(tmp_path / "ckpt.jsonl"))
    ckpt.append(threat("a"))
    with pytest.raises(CheckpointError):
        ckpt.append(threat("a"))


def test_torn_tail_is_cut_off(tmp_path, caplog):
    path = tmp_path / "ckpt.jsonl"
    ckpt = Checkpoint.open(str(path))
    ckpt.append(threat("a"))
    ckpt.append(threat("b"))
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(threat("c").to_dict())[:25])
    reopened = Checkpoint.open(str(path))
    assert len(reopened) == 2
    assert "torn final entry" in caplog.text
    assert path.read_text(encoding="utf-8").endswith("\n")
    # the file is appendable again
    reopened.append(threat("c"))
    assert len(Checkpoint.open(str(path))) == 3


def test_failed_record_roundtrip():
    rec = ThreatRecord.from_dict({
        "source_id": "s", "record_id": "1", "status": "backend_error", "error_message": "quota",
        "energy_related": None, "provenance": {"model_id": "m", "temperature": 0.1, "timestamp": "t"},
    })
    assert not rec.ok
    assert ThreatRecord.from_dict(rec.to_dict()) == rec


def test_failed_record_needs_a_message():
    with pytest.raises(ValueError):
        ThreatRecord.from_dict({"source_id": "s", "record_id": "1", "status": "parse_error"})


def test_failed_fsync_leaves_no_partial_entry(tmp_path, monkeypatch):
    path = tmp_path / "ckpt.jsonl"
    ckpt = Checkpoint.open(str(path))
    ckpt.append(threat("a"))
    before = path.read_bytes()

    def no_space(fd):
        raise OSError(28, "No space left on device")

    monkeypatch.setattr("threatgeo.checkpoint.os.fsync", no_space)
    with pytest.raises(CheckpointError):
        ckpt.append(threat("b"))
    assert ("src", "b") not in ckpt
    assert path.read_bytes() == before

    monkeypatch.undo()
    reopened = Checkpoint.open(str(path))
    assert [r.record_id for r in reopened] == ["a"]
    reopened.append(threat("b"))
    assert [r.record_id for r in read_checkpoint(str(path))] == ["a", "b"]


def test_read_checkpoint_skips_bad_lines(tmp_path, caplog):
    path = tmp_path / "ckpt.jsonl"
    good = [json.dumps(threat(i).to_dict()).encode("utf-8") for i in ("a", "b")]
    path.write_bytes(b"\n".join([
        RunMeta("run", 1, "hash").jsonl_line().rstrip("\n").encode("utf-8"),
        good[0],
        b"{not json",
        b"\xff\xfe broken bytes",
        b'{"source_id": "s"}',
        b"[1, 2]",
        good[0],
        b"",
        good[1],
        good[1][:20],
    ]))
    snapshot = path.read_bytes()
    assert [r.record_id for r in read_checkpoint(str(path))] == ["a", "b"]
    assert caplog.text.count("unreadable entry skipped") == 4
    assert "duplicate entry" in caplog.text
    assert path.read_bytes() == snapshot
    # the writer skips the same lines
    assert [r.record_id for r in Checkpoint.open(str(path))] == ["a", "b"]
