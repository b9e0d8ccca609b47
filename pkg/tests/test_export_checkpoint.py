import pandas as pd

from threatgeo.checkpoint import Checkpoint
from threatgeo.records import Status, ThreatRecord
from threatgeo.tools.export_checkpoint import COLUMNS, export_checkpoint, main

from conftest import PROV, raw, threat


def _checkpoint(tmp_path):
    path = str(tmp_path / "ckpt.jsonl")
    ckpt = Checkpoint.open(path)
    ckpt.append(threat("1", origin=["Russia"], target=["Ukraine", "Poland"], energy=True, date="2022-04-08",
                       source_id="eurepoc"))
    ckpt.append(ThreatRecord.failed(raw("2", source_id="malpedia"), Status.PARSE_ERROR, "malformed JSON", PROV))
    return path


def test_export_flattens_records(tmp_path):
    out = export_checkpoint(_checkpoint(tmp_path), str(tmp_path / "export" / "ckpt.csv"))
    df = pd.read_csv(out, keep_default_na=False)
    assert list(df.columns) == COLUMNS
    first = df.iloc[0]
    assert first["country_of_target"] == "Ukraine;Poland"
    assert first["date"] == "2022-04-08"
    assert df.iloc[1]["status"] == "parse_error"
    assert df.iloc[1]["error_message"] == "malformed JSON"


def test_export_filters_by_source(tmp_path, capsys):
    out = str(tmp_path / "only.csv")
    assert main(["--checkpoint", _checkpoint(tmp_path), "--out", out, "--source", "malpedia"]) == 0
    assert list(pd.read_csv(out)["record_id"]) == [2]
    assert "export_csv" in capsys.readouterr().out
