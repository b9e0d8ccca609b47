import re

import pandas as pd

from threatgeo.charts import HIGHLIGHT_COLOR, ChartKind, emit_chart, fill_periods, render_svg
from threatgeo.runmeta import RunMeta


def _groups(svg):
    return re.findall(r'<g class="group" data-label="([^"]*)">', svg)


def test_two_groups_two_series():
    table = pd.DataFrame({"place": ["Russia", "China"], "energy": [3, 1], "non-energy": [2, 4]})
    svg = render_svg(table, "Top origins")
    assert _groups(svg) == ["Russia", "China"]
    assert svg.count('class="bar"') == 4
    assert 'data-series="energy"' in svg and 'data-series="non-energy"' in svg
    assert "Top origins" in svg


def test_alliance_grid_chart(tmp_path):
    table = pd.DataFrame({"alliance": ["NATO", "BRICS", "OTHER"], "energy": [0, 5, 1], "non-energy": [2, 7, 0]})
    path = emit_chart(table, ChartKind.GROUPED_BAR, str(tmp_path / "alliances.svg"))
    with open(path, encoding="utf-8") as f:
        svg = f.read()
    assert _groups(svg) == ["NATO", "BRICS", "OTHER"]
    assert svg.count('class="bar"') == 6


def test_timeline_gaps_are_filled():
    years = fill_periods(pd.DataFrame({"period": ["2019", "2022"], "count": [2, 1]}))
    assert list(years["period"]) == ["2019", "2020", "2021", "2022"]
    assert list(years["count"]) == [2, 0, 0, 1]
    months = fill_periods(pd.DataFrame({"period": ["2022-11", "2023-02"], "count": [1, 1]}))
    assert list(months["period"]) == ["2022-11", "2022-12", "2023-01", "2023-02"]
    labels = pd.DataFrame({"place": ["Russia"], "count": [1]})
    assert fill_periods(labels) is labels


def test_timeline_chart_has_every_period(tmp_path):
    table = pd.DataFrame({"period": ["2020", "2023"], "count": [4, 1]})
    path = emit_chart(table, ChartKind.TIMELINE, str(tmp_path / "t.svg"))
    with open(path, encoding="utf-8") as f:
        assert _groups(f.read()) == ["2020", "2021", "2022", "2023"]


def test_highlighted_bars():
    table = pd.DataFrame({"engine": ["ESET-NOD32", "Acronis"], "rate": [1.0, 0.33]})
    svg = render_svg(table, highlight=["Acronis"])
    assert svg.count(HIGHLIGHT_COLOR) == 1
    # one series, no legend
    assert svg.count("<rect x=") == 0


def test_output_is_deterministic_and_labelled(tmp_path):
    table = pd.DataFrame({"place": ["Iran", "Israel"], "count": [2, 2]})
    meta = RunMeta("abc123", 7, "deadbeef")
    first = emit_chart(table, ChartKind.GROUPED_BAR, str(tmp_path / "a.svg"), "t", meta=meta)
    second = emit_chart(table, ChartKind.GROUPED_BAR, str(tmp_path / "b.svg"), "t", meta=meta)
    with open(first, "rb") as a, open(second, "rb") as b:
        body = a.read()
        assert body == b.read()
    assert body.startswith(b"<!-- run_id=abc123;seed=7;config_hash=deadbeef -->")


def test_empty_table_writes_nothing(tmp_path, caplog):
    path = tmp_path / "empty.svg"
    empty = pd.DataFrame(columns=["place", "count"])
    assert emit_chart(empty, ChartKind.GROUPED_BAR, str(path)) is None
    assert not path.exists()
    assert "empty table" in caplog.text


def test_labels_are_escaped():
    table = pd.DataFrame({"place": ["A & B <x>"], "count": [1]})
    svg = render_svg(table)
    assert "A &amp; B &lt;x&gt;" in svg
