"""
Static SVG charts for the report tables.

Output is a pure function of the table, so identical tables give
byte-identical files. Layout: first column holds the category (or period)
labels, every further numeric column is one series drawn side by side.
"""

import logging
import os
import re
from enum import Enum
from typing import Iterable, List, Optional
from xml.sax.saxutils import escape, quoteattr

import pandas as pd

from .runmeta import RunMeta

logger = logging.getLogger(__name__)

SERIES_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#7f7f7f")
HIGHLIGHT_COLOR = "#d62728"

WIDTH = 720
HEIGHT = 400
MARGIN_LEFT = 56
MARGIN_RIGHT = 16
MARGIN_TOP = 40
MARGIN_BOTTOM = 96


class ChartKind(str, Enum):
    GROUPED_BAR = "grouped-bar"
    TIMELINE = "timeline"


_YEAR = re.compile(r"^\d{4}$")
_MONTH = re.compile(r"^(\d{4})-(\d{2})$")


def fill_periods(table: pd.DataFrame) -> pd.DataFrame:
    """Insert zero rows for missing years/months between the first and last period."""
    label_col = table.columns[0]
    labels = [str(v) for v in table[label_col]]
    if all(_YEAR.match(l) for l in labels):
        years = [int(l) for l in labels]
        full = [f"{y:04d}" for y in range(min(years), max(years) + 1)]
    elif all(_MONTH.match(l) for l in labels):
        months = sorted(int(l[:4]) * 12 + int(l[5:7]) - 1 for l in labels)
        full = [f"{m // 12:04d}-{m % 12 + 1:02d}" for m in range(months[0], months[-1] + 1)]
    else:
        return table
    indexed = table.assign(**{label_col: labels}).set_index(label_col)
    filled = indexed.reindex(full, fill_value=0)
    filled.index.name = label_col
    return filled.reset_index()


def _num(x: float) -> str:
    return f"{x:.2f}"


def _nice_max(value: float) -> float:
    if value <= 0:
        return 1.0
    if value <= 1:
        return 1.0
    magnitude = 10 ** (len(str(int(value))) - 1)
    for step in (1, 2, 5, 10):
        if value <= step * magnitude:
            return float(step * magnitude)
    return float(value)


def render_svg(
    table: pd.DataFrame,
    title: str = "",
    highlight: Iterable[str] = (),
    meta: Optional[RunMeta] = None,
) -> str:
    label_col = table.columns[0]
    series = [c for c in table.columns[1:]]
    labels = [str(v) for v in table[label_col]]
    values = table[series].astype(float).fillna(0.0).values
    highlight = set(highlight)

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    y_max = _nice_max(float(values.max()) if values.size else 0.0)
    group_w = plot_w / max(len(labels), 1)
    bar_w = group_w * 0.8 / max(len(series), 1)
    base_y = MARGIN_TOP + plot_h

    out: List[str] = []
    if meta is not None:
        out.append(meta.svg_comment().rstrip("\n"))
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">'
    )
    out.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>')
    if title:
        out.append(f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(
        f'<line class="axis" x1="{MARGIN_LEFT}" y1="{_num(base_y)}" x2="{WIDTH - MARGIN_RIGHT}" '
        f'y2="{_num(base_y)}" stroke="#000000"/>'
    )
    out.append(
        f'<line class="axis" x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" '
        f'y2="{_num(base_y)}" stroke="#000000"/>'
    )
    for tick in range(5):
        v = y_max * tick / 4
        y = base_y - plot_h * tick / 4
        text = f"{v:g}" if y_max > 1 else f"{v:.2f}"
        out.append(
            f'<text x="{MARGIN_LEFT - 6}" y="{_num(y + 4)}" text-anchor="end">{text}</text>'
        )

    for i, label in enumerate(labels):
        gx = MARGIN_LEFT + group_w * i + group_w * 0.1
        out.append(f'<g class="group" data-label={quoteattr(label)}>')
        for j, name in enumerate(series):
            v = float(values[i][j])
            h = plot_h * v / y_max
            color = HIGHLIGHT_COLOR if label in highlight else SERIES_COLORS[j % len(SERIES_COLORS)]
            out.append(
                f'<rect class="bar" data-series={quoteattr(str(name))} x="{_num(gx + bar_w * j)}" '
                f'y="{_num(base_y - h)}" width="{_num(bar_w)}" height="{_num(h)}" fill="{color}">'
                f"<title>{escape(label)} / {escape(str(name))}: {v:g}</title></rect>"
            )
        cx = gx + group_w * 0.4
        out.append(
            f'<text x="{_num(cx)}" y="{_num(base_y + 12)}" text-anchor="end" '
            f'transform="rotate(-45 {_num(cx)} {_num(base_y + 12)})">{escape(label)}</text>'
        )
        out.append("</g>")

    if len(series) > 1:
        for j, name in enumerate(series):
            x = MARGIN_LEFT + 120 * j
            out.append(
                f'<rect x="{x}" y="{HEIGHT - 18}" width="10" height="10" '
                f'fill="{SERIES_COLORS[j % len(SERIES_COLORS)]}"/>'
            )
            out.append(f'<text x="{x + 14}" y="{HEIGHT - 9}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_chart(
    table: pd.DataFrame,
    kind: ChartKind,
    path: str,
    title: str = "",
    highlight: Iterable[str] = (),
    meta: Optional[RunMeta] = None,
) -> Optional[str]:
    """Write the chart and return its path; an empty table writes nothing."""
    if table is None or table.empty or len(table.columns) < 2:
        logger.warning("skipping chart %s: empty table", os.path.basename(path))
        return None
    if ChartKind(kind) is ChartKind.TIMELINE:
        table = fill_periods(table)
    svg = render_svg(table, title=title, highlight=highlight, meta=meta)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(svg)
    logger.debug("chart written to %s", path)
    return path
