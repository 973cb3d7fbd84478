"""SVG Gantt chart of an executed schedule: one lane per unit, time axis in days."""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from typing import Iterable

from .instance import ProblemInstance
from .rollout import ScheduleEvent

SVG_NS = "http://www.w3.org/2000/svg"

_PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac", "#86bcb6", "#d37295", "#fabfd2", "#8cd17d", "#b6992d",
)


def export_gantt(
    events: Iterable[ScheduleEvent],
    instance: ProblemInstance,
    *,
    px_per_day: float = 12.0,
    lane_height: int = 36,
    title: str | None = None,
) -> str:
    """Render campaigns as bars; the setup/cleaning prefix of each bar is hatched."""
    evs = list(events)
    dt = instance.dt_days
    last = max((e.end for e in evs), default=0)
    days = max(1, math.ceil(last * dt))
    left, top, bottom, right = 70, 30 if title else 10, 30, 20
    width = left + days * px_per_day + right
    height = top + instance.n_units * lane_height + bottom

    svg = ET.Element("svg", {
        "xmlns": SVG_NS, "version": "1.1",
        "width": f"{width:g}", "height": f"{height:g}", "viewBox": f"0 0 {width:g} {height:g}",
    })
    defs = ET.SubElement(svg, "defs")
    pat = ET.SubElement(defs, "pattern", {
        "id": "setup", "patternUnits": "userSpaceOnUse", "width": "6", "height": "6",
        "patternTransform": "rotate(45)",
    })
    ET.SubElement(pat, "rect", {"width": "6", "height": "6", "fill": "#ffffff"})
    ET.SubElement(pat, "line", {"x1": "0", "y1": "0", "x2": "0", "y2": "6", "stroke": "#777777", "stroke-width": "2"})
    if title:
        ET.SubElement(svg, "text", {"x": str(left), "y": "18", "font-family": "sans-serif", "font-size": "13"}).text = title

    def x_of(period: float) -> float:
        return left + period * dt * px_per_day

    for l in range(1, instance.n_units + 1):
        y = top + (l - 1) * lane_height
        ET.SubElement(svg, "rect", {
            "x": str(left), "y": str(y), "width": f"{days * px_per_day:g}", "height": str(lane_height),
            "fill": "#f7f7f7" if l % 2 else "#eeeeee", "class": "lane",
        })
        ET.SubElement(svg, "text", {
            "x": "8", "y": f"{y + lane_height / 2 + 4:g}", "font-family": "sans-serif", "font-size": "12",
        }).text = f"Unit {l}"

    for e in evs:
        y = top + (e.unit - 1) * lane_height + 4
        h = lane_height - 8
        x0, x1, xe = x_of(e.start), x_of(e.start + e.setup), x_of(e.end)
        g = ET.SubElement(svg, "g", {"class": "campaign", "data-task": str(e.task), "data-unit": str(e.unit)})
        if e.setup > 0:
            ET.SubElement(g, "rect", {
                "x": f"{x0:g}", "y": str(y), "width": f"{x1 - x0:g}", "height": str(h),
                "fill": "url(#setup)", "stroke": "#555555", "class": "setup",
            })
        if xe > x1:
            bar = ET.SubElement(g, "rect", {
                "x": f"{x1:g}", "y": str(y), "width": f"{xe - x1:g}", "height": str(h),
                "fill": _PALETTE[(e.task - 1) % len(_PALETTE)], "stroke": "#333333", "class": "processing",
            })
            if not e.complete:
                bar.set("stroke-dasharray", "4,2")
        ET.SubElement(g, "text", {
            "x": f"{(x0 + xe) / 2:g}", "y": f"{y + h / 2 + 4:g}", "text-anchor": "middle",
            "font-family": "sans-serif", "font-size": "11",
        }).text = f"T{e.task}"

    axis_y = top + instance.n_units * lane_height
    ET.SubElement(svg, "line", {
        "x1": str(left), "y1": str(axis_y), "x2": f"{left + days * px_per_day:g}", "y2": str(axis_y), "stroke": "#000000",
    })
    step = max(1, math.ceil(days / 20))
    for d in range(0, days + 1, step):
        x = left + d * px_per_day
        ET.SubElement(svg, "line", {"x1": f"{x:g}", "y1": str(axis_y), "x2": f"{x:g}", "y2": str(axis_y + 4), "stroke": "#000000"})
        ET.SubElement(svg, "text", {
            "x": f"{x:g}", "y": str(axis_y + 16), "text-anchor": "middle", "font-family": "sans-serif", "font-size": "10",
        }).text = str(d)
    ET.SubElement(svg, "text", {
        "x": f"{left + days * px_per_day / 2:g}", "y": str(axis_y + 28), "text-anchor": "middle",
        "font-family": "sans-serif", "font-size": "10",
    }).text = "time (days)"
    return ET.tostring(svg, encoding="unicode", xml_declaration=False) + "\n"
