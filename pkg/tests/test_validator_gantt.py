from __future__ import annotations

import xml.etree.ElementTree as ET

import pytest

from distsched.gantt import SVG_NS, export_gantt
from distsched.rollout import ScheduleEvent
from distsched.validator import check_schedule

NS = {"svg": SVG_NS}


def ev(unit, task, start, setup, done, complete=True):
    return ScheduleEvent(unit, task, start, setup, tuple(done), complete)


# micro-instance: T1 2x2 periods, T2 2x1 periods released at 1, cleaning 1->2: 2, 2->1: 1
GOOD = [ev(1, 2, 0, 1, [2, 3]), ev(1, 1, 3, 1, [6, 8])]


def rules(events, inst):
    return sorted({v.rule for v in check_schedule(events, inst).violations})


def test_valid_schedule(micro):
    rep = check_schedule(GOOD, micro)
    assert rep.ok and not rep.double_allocations


@pytest.mark.parametrize("events,rule", [
    ([ev(1, 2, 0, 0, [1, 2])], "release"),                          # T2 processed before period 1
    ([ev(1, 2, 0, 1, [2])], "completion"),                          # one batch short
    ([ev(1, 2, 0, 1, [2, 2])], "completion"),                       # completions not increasing
    ([ev(1, 2, 0, 1, [2, 3]), ev(1, 1, 3, 0, [5, 7])], "cleaning"),  # no cleaning gap
    ([ev(1, 1, 0, 0, [2, 4]), ev(1, 2, 3, 2, [6, 7])], "overlap"),
    ([ev(1, 2, 0, 1, [2, 3], complete=False), ev(1, 1, 5, 0, [7, 9])], "completion"),
])
def test_rule_violations_detected(micro, events, rule):
    assert rule in rules(events, micro)


def test_eligibility_and_sequencing(inst2):
    assert "eligibility" in rules([ev(2, 1, 0, 0, [4])], inst2)
    # T1 -> T3 is not a permitted succession
    seq = [ev(1, 1, 0, 0, [4 * k for k in range(1, 8)]), ev(1, 3, 30, 0, [32 + 2 * k for k in range(7)])]
    assert "sequencing" in rules(seq, inst2)


def test_restart_and_double_allocation(inst1):
    t3_u1 = [2 * k for k in range(1, 8)]   # 900 kg / 140 kg = 7 batches of 2 periods
    t3_u3 = [4 + 2 * k for k in range(1, 7)]  # 900 kg / 170 kg = 6 batches, unit 3 released at 4
    rep = check_schedule([ev(1, 3, 0, 0, t3_u1), ev(3, 3, 0, 4, t3_u3)], inst1)
    assert rep.ok and rep.double_allocations == [(3, 1, 3)]
    rep = check_schedule([ev(1, 3, 0, 0, t3_u1), ev(3, 3, 20, 0, [20 + 2 * k for k in range(1, 7)])], inst1)
    assert [v.rule for v in rep.violations] == ["restart"]


def test_unfinished_last_campaign_is_fine(micro):
    assert check_schedule([ev(1, 1, 8, 0, [10], complete=False)], micro).ok


def _parse(svg):
    root = ET.fromstring(svg)
    assert root.tag == f"{{{SVG_NS}}}svg"
    return root


def test_gantt_single_campaign(inst2):
    svg = export_gantt([ev(1, 1, 0, 0, [4 * k for k in range(1, 8)])], inst2, px_per_day=10.0)
    root = _parse(svg)
    groups = root.findall("svg:g", NS)
    assert len(groups) == 1 and groups[0].get("data-task") == "1"
    bar = groups[0].find("svg:rect[@class='processing']", NS)
    x, w = float(bar.get("x")), float(bar.get("width"))
    assert w == pytest.approx(14 * 10.0)
    assert groups[0].find("svg:text", NS).text == "T1"
    lanes = root.findall("svg:rect[@class='lane']", NS)
    assert float(lanes[0].get("x")) == x
    assert [t.text for t in root.findall("svg:text", NS) if t.text and t.text.startswith("Unit")] == [
        "Unit 1", "Unit 2", "Unit 3", "Unit 4"]
    assert any(t.text == "time (days)" for t in root.findall("svg:text", NS))


def test_gantt_setup_prefix_hatched(micro):
    root = _parse(export_gantt(GOOD, micro, title="micro"))
    setups = root.findall(".//svg:rect[@class='setup']", NS)
    assert len(setups) == 2 and all(r.get("fill") == "url(#setup)" for r in setups)
    assert root.find("svg:defs/svg:pattern[@id='setup']", NS) is not None
    for r in root.iter(f"{{{SVG_NS}}}rect"):
        if "width" in r.attrib and r.get("class") in ("setup", "processing", "lane"):
            assert float(r.get("width")) > 0


def test_gantt_empty_schedule(inst1):
    root = _parse(export_gantt([], inst1))
    assert len(root.findall("svg:rect[@class='lane']", NS)) == 4
    assert root.findall("svg:g", NS) == []


def test_gantt_marks_unfinished(micro):
    root = _parse(export_gantt([ev(1, 1, 8, 0, [10], complete=False)], micro))
    bar = root.find(".//svg:rect[@class='processing']", NS)
    assert bar.get("stroke-dasharray")
