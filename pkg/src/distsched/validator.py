"""Independent schedule checker.

Works only from recorded campaigns and the static instance data. It does not
look at environment state, so it can catch bugs in the dynamics or the mask.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .instance import ProblemInstance, batches_required
from .rollout import ScheduleEvent

HARD_RULES = ("eligibility", "release", "overlap", "sequencing", "cleaning", "completion", "restart")


@dataclass(frozen=True)
class Violation:
    rule: str
    unit: int
    task: int
    detail: str


@dataclass
class ScheduleReport:
    violations: list[Violation] = field(default_factory=list)
    double_allocations: list[tuple[int, int, int]] = field(default_factory=list)  # (task, unit_a, unit_b)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_schedule(events: Iterable[ScheduleEvent], instance: ProblemInstance, horizon: int | None = None) -> ScheduleReport:
    """Check hard rules lane by lane, and list simultaneous allocations of one task separately.

    A campaign is "in process" from its scheduling period until its last batch,
    so its setup and cleaning prefix counts towards lane occupancy.
    """
    horizon = instance.horizon_periods if horizon is None else horizon
    dt = instance.dt_days
    rep = ScheduleReport()
    bad = rep.violations.append
    lanes: dict[int, list[ScheduleEvent]] = defaultdict(list)
    evs = sorted(events, key=lambda e: (e.unit, e.start))
    for e in evs:
        lanes[e.unit].append(e)

    for e in evs:
        if not instance.is_eligible(e.task, e.unit):
            bad(Violation("eligibility", e.unit, e.task, "task not eligible on unit"))
            continue
        begin = e.start + e.setup
        rtt = round(instance.task(e.task).release_time_days / dt)
        rtu = round(instance.unit(e.unit).release_time_days / dt)
        if begin < rtt:
            bad(Violation("release", e.unit, e.task, f"processing starts at {begin} before task release {rtt}"))
        if begin < rtu:
            bad(Violation("release", e.unit, e.task, f"processing starts at {begin} before unit release {rtu}"))
        nb = batches_required(instance, e.task, e.unit)
        done = e.batch_completions
        if any(b <= a for a, b in zip((begin, *done), done)):
            bad(Violation("completion", e.unit, e.task, f"batch completions {done} not strictly after {begin}"))
        if e.complete and len(done) != nb:
            bad(Violation("completion", e.unit, e.task, f"{len(done)} batches recorded, {nb} required"))
        if not e.complete and (len(done) >= nb or e.end > horizon):
            bad(Violation("completion", e.unit, e.task, "unfinished campaign with inconsistent batch record"))

    for unit, lane in lanes.items():
        for prev, nxt in zip(lane, lane[1:]):
            if not prev.complete:
                bad(Violation("completion", unit, prev.task, "unfinished campaign followed by another"))
                continue
            if nxt.start < prev.end:
                bad(Violation("overlap", unit, nxt.task, f"starts at {nxt.start} while T{prev.task} runs to {prev.end}"))
            if nxt.task not in instance.task(prev.task).successors:
                bad(Violation("sequencing", unit, nxt.task, f"T{nxt.task} may not follow T{prev.task}"))
            else:
                gap = round(instance.cleaning.days(prev.task, nxt.task, unit) / dt)
                if nxt.start + nxt.setup < prev.end + gap:
                    bad(Violation("cleaning", unit, nxt.task,
                                  f"processing at {nxt.start + nxt.setup} < {prev.end} + cleaning {gap}"))

    by_task: dict[int, list[ScheduleEvent]] = defaultdict(list)
    for e in evs:
        by_task[e.task].append(e)
    for task, runs in by_task.items():
        runs.sort(key=lambda e: e.start)
        for i, a in enumerate(runs):
            for b in runs[i + 1:]:
                if b.start < a.end or (b.start == a.start):
                    rep.double_allocations.append((task, a.unit, b.unit))
                elif a.complete:
                    bad(Violation("restart", b.unit, task, f"restarted at {b.start} after completing at {a.end}"))
    return rep
