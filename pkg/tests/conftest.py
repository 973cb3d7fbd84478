from __future__ import annotations

import pytest

from distsched.instance import builtin_instance, from_dict


def micro_doc(horizon: int = 12) -> dict:
    """Two tasks, one unit, every quantity small enough to trace by hand.

    T1: 200 kg in 100 kg batches (2 batches x 2 periods), due period 6.
    T2: 150 kg in 100 kg batches (2 batches x 1 period), due period 4, released at period 1.
    Cleaning T1->T2 takes 2 periods, T2->T1 takes 1.
    """
    return {
        "schema_version": 1,
        "name": "micro",
        "dt_days": 0.5,
        "horizon_periods": horizon,
        "tasks": [
            {"id": 1, "order_size_kg": 200, "due_date_days": 3.0, "release_days": 0.0, "successors": [2]},
            {"id": 2, "order_size_kg": 150, "due_date_days": 2.0, "release_days": 0.5, "successors": [1]},
        ],
        "units": [
            {"id": 1, "release_days": 0.0, "eligible": [
                {"task": 1, "batch_kg": 100, "proc_days": 1.0},
                {"task": 2, "batch_kg": 100, "proc_days": 0.5},
            ]},
        ],
        "cleaning": [{"from": 1, "to": 2, "days": 1.0}, {"from": 2, "to": 1, "days": 0.5}],
    }


@pytest.fixture(scope="session")
def inst1():
    return builtin_instance("instance1")


@pytest.fixture(scope="session")
def inst2():
    return builtin_instance("instance2")


@pytest.fixture()
def micro():
    return from_dict(micro_doc())


# One line per acceptance criterion, printed in the terminal summary so the
# outcome is visible without -s.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
