"""Static plant data: tasks, units, cleaning times and the bundled case-study instances.

Day-valued inputs are converted to integer periods on load; all runtime
arithmetic downstream is done in periods.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BUILTIN_NAMES = ("instance1", "instance2")


class InstanceError(ValueError):
    """Base class for problem-instance errors."""


class InstanceParseError(InstanceError):
    """Document does not conform to the instance schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InstanceValidationError(InstanceError):
    pass


class EligibilityError(InstanceError):
    pass


INSTANCE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema_version", "dt_days", "horizon_periods", "tasks", "units"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "dt_days": {"type": "number", "exclusiveMinimum": 0},
        "horizon_periods": {"type": "integer", "minimum": 1},
        "tasks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "order_size_kg", "due_date_days", "release_days", "successors"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "order_size_kg": {"type": "number", "exclusiveMinimum": 0},
                    "due_date_days": {"type": "number", "exclusiveMinimum": 0},
                    "release_days": {"type": "number", "minimum": 0},
                    "successors": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                },
                "additionalProperties": False,
            },
        },
        "units": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "release_days", "eligible"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "release_days": {"type": "number", "minimum": 0},
                    "eligible": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["task", "batch_kg", "proc_days"],
                            "properties": {
                                "task": {"type": "integer", "minimum": 1},
                                "batch_kg": {"type": "number", "exclusiveMinimum": 0},
                                "proc_days": {"type": "number", "exclusiveMinimum": 0},
                            },
                            "additionalProperties": False,
                        },
                    },
                },
                "additionalProperties": False,
            },
        },
        "cleaning": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "days"],
                "properties": {
                    "from": {"type": "integer", "minimum": 1},
                    "to": {"type": "integer", "minimum": 1},
                    "days": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class TaskSpec:
    id: int
    order_size: float
    expected_due_date_days: float
    release_time_days: float
    successors: frozenset[int]


@dataclass(frozen=True)
class Eligibility:
    batch_size_kg: float
    expected_proc_days: float


@dataclass(frozen=True)
class UnitSpec:
    id: int
    release_time_days: float
    eligible: Mapping[int, Eligibility]


@dataclass(frozen=True)
class CleaningMatrix:
    """Sequence-dependent cleaning times, keyed by (predecessor, successor) task ids.

    Published data is unit-independent; ``days`` keeps a unit argument so that
    per-unit tables can be added without changing callers.
    """

    entries: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def days(self, prev: int, nxt: int, unit: int | None = None) -> float:
        return self.entries.get((prev, nxt), 0.0)


def _to_periods(days: float, dt: float, what: str) -> int:
    q = days / dt
    n = round(q)
    if not math.isclose(q, n, rel_tol=0.0, abs_tol=1e-9):
        raise InstanceValidationError(f"{what} = {days} days is not a multiple of dt = {dt}")
    return int(n)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    tasks: tuple[TaskSpec, ...]
    units: tuple[UnitSpec, ...]
    cleaning: CleaningMatrix
    dt_days: float = 0.5
    horizon_periods: int = 200
    name: str = "custom"

    def __post_init__(self):
        validate(self)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def idle_code(self) -> int:
        return self.n_tasks + 1

    def task(self, task_id: int) -> TaskSpec:
        return self.tasks[task_id - 1]

    def unit(self, unit_id: int) -> UnitSpec:
        return self.units[unit_id - 1]

    def is_eligible(self, task_id: int, unit_id: int) -> bool:
        return task_id in self.unit(unit_id).eligible

    def eligible_tasks(self, unit_id: int) -> list[int]:
        return sorted(self.unit(unit_id).eligible)

    def periods(self, days: float, what: str = "value") -> int:
        return _to_periods(days, self.dt_days, what)

    def proc_periods(self, task_id: int, unit_id: int) -> int:
        e = self._eligibility(task_id, unit_id)
        return self.periods(e.expected_proc_days)

    def due_periods(self, task_id: int) -> int:
        return self.periods(self.task(task_id).expected_due_date_days)

    def cleaning_periods(self, prev: int, nxt: int, unit_id: int | None = None) -> int:
        return self.periods(self.cleaning.days(prev, nxt, unit_id))

    def _eligibility(self, task_id: int, unit_id: int) -> Eligibility:
        try:
            return self.unit(unit_id).eligible[task_id]
        except (KeyError, IndexError):
            raise EligibilityError(f"task T{task_id} is not eligible on unit {unit_id}") from None

    def without_release_times(self) -> "ProblemInstance":
        """Copy with every task and unit release time set to zero."""
        tasks = tuple(
            TaskSpec(t.id, t.order_size, t.expected_due_date_days, 0.0, t.successors) for t in self.tasks
        )
        units = tuple(UnitSpec(u.id, 0.0, u.eligible) for u in self.units)
        return ProblemInstance(tasks, units, self.cleaning, self.dt_days, self.horizon_periods, self.name)

    @cached_property
    def arrays(self) -> "InstanceArrays":
        from ._kernels import InstanceArrays

        n, nu = self.n_tasks, self.n_units
        eligible = np.zeros((n, nu), dtype=np.bool_)
        batch = np.zeros((n, nu), dtype=np.float64)
        nb = np.zeros((n, nu), dtype=np.int64)
        pt = np.zeros((n, nu), dtype=np.int64)
        for u in self.units:
            for tid, e in u.eligible.items():
                eligible[tid - 1, u.id - 1] = True
                batch[tid - 1, u.id - 1] = e.batch_size_kg
                nb[tid - 1, u.id - 1] = batches_required(self, tid, u.id)
                pt[tid - 1, u.id - 1] = self.periods(e.expected_proc_days)
        succ = np.zeros((n, n), dtype=np.bool_)
        tcl = np.zeros((n, n), dtype=np.int64)
        for t in self.tasks:
            for s in t.successors:
                succ[t.id - 1, s - 1] = True
        for (m, i), d in self.cleaning.entries.items():
            tcl[m - 1, i - 1] = self.periods(d)
        arr = InstanceArrays(
            eligible=eligible,
            batch=batch,
            nb=nb,
            pt=pt,
            succ=succ,
            tcl=tcl,
            rtt=np.array([self.periods(t.release_time_days) for t in self.tasks], dtype=np.int64),
            rtu=np.array([self.periods(u.release_time_days) for u in self.units], dtype=np.int64),
            order_size=np.array([t.order_size for t in self.tasks], dtype=np.float64),
            due=np.array([self.due_periods(t.id) for t in self.tasks], dtype=np.int64),
            horizon=int(self.horizon_periods),
        )
        for a in arr:
            if isinstance(a, np.ndarray):
                a.setflags(write=False)
        return arr

    def max_batches(self) -> int:
        return int(self.arrays.nb.max())


def batches_required(instance: ProblemInstance, task: int, unit: int) -> int:
    """Smallest number of full batches on ``unit`` that covers the order size of ``task``."""
    e = instance._eligibility(task, unit)
    return max(1, math.ceil(instance.task(task).order_size / e.batch_size_kg - 1e-12))


def validate(instance: ProblemInstance) -> None:
    dt = instance.dt_days
    if dt <= 0:
        raise InstanceValidationError("dt_days must be positive")
    if instance.horizon_periods < 1:
        raise InstanceValidationError("horizon_periods must be >= 1")
    if not instance.tasks or not instance.units:
        raise InstanceValidationError("need at least one task and one unit")
    ids = [t.id for t in instance.tasks]
    if ids != list(range(1, len(ids) + 1)):
        raise InstanceValidationError(f"task ids must be 1..N in order, got {ids}")
    uids = [u.id for u in instance.units]
    if uids != list(range(1, len(uids) + 1)):
        raise InstanceValidationError(f"unit ids must be 1..n_u in order, got {uids}")
    known = set(ids)
    for t in instance.tasks:
        if t.order_size <= 0:
            raise InstanceValidationError(f"T{t.id}: order size must be positive")
        if t.expected_due_date_days <= 0:
            raise InstanceValidationError(f"T{t.id}: due date must be positive")
        if t.release_time_days < 0:
            raise InstanceValidationError(f"T{t.id}: release time must be >= 0")
        _to_periods(t.expected_due_date_days, dt, f"T{t.id} due date")
        _to_periods(t.release_time_days, dt, f"T{t.id} release time")
        unknown = set(t.successors) - known
        if unknown:
            raise InstanceValidationError(f"T{t.id}: unknown successors {sorted(unknown)}")
        if t.id in t.successors:
            log.warning("T%d lists itself as a feasible successor", t.id)
    covered: set[int] = set()
    for u in instance.units:
        if u.release_time_days < 0:
            raise InstanceValidationError(f"unit {u.id}: release time must be >= 0")
        _to_periods(u.release_time_days, dt, f"unit {u.id} release time")
        for tid, e in u.eligible.items():
            if tid not in known:
                raise InstanceValidationError(f"unit {u.id}: unknown task T{tid}")
            if e.batch_size_kg <= 0:
                raise InstanceValidationError(f"T{tid} on unit {u.id}: batch size must be positive")
            if e.expected_proc_days <= 0:
                raise InstanceValidationError(f"T{tid} on unit {u.id}: processing time must be positive")
            _to_periods(e.expected_proc_days, dt, f"T{tid} processing time on unit {u.id}")
            covered.add(tid)
    missing = known - covered
    if missing:
        raise InstanceValidationError(f"tasks eligible on no unit: {sorted(missing)}")
    for (m, i), d in instance.cleaning.entries.items():
        if m not in known or i not in known:
            raise InstanceValidationError(f"cleaning entry T{m}->T{i} references an unknown task")
        if i not in instance.task(m).successors:
            raise InstanceValidationError(f"cleaning entry T{m}->T{i} but T{i} is not a successor of T{m}")
        if d < 0:
            raise InstanceValidationError(f"cleaning time T{m}->T{i} must be >= 0")
        _to_periods(d, dt, f"cleaning time T{m}->T{i}")


def cleaning_closure(instance: ProblemInstance) -> dict[tuple[int, int], float]:
    """Every (predecessor, successor) pair with its cleaning time, zero where unlisted."""
    return {
        (t.id, s): instance.cleaning.days(t.id, s)
        for t in instance.tasks
        for s in sorted(t.successors)
    }


def _json_error_path(err: jsonschema.ValidationError) -> str:
    path = getattr(err, "json_path", None)
    if path:
        return path
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def from_dict(doc: Mapping[str, Any]) -> ProblemInstance:
    validator = jsonschema.Draft202012Validator(INSTANCE_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise InstanceParseError(_json_error_path(err), err.message)

    units = []
    for u in doc["units"]:
        elig = {}
        for e in u["eligible"]:
            if e["task"] in elig:
                raise InstanceValidationError(f"unit {u['id']}: task T{e['task']} listed twice")
            elig[e["task"]] = Eligibility(float(e["batch_kg"]), float(e["proc_days"]))
        units.append(UnitSpec(int(u["id"]), float(u["release_days"]), elig))
    tasks = [
        TaskSpec(
            int(t["id"]),
            float(t["order_size_kg"]),
            float(t["due_date_days"]),
            float(t["release_days"]),
            frozenset(int(s) for s in t["successors"]),
        )
        for t in doc["tasks"]
    ]
    cleaning = {}
    for c in doc.get("cleaning", []):
        key = (int(c["from"]), int(c["to"]))
        if key in cleaning:
            raise InstanceValidationError(f"cleaning entry T{key[0]}->T{key[1]} listed twice")
        cleaning[key] = float(c["days"])
    return ProblemInstance(
        tasks=tuple(sorted(tasks, key=lambda t: t.id)),
        units=tuple(sorted(units, key=lambda u: u.id)),
        cleaning=CleaningMatrix(cleaning),
        dt_days=float(doc["dt_days"]),
        horizon_periods=int(doc["horizon_periods"]),
        name=doc.get("name", "custom"),
    )


def to_dict(instance: ProblemInstance) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": instance.name,
        "dt_days": instance.dt_days,
        "horizon_periods": instance.horizon_periods,
        "tasks": [
            {
                "id": t.id,
                "order_size_kg": t.order_size,
                "due_date_days": t.expected_due_date_days,
                "release_days": t.release_time_days,
                "successors": sorted(t.successors),
            }
            for t in instance.tasks
        ],
        "units": [
            {
                "id": u.id,
                "release_days": u.release_time_days,
                "eligible": [
                    {"task": tid, "batch_kg": e.batch_size_kg, "proc_days": e.expected_proc_days}
                    for tid, e in sorted(u.eligible.items())
                ],
            }
            for u in instance.units
        ],
        "cleaning": [
            {"from": m, "to": i, "days": d} for (m, i), d in sorted(instance.cleaning.entries.items())
        ],
    }


def load_instance(source: str | Path | Mapping[str, Any]) -> ProblemInstance:
    """Load an instance from a JSON file path, a JSON string, or an already-parsed mapping."""
    if isinstance(source, Mapping):
        return from_dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceParseError("$", f"invalid JSON: {exc}") from exc
    return from_dict(doc)


def dump_instance(instance: ProblemInstance) -> str:
    return json.dumps(to_dict(instance), indent=2)


def builtin_instance(name: str) -> ProblemInstance:
    if name not in BUILTIN_NAMES:
        raise LookupError(f"unknown instance {name!r}; choose from {BUILTIN_NAMES}")
    text = resources.files("distsched.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return load_instance(json.loads(text))


def resolve_instance(name_or_path: str) -> ProblemInstance:
    if name_or_path in BUILTIN_NAMES:
        return builtin_instance(name_or_path)
    return load_instance(Path(name_or_path))
