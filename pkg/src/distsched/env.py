"""Discrete-time plant dynamics under processing-time and due-date uncertainty.

The state arrays and the step itself live in ``_kernels``; this module adds
scenario sampling, typed wrappers and error reporting around them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import _kernels as K
from .instance import EligibilityError, ProblemInstance

log = logging.getLogger(__name__)


class EnvError(RuntimeError):
    """Raised for calls that are invalid in the current plant state."""


class ControlError(EnvError, ValueError):
    """Raised when a control vector cannot be applied."""


_STATUS_MESSAGES = {
    K.ERR_PREEMPT: "unit {l} is busy with T{a}; a different control is unreachable under masking",
    K.ERR_INELIGIBLE: "control {u} is not eligible on unit {l}",
    K.ERR_CODE: "control {u} on unit {l} is outside 1..N+1",
    K.ERR_RESTART: "control {u} on unit {l} restarts a finished task",
}


@dataclass(frozen=True)
class UncertaintyConfig:
    """Parameters of the uncertainty model. ``c`` and the lead are in periods."""

    c: int = 1
    k_pt: int = 0
    k_dd: int = 0
    due_confirm_lead_periods: int = 6

    def __post_init__(self):
        if self.c < 0 or self.k_pt < 0 or self.k_dd < 0 or self.due_confirm_lead_periods < 0:
            raise ValueError(f"uncertainty parameters must be non-negative: {self}")


@dataclass
class Scenario:
    """One realization of every uncertain quantity, fixed before an episode runs.

    ``batch_periods[i-1, l-1, n]`` is the realized duration of batch n (0-based) of
    task i on unit l. Entries for ineligible pairs or beyond the campaign length
    are unused padding.
    """

    batch_periods: np.ndarray
    confirmed_due_periods: np.ndarray
    confirm_at_period: np.ndarray
    processing_uncertain: bool = False
    due_uncertain: bool = False

    def __post_init__(self):
        self.batch_periods = np.ascontiguousarray(self.batch_periods, dtype=np.int64)
        self.confirmed_due_periods = np.ascontiguousarray(self.confirmed_due_periods, dtype=np.int64)
        self.confirm_at_period = np.ascontiguousarray(self.confirm_at_period, dtype=np.int64)
        if self.batch_periods.ndim != 3:
            raise ValueError("batch_periods must have shape (N, n_units, max_batches)")
        if (self.batch_periods < 1).any():
            raise ValueError("every realized batch duration must be at least one period")

    def batch_period(self, task: int, batch: int, unit: int) -> int:
        """Realized duration of batch ``batch`` (1-based) of ``task`` on ``unit``."""
        return int(self.batch_periods[task - 1, unit - 1, batch - 1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "batch_periods": self.batch_periods.tolist(),
            "confirmed_due_periods": self.confirmed_due_periods.tolist(),
            "confirm_at_period": self.confirm_at_period.tolist(),
            "processing_uncertain": bool(self.processing_uncertain),
            "due_uncertain": bool(self.due_uncertain),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Scenario":
        return cls(
            np.array(doc["batch_periods"], dtype=np.int64),
            np.array(doc["confirmed_due_periods"], dtype=np.int64),
            np.array(doc["confirm_at_period"], dtype=np.int64),
            bool(doc.get("processing_uncertain", False)),
            bool(doc.get("due_uncertain", False)),
        )


@dataclass(frozen=True)
class CampaignRecord:
    task: int
    unit: int
    start_period: int
    setup_periods: int
    batch_completion_periods: tuple[int, ...]
    batches_done: int
    estimated_remaining: int


@dataclass
class PlantState:
    """Observable state vector plus the hidden bookkeeping needed to advance it."""

    arrays: K.StateArrays
    n_tasks: int
    n_units: int
    horizon: int

    @property
    def t(self) -> int:
        return int(self.arrays.clock[0])

    @property
    def inventory(self) -> np.ndarray:
        return self.arrays.inv

    @property
    def last_controls(self) -> np.ndarray:
        return self.arrays.last_ctrl

    @property
    def countdowns(self) -> np.ndarray:
        return self.arrays.delta

    @property
    def due_countdowns(self) -> np.ndarray:
        return self.arrays.rho

    @property
    def finished(self) -> frozenset[int]:
        return frozenset(int(i) + 1 for i in np.flatnonzero(self.arrays.finished))

    @property
    def active_task(self) -> tuple[int | None, ...]:
        return tuple(int(a) if a > 0 else None for a in self.arrays.active)

    @property
    def last_task(self) -> tuple[int | None, ...]:
        return tuple(int(a) if a > 0 else None for a in self.arrays.last_task)

    @property
    def done(self) -> bool:
        return self.t >= self.horizon or bool(self.arrays.finished.all())

    def vector(self) -> np.ndarray:
        """The observable vector [I, w, delta, rho, t] of length 2N + 2n_u + 1."""
        out = np.empty(2 * self.n_tasks + 2 * self.n_units + 1)
        K.observe_kernel(self.arrays, out)
        return out

    def copy(self) -> "PlantState":
        return PlantState(K.StateArrays(*(a.copy() for a in self.arrays)), self.n_tasks, self.n_units, self.horizon)


def default_reward_vector(n_tasks: int, n_units: int) -> np.ndarray:
    """d = [0_N, 0_nu, 0_nu, 1_N, -1]: terminal reward is sum(rho) - t."""
    return np.concatenate([np.zeros(n_tasks + 2 * n_units), np.ones(n_tasks), [-1.0]])


def deterministic_scenario(instance: ProblemInstance) -> Scenario:
    ia = instance.arrays
    n, nu = instance.n_tasks, instance.n_units
    pt = np.where(ia.eligible, ia.pt, 1)
    pl = np.repeat(pt[:, :, None], instance.max_batches(), axis=2)
    return Scenario(pl, ia.due.copy(), np.zeros(n, dtype=np.int64))


def sample_scenario(
    instance: ProblemInstance,
    config: UncertaintyConfig | None = None,
    *,
    processing_uncertain: bool = True,
    due_uncertain: bool = True,
    misspecify: bool = False,
    rng: np.random.Generator,
) -> Scenario:
    """Draw batch durations and true due dates.

    Batch durations are uniform integers in [max(1, PT - c'), PT + c'] with
    c' = c (+ k_pt when misspecified). Due dates are Poisson in whole days
    around the expected date (rate shifted by k_dd * U(-1, 1) when misspecified)
    and converted to periods.
    """
    cfg = config or UncertaintyConfig()
    ia = instance.arrays
    n = instance.n_tasks
    base = deterministic_scenario(instance)
    pl = base.batch_periods
    if processing_uncertain:
        half = cfg.c + (cfg.k_pt if misspecify else 0)
        pt = pl[:, :, :1]
        lo = np.maximum(1, pt - half)
        hi = pt + half
        pl = rng.integers(lo, hi + 1, size=pl.shape, dtype=np.int64)
    due = base.confirmed_due_periods
    confirm_at = base.confirm_at_period
    if due_uncertain:
        rate = np.array([t.expected_due_date_days for t in instance.tasks], dtype=np.float64)
        if misspecify and cfg.k_dd:
            rate = rate + cfg.k_dd * rng.uniform(-1.0, 1.0, size=n)
        bad = rate <= 0
        if bad.any():
            log.warning("misspecified due-date rate <= 0 for tasks %s; clamped to 1 day", (np.flatnonzero(bad) + 1).tolist())
            rate = np.where(bad, 1.0, rate)
        days = rng.poisson(rate)
        due = np.rint(days / instance.dt_days).astype(np.int64)
        confirm_at = np.maximum(0, ia.due - cfg.due_confirm_lead_periods)
    return Scenario(pl, due, confirm_at, processing_uncertain, due_uncertain)


def initial_state(instance: ProblemInstance, scenario: Scenario) -> PlantState:
    st = K.new_state(instance.n_tasks, instance.n_units)
    K.reset_state(st, instance.arrays, scenario.confirmed_due_periods, scenario.confirm_at_period)
    return PlantState(st, instance.n_tasks, instance.n_units, instance.horizon_periods)


def setup_time(state: PlantState, instance: ProblemInstance, task: int, unit: int) -> int:
    """Periods of setup needed if ``task`` is scheduled on idle ``unit`` at the current period."""
    if not instance.is_eligible(task, unit):
        raise EligibilityError(f"task T{task} is not eligible on unit {unit}")
    if state.arrays.active[unit - 1] > 0:
        raise EnvError(f"unit {unit} is busy")
    return int(K.setup_periods(state.arrays, instance.arrays, task - 1, unit - 1, state.t))


def step(
    state: PlantState,
    control: Sequence[int] | np.ndarray,
    scenario: Scenario,
    instance: ProblemInstance,
    *,
    reward_vector: np.ndarray | None = None,
    allow_preempt: bool = False,
) -> tuple[PlantState, float, bool]:
    """Advance ``state`` in place by one period and return (state, reward, done).

    ``allow_preempt`` lets a busy unit switch task; the interrupted campaign is
    voided, including any inventory it had produced.
    """
    if state.done:
        raise EnvError("episode already finished")
    u = np.asarray(control, dtype=np.int64)
    if u.shape != (instance.n_units,):
        raise ControlError(f"control must have {instance.n_units} entries, got shape {u.shape}")
    d = default_reward_vector(instance.n_tasks, instance.n_units) if reward_vector is None else np.asarray(reward_vector, dtype=np.float64)
    reward, done, status = K.step_kernel(
        state.arrays, u, instance.arrays, scenario.batch_periods,
        scenario.confirmed_due_periods, scenario.confirm_at_period, d, allow_preempt,
    )
    if status != K.OK:
        _, l = K.check_control(state.arrays, instance.arrays, u, allow_preempt)
        raise ControlError(_STATUS_MESSAGES[status].format(l=l + 1, u=int(u[l]), a=int(state.arrays.active[l])))
    return state, float(reward), bool(done)


def active_campaigns(state: PlantState, instance: ProblemInstance, scenario: Scenario) -> list[CampaignRecord]:
    """Records of the campaigns currently in process, with their true completion calendar."""
    st, ia = state.arrays, instance.arrays
    out = []
    for l in range(instance.n_units):
        a = int(st.active[l])
        if a == 0:
            continue
        nb = int(ia.nb[a - 1, l])
        start, setup = int(st.camp_start[l]), int(st.camp_setup[l])
        done = start + setup + np.cumsum(scenario.batch_periods[a - 1, l, :nb])
        out.append(CampaignRecord(a, l + 1, start, setup, tuple(int(x) for x in done), int(st.camp_done[l]), int(st.delta[l])))
    return out


def makespan_and_tardiness(state: PlantState) -> tuple[int, np.ndarray]:
    """Makespan in periods and per-task tardiness, read off a terminal state."""
    if not state.done:
        raise EnvError("makespan and tardiness are defined only for a finished episode")
    return state.t, np.maximum(0, -state.arrays.rho).astype(np.int64)
