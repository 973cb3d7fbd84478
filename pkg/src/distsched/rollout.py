"""Policy rollouts: a single instrumented episode and batched Monte-Carlo evaluation."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import _kernels as K
from . import env as E
from .feasibility import PenaltyConfig
from .instance import ProblemInstance
from .policy import PolicyParams


class RolloutError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScheduleEvent:
    """One campaign as it actually ran. Periods are absolute."""

    unit: int
    task: int
    start: int
    setup: int
    batch_completions: tuple[int, ...]
    complete: bool

    @property
    def end(self) -> int:
        return self.batch_completions[-1] if self.batch_completions else self.start + self.setup


@dataclass
class EpisodeResult:
    raw_return: float
    penalized_return: float
    total_penalty: float
    violated: bool
    makespan: int
    tardiness: np.ndarray
    schedule_events: list[ScheduleEvent] = field(default_factory=list)
    controls: list[tuple[int, ...]] = field(default_factory=list)


@dataclass(frozen=True)
class ScenarioSampler:
    """Which uncertainty sources are active, and their parameters."""

    uncertainty: E.UncertaintyConfig = E.UncertaintyConfig()
    processing_uncertain: bool = False
    due_uncertain: bool = False
    misspecify: bool = False

    @property
    def deterministic(self) -> bool:
        return not (self.processing_uncertain or self.due_uncertain)

    def sample(self, instance: ProblemInstance, rng: np.random.Generator) -> E.Scenario:
        if self.deterministic:
            return E.deterministic_scenario(instance)
        return E.sample_scenario(
            instance, self.uncertainty,
            processing_uncertain=self.processing_uncertain,
            due_uncertain=self.due_uncertain,
            misspecify=self.misspecify,
            rng=rng,
        )


@dataclass
class ReturnSamples:
    z_phi: np.ndarray
    z: np.ndarray
    violated: np.ndarray
    final_period: np.ndarray
    base_seed: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.z)
        if n < 1 or not (len(self.z_phi) == len(self.violated) == len(self.final_period) == n):
            raise ValueError("return sample vectors must be non-empty and of equal length")

    def __len__(self) -> int:
        return len(self.z)

    @property
    def successes(self) -> int:
        return int((~self.violated).sum())


def _seed_tuple(base_seed: int | Sequence[int]) -> tuple[int, ...]:
    if isinstance(base_seed, (int, np.integer)):
        return (int(base_seed),)
    return tuple(int(s) for s in base_seed)


def scenario_rng(base_seed: int | Sequence[int], index: int) -> np.random.Generator:
    """Stream for sample ``index``; depends only on the seed path and the index."""
    return np.random.default_rng(np.random.SeedSequence([*_seed_tuple(base_seed), int(index)]))


def run_episode(
    params: PolicyParams,
    instance: ProblemInstance,
    scenario: E.Scenario,
    penalty: PenaltyConfig | None = None,
    *,
    trace: IO[str] | None = None,
) -> EpisodeResult:
    """Roll out one episode step by step, recording the schedule as it happens."""
    cfg = penalty or PenaltyConfig()
    spec = params.spec
    spec.check_instance(instance)
    ia = instance.arrays
    n, nu = instance.n_tasks, instance.n_units
    d = E.default_reward_vector(n, nu)
    state = E.initial_state(instance, scenario)
    st = state.arrays
    hidden = np.zeros(spec.h2)
    new_hidden = np.zeros(spec.h2)
    x = np.empty(spec.input_dim)
    latent = np.empty(nu)
    feas = np.empty((nu, n + 1), dtype=np.int64)
    counts = np.empty(nu, dtype=np.int64)
    control = np.empty(nu, dtype=np.int64)
    h1_tanh = spec.h1_activation == "tanh"

    z = zphi = pen_total = 0.0
    open_: list[dict | None] = [None] * nu
    events: list[ScheduleEvent] = []
    controls: list[tuple[int, ...]] = []
    while True:
        t = state.t
        K.decide_kernel(st, ia, params.theta, spec.dims, h1_tanh, spec.normalize,
                        hidden, new_hidden, x, latent, feas, counts, control)
        hidden[:] = new_hidden
        pen = K.penalty_kernel(control, n, float(cfg.kappa_g), int(cfg.norm))
        was_active = st.active.copy()
        done_before = st.camp_done.copy()
        r, done, status = K.step_kernel(st, control, ia, scenario.batch_periods,
                                        scenario.confirmed_due_periods, scenario.confirm_at_period, d, False)
        if status != K.OK:
            raise RolloutError(f"masked control {control.tolist()} rejected at t={t} (status {status})")
        controls.append(tuple(int(c) for c in control))
        for l in range(nu):
            if was_active[l] == 0 and control[l] <= n:
                open_[l] = {"task": int(control[l]), "start": t, "setup": int(st.camp_setup[l]), "done": []}
                done_before[l] = 0
            rec = open_[l]
            if rec is None:
                continue
            finished_now = st.active[l] == 0
            if finished_now or st.camp_done[l] > done_before[l]:
                rec["done"].append(state.t)
            if finished_now:
                events.append(ScheduleEvent(l + 1, rec["task"], rec["start"], rec["setup"], tuple(rec["done"]), True))
                open_[l] = None
        z += r
        zphi += r - pen
        pen_total += pen
        if trace is not None:
            trace.write(json.dumps({
                "t": t, "control": [int(c) for c in control], "reward": r, "penalty": pen,
                "state": state.vector().tolist(),
            }) + "\n")
        if done:
            break
    for l, rec in enumerate(open_):
        if rec is not None:
            events.append(ScheduleEvent(l + 1, rec["task"], rec["start"], rec["setup"], tuple(rec["done"]), False))
    events.sort(key=lambda e: (e.unit, e.start))
    makespan, tard = E.makespan_and_tardiness(state)
    return EpisodeResult(z, zphi, pen_total, pen_total > 0.0, makespan, tard, events, controls)


def sample_scenarios(
    instance: ProblemInstance, sampler: ScenarioSampler, n: int, base_seed: int | Sequence[int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked (batch_periods, due, confirm_at) for samples 0..n-1."""
    first = sampler.sample(instance, scenario_rng(base_seed, 0))
    pls = np.empty((n, *first.batch_periods.shape), dtype=np.int64)
    dues = np.empty((n, instance.n_tasks), dtype=np.int64)
    confs = np.empty((n, instance.n_tasks), dtype=np.int64)
    for k in range(n):
        sc = first if k == 0 else sampler.sample(instance, scenario_rng(base_seed, k))
        pls[k], dues[k], confs[k] = sc.batch_periods, sc.confirmed_due_periods, sc.confirm_at_period
    return pls, dues, confs


def evaluate_policy(
    params: PolicyParams,
    instance: ProblemInstance,
    sampler: ScenarioSampler,
    n_samples: int,
    base_seed: int | Sequence[int],
    penalty: PenaltyConfig | None = None,
    *,
    workers: int = 1,
) -> ReturnSamples:
    """Monte-Carlo returns of ``params`` over ``n_samples`` independent scenarios.

    Results are ordered by sample index and do not depend on ``workers``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    params.spec.check_instance(instance)
    cfg = penalty or PenaltyConfig()
    pls, dues, confs = sample_scenarios(instance, sampler, n_samples, base_seed)
    z = np.empty(n_samples)
    zphi = np.empty(n_samples)
    pen = np.empty(n_samples)
    viol = np.empty(n_samples, dtype=np.bool_)
    tf = np.empty(n_samples, dtype=np.int64)
    status = np.empty(n_samples, dtype=np.int64)
    d = E.default_reward_vector(instance.n_tasks, instance.n_units)
    spec = params.spec
    args = (params.theta, spec.dims, spec.h1_activation == "tanh", spec.normalize, instance.arrays)

    def run(sl: slice) -> None:
        K.batch_kernel(*args, pls[sl], dues[sl], confs[sl], d, float(cfg.kappa_g), int(cfg.norm),
                       z[sl], zphi[sl], pen[sl], viol[sl], tf[sl], status[sl])

    workers = max(1, min(int(workers), n_samples))
    if workers == 1:
        run(slice(0, n_samples))
    else:
        bounds = np.linspace(0, n_samples, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]))
    if (status != K.OK).any():
        raise RolloutError(f"masked control rejected in samples {np.flatnonzero(status).tolist()}")
    return ReturnSamples(zphi, z, viol, tf, _seed_tuple(base_seed))
