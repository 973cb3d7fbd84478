"""Experiment definitions, training and validation runs, latency measurement and artifacts."""
from __future__ import annotations

import csv
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import _kernels as K
from . import __version__
from .env import Scenario, UncertaintyConfig, default_reward_vector
from .feasibility import PenaltyConfig
from .gantt import export_gantt
from .instance import ProblemInstance, resolve_instance
from .optimizer import SwarmConfig, SwarmState, load_checkpoint, optimize, resume, save_checkpoint
from .policy import NetworkSpec, PolicyParams, load_policy, param_count, save_policy
from .risk import ObjectiveMode, RiskSummary, objective, summarize
from .rollout import ReturnSamples, ScenarioSampler, evaluate_policy, run_episode, sample_scenarios, scenario_rng
from .validator import check_schedule

log = logging.getLogger(__name__)

# (processing uncertainty, due-date uncertainty, finite release times)
FACTORS = {
    1: (False, False, False),
    2: (False, False, True),
    3: (False, True, False),
    4: (False, True, True),
    5: (True, False, False),
    6: (True, False, True),
    7: (True, True, False),
    8: (True, True, True),
}
# (k_pt, k_dd) for validating an E8 policy under a mismatched plant
MISSPEC = {1: (0, 1), 2: (0, 2), 3: (1, 0), 4: (1, 1), 5: (1, 2), 6: (2, 0), 7: (2, 1), 8: (2, 2)}

TRAINING_CSV_COLUMNS = ("iteration", "best_J", "mean", "std", "var_beta", "cvar_beta", "f_lb")
VALIDATION_SEED_TAG = 0x5EED


class ConfigError(ValueError):
    """Invalid experiment set-up; reported before any computation starts."""


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    instance: str = "instance1"
    processing_uncertainty: bool = False
    due_uncertainty: bool = False
    release_times: bool = False
    objective: ObjectiveMode = ObjectiveMode()
    k_pt: int = 0
    k_dd: int = 0
    train_samples: int | None = None
    validation_mc: int = 500
    beta: float = 0.2
    upsilon: float = 0.05
    uncertainty: UncertaintyConfig = UncertaintyConfig()
    penalty: PenaltyConfig = PenaltyConfig()
    swarm: SwarmConfig = SwarmConfig()

    def __post_init__(self):
        if self.id.startswith("D") and not (self.processing_uncertainty or self.due_uncertainty):
            raise ConfigError(f"{self.id}: a CVaR experiment needs at least one uncertainty source")
        if self.validation_mc < 1:
            raise ConfigError("validation_mc must be >= 1")
        if self.train_samples is not None and self.train_samples < 1:
            raise ConfigError("train_samples must be >= 1")
        if not 0.0 < self.beta <= 1.0 or not 0.0 < self.upsilon < 1.0:
            raise ConfigError("beta must lie in (0, 1] and upsilon in (0, 1)")

    @property
    def uncertain(self) -> bool:
        return self.processing_uncertainty or self.due_uncertainty

    @property
    def misspecified(self) -> bool:
        return self.id.startswith("M")

    @property
    def n_train(self) -> int:
        if self.train_samples is not None:
            return self.train_samples
        return 50 if self.uncertain else 1

    def sampler(self, *, misspecify: bool | None = None) -> ScenarioSampler:
        mis = self.misspecified if misspecify is None else misspecify
        unc = replace(self.uncertainty, k_pt=self.k_pt, k_dd=self.k_dd)
        return ScenarioSampler(unc, self.processing_uncertainty, self.due_uncertainty, mis)

    def build_instance(self) -> ProblemInstance:
        inst = resolve_instance(self.instance)
        return inst if self.release_times else inst.without_release_times()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def experiment(exp_id: str, instance: str = "instance1", **overrides: Any) -> ExperimentConfig:
    """Look up E1-E8, D3-D8 or M1-M8; anything else must carry explicit factors."""
    m = re.fullmatch(r"([EDM])([1-8])", exp_id)
    if m is None:
        if not exp_id:
            raise ConfigError("empty experiment id")
        return ExperimentConfig(exp_id, instance, **overrides)
    kind, num = m.group(1), int(m.group(2))
    base: dict[str, Any] = {}
    if kind == "M":
        proc, due, rel = FACTORS[8]
        base["k_pt"], base["k_dd"] = MISSPEC[num]
    else:
        if kind == "D" and num < 3:
            raise ConfigError(f"{exp_id}: CVaR experiments are defined for D3-D8 only")
        proc, due, rel = FACTORS[num]
    base.update(processing_uncertainty=proc, due_uncertainty=due, release_times=rel)
    beta = overrides.get("beta", 0.2)
    base["objective"] = ObjectiveMode("cvar", beta) if kind == "D" else ObjectiveMode("mean", beta)
    base.update(overrides)
    return ExperimentConfig(exp_id, instance, **base)


def parse_overrides(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- training ----------------------------------------------------------------

def _metrics_row(samples: ReturnSamples, cfg: ExperimentConfig) -> dict[str, float]:
    s = summarize(samples, cfg.beta, cfg.upsilon)
    return {"mean": s.mean, "std": s.std, "var_beta": s.var_beta, "cvar_beta": s.cvar_beta, "f_lb": s.f_lb}


def make_objective(cfg: ExperimentConfig, instance: ProblemInstance, spec: NetworkSpec):
    sampler = cfg.sampler(misspecify=False)
    n = cfg.n_train

    def fn(theta: np.ndarray, seed_path: tuple[int, ...]) -> tuple[float, dict[str, float]]:
        samples = evaluate_policy(PolicyParams(spec, theta), instance, sampler, n, seed_path, cfg.penalty)
        return objective(samples, cfg.objective), _metrics_row(samples, cfg)

    return fn


@dataclass
class TrainingResult:
    params: PolicyParams
    best_j: float
    history: list[dict[str, Any]]
    state: SwarmState


def train(cfg: ExperimentConfig, seed: int, *, workers: int = 1, checkpoint: Path | None = None,
          resume_from: Path | None = None, checkpoint_every: int = 10) -> TrainingResult:
    if cfg.misspecified:
        raise ConfigError(f"{cfg.id} validates an existing E8 policy; it has no training stage")
    instance = cfg.build_instance()
    spec = NetworkSpec.for_instance(instance)
    fn = make_objective(cfg, instance, spec)
    dim = param_count(spec)

    def cb(state: SwarmState, rng: np.random.Generator) -> None:
        if state.iteration % checkpoint_every == 0 or state.iteration == cfg.swarm.iters:
            save_checkpoint(state, rng, checkpoint)

    callback = cb if checkpoint is not None else None
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    map_fn = pool.map if pool else map
    try:
        if resume_from is not None:
            state, rng = load_checkpoint(resume_from)
            if rng is None:
                raise ConfigError(f"{resume_from}: checkpoint lacks a random-generator state")
            theta, best, state = resume(fn, cfg.swarm, seed, state, rng, map_fn=map_fn, callback=callback)
        else:
            theta, best, state = optimize(fn, dim, cfg.swarm, seed, map_fn=map_fn, callback=callback)
    finally:
        if pool:
            pool.shutdown()
    meta = {
        "experiment": cfg.id, "instance": cfg.instance, "seed": seed, "best_J": best,
        "release_times": cfg.release_times, "version": __version__,
    }
    return TrainingResult(PolicyParams(spec, theta, meta), best, state.history, state)


def write_training_csv(history: list[dict[str, Any]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAINING_CSV_COLUMNS)
        for row in history:
            w.writerow([repr(row.get(c)) if isinstance(row.get(c), float) else row.get(c, "") for c in TRAINING_CSV_COLUMNS])


# --- validation ----------------------------------------------------------------

@dataclass
class ValidationReport:
    summary: RiskSummary
    experiment: dict[str, Any]
    seed: int
    n_mc: int
    schedule_violations: int
    violation_rules: dict[str, int]
    episodes: list[dict[str, Any]] = field(default_factory=list)

    def metrics(self) -> dict[str, Any]:
        """Deterministic content for metrics.json (no timing data)."""
        return {
            "summary": self.summary.to_dict(),
            "experiment": self.experiment,
            "seed": self.seed,
            "n_mc": self.n_mc,
            "schedule_violations": self.schedule_violations,
            "violation_rules": self.violation_rules,
        }


def validate_policy(params: PolicyParams, cfg: ExperimentConfig, n_mc: int | None = None, seed: int = 0,
                    *, workers: int = 1, check_schedules: bool = True) -> ValidationReport:
    """Roll the policy out on fresh scenarios and summarize raw returns and feasibility."""
    instance = cfg.build_instance()
    params.spec.check_instance(instance)
    n = cfg.validation_mc if n_mc is None else n_mc
    if n < 1:
        raise ConfigError("need at least one validation episode")
    sampler = cfg.sampler()
    base = (seed, VALIDATION_SEED_TAG)
    samples = evaluate_policy(params, instance, sampler, n, base, cfg.penalty, workers=workers)
    rules: dict[str, int] = {}
    n_bad = 0
    episodes = []
    if check_schedules:
        pls, dues, confs = sample_scenarios(instance, sampler, n, base)
        for k in range(n):
            ep = run_episode(params, instance, Scenario(pls[k], dues[k], confs[k]), cfg.penalty)
            rep = check_schedule(ep.schedule_events, instance)
            for v in rep.violations:
                rules[v.rule] = rules.get(v.rule, 0) + 1
            n_bad += not rep.ok
            episodes.append({"z": ep.raw_return, "z_phi": ep.penalized_return, "violated": ep.violated,
                             "makespan": ep.makespan, "schedule_ok": rep.ok})
            if ep.raw_return != samples.z[k] or ep.penalized_return != samples.z_phi[k]:
                raise RuntimeError(f"episode {k}: instrumented and batched rollouts disagree")
    summary = summarize(samples, cfg.beta, cfg.upsilon)
    return ValidationReport(summary, cfg.to_dict(), seed, n, n_bad, dict(sorted(rules.items())), episodes)


# --- latency ---------------------------------------------------------------------

def measure_decision_latency(params: PolicyParams, instance: ProblemInstance, n_steps: int,
                             seed: int = 0, sampler: ScenarioSampler | None = None) -> dict[str, float]:
    """Wall time of one decision (mask, features, forward pass, rounding) over ``n_steps`` calls.

    The plant is stepped between decisions so that the timed calls see realistic
    states; episodes restart on termination.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    spec = params.spec
    spec.check_instance(instance)
    sampler = sampler or ScenarioSampler(processing_uncertain=True, due_uncertain=True)
    ia = instance.arrays
    n, nu = instance.n_tasks, instance.n_units
    d = default_reward_vector(n, nu)
    st = K.new_state(n, nu)
    hidden, new_hidden = np.zeros(spec.h2), np.zeros(spec.h2)
    x, latent = np.empty(spec.input_dim), np.empty(nu)
    feas, counts, control = np.empty((nu, n + 1), dtype=np.int64), np.empty(nu, dtype=np.int64), np.empty(nu, dtype=np.int64)
    h1_tanh = spec.h1_activation == "tanh"
    times = np.empty(n_steps)
    episode = 0
    sc = None

    def reset():
        nonlocal sc, episode
        sc = sampler.sample(instance, scenario_rng((seed,), episode))
        episode += 1
        K.reset_state(st, ia, sc.confirmed_due_periods, sc.confirm_at_period)
        hidden[:] = 0.0

    reset()
    # warm-up call compiles and caches everything off the clock
    K.decide_kernel(st, ia, params.theta, spec.dims, h1_tanh, spec.normalize, hidden, new_hidden, x, latent, feas, counts, control)
    clock = time.perf_counter_ns
    for i in range(n_steps):
        t0 = clock()
        K.decide_kernel(st, ia, params.theta, spec.dims, h1_tanh, spec.normalize, hidden, new_hidden, x, latent, feas, counts, control)
        times[i] = clock() - t0
        hidden[:] = new_hidden
        _, done, _ = K.step_kernel(st, control, ia, sc.batch_periods, sc.confirmed_due_periods, sc.confirm_at_period, d, False)
        if done:
            reset()
    us = times / 1e3
    mean = float(us.mean())
    stats = {
        "n_steps": n_steps,
        "mean_us": mean,
        "p50_us": float(np.percentile(us, 50)),
        "p95_us": float(np.percentile(us, 95)),
        "max_us": float(us.max()),
        "std_us": float(us.std()),
    }
    stats.update({f"{k[:-3]}_normalized": v / mean for k, v in stats.items() if k.endswith("_us") and k != "std_us"})
    return stats


# --- artifacts -------------------------------------------------------------------

def dump_json(doc: Any, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, seed: int, out: Path, *, workers: int = 1,
                   policy_path: Path | None = None, resume_from: Path | None = None,
                   n_mc: int | None = None, latency_steps: int = 2000) -> ValidationReport:
    """Train (or load, for M experiments), validate and write every artifact to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    cfg.build_instance()  # fail fast on a bad instance reference
    training: dict[str, Any] | None = None
    if cfg.misspecified:
        if policy_path is None:
            raise ConfigError(f"{cfg.id} needs a trained E8 policy file")
        params = load_policy(policy_path)
    else:
        res = train(cfg, seed, workers=workers, checkpoint=out / "checkpoint.json", resume_from=resume_from)
        params = res.params
        save_policy(params, out / "policy.json")
        write_training_csv(res.history, out / "training.csv")
        training = {"best_J": res.best_j, "iterations": cfg.swarm.iters, "population": cfg.swarm.pop,
                    "train_samples": cfg.n_train}
    report = validate_policy(params, cfg, n_mc, seed, workers=workers)
    metrics = report.metrics()
    metrics["training"] = training
    metrics["version"] = __version__
    dump_json(metrics, out / "metrics.json")
    write_episodes_csv(report.episodes, out / "episodes.csv")
    instance = cfg.build_instance()
    first = cfg.sampler().sample(instance, scenario_rng((seed, VALIDATION_SEED_TAG), 0))
    ep = run_episode(params, instance, first, cfg.penalty)
    (out / "gantt.svg").write_text(export_gantt(ep.schedule_events, instance, title=f"{cfg.id} {cfg.instance}"))
    if latency_steps:
        dump_json(measure_decision_latency(params, instance, latency_steps, seed, cfg.sampler()), out / "latency.json")
    return report


def write_episodes_csv(episodes: list[dict[str, Any]], path: Path) -> None:
    cols = ("episode", "z", "z_phi", "violated", "makespan", "schedule_ok")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k, e in enumerate(episodes):
            w.writerow([k, repr(e["z"]), repr(e["z_phi"]), int(e["violated"]), e["makespan"], int(e["schedule_ok"])])
