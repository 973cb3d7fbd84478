"""Command-line entry point: train, validate, rollout, latency and instance checks.

Exit codes: 0 success, 2 configuration error, 3 validation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness as H
from .gantt import export_gantt
from .instance import InstanceError, load_instance, resolve_instance
from .optimizer import OptimizerConfigError, SwarmConfig
from .policy import PolicyError, load_policy
from .rollout import run_episode, scenario_rng
from .validator import check_schedule

EXIT_OK, EXIT_CONFIG, EXIT_INVALID = 0, 2, 3

log = logging.getLogger("distsched")


def _experiment_from_args(args, instance: str | None = None) -> H.ExperimentConfig:
    over = H.parse_overrides(getattr(args, "override", None) or [])
    swarm_keys = {k: v for k, v in over.items() if k in SwarmConfig.__dataclass_fields__}
    other = {k: v for k, v in over.items() if k not in swarm_keys}
    swarm = SwarmConfig()
    if getattr(args, "pop", None) is not None:
        swarm = replace(swarm, pop=args.pop)
    if getattr(args, "iters", None) is not None:
        swarm = replace(swarm, iters=args.iters)
    swarm = SwarmConfig.with_overrides(swarm, swarm_keys)
    kw: dict = {"swarm": swarm}
    for key, conv in (("upsilon", float), ("validation_mc", int), ("train_samples", int)):
        if key in other:
            kw[key] = conv(other.pop(key))
    if other:
        raise H.ConfigError(f"unknown override(s): {', '.join(sorted(other))}")
    if getattr(args, "samples", None) is not None:
        kw["train_samples"] = args.samples
    if getattr(args, "beta", None) is not None:
        kw["beta"] = args.beta
    return H.experiment(args.experiment, instance or args.instance, **kw)


def cmd_train(args) -> int:
    cfg = _experiment_from_args(args)
    report = H.run_experiment(cfg, args.seed, Path(args.out), workers=args.workers,
                              resume_from=Path(args.resume) if args.resume else None,
                              n_mc=args.mc, latency_steps=args.latency_steps)
    s = report.summary
    print(f"{cfg.id} {cfg.instance} seed={args.seed}: mean={s.mean:.2f} std={s.std:.2f} "
          f"cvar={s.cvar_beta:.2f} f_lb={s.f_lb:.4f} schedule_violations={report.schedule_violations}")
    return EXIT_OK if report.schedule_violations == 0 else EXIT_INVALID


def cmd_validate(args) -> int:
    params = load_policy(args.policy)
    instance = args.instance or params.metadata.get("instance", "instance1")
    cfg = _experiment_from_args(args, instance)
    report = H.validate_policy(params, cfg, args.mc, args.seed, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = report.metrics()
    metrics["policy"] = params.metadata
    H.dump_json(metrics, out / "metrics.json")
    H.write_episodes_csv(report.episodes, out / "episodes.csv")
    s = report.summary
    print(f"{cfg.id} {cfg.instance}: mean={s.mean:.2f} std={s.std:.2f} var={s.var_beta:.2f} "
          f"cvar={s.cvar_beta:.2f} f_lb={s.f_lb:.4f} schedule_violations={report.schedule_violations}")
    return EXIT_OK if report.schedule_violations == 0 else EXIT_INVALID


def cmd_rollout(args) -> int:
    params = load_policy(args.policy)
    exp_id = args.experiment or params.metadata.get("experiment", "E1")
    cfg = H.experiment(exp_id, args.instance or params.metadata.get("instance", "instance1"))
    instance = cfg.build_instance()
    params.spec.check_instance(instance)
    scenario = cfg.sampler().sample(instance, scenario_rng((args.seed,), 0))
    trace = open(args.trace, "w") if args.trace else None
    try:
        ep = run_episode(params, instance, scenario, cfg.penalty, trace=trace)
    finally:
        if trace:
            trace.close()
    if args.gantt:
        Path(args.gantt).write_text(export_gantt(ep.schedule_events, instance, title=f"{cfg.id} {cfg.instance}"))
    rep = check_schedule(ep.schedule_events, instance)
    print(json.dumps({
        "return": ep.raw_return, "penalized_return": ep.penalized_return, "makespan": ep.makespan,
        "tardiness": ep.tardiness.tolist(), "violated": ep.violated, "schedule_ok": rep.ok,
    }))
    for v in rep.violations:
        print(f"violation: {v.rule} unit {v.unit} T{v.task}: {v.detail}", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_latency(args) -> int:
    params = load_policy(args.policy)
    instance = resolve_instance(args.instance or params.metadata.get("instance", "instance1"))
    if not params.metadata.get("release_times", True):
        instance = instance.without_release_times()
    stats = H.measure_decision_latency(params, instance, args.steps, args.seed)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_instance_validate(args) -> int:
    try:
        inst = load_instance(Path(args.file))
    except InstanceError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {inst.name} with {inst.n_tasks} tasks and {inst.n_units} units")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distsched", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_args(sp, needs_instance: bool):
        sp.add_argument("--experiment", required=True, help="E1-E8, D3-D8 or M1-M8")
        sp.add_argument("--instance", default="instance1" if needs_instance else None,
                        help="builtin name or path to an instance JSON file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--mc", type=int, default=None, help="validation episodes (default 500)")
        sp.add_argument("--beta", type=float, default=None, help="CVaR level (default 0.2)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="optimizer or experiment setting, e.g. alpha=0.1 or upsilon=0.01")

    t = sub.add_parser("train", help="train a policy, validate it and write all artifacts")
    experiment_args(t, True)
    t.add_argument("--pop", type=int, default=None)
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--samples", type=int, default=None, help="training samples per candidate")
    t.add_argument("--resume", default=None, help="checkpoint.json to continue from")
    t.add_argument("--latency-steps", type=int, default=2000)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("validate", help="Monte-Carlo validation of a saved policy")
    v.add_argument("--policy", required=True)
    experiment_args(v, False)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("rollout", help="roll out one episode and render its schedule")
    r.add_argument("--policy", required=True)
    r.add_argument("--instance", default=None)
    r.add_argument("--experiment", default=None, help="uncertainty setting (default: the policy's)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--gantt", default=None, help="write an SVG chart here")
    r.add_argument("--trace", default=None, help="write a JSON-lines trajectory here")
    r.set_defaults(func=cmd_rollout)

    lat = sub.add_parser("latency", help="per-decision inference time")
    lat.add_argument("--policy", required=True)
    lat.add_argument("--instance", default=None)
    lat.add_argument("--steps", type=int, default=10000)
    lat.add_argument("--seed", type=int, default=0)
    lat.set_defaults(func=cmd_latency)

    inst = sub.add_parser("instance", help="instance file utilities")
    isub = inst.add_subparsers(dest="instance_command", required=True)
    iv = isub.add_parser("validate", help="check an instance JSON file")
    iv.add_argument("file")
    iv.set_defaults(func=cmd_instance_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (H.ConfigError, OptimizerConfigError, PolicyError, InstanceError, LookupError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
