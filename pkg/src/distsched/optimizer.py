"""Hybrid particle-swarm / simulated-annealing search with search-space reduction.

Everything is oriented towards maximization of the objective J. Objective calls
receive a seed path (run seed, iteration, particle, phase) so their results do
not depend on evaluation order or the number of workers.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PHASE_SWARM = 0
PHASE_SA = 1

ObjectiveFn = Callable[[np.ndarray, tuple[int, ...]], tuple[float, Any]]
MapFn = Callable[[Callable, Iterable], Iterable]


class OptimizerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SwarmConfig:
    pop: int = 60
    iters: int = 150
    omega: float = 0.729
    c1: float = 1.494
    c2: float = 1.494
    c3: float = 0.2
    n_h: int = 5
    lb: float = -5.0
    ub: float = 5.0
    alpha: float = 0.05
    temperature: float = 1e6
    cooling: float = 1.0
    sa_every: int = 10
    ssr_every: int = 25
    sa_step_scale: float = 0.05
    per_dim_r: bool = False
    metropolis: bool = False
    strict_reduction: bool = False

    def __post_init__(self):
        if self.pop < 1 or self.iters < 0:
            raise OptimizerConfigError("pop must be >= 1 and iters >= 0")
        if not 0.0 < self.c3 <= 1.0:
            raise OptimizerConfigError("c3 must lie in (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise OptimizerConfigError("alpha must lie in [0, 1]")
        if not 1 <= self.n_h <= self.pop:
            raise OptimizerConfigError("n_h must lie in [1, pop]")
        if self.temperature <= 0:
            raise OptimizerConfigError("temperature must be positive")
        if self.sa_every < 0 or self.ssr_every < 0:
            raise OptimizerConfigError("cadences must be >= 0 (0 disables)")

    @classmethod
    def with_overrides(cls, base: "SwarmConfig", overrides: dict[str, str]) -> "SwarmConfig":
        """Apply string-valued ``key=value`` overrides, coercing to each field's type."""
        kinds = {f.name: type(getattr(base, f.name)) for f in fields(cls)}
        vals = asdict(base)
        for k, v in overrides.items():
            if k not in kinds:
                raise OptimizerConfigError(f"unknown optimizer setting {k!r}")
            kind = kinds[k]
            if kind is bool:
                if v.lower() not in ("true", "false", "1", "0"):
                    raise OptimizerConfigError(f"{k} expects a boolean, got {v!r}")
                vals[k] = v.lower() in ("true", "1")
            else:
                try:
                    vals[k] = kind(v)
                except ValueError:
                    raise OptimizerConfigError(f"{k} expects {kind.__name__}, got {v!r}") from None
        return cls(**vals)


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    scores: np.ndarray
    pbest_pos: np.ndarray
    pbest_score: np.ndarray
    nbest_pos: np.ndarray
    nbest_score: np.ndarray
    gbest_pos: np.ndarray
    gbest_score: float
    gbest_info: Any
    lb: np.ndarray
    ub: np.ndarray
    temperature: float
    iteration: int
    history: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self, rng: np.random.Generator | None = None) -> dict[str, Any]:
        doc = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.__dict__.items()
            if k != "gbest_info"
        }
        doc["gbest_info"] = self.gbest_info if _jsonable(self.gbest_info) else None
        if rng is not None:
            doc["rng_state"] = rng.bit_generator.state
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> tuple["SwarmState", np.random.Generator | None]:
        d = dict(doc)
        rng_state = d.pop("rng_state", None)
        for k in ("positions", "velocities", "scores", "pbest_pos", "pbest_score",
                  "nbest_pos", "nbest_score", "gbest_pos", "lb", "ub"):
            d[k] = np.array(d[k], dtype=np.float64)
        rng = None
        if rng_state is not None:
            rng = np.random.default_rng()
            rng.bit_generator.state = rng_state
        return cls(**d), rng


def _jsonable(x: Any) -> bool:
    try:
        json.dumps(x)
        return True
    except TypeError:
        return False


def save_checkpoint(state: SwarmState, rng: np.random.Generator, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state.to_dict(rng)))


def load_checkpoint(path: str | Path) -> tuple[SwarmState, np.random.Generator | None]:
    return SwarmState.from_dict(json.loads(Path(path).read_text()))


def _bounds(config: SwarmConfig, dim: int, lb=None, ub=None) -> tuple[np.ndarray, np.ndarray]:
    lo = np.broadcast_to(np.asarray(config.lb if lb is None else lb, dtype=np.float64), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(config.ub if ub is None else ub, dtype=np.float64), (dim,)).copy()
    if not (lo < hi).all():
        raise OptimizerConfigError("every lower bound must be strictly below its upper bound")
    return lo, hi


def ring_neighbours(pop: int, n_h: int) -> np.ndarray:
    """(pop, n_h) indices of each particle's ring neighbourhood, itself included."""
    offsets = np.arange(n_h) - n_h // 2
    return (np.arange(pop)[:, None] + offsets[None, :]) % pop


def init_population(
    config: SwarmConfig, dim: int, rng: np.random.Generator, *, lb=None, ub=None
) -> SwarmState:
    """Uniform positions in the box; velocities (2a - 1)(ub - lb) clamped to +-vmax."""
    lo, hi = _bounds(config, dim, lb, ub)
    P = config.pop
    pos = rng.uniform(lo, hi, size=(P, dim))
    vel = (2.0 * rng.uniform(size=(P, dim)) - 1.0) * (hi - lo)
    vmax = config.c3 * (hi - lo)
    vel = np.clip(vel, -vmax, vmax)
    neg = np.full(P, -np.inf)
    return SwarmState(
        positions=pos, velocities=vel, scores=neg.copy(),
        pbest_pos=pos.copy(), pbest_score=neg.copy(),
        nbest_pos=pos.copy(), nbest_score=neg.copy(),
        gbest_pos=pos[0].copy(), gbest_score=-math.inf, gbest_info=None,
        lb=lo, ub=hi, temperature=config.temperature, iteration=0,
    )


def update_bests(state: SwarmState, config: SwarmConfig, idx: Sequence[int], thetas: np.ndarray,
                 scores: Sequence[float], infos: Sequence[Any]) -> None:
    """Fold freshly evaluated candidates into personal, neighbourhood and global bests."""
    for i, th, s, info in zip(idx, thetas, scores, infos):
        if s > state.pbest_score[i]:
            state.pbest_score[i] = s
            state.pbest_pos[i] = th
        # strict > keeps the earliest of equally scored candidates
        if s > state.gbest_score:
            state.gbest_score = float(s)
            state.gbest_pos = np.array(th, dtype=np.float64)
            state.gbest_info = info
    nb = ring_neighbours(len(state.scores), config.n_h)
    best = np.argmax(state.pbest_score[nb], axis=1)
    j = nb[np.arange(len(nb)), best]
    state.nbest_pos = state.pbest_pos[j].copy()
    state.nbest_score = state.pbest_score[j].copy()


def pso_step(state: SwarmState, config: SwarmConfig, rng: np.random.Generator,
             r: tuple[np.ndarray, np.ndarray] | None = None) -> SwarmState:
    """Velocity/position update, then clamp velocities to +-vmax and positions to the box.

    ``r`` optionally supplies (r1, r2) explicitly, mainly for tests.
    """
    P, d = state.positions.shape
    if r is None:
        shape = (P, d) if config.per_dim_r else (P, 1)
        r1, r2 = rng.uniform(size=shape), rng.uniform(size=shape)
    else:
        r1, r2 = (np.asarray(x, dtype=np.float64).reshape(P, -1) for x in r)
    theta = state.positions
    v = (config.omega * state.velocities
         + config.c1 * r1 * (state.pbest_pos - theta)
         + config.c2 * r2 * (state.nbest_pos - theta))
    vmax = config.c3 * (state.ub - state.lb)
    v = np.clip(v, -vmax, vmax)
    state.velocities = v
    state.positions = np.clip(theta + v, state.lb, state.ub)
    return state


def accept_sa(delta_e: float, temperature: float, z: float, metropolis: bool = False) -> bool:
    """Acceptance of a proposal with improvement ``delta_e`` (positive is better).

    Default rule: accept if delta_e > 0 or z >= exp(delta_e / T); with a large T a
    worse proposal is therefore rarely accepted. ``metropolis`` uses z < exp(delta_e / T).
    """
    if delta_e > 0:
        return True
    if not math.isfinite(delta_e):
        return False
    p = math.exp(delta_e / temperature)
    return z < p if metropolis else z >= p


def sa_step(state: SwarmState, objective_fn: ObjectiveFn, config: SwarmConfig,
            rng: np.random.Generator, seed: int = 0, map_fn: MapFn = map) -> SwarmState:
    """Perturb every particle, evaluate, accept or reject, and update bests."""
    P, d = state.positions.shape
    w = rng.uniform(-1.0, 1.0, size=(P, d)) * (config.sa_step_scale * (state.ub - state.lb))
    props = np.clip(state.positions + w, state.lb, state.ub)
    zs = rng.uniform(size=P)
    seeds = [(seed, state.iteration, i, PHASE_SA) for i in range(P)]
    scores, infos = _evaluate(objective_fn, props, seeds, map_fn)
    for i in range(P):
        if accept_sa(scores[i] - state.scores[i], state.temperature, zs[i], config.metropolis):
            state.positions[i] = props[i]
            state.scores[i] = scores[i]
    update_bests(state, config, range(P), props, scores, infos)
    state.temperature *= config.cooling
    return state


def reduce_space(state: SwarmState, config: SwarmConfig) -> SwarmState:
    """Contract the box towards the global best, then re-clamp positions and velocities."""
    a, best = config.alpha, state.gbest_pos
    if config.strict_reduction:
        lb = state.lb + a * (state.lb - best)
    else:
        lb = state.lb + a * (best - state.lb)
    ub = state.ub - a * (state.ub - best)
    state.lb, state.ub = np.minimum(lb, ub), np.maximum(lb, ub)
    state.positions = np.clip(state.positions, state.lb, state.ub)
    vmax = config.c3 * (state.ub - state.lb)
    state.velocities = np.clip(state.velocities, -vmax, vmax)
    return state


def _evaluate(objective_fn: ObjectiveFn, thetas: np.ndarray, seeds: list[tuple[int, ...]],
              map_fn: MapFn) -> tuple[np.ndarray, list[Any]]:
    def one(args):
        theta, s = args
        try:
            j, info = objective_fn(theta, s)
            j = float(j)
            if math.isnan(j):
                raise ValueError("objective returned NaN")
            return j, info
        except Exception as exc:  # a failing candidate must not stop the search
            log.warning("objective failed for candidate %s: %s", s, exc)
            return -math.inf, None

    results = list(map_fn(one, list(zip(thetas, seeds))))
    return np.array([r[0] for r in results]), [r[1] for r in results]


def _record(state: SwarmState) -> None:
    row = {"iteration": state.iteration, "best_J": state.gbest_score}
    if isinstance(state.gbest_info, dict):
        row.update(state.gbest_info)
    state.history.append(row)


def optimize(
    objective_fn: ObjectiveFn,
    dim: int,
    config: SwarmConfig | None = None,
    seed: int = 0,
    *,
    map_fn: MapFn = map,
    lb=None,
    ub=None,
    callback: Callable[[SwarmState, np.random.Generator], None] | None = None,
) -> tuple[np.ndarray, float, SwarmState]:
    """Run the hybrid search and return (best theta, best J, final state).

    ``state.history`` has iters + 1 rows: the initial population and one row per
    iteration, each holding the best score so far and the info dict returned by
    the objective for that best candidate.
    """
    cfg = config or SwarmConfig()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB1]))
    state = init_population(cfg, dim, rng, lb=lb, ub=ub)
    seeds = [(seed, 0, i, PHASE_SWARM) for i in range(cfg.pop)]
    state.scores, infos = _evaluate(objective_fn, state.positions, seeds, map_fn)
    update_bests(state, cfg, range(cfg.pop), state.positions, state.scores, infos)
    _record(state)
    if callback:
        callback(state, rng)
    return _run(objective_fn, cfg, seed, state, rng, map_fn, callback)


def resume(objective_fn: ObjectiveFn, config: SwarmConfig, seed: int, state: SwarmState,
           rng: np.random.Generator, *, map_fn: MapFn = map,
           callback: Callable[[SwarmState, np.random.Generator], None] | None = None) -> tuple[np.ndarray, float, SwarmState]:
    """Continue a run from a checkpointed state up to ``config.iters``."""
    return _run(objective_fn, config, seed, state, rng, map_fn, callback)


def _run(objective_fn, cfg, seed, state, rng, map_fn, callback):
    while state.iteration < cfg.iters:
        state.iteration += 1
        k = state.iteration
        if cfg.ssr_every and k % cfg.ssr_every == 0:
            reduce_space(state, cfg)
        if cfg.sa_every and k % cfg.sa_every == 0:
            sa_step(state, objective_fn, cfg, rng, seed, map_fn)
        pso_step(state, cfg, rng)
        seeds = [(seed, k, i, PHASE_SWARM) for i in range(cfg.pop)]
        state.scores, infos = _evaluate(objective_fn, state.positions, seeds, map_fn)
        update_bests(state, cfg, range(cfg.pop), state.positions, state.scores, infos)
        _record(state)
        if callback:
            callback(state, rng)
    return state.gbest_pos.copy(), state.gbest_score, state
