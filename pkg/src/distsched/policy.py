"""Recurrent scheduling policy: architecture, feature scaling, forward pass and persistence.

Parameter layout (frozen, layer-major, weights row-major as out x in):
W1, b1 | W2, U2, b2 | W3, b3 | W4, b4, where U2 holds the recurrent weights.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import _kernels as K
from .env import PlantState
from .instance import ProblemInstance

POLICY_SCHEMA_VERSION = 1


class PolicyError(ValueError):
    """Raised for malformed parameters, non-finite inputs or incompatible specs."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    h1: int = 10
    h2: int = 4
    h3: int = 2
    h1_activation: str = "identity"
    normalize: bool = True

    def __post_init__(self):
        if min(self.input_dim, self.output_dim, self.h1, self.h2, self.h3) < 1:
            raise PolicyError(f"network dimensions must be positive: {self}")
        if self.h1_activation not in ("identity", "tanh"):
            raise PolicyError(f"unknown h1 activation {self.h1_activation!r}")

    @classmethod
    def for_instance(cls, instance: ProblemInstance, **kw) -> "NetworkSpec":
        return cls(2 * instance.n_tasks + 2 * instance.n_units + 1, instance.n_units, **kw)

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.input_dim, self.h1, self.h2, self.h3, self.output_dim], dtype=np.int64)

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [
            ("W1", (self.h1, self.input_dim)),
            ("b1", (self.h1,)),
            ("W2", (self.h2, self.h1)),
            ("U2", (self.h2, self.h2)),
            ("b2", (self.h2,)),
            ("W3", (self.h3, self.h2)),
            ("b3", (self.h3,)),
            ("W4", (self.output_dim, self.h3)),
            ("b4", (self.output_dim,)),
        ]

    def check_instance(self, instance: ProblemInstance) -> None:
        want = NetworkSpec.for_instance(instance)
        if (self.input_dim, self.output_dim) != (want.input_dim, want.output_dim):
            raise PolicyError(
                f"policy expects input {self.input_dim} / output {self.output_dim}, "
                f"instance needs {want.input_dim} / {want.output_dim}"
            )


def param_count(spec: NetworkSpec) -> int:
    return sum(int(np.prod(s)) for _, s in spec.shapes())


@dataclass
class PolicyParams:
    spec: NetworkSpec
    theta: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (param_count(self.spec),):
            raise PolicyError(f"theta has length {self.theta.size}, spec needs {param_count(self.spec)}")
        if not np.isfinite(self.theta).all():
            raise PolicyError("theta contains non-finite entries")

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "PolicyParams":
        return cls(spec, np.zeros(param_count(spec)))


def decode(theta: np.ndarray, spec: NetworkSpec) -> dict[str, np.ndarray]:
    """Split a flat vector into named layer arrays (copies)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (param_count(spec),):
        raise PolicyError(f"cannot decode length {theta.size}; spec needs {param_count(spec)}")
    out, o = {}, 0
    for name, shape in spec.shapes():
        size = int(np.prod(shape))
        out[name] = theta[o : o + size].reshape(shape).copy()
        o += size
    return out


def encode(layers: dict[str, np.ndarray], spec: NetworkSpec) -> np.ndarray:
    parts = []
    for name, shape in spec.shapes():
        a = np.asarray(layers[name], dtype=np.float64)
        if a.shape != shape:
            raise PolicyError(f"layer {name} has shape {a.shape}, expected {shape}")
        parts.append(a.ravel())
    return np.concatenate(parts)


def normalize_state(state: PlantState, instance: ProblemInstance) -> np.ndarray:
    """Features on natural scales: I/M, w/(N+1), delta/T, rho/T, t/T."""
    out = np.empty(2 * instance.n_tasks + 2 * instance.n_units + 1)
    K.normalize_kernel(state.arrays, instance.arrays, out)
    return out


def features(state: PlantState, instance: ProblemInstance, spec: NetworkSpec) -> np.ndarray:
    return normalize_state(state, instance) if spec.normalize else state.vector()


def initial_hidden(spec: NetworkSpec) -> np.ndarray:
    return np.zeros(spec.h2)


def forward(
    params: PolicyParams, features: np.ndarray, hidden: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One recurrent step. Returns (latent in [0, 6]^n_u, new hidden state)."""
    spec = params.spec
    x = np.ascontiguousarray(features, dtype=np.float64)
    h = np.ascontiguousarray(hidden, dtype=np.float64)
    if x.shape != (spec.input_dim,) or h.shape != (spec.h2,):
        raise PolicyError(f"feature/hidden shapes {x.shape}/{h.shape} do not match {spec}")
    if not (np.isfinite(x).all() and np.isfinite(h).all()):
        raise PolicyError("non-finite feature or hidden value")
    new_h = np.empty(spec.h2)
    latent = np.empty(spec.output_dim)
    K.forward_kernel(params.theta, spec.dims, spec.h1_activation == "tanh", x, h, new_h, latent)
    return latent, new_h


def forward_reference(params: PolicyParams, x: np.ndarray, hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Plain numpy forward pass, used to cross-check the compiled kernel."""
    L = decode(params.theta, params.spec)
    a1 = L["W1"] @ x + L["b1"]
    if params.spec.h1_activation == "tanh":
        a1 = np.tanh(a1)
    h2 = np.tanh(L["W2"] @ a1 + L["U2"] @ hidden + L["b2"])
    a3 = 1.0 / (1.0 + np.exp(-(L["W3"] @ h2 + L["b3"])))
    return np.clip(L["W4"] @ a3 + L["b4"], 0.0, 6.0), h2


def to_dict(params: PolicyParams) -> dict[str, Any]:
    return {
        "schema_version": POLICY_SCHEMA_VERSION,
        "spec": asdict(params.spec),
        # float() keeps repr round-trip precision in json
        "theta": [float(v) for v in params.theta],
        "metadata": params.metadata,
    }


def from_dict(doc: dict[str, Any]) -> PolicyParams:
    if doc.get("schema_version") != POLICY_SCHEMA_VERSION:
        raise PolicyError(f"unsupported policy schema_version {doc.get('schema_version')!r}")
    try:
        spec = NetworkSpec(**doc["spec"])
        return PolicyParams(spec, np.array(doc["theta"], dtype=np.float64), dict(doc.get("metadata", {})))
    except (KeyError, TypeError) as exc:
        raise PolicyError(f"malformed policy document: {exc}") from None


def save_policy(params: PolicyParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(params), indent=1, sort_keys=True) + "\n")


def load_policy(path: str | Path) -> PolicyParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PolicyError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(doc)
