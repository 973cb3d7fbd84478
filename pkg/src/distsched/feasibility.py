"""Admissible control sets, latent-to-control rounding and the double-allocation penalty."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .env import PlantState
from .instance import ProblemInstance


@dataclass(frozen=True)
class FeasibleSets:
    """Per-unit admissible control codes, ascending, with idle (N+1) last when admitted."""

    per_unit: tuple[tuple[int, ...], ...]

    def __getitem__(self, unit: int) -> tuple[int, ...]:
        return self.per_unit[unit - 1]

    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """(codes, counts) arrays in the layout the kernels use."""
        width = max(len(c) for c in self.per_unit)
        codes = np.zeros((len(self.per_unit), width), dtype=np.int64)
        counts = np.array([len(c) for c in self.per_unit], dtype=np.int64)
        for l, c in enumerate(self.per_unit):
            codes[l, : len(c)] = c
        return codes, counts


@dataclass(frozen=True)
class PenaltyConfig:
    kappa_g: float = 250.0
    norm: int = 2

    def __post_init__(self):
        if self.kappa_g < 0:
            raise ValueError("kappa_g must be non-negative")
        if self.norm not in (1, 2):
            raise ValueError("norm must be 1 or 2")


def feasible_sets(state: PlantState, instance: ProblemInstance) -> FeasibleSets:
    n, nu = instance.n_tasks, instance.n_units
    codes = np.empty((nu, n + 1), dtype=np.int64)
    counts = np.empty(nu, dtype=np.int64)
    K.feasible_kernel(state.arrays, instance.arrays, codes, counts)
    return FeasibleSets(tuple(tuple(int(c) for c in codes[l, : counts[l]]) for l in range(nu)))


def round_to_control(latent: Sequence[float] | np.ndarray, sets: FeasibleSets) -> np.ndarray:
    """Map each latent in [0, 6] to an entry of its unit's list.

    index = floor(latent * (K - 1) / 6 + 0.5), i.e. nearest integer with ties
    rounded away from zero.
    """
    lat = np.asarray(latent, dtype=np.float64)
    if lat.shape != (len(sets.per_unit),):
        raise ValueError(f"expected {len(sets.per_unit)} latent values, got shape {lat.shape}")
    if any(len(c) == 0 for c in sets.per_unit):
        raise AssertionError("empty feasible set")
    codes, counts = sets.padded()
    control = np.empty(len(lat), dtype=np.int64)
    K.round_kernel(lat, codes, counts, control)
    return control


def double_allocation_penalty(
    control: Sequence[int] | np.ndarray, n_tasks: int, config: PenaltyConfig | None = None
) -> float:
    """kappa_g times the l_p norm of [count_i - 1]^+ over real tasks."""
    cfg = config or PenaltyConfig()
    u = np.asarray(control, dtype=np.int64)
    return float(K.penalty_kernel(u, n_tasks, float(cfg.kappa_g), int(cfg.norm)))
