"""Sample risk statistics over episode returns and a binomial confidence bound on feasibility."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .rollout import ReturnSamples


class EstimationError(ValueError):
    pass


def _as_samples(samples) -> np.ndarray:
    z = np.asarray(samples, dtype=np.float64).ravel()
    if z.size == 0:
        raise EstimationError("empty sample set")
    return z


def _check_beta(beta: float) -> None:
    if not 0.0 < beta <= 1.0:
        raise EstimationError(f"beta must lie in (0, 1], got {beta}")


def var_estimate(samples, beta: float) -> float:
    """The k-th smallest sample, k = max(1, floor(beta * n))."""
    _check_beta(beta)
    z = np.sort(_as_samples(samples))
    k = max(1, math.floor(beta * z.size))
    return float(z[k - 1])


def cvar_estimate(samples, beta: float) -> float:
    """VaR + (1 / (beta n)) * sum(min(0, z - VaR))."""
    z = _as_samples(samples)
    v = var_estimate(z, beta)
    return float(v + np.minimum(0.0, z - v).sum() / (beta * z.size))


# --- regularized incomplete beta and its inverse -------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 100_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise EstimationError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0."""
    if a <= 0 or b <= 0:
        raise EstimationError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainv(p: float, a: float, b: float, tol: float = 1e-13) -> float:
    """x with I_x(a, b) = p, by bisection on [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise EstimationError(f"probability {p} outside [0, 1]")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if betainc(a, b, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson_lb(successes: int, n: int, upsilon: float = 0.05, *, conventional: bool = False) -> float:
    """Bound on the probability that an episode satisfies the penalized constraint.

    Default form: 1 - betainv(upsilon, n + 1 - s, s), which equals (1 - upsilon)^(1/n)
    when every episode succeeds. ``conventional=True`` returns the usual one-sided
    lower limit betainv(upsilon, s, n - s + 1) instead.
    """
    if not 0.0 < upsilon < 1.0:
        raise EstimationError(f"upsilon must lie in (0, 1), got {upsilon}")
    if n < 1 or not 0 <= successes <= n:
        raise EstimationError(f"need 0 <= successes <= n and n >= 1, got {successes}/{n}")
    if successes == 0:
        return 0.0
    if conventional:
        return upsilon ** (1.0 / n) if successes == n else betainv(upsilon, successes, n - successes + 1)
    if successes == n:
        return (1.0 - upsilon) ** (1.0 / n)
    return 1.0 - betainv(upsilon, n + 1 - successes, successes)


# --- summaries and objectives --------------------------------------------

@dataclass(frozen=True)
class RiskSummary:
    mean: float
    std: float
    std_defined: bool
    var_beta: float
    cvar_beta: float
    beta: float
    n_samples: int
    f_sa: float
    f_lb: float
    confidence: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def summarize(samples: ReturnSamples, beta: float = 0.2, upsilon: float = 0.05) -> RiskSummary:
    """Statistics over the raw (unpenalized) returns plus the feasibility bound."""
    z = samples.z
    n = len(z)
    s = samples.successes
    return RiskSummary(
        mean=float(np.mean(z)),
        std=float(np.std(z)) if n >= 2 else 0.0,
        std_defined=n >= 2,
        var_beta=var_estimate(z, beta),
        cvar_beta=cvar_estimate(z, beta),
        beta=beta,
        n_samples=n,
        f_sa=s / n,
        f_lb=clopper_pearson_lb(s, n, upsilon),
        confidence=1.0 - upsilon,
    )


@dataclass(frozen=True)
class ObjectiveMode:
    """What the search maximizes: the mean or the CVaR of the penalized return."""

    kind: str = "mean"
    beta: float = 0.2

    def __post_init__(self):
        if self.kind not in ("mean", "cvar"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "cvar":
            _check_beta(self.beta)


def objective(samples: ReturnSamples, mode: ObjectiveMode) -> float:
    zphi = _as_samples(samples.z_phi)
    if mode.kind == "mean":
        return float(zphi.mean())
    return cvar_estimate(zphi, mode.beta)
