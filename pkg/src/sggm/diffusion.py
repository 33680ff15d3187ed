"""Forward Ornstein-Uhlenbeck diffusion on graphs.

Both channels follow dY = -Y/2 dt + dW, so conditionally on the clean graph

    Y_t = alpha(t) * Y_0 + sqrt(sigma2(t)) * Z,   alpha = exp(-t/2), sigma2 = 1 - exp(-t)

with independent standard normal noise per channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .graphs import Graph


def _check_time(t):
    if isinstance(t, (int, float)):
        if t < 0:
            raise ParameterError("time must be non-negative")
    elif np.any(np.asarray(t) < 0):
        raise ParameterError("time must be non-negative")


def alpha(t):
    _check_time(t)
    return np.exp(-0.5 * np.asarray(t, dtype=float))


def sigma2(t):
    _check_time(t)
    return -np.expm1(-np.asarray(t, dtype=float))


@dataclass(frozen=True)
class NoiseSchedule:
    horizon: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ParameterError("horizon must be positive")

    def alpha(self, t):
        return alpha(t)

    def sigma2(self, t):
        return sigma2(t)


@dataclass(frozen=True)
class TimeGrid:
    """Discretization points 0 = t_0 < t_1 < ... < t_M = T."""

    points: tuple

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2 or pts[0] != 0.0:
            raise ParameterError("grid must start at 0 and have at least one step")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ParameterError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if steps < 1 or not horizon > 0:
            raise ParameterError("uniform grid needs horizon > 0 and steps >= 1")
        pts = [horizon * k / steps for k in range(steps)] + [float(horizon)]
        return cls(tuple(pts))

    @property
    def horizon(self) -> float:
        return self.points[-1]

    @property
    def steps(self) -> int:
        return len(self.points) - 1

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(np.asarray(self.points))

    def reverse_points(self) -> np.ndarray:
        """t'_k = T - t_{M-k} for k = 0..M."""
        pts = np.asarray(self.points)
        return self.horizon - pts[::-1]

    def to_dict(self) -> dict:
        uniform = np.allclose(self.deltas, self.horizon / self.steps, rtol=0, atol=1e-12)
        if uniform:
            return {"T": self.horizon, "M": self.steps, "kind": "uniform"}
        return {"T": self.horizon, "M": self.steps, "kind": "explicit", "points": list(self.points)}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeGrid":
        if d.get("kind", "uniform") == "uniform":
            return cls.uniform(float(d["T"]), int(d["M"]))
        return cls(tuple(d["points"]))


def diffuse(y0, t, rng):
    """Array-level conditional sample of one channel; ``t`` broadcasts over leading axes."""
    y0 = np.asarray(y0, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_time(t)
    a = alpha(t).reshape(t.shape + (1,) * (y0.ndim - t.ndim))
    s = np.sqrt(sigma2(t)).reshape(a.shape)
    return a * y0 + s * rng.standard_normal(y0.shape)


def forward_sample(g0: Graph, t: float, seed, horizon: float | None = None) -> Graph:
    """Draw G_t given G_0 from the closed-form OU transition."""
    if t < 0 or (horizon is not None and t > horizon):
        raise ParameterError(f"t={t} outside [0, {horizon}]")
    rng = np.random.default_rng(seed)
    a_t, s_t = math.exp(-0.5 * t), math.sqrt(-math.expm1(-t))
    # features first, then structure: two independent draws from one stream
    x = a_t * g0.x + s_t * rng.standard_normal(g0.x.shape)
    a = a_t * g0.a + s_t * rng.standard_normal(g0.a.shape)
    return Graph(x, a)


def prior_sample(n: int, f: int, seed) -> Graph:
    if n < 1 or f < 1:
        raise ParameterError("prior needs n, f >= 1")
    rng = np.random.default_rng(seed)
    return Graph(rng.standard_normal((n, f)), rng.standard_normal((n, n)))


def gaussian_kl(mean1, var1: float, mean2, var2: float) -> float:
    """KL(N(mean1, var1 I) || N(mean2, var2 I)) for isotropic Gaussians."""
    if var1 <= 0 or var2 <= 0:
        raise ParameterError("variances must be positive")
    mean1 = np.asarray(mean1, dtype=float)
    mean2 = np.asarray(mean2, dtype=float)
    if mean1.shape != mean2.shape:
        raise ParameterError("mean shapes differ")
    d = mean1.size
    ratio = var1 / var2
    return float(0.5 * d * (ratio - 1.0 - np.log(ratio)) + np.sum((mean1 - mean2) ** 2) / (2.0 * var2))


def diffused_gaussian(mean: float, var: float, t: float) -> tuple[float, float]:
    """Mean and variance at time t of the OU process started from N(mean, var)."""
    a = float(alpha(t))
    return a * mean, a * a * var + float(sigma2(t))


JOINT = "joint"
FEATURE_ONLY = "feature_only"
STRUCTURE_ONLY = "structure_only"
PARADIGMS = (JOINT, FEATURE_ONLY, STRUCTURE_ONLY)


def active_channels(paradigm: str) -> tuple[bool, bool]:
    """(features diffuse?, structure diffuses?) under a generation paradigm."""
    if paradigm not in PARADIGMS:
        raise ParameterError(f"unknown paradigm {paradigm!r}")
    return paradigm != STRUCTURE_ONLY, paradigm != FEATURE_ONLY
