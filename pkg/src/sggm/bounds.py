"""KL convergence bounds for the three generation paradigms.

Every bound is reported up to an absolute constant, which is fixed to 1. A
bound splits into a prior term (forward process not fully mixed at T), a
score term (T times the score error) and discretization terms built from the
step sizes through S2 = sum dt_i^2 and S3 = sum dt_i^3.

Symbols: N nodes, F feature columns, L Lipschitz constant of the true score,
H_X / H_A second moments of the data, sigma_X^2 / sigma_A^2 squared norm
bounds on the frozen channel, eps^2 grid-weighted score errors.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .sampling import EULER_MARUYAMA, EXPONENTIAL_INTEGRATOR, SCHEMES

CONSTANT_NOTE = "up to absolute constant"
BOUND_COLUMNS = ("paradigm", "scheme", "prior", "score", "disc_1", "disc_2", "total")
_STEP_TOL = 1e-9


class UniformSteps(Sequence):
    """M equal steps of size T/M, stored without materializing the list."""

    def __init__(self, t_horizon: float, m: int):
        if m < 1:
            raise ParameterError("m must be at least 1")
        self.t_horizon, self.m = float(t_horizon), int(m)
        self.dt = self.t_horizon / self.m

    def __len__(self):
        return self.m

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self.dt] * len(range(*i.indices(self.m)))
        if not -self.m <= i < self.m:
            raise IndexError(i)
        return self.dt

    def __eq__(self, other):
        if isinstance(other, UniformSteps):
            return (self.t_horizon, self.m) == (other.t_horizon, other.m)
        return NotImplemented

    def __hash__(self):
        return hash((self.t_horizon, self.m))

    def __repr__(self):
        return f"UniformSteps(t_horizon={self.t_horizon!r}, m={self.m})"


@dataclass(frozen=True)
class BoundInputs:
    n: int
    f: int
    lipschitz: float
    h_x: float
    h_a: float
    sigma_x2: float
    sigma_a2: float
    eps_x2: float
    eps_a2: float
    t_horizon: float
    steps: tuple = field(default=())

    def __post_init__(self):
        if isinstance(self.steps, UniformSteps):
            steps = self.steps
            if steps.t_horizon != self.t_horizon:
                raise ParameterError("steps must sum to t_horizon")
        else:
            steps = tuple(float(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        values = {k: getattr(self, k) for k in ("n", "f", "h_x", "h_a", "sigma_x2", "sigma_a2",
                                                 "eps_x2", "eps_a2", "t_horizon")}
        for name, v in values.items():
            if not np.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and non-negative, got {v}")
        if not self.lipschitz >= 1:
            raise ParameterError(f"lipschitz must be >= 1, got {self.lipschitz}")
        if not steps:
            raise ParameterError("steps must be non-empty")
        distinct = {steps.dt} if isinstance(steps, UniformSteps) else steps
        if any(s <= 0 or s > 1 + _STEP_TOL for s in distinct):
            raise ParameterError("each step must lie in (0, 1]")
        if not isinstance(steps, UniformSteps) and \
                abs(math.fsum(steps) - self.t_horizon) > _STEP_TOL * max(1.0, self.t_horizon):
            raise ParameterError("steps must sum to t_horizon")

    @classmethod
    def uniform(cls, *, t_horizon: float, m: int, **kw) -> "BoundInputs":
        return cls(t_horizon=t_horizon, steps=UniformSteps(t_horizon, m), **kw)

    @property
    def s2(self) -> float:
        if isinstance(self.steps, UniformSteps):
            return uniform_sums(self.t_horizon, self.steps.m)[0]
        return math.fsum(s * s for s in self.steps)

    @property
    def s3(self) -> float:
        if isinstance(self.steps, UniformSteps):
            return uniform_sums(self.t_horizon, self.steps.m)[1]
        return math.fsum(s ** 3 for s in self.steps)


@dataclass(frozen=True)
class BoundBreakdown:
    prior_term: float
    score_term: float
    discretization_terms: tuple
    total: float

    @classmethod
    def build(cls, prior, score, disc) -> "BoundBreakdown":
        disc = tuple((label, float(v)) for label, v in disc)
        total = math.fsum([prior, score] + [v for _, v in disc])
        return cls(float(prior), float(score), disc, total)

    def as_row(self, paradigm: str, scheme: str) -> list:
        return [paradigm, scheme, self.prior_term, self.score_term,
                self.discretization_terms[0][1], self.discretization_terms[1][1], self.total]


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ParameterError(f"unknown scheme {scheme!r}")


def uniform_sums(t_horizon: float, m: int) -> tuple[float, float]:
    """(S2, S3) of the uniform grid in closed form: T^2/M and T^3/M^2."""
    return t_horizon ** 2 / m, t_horizon ** 3 / m ** 2


def bound_feature_fixed_structure(inp: BoundInputs, scheme=EXPONENTIAL_INTEGRATOR) -> BoundBreakdown:
    """Feature generation on a frozen structure A* with ||A*||^2 <= sigma_A^2."""
    _check_scheme(scheme)
    nf, L, s2, s3 = inp.n * inp.f, inp.lipschitz, inp.s2, inp.s3
    prior = (inp.h_x + nf) * math.exp(-inp.t_horizon)
    score = inp.t_horizon * inp.eps_x2
    if scheme == EXPONENTIAL_INTEGRATOR:
        disc = [("s2", nf * L * inp.sigma_a2 * L * s2), ("s3", nf * L * s3)]
    else:
        disc = [("s2", (nf * L * L * inp.sigma_a2 + nf) * s2), ("s3", (nf * L + inp.h_x) * s3)]
    return BoundBreakdown.build(prior, score, disc)


def bound_structure_fixed_features(inp: BoundInputs, scheme=EXPONENTIAL_INTEGRATOR) -> BoundBreakdown:
    """Structure generation on frozen features X* with ||X*||^2 <= sigma_X^2."""
    _check_scheme(scheme)
    n2, L, s2, s3 = inp.n * inp.n, inp.lipschitz, inp.s2, inp.s3
    prior = (inp.h_a + n2) * math.exp(-inp.t_horizon)
    score = inp.t_horizon * inp.eps_a2
    if scheme == EXPONENTIAL_INTEGRATOR:
        disc = [("s2", n2 * L * inp.sigma_x2 * L * s2), ("s3", n2 * L * s3)]
    else:
        disc = [("s2", (n2 * L * L * inp.sigma_x2 + n2) * s2), ("s3", (n2 * L + inp.h_a) * s3)]
    return BoundBreakdown.build(prior, score, disc)


def _joint_channel(h, dim, eps2, inp, scheme):
    L, s2, s3 = inp.lipschitz, inp.s2, inp.s3
    prior = (h + dim) * math.exp(-inp.t_horizon)
    score = inp.t_horizon * eps2
    if scheme == EXPONENTIAL_INTEGRATOR:
        disc = [("s2", dim * L * L * s2), ("s3", dim * L * s3)]
    else:
        disc = [("s2", (dim * L + dim) * s2), ("s3", (dim * L + h) * s3)]
    return BoundBreakdown.build(prior, score, disc)


def bound_joint(inp: BoundInputs, scheme=EXPONENTIAL_INTEGRATOR) -> tuple[BoundBreakdown, BoundBreakdown]:
    """(feature-channel bound, structure-channel bound) when both channels diffuse."""
    _check_scheme(scheme)
    bx = _joint_channel(inp.h_x, inp.n * inp.f, inp.eps_x2, inp, scheme)
    ba = _joint_channel(inp.h_a, inp.n * inp.n, inp.eps_a2, inp, scheme)
    return bx, ba


def _ei_joint_disc(dim, L, t, m):
    s2, s3 = uniform_sums(t, m)
    return dim * L * L * s2 + dim * L * s3


def select_hyperparams(inp: BoundInputs) -> tuple[float, int]:
    """Horizon T and uniform step count M that keep every joint EI term at the score-error level.

    T is the smallest horizon whose prior terms are at most eps^2 (but at least
    1). The order-level choice M = ceil(max(NF L^2 T^2 / eps_X^2, N^2 L^2 T^2 /
    eps_A^2)) is raised, when needed, so that steps do not exceed 1 and the
    full uniform discretization term (including its T^3/M^2 part) stays within
    eps^2 for both channels.
    """
    if not (inp.eps_x2 > 0 and inp.eps_a2 > 0):
        raise ParameterError("score errors must be positive to select hyperparameters")
    nf, n2, L = inp.n * inp.f, inp.n * inp.n, inp.lipschitz
    t = max(math.log((inp.h_x + nf) / inp.eps_x2), math.log((inp.h_a + n2) / inp.eps_a2), 1.0)
    # guard against the last ulp of rounding in exp(-log(.))
    while (inp.h_x + nf) * math.exp(-t) > inp.eps_x2 or (inp.h_a + n2) * math.exp(-t) > inp.eps_a2:
        t = math.nextafter(t, math.inf)
    m = max(math.ceil(max(nf * L * L * t * t / inp.eps_x2, n2 * L * L * t * t / inp.eps_a2)), math.ceil(t), 1)
    for dim, eps2 in ((nf, inp.eps_x2), (n2, inp.eps_a2)):
        if dim == 0:
            continue
        # eps2 M^2 - c L T^2 M - c T^3 >= 0 with c = dim * L
        c = dim * L
        root = (c * L * t * t + math.sqrt((c * L * t * t) ** 2 + 4 * eps2 * c * t ** 3)) / (2 * eps2)
        m = max(m, math.ceil(root))
        while _ei_joint_disc(dim, L, t, m) > eps2:
            m += 1
    return t, int(m)


def estimate_lipschitz(score_fn, dim_or_shape, n_probe: int = 64, seed=0, scale: float = 1.0,
                       radius: float = 1e-3) -> float:
    """Empirical lower estimate of the Lipschitz constant of ``score_fn``.

    Draws ``n_probe`` base points u ~ N(0, scale^2) and nearby points v = u +
    radius * w for a random unit direction w, returning the largest ratio
    ||s(u) - s(v)|| / ||u - v||.
    """
    if n_probe < 1:
        raise ParameterError("n_probe must be at least 1")
    shape = (dim_or_shape,) if np.isscalar(dim_or_shape) else tuple(dim_or_shape)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_probe):
        u = scale * rng.standard_normal(shape)
        w = rng.standard_normal(shape)
        w *= radius / np.linalg.norm(w)
        v = u + w
        num = np.linalg.norm(np.asarray(score_fn(u)) - np.asarray(score_fn(v)))
        best = max(best, float(num / np.linalg.norm(u - v)))
    return best


def clamp_lipschitz(value: float) -> float:
    return max(1.0, float(value))


def write_bounds_csv(rows, path) -> None:
    """BoundBreakdown table, one row per (paradigm, scheme)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOUND_COLUMNS)
        for row in rows:
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def all_bound_rows(inp: BoundInputs) -> list:
    rows = []
    for scheme in (EXPONENTIAL_INTEGRATOR, EULER_MARUYAMA):
        rows.append(bound_feature_fixed_structure(inp, scheme).as_row("feature_only", scheme))
        rows.append(bound_structure_fixed_features(inp, scheme).as_row("structure_only", scheme))
        bx, ba = bound_joint(inp, scheme)
        rows.append(bx.as_row("joint_x", scheme))
        rows.append(ba.as_row("joint_a", scheme))
    return rows
