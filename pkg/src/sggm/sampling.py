"""Reverse-time generation with Euler-Maruyama or exponential-integrator steps.

In reverse time the active channels follow dY = (Y/2 + score) dt + dW. A step
of size ``dt`` under each scheme is

    exponential integrator: e^{dt/2} Y + 2 (e^{dt/2} - 1) score + sqrt(e^{dt} - 1) xi
    Euler-Maruyama:         Y + (Y/2 + score) dt + sqrt(dt) xi

A frozen channel (feature-only or structure-only generation) is carried along
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import JOINT, PARADIGMS, TimeGrid, active_channels
from .errors import ParameterError, SamplingError
from .graphs import Graph

EULER_MARUYAMA = "euler_maruyama"
EXPONENTIAL_INTEGRATOR = "exponential_integrator"
SCHEMES = (EULER_MARUYAMA, EXPONENTIAL_INTEGRATOR)


def ei_update(y, score, dt, xi):
    half = np.exp(0.5 * dt)
    return half * y + 2.0 * np.expm1(0.5 * dt) * score + np.sqrt(np.expm1(dt)) * xi


def em_update(y, score, dt, xi):
    return y + (0.5 * y + score) * dt + np.sqrt(dt) * xi


_UPDATES = {EXPONENTIAL_INTEGRATOR: ei_update, EULER_MARUYAMA: em_update}


def _step(update, state, scores, dt, rng, paradigm, noise, suppress_noise):
    if not dt > 0:
        raise ParameterError("dt must be positive")
    diff_x, diff_a = active_channels(paradigm)
    x, a = (state.x, state.a) if isinstance(state, Graph) else state
    sx, sa = scores
    if noise is None:
        if suppress_noise:
            noise = (np.zeros_like(x), np.zeros_like(a))
        else:
            rng = np.random.default_rng(rng)
            noise = (rng.standard_normal(np.shape(x)) if diff_x else None,
                     rng.standard_normal(np.shape(a)) if diff_a else None)
    new_x = update(x, sx, dt, noise[0]) if diff_x else x
    new_a = update(a, sa, dt, noise[1]) if diff_a else a
    if isinstance(state, Graph):
        return Graph(new_x, new_a)
    return new_x, new_a


def ei_step(state, scores, dt, rng=None, *, paradigm=JOINT, noise=None, suppress_noise=False):
    """One exponential-integrator step.

    ``state`` is a Graph or an (x, a) array pair, ``scores`` the matching pair
    of score arrays. ``noise`` supplies the standard normal draws explicitly
    (used to share noise between schemes); ``suppress_noise`` sets them to zero.
    """
    return _step(ei_update, state, scores, dt, rng, paradigm, noise, suppress_noise)


def em_step(state, scores, dt, rng=None, *, paradigm=JOINT, noise=None, suppress_noise=False):
    """One Euler-Maruyama step; arguments as for :func:`ei_step`."""
    return _step(em_update, state, scores, dt, rng, paradigm, noise, suppress_noise)


@dataclass(frozen=True)
class SamplerConfig:
    """How to run the reverse process.

    ``fixed_x`` / ``fixed_a`` hold X* / A* for the structure-only and
    feature-only paradigms.
    """

    n: int
    f: int
    grid: TimeGrid
    scheme: str = EXPONENTIAL_INTEGRATOR
    paradigm: str = JOINT
    t_stop: float = 0.01
    fixed_x: np.ndarray | None = None
    fixed_a: np.ndarray | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if self.paradigm not in PARADIGMS:
            raise ParameterError(f"unknown paradigm {self.paradigm!r}")
        if not 0 <= self.t_stop < self.grid.horizon:
            raise ParameterError("need 0 <= t_stop < T")
        diff_x, diff_a = active_channels(self.paradigm)
        if not diff_x:
            if self.fixed_x is None or np.shape(self.fixed_x) != (self.n, self.f):
                raise ParameterError("structure-only generation needs fixed_x of shape (n, f)")
        if not diff_a:
            if self.fixed_a is None or np.shape(self.fixed_a) != (self.n, self.n):
                raise ParameterError("feature-only generation needs fixed_a of shape (n, n)")

    def metadata(self) -> dict:
        return {
            "scheme": self.scheme,
            "paradigm": self.paradigm,
            "T": self.grid.horizon,
            "M": self.grid.steps,
            "t_stop": self.t_stop,
        }


def reverse_schedule(grid: TimeGrid, t_stop: float):
    """(process time at step start, step size) pairs for the reverse sweep.

    Steps follow the grid backwards from T. The sweep ends at ``t_stop``; a
    grid step that would cross below it is shortened to land on it exactly.
    """
    pts = grid.points
    out = []
    for k in range(grid.steps, 0, -1):
        t, nxt = pts[k], pts[k - 1]
        if t <= t_stop:
            break
        out.append((t, t - max(nxt, t_stop)))
    return out


def generate_arrays(score_fns, config: SamplerConfig, n_samples: int, seed=0):
    """Batched reverse process; returns arrays x (B, N, F) and a (B, N, N).

    ``score_fns`` is a (feature_fn, structure_fn) pair of callables mapping
    batched (x, a, t) to scores; the function of a frozen channel may be None.
    """
    diff_x, diff_a = active_channels(config.paradigm)
    feature_fn, structure_fn = score_fns
    if (diff_x and feature_fn is None) or (diff_a and structure_fn is None):
        raise ParameterError("missing score function for an active channel")
    update = _UPDATES[config.scheme]
    rng = np.random.default_rng(seed)
    n, f, b = config.n, config.f, n_samples
    x = rng.standard_normal((b, n, f)) if diff_x else np.broadcast_to(np.asarray(config.fixed_x, float), (b, n, f))
    a = rng.standard_normal((b, n, n)) if diff_a else np.broadcast_to(np.asarray(config.fixed_a, float), (b, n, n))
    for k, (t, dt) in enumerate(reverse_schedule(config.grid, config.t_stop)):
        sx = feature_fn(x, a, t) if diff_x else None
        sa = structure_fn(x, a, t) if diff_a else None
        new_x = update(x, sx, dt, rng.standard_normal(x.shape)) if diff_x else x
        new_a = update(a, sa, dt, rng.standard_normal(a.shape)) if diff_a else a
        x, a = new_x, new_a
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(a))):
            raise SamplingError(f"non-finite state after reverse step {k}", step=k)
    return np.array(x), np.array(a)


def generate(score_fns, config: SamplerConfig, n_samples: int, seed=0) -> list[Graph]:
    xs, as_ = generate_arrays(score_fns, config, n_samples, seed)
    return [Graph(x, a) for x, a in zip(xs, as_)]
