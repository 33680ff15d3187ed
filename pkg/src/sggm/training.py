"""Denoising score matching for the two partial-score networks.

The regression target for a channel is the conditional score of the OU
transition, -(Y_t - alpha_t Y_0) / sigma2_t. Training sweeps a learning-rate
grid with Adam and keeps the model with the lowest validation loss.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion import FEATURE_ONLY, JOINT, STRUCTURE_ONLY, TimeGrid, active_channels, alpha, diffuse, sigma2
from .errors import ParameterError, TrainingError
from .score_net import FEATURE, STRUCTURE, ScoreNetParams, init_params, score_backward, score_forward

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (0.1, 0.01, 0.001, 0.0001)
HISTORY_COLUMNS = ("step", "lr", "loss_x", "loss_a", "wall_ms")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 16
    lr_grid: tuple = DEFAULT_LR_GRID
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t_min: float = 0.01
    t_max: float = 10.0
    seed: int = 0
    hidden: int = 32
    embed_dim: int = 16
    val_repeats: int = 4

    def __post_init__(self):
        object.__setattr__(self, "lr_grid", tuple(float(v) for v in self.lr_grid))
        if not 0 < self.t_min < self.t_max:
            raise ParameterError("need 0 < t_min < t_max")
        if self.batch < 1:
            raise ParameterError("batch must be at least 1")
        if not self.lr_grid:
            raise ParameterError("lr_grid must be non-empty")
        if self.steps < 0:
            raise ParameterError("steps must be non-negative")


@dataclass(frozen=True)
class ScoreErrorBudget:
    """Grid-weighted mean squared score errors, with Monte Carlo standard errors."""

    eps_x2: float = 0.0
    eps_a2: float = 0.0
    stderr_x: float = 0.0
    stderr_a: float = 0.0

    def __post_init__(self):
        if self.eps_x2 < 0 or self.eps_a2 < 0:
            raise ParameterError("score errors are non-negative")


def dsm_target(y0, yt, t, t_min: float = 0.01):
    """Conditional score -(Y_t - alpha_t Y_0) / sigma2_t of one channel."""
    t = np.asarray(t, dtype=float)
    if np.any(t < t_min):
        raise ParameterError(f"t below t_min={t_min}; the target variance blows up")
    yt = np.asarray(yt, dtype=float)
    shape = t.shape + (1,) * (yt.ndim - t.ndim)
    return -(yt - alpha(t).reshape(shape) * np.asarray(y0, dtype=float)) / sigma2(t).reshape(shape)


def dsm_target_feature(x0, xt, t, t_min: float = 0.01):
    return dsm_target(x0, xt, t, t_min)


def dsm_target_structure(a0, at, t, t_min: float = 0.01):
    return dsm_target(a0, at, t, t_min)


def _draw(x0, a0, paradigm, t, rng):
    diff_x, diff_a = active_channels(paradigm)
    xt = diffuse(x0, t, rng) if diff_x else x0
    at = diffuse(a0, t, rng) if diff_a else a0
    return xt, at


def _loss_and_grads(theta, phi, x0, a0, paradigm, t, rng, t_min, want_grads):
    diff_x, diff_a = active_channels(paradigm)
    xt, at = _draw(x0, a0, paradigm, t, rng)
    b = x0.shape[0]
    loss_x = loss_a = float("nan")
    grad_x = grad_a = None
    if diff_x and theta is not None:
        resid = score_forward(theta, xt, at, t) - dsm_target(x0, xt, t, t_min)
        loss_x = float(np.sum(resid * resid) / b)
        if want_grads:
            grad_x = score_backward(theta, xt, at, t, 2.0 * resid / b)
    if diff_a and phi is not None:
        resid = score_forward(phi, xt, at, t) - dsm_target(a0, at, t, t_min)
        loss_a = float(np.sum(resid * resid) / b)
        if want_grads:
            grad_a = score_backward(phi, xt, at, t, 2.0 * resid / b)
    return loss_x, loss_a, grad_x, grad_a


def dsm_loss(theta, phi, x0, a0, *, paradigm=JOINT, t_min=0.01, t_max=10.0, seed=0, t=None):
    """Monte Carlo DSM loss of both heads on one batch.

    One time per item is drawn from U(t_min, t_max) unless ``t`` is given; both
    heads are scored on the same (t, G_0, G_t) draws. Each loss is the mean over
    items of the squared Frobenius error. A head that is None, or whose channel
    is frozen by the paradigm, reports NaN.
    """
    x0 = np.asarray(x0, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    if x0.ndim == 2:
        x0, a0 = x0[None], a0[None]
    if x0.shape[0] == 0:
        raise ParameterError("empty batch")
    rng = np.random.default_rng(seed)
    if t is None:
        t = rng.uniform(t_min, t_max, size=x0.shape[0])
    else:
        t = np.broadcast_to(np.asarray(t, dtype=float), (x0.shape[0],))
    loss_x, loss_a, _, _ = _loss_and_grads(theta, phi, x0, a0, paradigm, t, rng, t_min, False)
    return loss_x, loss_a


class Adam:
    """Adam over the tensors of one ScoreNetParams."""

    def __init__(self, params: ScoreNetParams, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors().items()}

    def step(self, params: ScoreNetParams, grads: ScoreNetParams) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, value in params.tensors().items():
            g = getattr(grads, name)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            setattr(params, name, value - update)


@dataclass
class TrainResult:
    theta: ScoreNetParams | None
    phi: ScoreNetParams | None
    history: list = field(default_factory=list)
    best_lr: float | None = None
    val_losses: dict = field(default_factory=dict)


def _fresh_models(paradigm, f, config: TrainConfig):
    diff_x, diff_a = active_channels(paradigm)
    theta = init_params(FEATURE, f, config.hidden, f, seed=[config.seed, 1]) if diff_x else None
    phi = init_params(STRUCTURE, f, config.hidden, config.embed_dim, seed=[config.seed, 2]) if diff_a else None
    return theta, phi


def validation_loss(theta, phi, x_val, a_val, paradigm, config: TrainConfig) -> float:
    """Validation DSM loss summed over active heads, averaged over a fixed set of draws."""
    total = 0.0
    for r in range(config.val_repeats):
        lx, la = dsm_loss(theta, phi, x_val, a_val, paradigm=paradigm, t_min=config.t_min,
                          t_max=config.t_max, seed=[config.seed, 7, r])
        total += np.nansum([lx, la])
    return float(total / config.val_repeats)


def _train_one(x_tr, a_tr, paradigm, config, lr, lr_index):
    theta, phi = _fresh_models(paradigm, x_tr.shape[-1], config)
    opt_x = Adam(theta, lr, config.beta1, config.beta2, config.eps) if theta is not None else None
    opt_a = Adam(phi, lr, config.beta1, config.beta2, config.eps) if phi is not None else None
    rng = np.random.default_rng([config.seed, 3, lr_index])
    history = []
    start = time.perf_counter()
    for step in range(config.steps):
        idx = rng.integers(0, x_tr.shape[0], size=config.batch)
        t = rng.uniform(config.t_min, config.t_max, size=config.batch)
        loss_x, loss_a, gx, ga = _loss_and_grads(theta, phi, x_tr[idx], a_tr[idx], paradigm, t, rng,
                                                 config.t_min, True)
        active = [v for v, g in ((loss_x, gx), (loss_a, ga)) if g is not None]
        if not all(np.isfinite(active)):
            raise TrainingError(f"non-finite loss at step {step} with lr={lr}", step=step, lr=lr)
        if gx is not None:
            opt_x.step(theta, gx)
        if ga is not None:
            opt_a.step(phi, ga)
        history.append((step, lr, loss_x, loss_a, (time.perf_counter() - start) * 1e3))
    return theta, phi, history


def train(x_train, a_train, paradigm, config: TrainConfig, x_val=None, a_val=None) -> TrainResult:
    """Fit the active heads for each learning rate and keep the best on validation.

    ``x_train`` is (B, N, F) and ``a_train`` is (B, N, N); for a frozen channel
    pass the fixed matrix repeated along the batch axis. Without a validation
    set the training data doubles as validation.
    """
    x_train = np.asarray(x_train, dtype=float)
    a_train = np.asarray(a_train, dtype=float)
    if x_val is None:
        x_val, a_val = x_train, a_train
    if config.steps == 0:
        theta, phi = _fresh_models(paradigm, x_train.shape[-1], config)
        return TrainResult(theta, phi, [], config.lr_grid[0], {})

    best = None
    result = TrainResult(None, None)
    for i, lr in enumerate(config.lr_grid):
        theta, phi, history = _train_one(x_train, a_train, paradigm, config, lr, i)
        result.history.extend(history)
        val = validation_loss(theta, phi, x_val, a_val, paradigm, config)
        result.val_losses[lr] = val
        log.info("lr=%g validation loss %.6g", lr, val)
        if best is None or val < best:
            best = val
            result.theta, result.phi, result.best_lr = theta, phi, lr
    return result


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for step, lr, lx, la, ms in history:
            w.writerow([step, repr(lr), repr(lx), repr(la), f"{ms:.3f}"])


def estimate_score_error(sample_fn, grid: TimeGrid, n_mc: int, seed=0, *,
                         feature=None, structure=None) -> ScoreErrorBudget:
    """Monte Carlo estimate of the grid-weighted squared score error.

    ``sample_fn(t, n, rng)`` returns ``n`` draws (x_t, a_t) of the diffused graph
    at time t. ``feature`` and ``structure`` are optional ``(model_fn,
    oracle_fn)`` pairs, each mapping (x_t, a_t, t) to a score array. Each of
    the n_mc replicates sums sum_i (dt_i / T) ||oracle - model||^2 over grid
    points t_1..t_M; the estimate is the replicate mean.
    """
    if n_mc < 1:
        raise ParameterError("n_mc must be at least 1")
    rng = np.random.default_rng(seed)
    weights = grid.deltas / grid.horizon
    totals = {"x": np.zeros(n_mc), "a": np.zeros(n_mc)}
    for w, t in zip(weights, grid.points[1:]):
        xt, at = sample_fn(t, n_mc, rng)
        for key, pair in (("x", feature), ("a", structure)):
            if pair is None:
                continue
            model_fn, oracle_fn = pair
            diff = oracle_fn(xt, at, t) - model_fn(xt, at, t)
            totals[key] += w * np.sum(diff.reshape(n_mc, -1) ** 2, axis=1)

    def stats(v):
        if n_mc == 1:
            return float(v[0]), 0.0
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n_mc))

    ex, sx = stats(totals["x"]) if feature is not None else (0.0, 0.0)
    ea, sa = stats(totals["a"]) if structure is not None else (0.0, 0.0)
    return ScoreErrorBudget(ex, ea, sx, sa)


__all__ = [
    "Adam",
    "FEATURE_ONLY",
    "JOINT",
    "STRUCTURE_ONLY",
    "ScoreErrorBudget",
    "TrainConfig",
    "TrainResult",
    "dsm_loss",
    "dsm_target",
    "dsm_target_feature",
    "dsm_target_structure",
    "estimate_score_error",
    "train",
    "validation_loss",
    "write_history_csv",
]
