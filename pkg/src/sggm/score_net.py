"""Partial-score networks with hand-written forward and backward passes.

Both heads share one trunk: the node features are extended with two
time-conditioning columns (alpha_t, sigma2_t), passed through a two-layer ReLU
MLP, then through one unnormalized graph convolution ``A_t @ h @ W``.

* feature head: returns the N x F convolution output directly.
* structure head: treats the N x D convolution output Z as node embeddings and
  returns ``sym(c * Z Z^T + b * A_t)``.

Every function accepts either a single graph (2-D arrays) or a batch with a
leading axis; ``t`` is a scalar or one time per batch item.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .diffusion import alpha, sigma2
from .errors import ParameterError

FEATURE = "feature"
STRUCTURE = "structure"

_TENSORS = ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "gcn_w", "struct_scale", "struct_bias")


@dataclass
class ScoreNetParams:
    head: str
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    gcn_w: np.ndarray
    struct_scale: np.ndarray
    struct_bias: np.ndarray

    def __post_init__(self):
        if self.head not in (FEATURE, STRUCTURE):
            raise ParameterError(f"unknown head {self.head!r}")
        for name in _TENSORS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        f2, h = self.mlp_w1.shape
        if self.mlp_b1.shape != (h,) or self.mlp_w2.shape != (h, h) or self.mlp_b2.shape != (h,):
            raise ParameterError("inconsistent MLP shapes")
        if self.gcn_w.shape[0] != h:
            raise ParameterError("gcn_w must have one row per hidden unit")
        if self.struct_scale.shape != () or self.struct_bias.shape != ():
            raise ParameterError("struct_scale and struct_bias are scalars")

    @property
    def f(self) -> int:
        return self.mlp_w1.shape[0] - 2

    @property
    def hidden(self) -> int:
        return self.mlp_w1.shape[1]

    @property
    def d(self) -> int:
        return self.gcn_w.shape[1]

    def tensors(self) -> dict:
        names = _TENSORS if self.head == STRUCTURE else _TENSORS[:5]
        return {name: getattr(self, name) for name in names}

    def copy(self) -> "ScoreNetParams":
        return ScoreNetParams(self.head, *(getattr(self, n).copy() for n in _TENSORS))

    def zeros_like(self) -> "ScoreNetParams":
        return ScoreNetParams(self.head, *(np.zeros_like(getattr(self, n)) for n in _TENSORS))

    def n_params(self) -> int:
        return int(sum(v.size for v in self.tensors().values()))


def param_count(head: str, f: int, hidden: int, d: int) -> int:
    n = (f + 2) * hidden + hidden + hidden * hidden + hidden + hidden * d
    return n + 2 if head == STRUCTURE else n


def init_params(head: str, f: int, hidden: int = 32, d: int | None = None, seed=0) -> ScoreNetParams:
    """He-style uniform init on +-sqrt(6 / fan_in); biases start at zero."""
    if d is None:
        d = f
    rng = np.random.default_rng(seed)

    def he(fan_in, shape):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ScoreNetParams(
        head=head,
        mlp_w1=he(f + 2, (f + 2, hidden)),
        mlp_b1=np.zeros(hidden),
        mlp_w2=he(hidden, (hidden, hidden)),
        mlp_b2=np.zeros(hidden),
        gcn_w=he(hidden, (hidden, d)),
        struct_scale=np.array(0.0),
        struct_bias=np.array(0.0),
    )


def _as_batch(x, a, t):
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    single = x.ndim == 2
    if single:
        x, a = x[None], a[None]
    if x.ndim != 3 or a.ndim != 3 or a.shape[1:] != (x.shape[1], x.shape[1]) or a.shape[0] != x.shape[0]:
        raise ParameterError(f"shape mismatch: x {x.shape}, a {a.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    return x, a, t, single


def _trunk(params, x, a, t):
    b, n, f = x.shape
    if f != params.f:
        raise ParameterError(f"network expects {params.f} feature columns, got {f}")
    cols = np.empty((b, n, 2))
    cols[..., 0] = alpha(t)[:, None]
    cols[..., 1] = sigma2(t)[:, None]
    u = np.concatenate([x, cols], axis=-1)
    pre1 = u @ params.mlp_w1 + params.mlp_b1
    h1 = np.maximum(pre1, 0.0)
    pre2 = h1 @ params.mlp_w2 + params.mlp_b2
    h2 = np.maximum(pre2, 0.0)
    agg = a @ h2
    z = agg @ params.gcn_w
    return z, (u, pre1, h1, pre2, h2, agg)


def feature_score_forward(params: ScoreNetParams, x, a, t) -> np.ndarray:
    x, a, t, single = _as_batch(x, a, t)
    out, _ = _trunk(params, x, a, t)
    return out[0] if single else out


def _structure_head(params, z, a):
    s = params.struct_scale * (z @ np.swapaxes(z, -1, -2)) + params.struct_bias * a
    return 0.5 * (s + np.swapaxes(s, -1, -2))


def structure_score_forward(params: ScoreNetParams, x, a, t) -> np.ndarray:
    x, a, t, single = _as_batch(x, a, t)
    z, _ = _trunk(params, x, a, t)
    out = _structure_head(params, z, a)
    return out[0] if single else out


def score_forward(params: ScoreNetParams, x, a, t) -> np.ndarray:
    if params.head == FEATURE:
        return feature_score_forward(params, x, a, t)
    return structure_score_forward(params, x, a, t)


def score_backward(params: ScoreNetParams, x, a, t, upstream) -> ScoreNetParams:
    """Gradient of <upstream, output> with respect to every parameter.

    For a batch, the inner product is summed over batch items.
    """
    x, a, t, single = _as_batch(x, a, t)
    g = np.asarray(upstream, dtype=float)
    if single:
        g = g[None]
    z, (u, pre1, h1, pre2, h2, agg) = _trunk(params, x, a, t)
    grads = params.zeros_like()

    if params.head == FEATURE:
        if g.shape != z.shape:
            raise ParameterError(f"upstream shape {g.shape} != output shape {z.shape}")
        dz = g
    else:
        if g.shape != a.shape:
            raise ParameterError(f"upstream shape {g.shape} != output shape {a.shape}")
        gs = 0.5 * (g + np.swapaxes(g, -1, -2))
        grads.struct_scale = np.array(np.sum(gs * (z @ np.swapaxes(z, -1, -2))))
        grads.struct_bias = np.array(np.sum(gs * a))
        dz = 2.0 * params.struct_scale * (gs @ z)

    grads.gcn_w = np.einsum("bnh,bnd->hd", agg, dz)
    dh2 = np.swapaxes(a, -1, -2) @ (dz @ params.gcn_w.T)
    dpre2 = dh2 * (pre2 > 0)
    grads.mlp_w2 = np.einsum("bnh,bnk->hk", h1, dpre2)
    grads.mlp_b2 = dpre2.sum(axis=(0, 1))
    dpre1 = (dpre2 @ params.mlp_w2.T) * (pre1 > 0)
    grads.mlp_w1 = np.einsum("bni,bnh->ih", u, dpre1)
    grads.mlp_b1 = dpre1.sum(axis=(0, 1))
    return grads


def antisymmetric_score(a, t) -> np.ndarray:
    """Exact score of the antisymmetric part of a diffused symmetric adjacency.

    Clean adjacencies are symmetric, so (A_t - A_t^T)/2 is pure forward noise
    and its score is -(A_t - A_t^T) / (2 sigma_t^2). A symmetric structure head
    can only represent the symmetric part of the score; this supplies the rest.
    """
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    if t.ndim:
        t = t.reshape(t.shape + (1,) * (a.ndim - t.ndim))
    return -0.5 * (a - np.swapaxes(a, -1, -2)) / sigma2(t)


def sampling_score_fns(theta: ScoreNetParams | None, phi: ScoreNetParams | None):
    """Score callables ``(x, a, t)`` for the sampler; None for absent heads.

    The structure callable adds the closed-form antisymmetric part so the
    reverse dynamics stay confined near symmetric matrices.
    """
    fx = (lambda x, a, t: feature_score_forward(theta, x, a, t)) if theta is not None else None
    fa = ((lambda x, a, t: structure_score_forward(phi, x, a, t) + antisymmetric_score(a, t))
          if phi is not None else None)
    return fx, fa


def analytic_gaussian_feature_score(mu, s2, x_t, t):
    """Exact score of the diffused law when every entry of Y_0 is N(mu, s2) independently."""
    if np.any(np.asarray(s2) < 0):
        raise ParameterError("s2 must be non-negative")
    x_t = np.asarray(x_t, dtype=float)
    t = np.asarray(t, dtype=float)
    if t.ndim:
        t = t.reshape(t.shape + (1,) * (x_t.ndim - t.ndim))
    al = alpha(t)
    var = al * al * s2 + sigma2(t)
    return -(x_t - al * np.asarray(mu)) / var


def save_checkpoint(params: ScoreNetParams, path) -> None:
    payload = {
        "head": params.head,
        "f": params.f,
        "hidden": params.hidden,
        "d": params.d,
        "tensors": [
            {"name": name, "shape": list(v.shape), "values": [float(e) for e in v.ravel()]}
            for name, v in params.tensors().items()
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> ScoreNetParams:
    with open(path) as fh:
        payload = json.load(fh)
    values = {
        item["name"]: np.asarray(item["values"], dtype=float).reshape(item["shape"])
        for item in payload["tensors"]
    }
    values.setdefault("struct_scale", np.array(0.0))
    values.setdefault("struct_bias", np.array(0.0))
    params = ScoreNetParams(head=payload["head"], **values)
    if (params.f, params.hidden, params.d) != (payload["f"], payload["hidden"], payload["d"]):
        raise ParameterError("checkpoint header does not match tensor shapes")
    return params


__all__ = [
    "FEATURE",
    "STRUCTURE",
    "ScoreNetParams",
    "analytic_gaussian_feature_score",
    "feature_score_forward",
    "init_params",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "score_backward",
    "score_forward",
    "structure_score_forward",
]
