"""Synthetic graphs, node features and structural statistics.

Graphs are dense numpy matrices throughout. Every generator takes an explicit
seed so that the same (config, seed) pair always produces the same output.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GenerationError, ParameterError

REGULAR_MAX_RETRIES = 1000


@dataclass(frozen=True)
class Graph:
    """A node-feature matrix ``x`` (N x F) paired with a structure matrix ``a`` (N x N)."""

    x: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        a = np.array(self.a, dtype=float)
        if x.ndim != 2 or a.ndim != 2:
            raise ParameterError("x and a must be 2-D matrices")
        n = x.shape[0]
        if a.shape != (n, n):
            raise ParameterError(f"a must be {n}x{n} to match x with {n} rows, got {a.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(a))):
            raise ParameterError("graph entries must be finite")
        x.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def f(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class GeneratorConfig:
    """Recipe for one synthetic dataset.

    ``kind`` is ``"regular"`` (uses ``d``) or ``"barabasi_albert"`` (uses ``m``
    and ``m0``).
    """

    kind: str = "regular"
    n: int = 20
    feature_dim: int = 50
    feature_mean: float = 1.0
    feature_var: float = 2.0
    seed: int = 0
    d: int = 4
    m: int = 2
    m0: int = 2

    def __post_init__(self):
        if self.kind == "regular":
            _check_regular(self.n, self.d)
        elif self.kind == "barabasi_albert":
            _check_ba(self.n, self.m, self.m0)
        else:
            raise ParameterError(f"unknown generator kind {self.kind!r}")
        if self.feature_var <= 0:
            raise ParameterError("feature_var must be positive")
        if self.feature_dim < 1:
            raise ParameterError("feature_dim must be at least 1")

    def adjacency(self, seed: int) -> np.ndarray:
        if self.kind == "regular":
            return gen_regular(self.n, self.d, seed)
        return gen_barabasi_albert(self.n, self.m, self.m0, seed)

    def features(self, seed: int) -> np.ndarray:
        return sample_features(self.n, self.feature_dim, self.feature_mean, self.feature_var, seed)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_regular(n, d):
    if n < 1 or d < 0 or d >= n or (n * d) % 2:
        raise ParameterError(f"no simple {d}-regular graph on {n} nodes")


def _check_ba(n, m, m0):
    if not (1 <= m <= m0 < n):
        raise ParameterError(f"Barabasi-Albert needs 1 <= m <= m0 < n, got m={m}, m0={m0}, n={n}")


def _edges_to_adjacency(n, edges):
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    return a


def _pairing_attempt(n, d, rng):
    # One pass of the pairing model; unsuitable pairs (loops, repeats) are
    # put back and re-paired until no suitable pair can remain.
    edges = set()
    stubs = [node for node in range(n) for _ in range(d)]
    while stubs:
        leftover = defaultdict(int)
        rng.shuffle(stubs)
        it = iter(stubs)
        for u, v in zip(it, it):
            if u > v:
                u, v = v, u
            if u != v and (u, v) not in edges:
                edges.add((u, v))
            else:
                leftover[u] += 1
                leftover[v] += 1
        if leftover and not _has_suitable_pair(edges, leftover):
            return None
        stubs = [node for node, count in sorted(leftover.items()) for _ in range(count)]
    return edges


def _has_suitable_pair(edges, leftover):
    nodes = sorted(leftover)
    for i, u in enumerate(nodes):
        for v in nodes[i + 1:]:
            if (u, v) not in edges:
                return True
    return False


def gen_regular(n: int, d: int, seed: int) -> np.ndarray:
    """Random simple ``d``-regular graph on ``n`` nodes via the pairing model."""
    _check_regular(n, d)
    if d == 0:
        return np.zeros((n, n))
    rng = np.random.default_rng(seed)
    for _ in range(REGULAR_MAX_RETRIES):
        edges = _pairing_attempt(n, d, rng)
        if edges is not None:
            return _edges_to_adjacency(n, edges)
    raise GenerationError(f"pairing model failed {REGULAR_MAX_RETRIES} times for n={n}, d={d}")


def ring_edge_count(m0: int) -> int:
    """Edges in the connected ring used to seed a Barabasi-Albert graph."""
    return m0 if m0 >= 3 else m0 - 1


def gen_barabasi_albert(n: int, m: int, m0: int, seed: int) -> np.ndarray:
    """Preferential-attachment graph grown from a ring on ``m0`` nodes.

    Each of the ``n - m0`` new nodes attaches to ``m`` distinct existing nodes
    drawn without replacement with probability proportional to degree.
    """
    _check_ba(n, m, m0)
    rng = np.random.default_rng(seed)
    a = np.zeros((n, n))
    if m0 == 2:
        a[0, 1] = a[1, 0] = 1.0
    elif m0 >= 3:
        for i in range(m0):
            j = (i + 1) % m0
            a[i, j] = a[j, i] = 1.0
    degree = a.sum(axis=1)
    for new in range(m0, n):
        weights = degree[:new]
        total = weights.sum()
        if total == 0:
            p = np.full(new, 1.0 / new)
        else:
            p = weights / total
        targets = rng.choice(new, size=m, replace=False, p=p)
        for t in targets:
            a[new, t] = a[t, new] = 1.0
        degree[targets] += 1
        degree[new] = m
    return a


def sample_features(n: int, f: int, mean: float, var: float, seed: int) -> np.ndarray:
    if var <= 0:
        raise ParameterError("feature variance must be positive")
    rng = np.random.default_rng(seed)
    return rng.normal(mean, np.sqrt(var), size=(n, f))


def spectral_norm(m: np.ndarray, tol: float = 1e-6, max_iter: int = 500) -> float:
    """Largest singular value by power iteration on ``m.T @ m``.

    Stops once successive estimates agree to ``tol`` relative, or after
    ``max_iter`` iterations. The start vector is drawn from a fixed seed so the
    result is deterministic.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0 or not np.any(m):
        return 0.0
    gram = m.T @ m
    v = np.random.default_rng(0).normal(size=gram.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = gram @ v
        new = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0:
            break
        v = w / norm_w
        if estimate > 0 and abs(new - estimate) <= tol * new:
            estimate = new
            break
        estimate = new
    # one last Rayleigh quotient on the converged direction
    estimate = max(estimate, float(v @ gram @ v))
    return float(np.sqrt(max(estimate, 0.0)))


def normalize_features(x: np.ndarray) -> np.ndarray:
    """Scale ``x`` so its spectral norm is at most one; small inputs pass through."""
    x = np.asarray(x, dtype=float)
    scale = spectral_norm(x)
    if scale <= 1.0:
        return x.copy()
    return x / scale


def max_degree(a: np.ndarray) -> int:
    a = np.asarray(a)
    if a.size and not np.all((a == 0) | (a == 1)):
        raise DomainError("max_degree needs a 0/1 adjacency matrix")
    if a.size == 0:
        return 0
    return int(a.sum(axis=1).max())


def second_moment(ensemble) -> float:
    """Mean squared Frobenius norm over an ensemble of equally shaped matrices."""
    mats = [np.asarray(m, dtype=float) for m in ensemble]
    if not mats:
        raise ParameterError("second_moment needs a non-empty ensemble")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ParameterError("ensemble matrices must share one shape")
    return float(np.mean([np.sum(m * m) for m in mats]))


def edge_count(a: np.ndarray) -> int:
    return int(np.triu(np.asarray(a)).sum())


def is_connected(a: np.ndarray) -> bool:
    n = a.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        u = frontier.pop()
        for v in np.flatnonzero(a[u]):
            if v not in seen:
                seen.add(int(v))
                frontier.append(int(v))
    return len(seen) == n
