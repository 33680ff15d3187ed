"""JSON persistence for graphs and generated ensembles.

Floats are written in Python's shortest round-trip form, so every value
reads back bit-for-bit; 0/1 adjacencies are written as integers.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParameterError
from .graphs import Graph


def _matrix_out(m):
    m = np.asarray(m, dtype=float)
    if np.all((m == 0) | (m == 1)):
        return [int(v) for v in m.ravel()]
    return [float(v) for v in m.ravel()]


def graph_to_dict(g: Graph, generator=None, seed=None) -> dict:
    return {
        "n": g.n,
        "f": g.f,
        "x": [float(v) for v in g.x.ravel()],
        "a": _matrix_out(g.a),
        "generator": generator,
        "seed": seed,
    }


def graph_from_dict(d: dict) -> Graph:
    try:
        n, f = int(d["n"]), int(d["f"])
        x = np.asarray(d["x"], dtype=float).reshape(n, f)
        a = np.asarray(d["a"], dtype=float).reshape(n, n)
    except (KeyError, ValueError, TypeError) as exc:
        raise ParameterError(f"malformed graph record: {exc}") from exc
    return Graph(x, a)


def save_graph(g: Graph, path, generator=None, seed=None) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(g, generator, seed), fh)


def load_graph(path) -> Graph:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))


def save_ensemble(xs, as_, path, metadata=None) -> None:
    """Write a stack of graphs with free-form metadata (generator, sampler settings, seeds)."""
    xs, as_ = np.asarray(xs, dtype=float), np.asarray(as_, dtype=float)
    if xs.ndim != 3 or as_.ndim != 3 or len(xs) != len(as_):
        raise ParameterError("ensemble needs matching (B, N, F) and (B, N, N) stacks")
    payload = {
        "metadata": metadata or {},
        "graphs": [graph_to_dict(Graph(x, a)) for x, a in zip(xs, as_)],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_ensemble(path):
    """Returns (xs, as_, metadata)."""
    with open(path) as fh:
        payload = json.load(fh)
    graphs = [graph_from_dict(d) for d in payload.get("graphs", [])]
    if not graphs:
        raise ParameterError(f"{path} holds no graphs")
    xs = np.stack([g.x for g in graphs])
    as_ = np.stack([g.a for g in graphs])
    return xs, as_, payload.get("metadata", {})
