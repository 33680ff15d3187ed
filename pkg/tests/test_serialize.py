import json

import numpy as np
import pytest

from sggm.errors import ParameterError
from sggm.graphs import Graph, gen_regular
from sggm.serialize import graph_from_dict, graph_to_dict, load_ensemble, load_graph, save_ensemble, save_graph


class TestGraphRecord:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        g = Graph(rng.normal(size=(4, 3)) * 1e-7, rng.normal(size=(4, 4)))
        save_graph(g, tmp_path / "g.json", generator={"kind": "regular"}, seed=3)
        h = load_graph(tmp_path / "g.json")
        np.testing.assert_array_equal(h.x, g.x)
        np.testing.assert_array_equal(h.a, g.a)

    def test_binary_adjacency_as_ints(self):
        d = graph_to_dict(Graph(np.zeros((4, 1)), gen_regular(4, 2, 0)), seed=1)
        assert all(isinstance(v, int) for v in d["a"])
        assert d["n"] == 4 and d["f"] == 1 and d["seed"] == 1

    def test_malformed(self):
        with pytest.raises(ParameterError):
            graph_from_dict({"n": 2, "f": 2, "x": [0.0] * 3, "a": [0] * 4})
        with pytest.raises(ParameterError):
            graph_from_dict({"n": 2})


class TestEnsemble:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        xs, as_ = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 5, 5))
        meta = {"scheme": "euler_maruyama", "T": 10.0, "M": 200, "seed": [0, 20]}
        save_ensemble(xs, as_, tmp_path / "e.json", meta)
        xs2, as2, meta2 = load_ensemble(tmp_path / "e.json")
        np.testing.assert_array_equal(xs2, xs)
        np.testing.assert_array_equal(as2, as_)
        assert meta2 == meta

    def test_byte_stable(self, tmp_path):
        xs, as_ = np.ones((2, 3, 1)), np.zeros((2, 3, 3))
        save_ensemble(xs, as_, tmp_path / "a.json", {"b": 1, "a": 2})
        save_ensemble(xs, as_, tmp_path / "b.json", {"a": 2, "b": 1})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_shape_checks(self, tmp_path):
        with pytest.raises(ParameterError):
            save_ensemble(np.zeros((2, 3, 1)), np.zeros((3, 3, 3)), tmp_path / "e.json")

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.json").write_text(json.dumps({"graphs": []}))
        with pytest.raises(ParameterError):
            load_ensemble(tmp_path / "e.json")
