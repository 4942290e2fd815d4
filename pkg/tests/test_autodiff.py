import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qubosolve.autodiff import (NondeterminismError, Tape, TapeConsumedError, _padded_neighbors,
                                finite_diff_check, finite_diff_report)
from qubosolve.graph import Graph, gen_erdos_renyi


def check(build, params, tol=1e-6):
    """Finite-difference check of a scalar built by ``build(tape, vars) -> Var``."""
    def fn(p):
        tape = Tape()
        v = {k: tape.param(k, x) for k, x in p.items()}
        loss = build(tape, v)
        return float(loss.value), tape.backward(loss)
    return finite_diff_check(fn, params) < tol


def weighted_sum(tape, x, seed=0):
    w = np.random.default_rng(seed).normal(size=x.value.shape)
    return tape.scalar(x, lambda v: (float(np.sum(w * v)), w))


G = gen_erdos_renyi(9, p=0.35, seed=3)
rng = np.random.default_rng(0)


class TestOps:
    def test_affine(self):
        assert check(lambda t, v: weighted_sum(t, t.affine(v["h"], v["w"], v["b"])),
                     {"h": rng.normal(size=(5, 3)), "w": rng.normal(size=(3, 4)), "b": rng.normal(size=4)})

    def test_affine_shape_error(self):
        t = Tape()
        with pytest.raises(ValueError):
            t.affine(t.const(np.zeros((2, 3))), t.param("w", np.zeros((2, 2))))

    def test_relu(self):
        # keep inputs away from the kink
        x = rng.normal(size=(6, 3))
        x[np.abs(x) < 0.1] = 0.5
        assert check(lambda t, v: weighted_sum(t, t.relu(v["x"])), {"x": x})

    def test_sigmoid_and_softmax(self):
        x = rng.normal(size=(6, 4))
        assert check(lambda t, v: weighted_sum(t, t.sigmoid(v["x"])), {"x": x})
        assert check(lambda t, v: weighted_sum(t, t.softmax_rows(v["x"])), {"x": x})

    def test_softmax_rows_sum_to_one(self):
        t = Tape()
        s = t.softmax_rows(t.const(np.array([[1000.0, 0.0], [-5.0, -5.0]])))
        assert np.allclose(s.value.sum(axis=1), 1.0) and np.isfinite(s.value).all()

    def test_batchnorm(self):
        assert check(lambda t, v: weighted_sum(t, t.batchnorm(v["x"], v["g"], v["b"])),
                     {"x": rng.normal(size=(7, 3)), "g": rng.normal(size=3), "b": rng.normal(size=3)})

    def test_batchnorm_output_statistics(self):
        t = Tape()
        out = t.batchnorm(t.const(rng.normal(3, 2, size=(200, 4))), t.const(np.ones(4)), t.const(np.zeros(4)))
        assert np.allclose(out.value.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(out.value.var(axis=0), 1, atol=1e-4)

    def test_concat_add(self):
        def build(t, v):
            return weighted_sum(t, t.add(t.concat_cols(v["a"], v["b"]), v["c"]))
        assert check(build, {"a": rng.normal(size=(4, 2)), "b": rng.normal(size=(4, 3)),
                             "c": rng.normal(size=(4, 5))})

    def test_neighbor_mean(self):
        assert check(lambda t, v: weighted_sum(t, t.neighbor_mean(G, v["h"])), {"h": rng.normal(size=(9, 3))})

    def test_neighbor_mean_values(self):
        g = Graph.from_edges(4, [(0, 1), (0, 2)])
        t = Tape()
        out = t.neighbor_mean(g, t.const(np.array([[1.0], [2.0], [4.0], [8.0]])))
        assert out.value.ravel().tolist() == [3.0, 1.0, 1.0, 0.0]

    def test_gcn_aggregate(self):
        assert check(lambda t, v: weighted_sum(t, t.gcn_aggregate(G, v["h"])), {"h": rng.normal(size=(9, 3))})

    def test_neighbor_pool(self):
        assert check(lambda t, v: weighted_sum(t, t.neighbor_pool(G, v["h"], v["w"], v["b"])),
                     {"h": rng.normal(size=(9, 3)), "w": rng.normal(size=(3, 3)), "b": rng.normal(size=3)})

    @pytest.mark.parametrize("graph", [
        Graph.from_edges(10, [(0, i) for i in range(1, 10)]),  # star: too ragged to pad
        Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)]),  # cycle: padded table
    ])
    def test_segment_max_first_maximizer(self, graph):
        t = Tape()
        values = [1.0, 5.0, 5.0, 0.0, 5.0, 2.0, 5.0, 0.0, 1.0, 3.0][:graph.n_nodes]
        z = t.param("z", np.array(values)[:, None])
        out = t.segment_max(graph, z)
        assert (_padded_neighbors(graph) is None) == (graph.n_nodes == 10)
        grads = t.backward(t.sum(out))
        expect = np.zeros(graph.n_nodes)
        for i in range(graph.n_nodes):
            nb = graph.neighbors(i)
            vals = z.value[nb, 0]
            assert out.value[i, 0] == vals.max()
            expect[nb[np.argmax(vals)]] += 1
        assert np.array_equal(grads["z"][:, 0], expect)

    def test_segment_max_isolated_is_zero(self):
        g = Graph.from_edges(3, [(0, 1)])
        t = Tape()
        out = t.segment_max(g, t.const(-np.ones((3, 2))))
        assert np.array_equal(out.value[2], [0, 0])

    def test_dropout(self):
        t = Tape()
        x = t.param("x", np.ones((1000, 4)))
        out = t.dropout(x, 0.5, np.random.default_rng(0))
        vals = np.unique(out.value)
        assert set(vals.tolist()) <= {0.0, 2.0}
        assert 0.45 < (out.value == 0).mean() < 0.55
        g = t.backward(weighted_sum(t, out))
        assert np.all(g["x"][out.value == 0] == 0)

    def test_dropout_off(self):
        t = Tape()
        x = t.const(np.ones((3, 3)))
        assert t.dropout(x, 0.0, None) is x
        with pytest.raises(ValueError):
            t.dropout(x, 0.3, None)


class TestTape:
    def test_backward_once(self):
        t = Tape()
        x = t.param("x", np.ones(3))
        loss = t.sum(x)
        t.backward(loss)
        with pytest.raises(TapeConsumedError):
            t.backward(loss)

    def test_unused_param_gets_zeros(self):
        t = Tape()
        x = t.param("x", np.ones(3))
        t.param("y", np.ones((2, 2)))
        grads = t.backward(t.sum(x))
        assert np.array_equal(grads["y"], np.zeros((2, 2)))

    def test_non_scalar_rejected(self):
        t = Tape()
        with pytest.raises(ValueError):
            t.backward(t.param("x", np.ones(3)))

    def test_float32_preserved(self):
        t = Tape()
        x = t.param("x", np.ones((4, 2), dtype=np.float32))
        w = t.param("w", np.ones((2, 2), dtype=np.float32))
        grads = t.backward(t.sum(t.affine(x, w)))
        assert grads["w"].dtype == np.float32

    def test_first_nonfinite(self):
        t = Tape()
        x = t.const(np.array([[1.0, np.inf]]))
        t.relu(t.add(x, x))
        assert t.first_nonfinite() == "op #0 (add)"

    def test_gradient_accumulates_over_reuse(self):
        t = Tape()
        x = t.param("x", np.array([[2.0]]))
        grads = t.backward(t.sum(t.add(x, x)))
        assert grads["x"][0, 0] == 2.0


class TestFiniteDiff:
    def test_detects_wrong_gradient(self):
        def fn(p):
            return float(np.sum(p["x"] ** 2)), {"x": p["x"]}  # should be 2x
        assert finite_diff_check(fn, {"x": np.array([1.0, -2.0])}) > 0.4

    def test_nondeterminism_rejected(self):
        state = np.random.default_rng(0)

        def fn(p):
            return float(np.sum(p["x"]) + state.random()), {"x": np.ones_like(p["x"])}
        with pytest.raises(NondeterminismError):
            finite_diff_report(fn, {"x": np.ones(2)})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 12))
def test_composite_layer_property(seed, n):
    r = np.random.default_rng(seed)
    g = gen_erdos_renyi(n, p=0.4, seed=seed)

    def build(t, v):
        h = t.concat_cols(v["h"], t.neighbor_mean(g, v["h"]))
        z = t.batchnorm(t.affine(h, v["w"], v["b"]), v["gm"], v["bt"])
        return weighted_sum(t, t.sigmoid(z), seed)

    params = {"h": r.normal(size=(n, 2)), "w": r.normal(size=(4, 3)), "b": r.normal(size=3),
              "gm": r.normal(size=3), "bt": r.normal(size=3)}

    def fn(p):
        t = Tape()
        v = {k: t.param(k, x) for k, x in p.items()}
        loss = build(t, v)
        return float(loss.value), t.backward(loss)
    assert finite_diff_check(fn, params) < 1e-4
