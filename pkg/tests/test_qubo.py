import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qubosolve.graph import Graph, disjoint_union, gen_erdos_renyi
from qubosolve.instances import queen_graph, toy_graph
from qubosolve.qubo import (Assignment, DomainError, build_coloring, build_maxcut, build_mis, discretize,
                            evaluate, loss_and_grad, mis_penalty_at, mis_repair, objective, p_value,
                            relaxed_loss)

K3 = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
P2 = Graph.from_edges(2, [(0, 1)])


def onehot(colors, k):
    return Assignment("coloring", colors=np.asarray(colors)).one_hot(k)


class TestBuilders:
    def test_maxcut_k3(self):
        assert objective(build_maxcut(K3), [1, 0, 0]) == -2

    def test_maxcut_zero(self):
        g = gen_erdos_renyi(12, p=0.4, seed=0)
        assert objective(build_maxcut(g), np.zeros(12)) == 0

    def test_maxcut_p2_uncut(self):
        assert objective(build_maxcut(P2), [1, 1]) == 0

    def test_maxcut_coefficients(self):
        q = build_maxcut(K3)
        assert np.all(q.quad_coef == 2) and np.all(q.linear == -2)

    def test_coloring_proper(self):
        assert objective(build_coloring(K3, 3), onehot([0, 1, 2], 3).ravel()) == 0

    def test_coloring_conflict(self):
        assert objective(build_coloring(P2, 2), onehot([0, 0], 2).ravel()) == 1

    def test_coloring_unassigned_node(self):
        x = onehot([0, 1, 2], 3)
        x[2] = 0
        assert objective(build_coloring(K3, 3), x.ravel()) == 1

    def test_mis_values(self):
        q = build_mis(P2, 2.0)
        assert objective(q, [0, 0]) == 0
        assert objective(q, [1, 0]) == -1
        assert objective(q, [1, 1]) == 0

    def test_mis_bad_penalty(self):
        with pytest.raises(ValueError):
            build_mis(P2, 0.0)

    def test_objective_length(self):
        with pytest.raises(ValueError):
            objective(build_maxcut(K3), [1, 0])


class TestRelaxedLoss:
    def test_maxcut_half(self):
        g = gen_erdos_renyi(20, p=0.3, seed=1)
        assert relaxed_loss("maxcut", g, np.full(20, 0.5)) == pytest.approx(-g.n_edges / 2)

    def test_coloring_queen_proper(self):
        g = queen_graph(5)
        # (2r + c) mod 5 is a conflict-free 5-coloring of the 5x5 queen graph
        colors = [(2 * r + c) % 5 for r in range(5) for c in range(5)]
        assert evaluate(Assignment("coloring", colors=np.array(colors)), g).violations == 0
        assert relaxed_loss("coloring", g, onehot(colors, 5)) == 0

    def test_mis_p2(self):
        assert relaxed_loss("mis", P2, [1.0, 1.0], penalty=2.0) == 0

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            relaxed_loss("maxcut", P2, [1.2, 0.0])
        with pytest.raises(DomainError):
            relaxed_loss("coloring", P2, np.array([[0.5, 0.4], [0.5, 0.5]]))
        with pytest.raises(DomainError):
            relaxed_loss("maxcut", P2, [0.1, 0.2, 0.3])

    @pytest.mark.parametrize("kind", ["maxcut", "mis", "coloring"])
    def test_gradient_matches_finite_difference(self, kind):
        g = gen_erdos_renyi(12, p=0.4, seed=2)
        rng = np.random.default_rng(0)
        p = rng.random((12, 3)) if kind == "coloring" else rng.random(12)
        _, grad = loss_and_grad(kind, g, p, penalty=1.7)
        h = 1e-6
        for idx in [(0,), (5,), (11,)] if p.ndim == 1 else [(0, 0), (4, 2), (11, 1)]:
            a, b = p.copy(), p.copy()
            a[idx] += h
            b[idx] -= h
            num = (loss_and_grad(kind, g, a, 1.7)[0] - loss_and_grad(kind, g, b, 1.7)[0]) / (2 * h)
            assert grad[idx] == pytest.approx(num, rel=1e-6, abs=1e-8)

    def test_union_is_sum_of_copies(self):
        g = gen_erdos_renyi(15, p=0.3, seed=3)
        rng = np.random.default_rng(1)
        blocks = [rng.random(15) for _ in range(3)]
        u = disjoint_union(g, 3)
        total = relaxed_loss("mis", u, np.concatenate(blocks), penalty=1.5)
        assert total == pytest.approx(sum(relaxed_loss("mis", g, b, penalty=1.5) for b in blocks))


class TestDiscreteAgreement:
    def test_maxcut_exhaustive(self):
        g = gen_erdos_renyi(10, p=0.4, seed=4)
        q = build_maxcut(g)
        for bits in itertools.product([0, 1], repeat=10):
            x = np.array(bits, dtype=np.int8)
            assert objective(q, x) == -evaluate(Assignment("maxcut", x=x), g).cut_size

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 5.0))
    def test_mis_objective_identity(self, seed, penalty):
        rng = np.random.default_rng(seed)
        g = gen_erdos_renyi(15, p=0.3, seed=seed)
        x = rng.integers(0, 2, 15).astype(np.int8)
        m = evaluate(Assignment("mis", x=x), g, penalty=penalty)
        assert objective(build_mis(g, penalty), x) == pytest.approx(-m.set_size + penalty * m.violations)
        assert m.objective == pytest.approx(-m.set_size + penalty * m.violations)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_coloring_violations_equal_conflict_term(self, seed, k):
        rng = np.random.default_rng(seed)
        g = gen_erdos_renyi(15, p=0.3, seed=seed)
        colors = rng.integers(0, k, 15)
        v = evaluate(Assignment("coloring", colors=colors), g).violations
        assert relaxed_loss("coloring", g, onehot(colors, k)) == v
        assert objective(build_coloring(g, k), onehot(colors, k).ravel()) == v


class TestDiscretize:
    def test_threshold(self):
        assert discretize(np.array([0.9, 0.1]), "maxcut").x.tolist() == [1, 0]

    def test_strict_tie(self):
        assert discretize(np.array([0.5]), "mis").x.tolist() == [0]

    def test_coloring_argmax(self):
        assert discretize(np.array([[0.2, 0.5, 0.3]]), "coloring").colors.tolist() == [1]

    def test_coloring_tie_smallest(self):
        assert discretize(np.array([[0.4, 0.4, 0.2]]), "coloring").colors.tolist() == [0]

    def test_json_round_trip(self):
        for a in (Assignment("maxcut", x=np.array([1, 0, 1], dtype=np.int8)),
                  Assignment("coloring", colors=np.array([2, 0, 1]))):
            b = Assignment.from_json(a.to_json())
            assert b.kind == a.kind and b.n == a.n


class TestEvaluate:
    def test_k3(self):
        assert evaluate(Assignment("maxcut", x=np.array([1, 0, 0])), K3).cut_size == 2

    def test_toy_bipartition(self):
        x = (np.arange(10) % 2).astype(np.int8)
        assert evaluate(Assignment("maxcut", x=x), toy_graph()).cut_size == 12

    def test_mis_feasibility(self):
        m = evaluate(Assignment("mis", x=np.array([1, 1, 0])), K3)
        assert not m.feasible and m.violations == 1 and m.set_size == 2

    def test_p_value_attached_for_regular(self):
        m = evaluate(Assignment("maxcut", x=np.array([1, 0, 0])), K3, degree=2)
        assert m.p_value == pytest.approx(p_value(2, 3, 2))


class TestPValue:
    def test_zero_point(self):
        assert p_value(500 * 5 / 4, 500, 5) == pytest.approx(0.0)

    def test_hand_value(self):
        assert p_value(140, 100, 4) == pytest.approx(0.4)

    def test_d5_scale(self):
        # sqrt(4/5) * (1038/500 - 1.25)
        assert p_value(1038, 500, 5) == pytest.approx(math.sqrt(0.8) * 0.826, abs=1e-12)
        assert p_value(1038, 500, 5) == pytest.approx(0.7388, abs=5e-4)

    def test_monotone(self):
        vals = [p_value(z, 500, 5) for z in range(900, 1100)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            p_value(1, 0, 3)


class TestPenaltySchedule:
    def test_endpoints(self):
        assert mis_penalty_at(0, 1000) == 0.01
        assert mis_penalty_at(999, 1000) == 2.0

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 10**6))
    def test_endpoints_exact_for_any_total(self, total):
        # start + (end - start) * 1 can round to 1.9999999999999998
        assert mis_penalty_at(0, total) == 0.01
        assert mis_penalty_at(total - 1, total) == 2.0

    def test_midpoint(self):
        assert mis_penalty_at(1, 3) == 1.005
        assert mis_penalty_at(50_000, 100_001) == 1.005

    def test_degenerate(self):
        assert mis_penalty_at(0, 1) == 2.0

    def test_monotone(self):
        vals = [mis_penalty_at(t, 50) for t in range(50)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestRepair:
    def test_drops_lower_probability(self):
        x = mis_repair([1, 1, 0], [0.6, 0.9, 0.1], Graph.from_edges(3, [(0, 1)]))
        assert x.tolist() == [0, 1, 0]

    def test_tie_drops_higher_index(self):
        x = mis_repair([1, 1], [0.7, 0.7], P2)
        assert x.tolist() == [1, 0]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_always_independent_subset(self, seed):
        rng = np.random.default_rng(seed)
        g = gen_erdos_renyi(25, p=0.3, seed=seed)
        x0 = rng.integers(0, 2, 25)
        x = mis_repair(x0, rng.random(25), g)
        assert evaluate(Assignment("mis", x=x), g).feasible
        assert np.all(x <= x0)
