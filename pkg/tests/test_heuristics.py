import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qubosolve.graph import Graph, gen_erdos_renyi
from qubosolve.heuristics import (EoConfig, TooLargeError, brute_force_chromatic, brute_force_maxcut,
                                  brute_force_mis, greedy_mis, tau_eo_maxcut)
from qubosolve.instances import mycielski_graph, toy_graph
from qubosolve.qubo import Assignment, evaluate


def path(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle(n):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete(n):
    return Graph.from_edges(n, list(itertools.combinations(range(n), 2)))


class TestEo:
    def test_p2(self):
        r = tau_eo_maxcut(path(2), EoConfig(update_budget=10, restarts=1, seed=0))
        assert r.best_cut == 1

    def test_toy_optimum(self):
        r = tau_eo_maxcut(toy_graph(), EoConfig(update_budget=2000, restarts=2, seed=1))
        assert r.best_cut == 12

    def test_trace_monotone_and_consistent(self):
        g = gen_erdos_renyi(60, p=0.1, seed=2)
        r = tau_eo_maxcut(g, EoConfig(update_budget=3000, restarts=3, seed=2))
        cuts = [c for _, c in r.trace]
        steps = [s for s, _ in r.trace]
        assert all(b > a for a, b in zip(cuts, cuts[1:]))
        assert all(b > a for a, b in zip(steps, steps[1:]))
        assert cuts[-1] == r.best_cut == max(r.restart_cuts)
        assert evaluate(r.assignment, g).cut_size == r.best_cut

    def test_isolated_nodes(self):
        g = Graph.from_edges(6, [(0, 1), (1, 2)])
        assert tau_eo_maxcut(g, EoConfig(update_budget=500, restarts=1, seed=0)).best_cut == 2

    def test_seeded(self):
        g = gen_erdos_renyi(40, p=0.15, seed=3)
        a = tau_eo_maxcut(g, EoConfig(update_budget=1000, restarts=2, seed=9))
        b = tau_eo_maxcut(g, EoConfig(update_budget=1000, restarts=2, seed=9))
        assert a.trace == b.trace

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EoConfig(tau=1.0)
        with pytest.raises(ValueError):
            EoConfig(update_budget=0)

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError):
            tau_eo_maxcut(Graph.from_edges(0, []))


class TestGreedy:
    def test_edgeless(self):
        assert greedy_mis(Graph.from_edges(5, [])).x.sum() == 5

    def test_star(self):
        star = Graph.from_edges(5, [(0, i) for i in range(1, 5)])
        assert greedy_mis(star).x.tolist() == [0, 1, 1, 1, 1]

    def test_path(self):
        assert greedy_mis(path(4)).x.sum() == 2

    def test_tie_smallest_index(self):
        assert greedy_mis(complete(4)).x.tolist() == [1, 0, 0, 0]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 60), st.floats(0, 0.6), st.integers(0, 2**32 - 1))
    def test_independent_and_bound(self, n, p, seed):
        g = gen_erdos_renyi(n, p=p, seed=seed)
        m = evaluate(greedy_mis(g), g)
        assert m.feasible
        assert m.set_size >= n / (g.degree.max(initial=0) + 1)


class TestBruteForce:
    def test_small_values(self):
        assert brute_force_maxcut(complete(3)) == 2
        assert brute_force_mis(cycle(5)) == 2
        assert brute_force_chromatic(complete(4)) == 4

    def test_toy(self):
        g = toy_graph()
        assert brute_force_maxcut(g) == 12
        assert brute_force_chromatic(g) == 2

    def test_mycielski_chromatic(self):
        assert brute_force_chromatic(mycielski_graph(3)) == 4

    def test_chromatic_limit(self):
        assert brute_force_chromatic(complete(5), k_max=3) is None

    def test_caps(self):
        with pytest.raises(TooLargeError):
            brute_force_maxcut(Graph.from_edges(25, []))
        with pytest.raises(TooLargeError):
            brute_force_mis(Graph.from_edges(31, []))
        with pytest.raises(TooLargeError):
            brute_force_chromatic(Graph.from_edges(21, []))
        assert brute_force_mis(Graph.from_edges(40, []), max_nodes=40) == 40

    def test_maxcut_agrees_with_enumeration(self):
        g = gen_erdos_renyi(9, p=0.5, seed=5)
        best = max(evaluate(Assignment("maxcut", x=np.array(b)), g).cut_size
                   for b in itertools.product([0, 1], repeat=9))
        assert brute_force_maxcut(g) == best

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 14), st.floats(0, 0.7), st.integers(0, 2**32 - 1))
    def test_mis_agrees_with_networkx(self, n, p, seed):
        nx = pytest.importorskip("networkx")
        g = gen_erdos_renyi(n, p=p, seed=seed)
        comp = nx.complement(g.to_networkx())
        exact = max(len(c) for c in nx.find_cliques(comp))
        assert brute_force_mis(g) == exact

    def test_chromatic_agrees_with_enumeration(self):
        g = gen_erdos_renyi(6, p=0.6, seed=1)
        chi = min(k for k in range(1, 7) for c in itertools.product(range(k), repeat=6)
                  if evaluate(Assignment("coloring", colors=np.array(c)), g).violations == 0)
        assert brute_force_chromatic(g) == chi
