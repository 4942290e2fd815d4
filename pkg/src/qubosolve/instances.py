"""Deterministic constructions of named benchmark graphs.

The COLOR-set queen and Mycielski graphs are fully determined by their
definitions, so they can be rebuilt rather than downloaded. Node numbering
follows the DIMACS files: queen square (r, c) is node r*cols + c.
"""

from __future__ import annotations

from itertools import combinations

from .graph import Graph


def queen_graph(rows: int, cols: int | None = None) -> Graph:
    """Squares of a rows x cols board, adjacent when a queen attacks between them."""
    cols = rows if cols is None else cols
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    edges = []
    for (a, (r1, c1)), (b, (r2, c2)) in combinations(enumerate(cells), 2):
        if r1 == r2 or c1 == c2 or abs(r1 - r2) == abs(c1 - c2):
            edges.append((a, b))
    return Graph.from_edges(rows * cols, edges)


def mycielski_graph(order: int) -> Graph:
    """DIMACS ``myciel<order>``: Mycielski's construction iterated from a single edge.

    ``myciel1`` is K2 and every step adds one to the chromatic number, so
    ``myciel<k>`` has chromatic number k+1 and no triangles.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    n, edges = 2, [(0, 1)]
    for _ in range(order - 1):
        # Shadow u_i = n + i copies the neighborhood of v_i; apex w = 2n joins all shadows.
        new = list(edges)
        for u, v in edges:
            new += [(u, n + v), (v, n + u)]
        new += [(n + i, 2 * n) for i in range(n)]
        n, edges = 2 * n + 1, new
    return Graph.from_edges(n, edges)


def toy_graph() -> Graph:
    """Connected bipartite graph with 10 nodes and 12 edges (maximum cut 12).

    A 10-cycle with two odd-distance chords; both chords join opposite sides of
    the cycle's bipartition, so every edge can be cut.
    """
    ring = [(i, (i + 1) % 10) for i in range(10)]
    return Graph.from_edges(10, ring + [(0, 3), (4, 7)])


COLOR_INSTANCES = {
    # name: (constructor, known chromatic number)
    "queen5-5": (lambda: queen_graph(5), 5),
    "queen6-6": (lambda: queen_graph(6), 7),
    "queen7-7": (lambda: queen_graph(7), 7),
    "queen8-8": (lambda: queen_graph(8), 9),
    "queen9-9": (lambda: queen_graph(9), 10),
    "queen8-12": (lambda: queen_graph(8, 12), 12),
    "myciel5": (lambda: mycielski_graph(5), 6),
    "myciel6": (lambda: mycielski_graph(6), 7),
}
