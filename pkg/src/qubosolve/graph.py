"""Undirected sparse graphs, instance loaders, random generators and node statistics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Base class for invalid graph input."""


class ParseError(GraphError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class BoundsError(GraphError):
    pass


class ValidationError(GraphError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable simple undirected graph.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``, sorted
    lexicographically. Neighbor lists are stored in CSR form (``indptr``,
    ``indices``), each list sorted ascending.
    """

    n_nodes: int
    edges: np.ndarray
    weights: np.ndarray
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, n_nodes, edges, weights=None) -> "Graph":
        n_nodes = int(n_nodes)
        if n_nodes < 0:
            raise ValidationError("negative node count")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            w = np.ones(len(e))
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if len(w) != len(e):
                raise ValidationError("weights and edges differ in length")
        if len(e) and (e.min() < 0 or e.max() >= n_nodes):
            raise BoundsError(f"edge endpoint outside [0, {n_nodes})")
        if np.any(e[:, 0] == e[:, 1]):
            bad = e[e[:, 0] == e[:, 1]][0]
            raise ValidationError(f"self-loop at node {bad[0]}")
        e = np.sort(e, axis=1)
        order = np.lexsort((e[:, 1], e[:, 0]))
        e, w = e[order], w[order]
        if len(e) > 1:
            dup = np.all(e[1:] == e[:-1], axis=1)
            if dup.any():
                u, v = e[1:][dup][0]
                raise ValidationError(f"duplicate edge ({u}, {v})")

        heads = np.concatenate([e[:, 0], e[:, 1]])
        tails = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((tails, heads))
        indices = tails[order]
        counts = np.bincount(heads, minlength=n_nodes)
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        for arr in (e, w, indptr, indices):
            arr.flags.writeable = False
        return cls(n_nodes, e, w, indptr, indices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degree(self) -> np.ndarray:
        d = np.diff(self.indptr)
        d.flags.writeable = False
        return d

    @cached_property
    def cache(self) -> dict:
        """Scratch space for derived operators (aggregation matrices, etc.)."""
        return {}

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Unweighted symmetric adjacency matrix (A_ij = 1 on every edge)."""
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_nodes,) * 2)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.n_nodes == other.n_nodes
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.weights, other.weights))

    __hash__ = object.__hash__

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def to_networkx(self):
        import networkx as nx
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g

    def __repr__(self) -> str:
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def _lines(text):
    if not isinstance(text, str):
        text = text.read()
    return text.splitlines()


def load_edge_list(text, format_flag: str = "gset") -> Graph:
    """Parse a Gset file (header ``n m``, then 1-based ``u v w``) or a plain 0-based ``u v`` list.

    Accepts a string or a text stream. Plain format infers ``n`` from the largest index.
    """
    if format_flag not in ("gset", "plain"):
        raise ValueError(f"unknown edge-list format {format_flag!r}")
    lines = _lines(text)
    edges, weights = [], []
    n = m = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith(("#", "%")):
            continue
        parts = line.split()
        try:
            nums = [float(p) if k == 2 else int(p) for k, p in enumerate(parts)]
        except ValueError:
            raise ParseError(f"non-numeric token in {line!r}", lineno) from None
        if format_flag == "gset" and n is None:
            if len(nums) != 2:
                raise ParseError("expected header 'n m'", lineno)
            n, m = nums
            continue
        if len(nums) not in (2, 3):
            raise ParseError(f"expected 'u v [w]', got {line!r}", lineno)
        u, v = nums[0], nums[1]
        if format_flag == "gset":
            if not (1 <= u <= n and 1 <= v <= n):
                raise BoundsError(f"line {lineno}: endpoint outside [1, {n}]")
            u, v = u - 1, v - 1
        elif u < 0 or v < 0:
            raise BoundsError(f"line {lineno}: negative node index")
        if u == v:
            raise ValidationError(f"line {lineno}: self-loop at node {u}")
        edges.append((u, v))
        weights.append(nums[2] if len(nums) == 3 else 1.0)
    if format_flag == "gset":
        if n is None:
            raise ParseError("empty input, missing header")
        if len(edges) != m:
            raise ParseError(f"header declares {m} edges, found {len(edges)}")
    else:
        n = max((max(e) for e in edges), default=-1) + 1
    return Graph.from_edges(n, edges, weights)


def load_dimacs_col(text) -> Graph:
    """Parse DIMACS ``.col`` text. Repeated undirected edges are merged."""
    n = m = None
    seen: set[tuple[int, int]] = set()
    for lineno, raw in enumerate(_lines(text), start=1):
        parts = raw.split()
        if not parts or parts[0] == "c":
            continue
        tag = parts[0]
        if tag == "p":
            if len(parts) < 4:
                raise ParseError("malformed problem line", lineno)
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError("non-numeric problem line", lineno) from None
        elif tag == "e":
            if n is None:
                raise ParseError("edge before 'p' line", lineno)
            try:
                u, v = int(parts[1]) - 1, int(parts[2]) - 1
            except (ValueError, IndexError):
                raise ParseError(f"malformed edge line {raw.strip()!r}", lineno) from None
            if not (0 <= u < n and 0 <= v < n):
                raise BoundsError(f"line {lineno}: endpoint outside [1, {n}]")
            if u == v:
                raise ValidationError(f"line {lineno}: self-loop at node {u + 1}")
            seen.add((min(u, v), max(u, v)))
    if n is None:
        raise ParseError("missing 'p edge n m' line")
    if len(seen) != m:
        warnings.warn(f"DIMACS header declares {m} edges, found {len(seen)} distinct", stacklevel=2)
    return Graph.from_edges(n, sorted(seen))


def to_gset_text(graph: Graph) -> str:
    rows = [f"{graph.n_nodes} {graph.n_edges}"]
    rows += [f"{u + 1} {v + 1} {w:g}" for (u, v), w in zip(graph.edges.tolist(), graph.weights)]
    return "\n".join(rows) + "\n"


def to_plain_text(graph: Graph) -> str:
    return "".join(f"{u} {v}\n" for u, v in graph.edges.tolist())


def to_dimacs_text(graph: Graph) -> str:
    rows = [f"p edge {graph.n_nodes} {graph.n_edges}"]
    rows += [f"e {u + 1} {v + 1}" for u, v in graph.edges.tolist()]
    return "\n".join(rows) + "\n"


def gen_random_regular(n: int, d: int, seed=None, max_restarts: int = 1000) -> Graph:
    """Random simple d-regular graph by incremental stub pairing.

    Stubs are shuffled and paired; pairs that would form a loop or a repeated edge
    go back into the pool for another round. When the leftover stubs admit no valid
    pair the attempt restarts from scratch.
    """
    if n < 0 or d < 0 or d >= max(n, 1):
        raise ValueError("need 0 <= d < n")
    if (n * d) % 2:
        raise ValueError("n * d must be even")
    rng = np.random.default_rng(seed)
    if d == 0:
        return Graph.from_edges(n, [])

    def attempt():
        edges: set[tuple[int, int]] = set()
        stubs = np.repeat(np.arange(n), d)
        while len(stubs):
            rng.shuffle(stubs)
            leftover = []
            for a, b in zip(stubs[0::2].tolist(), stubs[1::2].tolist()):
                if a > b:
                    a, b = b, a
                if a != b and (a, b) not in edges:
                    edges.add((a, b))
                else:
                    leftover += (a, b)
            if not leftover:
                return edges
            pool = sorted(set(leftover))
            if not any((a, b) not in edges for k, a in enumerate(pool) for b in pool[k + 1:]):
                return None
            stubs = np.array(leftover)
        return edges

    for _ in range(max_restarts):
        edges = attempt()
        if edges is not None:
            return Graph.from_edges(n, sorted(edges))
    raise GenerationError(f"no {d}-regular graph on {n} nodes after {max_restarts} restarts")


def _pair_from_index(k: np.ndarray, n: int) -> np.ndarray:
    # Row-major enumeration of i<j pairs: row i starts at i*n - i*(i+1)/2.
    k = np.asarray(k, dtype=np.int64)
    i = (n - 2 - np.floor(np.sqrt(-8.0 * k + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    start = i * n - i * (i + 1) // 2
    # Guard against floating error at row boundaries.
    low = k < start
    while low.any():
        i[low] -= 1
        start = i * n - i * (i + 1) // 2
        low = k < start
    nxt = (i + 1) * n - (i + 1) * (i + 2) // 2
    high = k >= nxt
    while high.any():
        i[high] += 1
        start = i * n - i * (i + 1) // 2
        nxt = (i + 1) * n - (i + 1) * (i + 2) // 2
        high = k >= nxt
    j = k - start + i + 1
    return np.stack([i, j], axis=1)


def gen_erdos_renyi(n: int, p: float | None = None, m: int | None = None, seed=None) -> Graph:
    """G(n, p) when ``p`` is given, G(n, m) when ``m`` is given."""
    if (p is None) == (m is None):
        raise ValueError("give exactly one of p or m")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    total = n * (n - 1) // 2
    if p is not None:
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        m = int(rng.binomial(total, p)) if total else 0
    elif not 0 <= m <= total:
        raise ValueError(f"m must lie in [0, {total}]")
    picks = np.sort(rng.choice(total, size=m, replace=False)) if m else np.zeros(0, np.int64)
    return Graph.from_edges(n, _pair_from_index(picks, n))


def pagerank(graph: Graph, damping: float = 0.85, tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """Power-iteration pagerank of the undirected random walk.

    Mass sitting on isolated nodes is spread uniformly, so the vector keeps unit sum.
    """
    n = graph.n_nodes
    if n == 0:
        raise ValueError("pagerank of an empty graph")
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must lie in (0, 1)")
    deg = graph.degree.astype(np.float64)
    inv_deg = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    walk = graph.adjacency  # symmetric, so A^T (r / deg) is the walk step
    dangling = deg == 0
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (walk @ (r * inv_deg) + r[dangling].sum() / n) + (1.0 - damping) / n
        delta = np.abs(nxt - r).sum()
        r = nxt
        if delta < tol:
            break
    return r / r.sum()


def disjoint_union(graph: Graph, k: int) -> Graph:
    """``k`` node-disjoint copies; copy ``c`` owns nodes ``[c*n, (c+1)*n)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return graph
    n = graph.n_nodes
    offsets = (np.arange(k, dtype=np.int64) * n)[:, None, None]
    edges = (graph.edges[None, :, :] + offsets).reshape(-1, 2)
    return Graph.from_edges(n * k, edges, np.tile(graph.weights, k))


def connected_components(graph: Graph) -> int:
    from scipy.sparse.csgraph import connected_components as cc
    return int(cc(graph.adjacency, directed=False)[0])
