"""QUBO encodings of Max-Cut, graph coloring and MIS, their relaxed losses and metrics.

Two evaluation paths exist on purpose. ``QuboInstance`` + ``objective`` is the
generic x^T Q x route used to cross-check. ``relaxed_loss`` / ``loss_and_grad``
are the O(|E|) per-problem kernels used in training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .graph import Graph

KINDS = ("maxcut", "coloring", "mis")


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class QuboInstance:
    n_vars: int
    quad_i: np.ndarray
    quad_j: np.ndarray
    quad_coef: np.ndarray
    linear: np.ndarray
    kind: str
    k: int | None = None
    offset: float = 0.0  # constant term; nonzero only for the coloring one-hot penalty


def _instance(n_vars, pairs, coefs, linear, kind, k=None, offset=0.0) -> QuboInstance:
    """Merge repeated pairs, move diagonal entries into the linear term (x_i^2 = x_i)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    coefs = np.asarray(coefs, dtype=np.float64).reshape(-1)
    linear = np.array(linear, dtype=np.float64)
    diag = pairs[:, 0] == pairs[:, 1]
    np.add.at(linear, pairs[diag, 0], coefs[diag])
    pairs, coefs = np.sort(pairs[~diag], axis=1), coefs[~diag]
    key = pairs[:, 0] * n_vars + pairs[:, 1]
    uniq, inv = np.unique(key, return_inverse=True)
    merged = np.bincount(inv, weights=coefs, minlength=len(uniq))
    return QuboInstance(n_vars, uniq // n_vars, uniq % n_vars, merged, linear, kind, k, offset)


def build_maxcut(graph: Graph) -> QuboInstance:
    """Sum over edges of 2 x_i x_j - x_i - x_j; its value is minus the cut size."""
    return _instance(graph.n_nodes, graph.edges, np.full(graph.n_edges, 2.0),
                     -graph.degree.astype(np.float64), "maxcut")


def build_coloring(graph: Graph, k: int) -> QuboInstance:
    """Variables x[i*k + c]; one-hot penalty per node plus same-color conflicts per edge.

    Expanding (1 - sum_c x_ic)^2 with x^2 = x gives 1 - sum_c x_ic + 2 sum_{c<c'} x_ic x_ic'.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = graph.n_nodes
    pairs, coefs = [], []
    cc = np.array([(a, b) for a in range(k) for b in range(a + 1, k)], dtype=np.int64).reshape(-1, 2)
    if len(cc):
        base = (np.arange(n) * k)[:, None, None]
        pairs.append((base + cc[None]).reshape(-1, 2))
        coefs.append(np.full(n * len(cc), 2.0))
    if graph.n_edges:
        e = graph.edges
        colors = np.arange(k)
        pairs.append(np.stack([(e[:, :1] * k + colors).ravel(), (e[:, 1:] * k + colors).ravel()], axis=1))
        coefs.append(np.ones(graph.n_edges * k))
    pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    coefs = np.concatenate(coefs) if coefs else np.zeros(0)
    return _instance(n * k, pairs, coefs, -np.ones(n * k), "coloring", k=k, offset=float(n))


def build_mis(graph: Graph, penalty: float) -> QuboInstance:
    """-sum x_i + penalty * sum over edges of x_i x_j."""
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    return _instance(graph.n_nodes, graph.edges, np.full(graph.n_edges, float(penalty)),
                     -np.ones(graph.n_nodes), "mis")


def objective(instance: QuboInstance, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(x) != instance.n_vars:
        raise ValueError(f"expected {instance.n_vars} variables, got {len(x)}")
    quad = float(np.dot(instance.quad_coef, x[instance.quad_i] * x[instance.quad_j]))
    return quad + float(instance.linear @ x) + instance.offset


def _check_probs(kind, graph, p):
    p = np.asarray(p)
    if kind == "coloring":
        if p.ndim != 2 or p.shape[0] != graph.n_nodes:
            raise DomainError(f"coloring expects an (n, k) matrix, got shape {p.shape}")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
            raise DomainError("coloring rows must sum to 1")
    else:
        if p.reshape(-1).shape[0] != graph.n_nodes:
            raise DomainError(f"expected {graph.n_nodes} probabilities, got shape {p.shape}")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise DomainError("probabilities must lie in [0, 1]")
    return p


def loss_and_grad(kind: str, graph: Graph, p: np.ndarray, penalty: float | None = None):
    """Relaxed loss and its gradient with respect to ``p`` (same shape as ``p``).

    No domain checks; callers on the training path feed sigmoid/softmax outputs.
    """
    A = graph.adjacency
    if kind == "maxcut":
        q = p.reshape(-1)
        Aq = A @ q
        loss = float(q @ Aq) - float(graph.degree @ q)
        grad = 2.0 * Aq - graph.degree
    elif kind == "mis":
        if penalty is None:
            raise ValueError("MIS loss needs a penalty")
        q = p.reshape(-1)
        Aq = A @ q
        loss = -float(q.sum()) + 0.5 * penalty * float(q @ Aq)
        grad = penalty * Aq - 1.0
    elif kind == "coloring":
        AP = A @ p
        loss = 0.5 * float(np.sum(p * AP))
        grad = AP
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    return loss, np.asarray(grad, dtype=p.dtype).reshape(p.shape)


def relaxed_loss(kind: str, graph: Graph, p, penalty: float | None = None) -> float:
    """Relaxed QUBO loss. Coloring keeps only the edge-conflict term."""
    p = _check_probs(kind, graph, p).astype(np.float64)
    return loss_and_grad(kind, graph, p, penalty)[0]


@dataclass
class Assignment:
    kind: str
    x: np.ndarray | None = None
    colors: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.colors if self.kind == "coloring" else self.x)

    def one_hot(self, k: int) -> np.ndarray:
        out = np.zeros((len(self.colors), k))
        out[np.arange(len(self.colors)), self.colors] = 1.0
        return out

    def to_json(self, metrics: "Metrics | None" = None) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.kind == "coloring":
            d["colors"] = [int(c) for c in self.colors]
        else:
            d["x"] = [int(v) for v in self.x]
        if metrics is not None:
            d["metrics"] = metrics.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Assignment":
        if d["kind"] == "coloring":
            return cls("coloring", colors=np.asarray(d["colors"], dtype=np.int64))
        return cls(d["kind"], x=np.asarray(d["x"], dtype=np.int8))


def discretize(p, kind: str, threshold: float = 0.5) -> Assignment:
    p = np.asarray(p)
    if kind == "coloring":
        # argmax returns the first maximum, i.e. the smallest color index on ties
        return Assignment(kind, colors=np.argmax(p, axis=1))
    return Assignment(kind, x=(p.reshape(-1) > threshold).astype(np.int8))


@dataclass
class Metrics:
    objective: float
    feasible: bool
    cut_size: int | None = None
    violations: int | None = None
    set_size: int | None = None
    p_value: float | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def evaluate(assignment: Assignment, graph: Graph, kind: str | None = None,
             penalty: float = 2.0, degree: int | None = None) -> Metrics:
    """Discrete quality of an assignment.

    ``objective`` follows the QUBO sign convention (lower is better). For MIS it
    is -set_size + penalty * violations. Passing ``degree`` for a regular graph
    also fills in the P-value of a cut.
    """
    kind = kind or assignment.kind
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    if kind == "maxcut":
        x = assignment.x
        cut = int(np.count_nonzero(x[u] != x[v]))
        pv = p_value(cut, graph.n_nodes, degree) if degree else None
        return Metrics(objective=-float(cut), feasible=True, cut_size=cut, p_value=pv)
    if kind == "coloring":
        c = assignment.colors
        bad = int(np.count_nonzero(c[u] == c[v]))
        return Metrics(objective=float(bad), feasible=bad == 0, violations=bad)
    if kind == "mis":
        x = assignment.x
        size = int(x.sum())
        bad = int(np.count_nonzero((x[u] == 1) & (x[v] == 1)))
        return Metrics(objective=-size + penalty * bad, feasible=bad == 0, violations=bad, set_size=size)
    raise ValueError(f"unknown problem kind {kind!r}")


def p_value(cut_size: float, n: int, d: float) -> float:
    """Cut quality on a d-regular graph: sqrt(4/d) * (z/n - d/4)."""
    if d < 1 or n < 1:
        raise ValueError("need d >= 1 and n >= 1")
    return math.sqrt(4.0 / d) * (cut_size / n - d / 4.0)


def mis_penalty_at(t: int, total: int, start: float = 0.01, end: float = 2.0) -> float:
    """Linear penalty ramp from ``start`` at t=0 to ``end`` at t=total-1."""
    if total < 2:
        return float(end)
    # Weighted form so both endpoints come out exactly, not start + (end - start).
    w = t / (total - 1)
    return (1 - w) * start + w * end


def mis_repair(x, p, graph: Graph) -> np.ndarray:
    """Make ``x`` independent by dropping, per violated edge, the endpoint with smaller p.

    Ties drop the higher index. One pass over the edges is enough because
    removals never create new violations.
    """
    x = np.array(x, dtype=np.int8).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    for a, b in graph.edges.tolist():
        if x[a] and x[b]:
            drop = a if p[a] < p[b] else b
            x[drop] = 0
    return x


def flatten_one_hot(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64).reshape(-1)
