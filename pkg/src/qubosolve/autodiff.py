"""A small reverse-mode differentiation engine over numpy arrays.

It only knows the operations the QRF-GNN forward pass needs. A ``Tape`` records
each executed op together with a closure that maps the output gradient to
input gradients; ``Tape.backward`` replays the closures in reverse. Values that
do not depend on a parameter are never differentiated.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .graph import Graph


class TapeConsumedError(RuntimeError):
    pass


class NondeterminismError(RuntimeError):
    pass


class Var:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"


def _accumulate(var: Var, g):
    if var.requires_grad:
        var.grad = g if var.grad is None else var.grad + g


# Sparse operators derived from a graph, cached on the graph per dtype.

def mean_operator(graph: Graph, dtype=np.float64) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    key = ("mean", np.dtype(dtype).str)
    if key not in graph.cache:
        deg = graph.degree
        inv = np.divide(1.0, deg, out=np.zeros(graph.n_nodes), where=deg > 0)
        data = np.repeat(inv, deg).astype(dtype)
        m = sp.csr_matrix((data, graph.indices, graph.indptr), shape=(graph.n_nodes,) * 2)
        graph.cache[key] = (m, m.T.tocsr())
    return graph.cache[key]


def gcn_operator(graph: Graph, dtype=np.float64) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I (symmetric)."""
    key = ("gcn", np.dtype(dtype).str)
    if key not in graph.cache:
        a = graph.adjacency + sp.identity(graph.n_nodes, format="csr")
        s = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
        graph.cache[key] = (sp.diags(s) @ a @ sp.diags(s)).tocsr().astype(dtype)
    return graph.cache[key]


def _segments(graph: Graph):
    key = ("segments",)
    if key not in graph.cache:
        deg = graph.degree
        nonempty = np.flatnonzero(deg > 0)
        graph.cache[key] = (nonempty, graph.indptr[:-1][nonempty], deg[nonempty])
    return graph.cache[key]


def _padded_neighbors(graph: Graph):
    """(n, max_degree) neighbor table padded with the sentinel index n, or None when too sparse."""
    key = ("padded",)
    if key not in graph.cache:
        n, deg = graph.n_nodes, graph.degree
        dmax = int(deg.max()) if n else 0
        table = None
        if dmax and n * dmax <= 4 * len(graph.indices):
            table = np.full((n, dmax), n, dtype=np.int64)
            rows = np.repeat(np.arange(n), deg)
            cols = np.arange(len(graph.indices)) - np.repeat(graph.indptr[:-1], deg)
            table[rows, cols] = graph.indices
        graph.cache[key] = table
    return graph.cache[key]


class Tape:
    """Computation record for one forward pass.

    ``param`` registers a trainable slot; ``backward`` may be called once and
    returns a gradient array for every slot.
    """

    def __init__(self):
        self._ops: list[tuple[Var, Callable]] = []
        self.params: dict[str, Var] = {}
        self.trace: list[tuple[str, Var]] = []
        self._consumed = False

    # -- leaves -----------------------------------------------------------

    def param(self, name: str, value) -> Var:
        v = Var(value, requires_grad=True)
        self.params[name] = v
        return v

    def const(self, value) -> Var:
        return Var(value)

    def _emit(self, label, value, inputs, backward_fn) -> Var:
        out = Var(value, requires_grad=any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self._ops.append((out, backward_fn))
        self.trace.append((label, out))
        return out

    # -- graph aggregation ------------------------------------------------

    def neighbor_mean(self, graph: Graph, h: Var) -> Var:
        m, mt = mean_operator(graph, h.value.dtype)

        def back(g):
            _accumulate(h, mt @ g)
        return self._emit("neighbor_mean", m @ h.value, [h], back)

    def gcn_aggregate(self, graph: Graph, h: Var) -> Var:
        a = gcn_operator(graph, h.value.dtype)

        def back(g):
            _accumulate(h, a @ g)
        return self._emit("gcn_aggregate", a @ h.value, [h], back)

    def segment_max(self, graph: Graph, z: Var) -> Var:
        """Row i = element-wise max of z over N(i); zero for isolated nodes.

        The gradient of each output entry goes to the first neighbor (in
        neighbor-list order) attaining the max.
        """
        n, width = z.value.shape
        table = _padded_neighbors(graph)
        if table is not None:
            return self._segment_max_padded(graph, z, table)
        nonempty, starts, deg = _segments(graph)
        out = np.zeros_like(z.value)
        if len(nonempty) == 0:
            return self._emit("segment_max", out, [z], lambda g: None)
        gathered = z.value[graph.indices]
        mx = np.maximum.reduceat(gathered, starts, axis=0)
        out[nonempty] = mx

        def back(g):
            nnz = len(graph.indices)
            hit = gathered == np.repeat(mx, deg, axis=0)
            cand = np.where(hit, np.arange(nnz)[:, None], nnz)
            first = np.minimum.reduceat(cand, starts, axis=0)
            flat = graph.indices[first] * width + np.arange(width)
            dz = np.bincount(flat.ravel(), weights=g[nonempty].ravel(), minlength=n * width)
            _accumulate(z, dz.reshape(n, width).astype(z.value.dtype, copy=False))
        return self._emit("segment_max", out, [z], back)

    def _segment_max_padded(self, graph, z, table):
        n, width = z.value.shape
        padded = np.concatenate([z.value, np.full((1, width), -np.inf, dtype=z.value.dtype)])
        # Padding sits after the real neighbors; the smallest slot attaining the
        # max is the first maximizer. (Cheaper than argmax on a strided axis.)
        gathered = padded[table]
        out = gathered.max(axis=1)
        slots = np.arange(table.shape[1], dtype=np.int16)[None, :, None]
        pos = np.where(gathered == out[:, None, :], slots, table.shape[1]).min(axis=1)
        src = table[np.arange(n)[:, None], pos]
        isolated = graph.degree == 0
        if isolated.any():
            out[isolated] = 0

        def back(g):
            flat = src * width + np.arange(width)
            dz = np.bincount(flat.ravel(), weights=g.ravel(), minlength=(n + 1) * width)
            _accumulate(z, dz[:n * width].reshape(n, width).astype(z.value.dtype, copy=False))
        return self._emit("segment_max", out, [z], back)

    def neighbor_pool(self, graph: Graph, h: Var, w: Var, b: Var) -> Var:
        """GraphSAGE pool aggregation: max over neighbors of relu(h W + b)."""
        return self.segment_max(graph, self.relu(self.affine(h, w, b)))

    # -- dense ops --------------------------------------------------------

    def affine(self, h: Var, w: Var, b: Var | None = None) -> Var:
        if h.value.shape[1] != w.value.shape[0]:
            raise ValueError(f"affine shape mismatch {h.shape} @ {w.shape}")
        out = h.value @ w.value
        if b is not None:
            out = out + b.value

        def back(g):
            if h.requires_grad:
                _accumulate(h, g @ w.value.T)
            _accumulate(w, h.value.T @ g)
            if b is not None:
                _accumulate(b, g.sum(axis=0))
        inputs = [h, w] if b is None else [h, w, b]
        return self._emit("affine", out, inputs, back)

    def matmul(self, h: Var, w: Var) -> Var:
        return self.affine(h, w, None)

    def relu(self, x: Var) -> Var:
        mask = x.value > 0

        def back(g):
            _accumulate(x, g * mask)
        return self._emit("relu", x.value * mask, [x], back)

    def sigmoid(self, x: Var) -> Var:
        s = expit(x.value)

        def back(g):
            _accumulate(x, g * s * (1 - s))
        return self._emit("sigmoid", s, [x], back)

    def softmax_rows(self, x: Var) -> Var:
        e = np.exp(x.value - x.value.max(axis=1, keepdims=True))
        s = e / e.sum(axis=1, keepdims=True)

        def back(g):
            _accumulate(x, s * (g - np.sum(g * s, axis=1, keepdims=True)))
        return self._emit("softmax_rows", s, [x], back)

    def concat_cols(self, a: Var, b: Var) -> Var:
        if a.value.shape[0] != b.value.shape[0]:
            raise ValueError(f"concat row mismatch {a.shape} vs {b.shape}")
        split = a.value.shape[1]

        def back(g):
            _accumulate(a, g[:, :split])
            _accumulate(b, g[:, split:])
        return self._emit("concat_cols", np.concatenate([a.value, b.value], axis=1), [a, b], back)

    def add(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")

        def back(g):
            _accumulate(a, g)
            _accumulate(b, g)
        return self._emit("add", a.value + b.value, [a, b], back)

    def batchnorm(self, x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
        """Normalize each column with batch statistics (biased variance), then scale/shift."""
        n = x.value.shape[0]
        centered = x.value - x.value.mean(axis=0)
        inv_std = 1.0 / np.sqrt(np.einsum("ij,ij->j", centered, centered) / n + eps)
        xhat = centered * inv_std

        def back(g):
            _accumulate(gamma, np.sum(g * xhat, axis=0))
            _accumulate(beta, g.sum(axis=0))
            if x.requires_grad:
                dxhat = g * gamma.value
                proj = np.einsum("ij,ij->j", dxhat, xhat)
                dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * proj)
                _accumulate(x, dx)
        return self._emit("batchnorm", gamma.value * xhat + beta.value, [x, gamma, beta], back)

    def dropout(self, x: Var, rate: float, rng: np.random.Generator | None) -> Var:
        """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if rate == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout needs a random generator")
        dtype = x.value.dtype if x.value.dtype in (np.float32, np.float64) else np.float64
        draws = rng.random(x.value.shape, dtype=dtype)
        keep = (draws >= rate).astype(x.value.dtype) / x.value.dtype.type(1.0 - rate)

        def back(g):
            _accumulate(x, g * keep)
        return self._emit("dropout", x.value * keep, [x], back)

    # -- scalar heads -----------------------------------------------------

    def sum(self, x: Var) -> Var:
        def back(g):
            _accumulate(x, np.full_like(x.value, g))
        return self._emit("sum", np.asarray(x.value.sum()), [x], back)

    def scalar(self, x: Var, fn: Callable[[np.ndarray], tuple[float, np.ndarray]], label="loss") -> Var:
        """Scalar head given by ``fn(value) -> (loss, dloss/dvalue)``."""
        loss, grad = fn(x.value)

        def back(g):
            _accumulate(x, g * grad)
        return self._emit(label, np.asarray(loss, dtype=np.float64), [x], back)

    # -- reverse sweep ----------------------------------------------------

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        if self._consumed:
            raise TapeConsumedError("this tape has already been differentiated")
        if np.ndim(loss.value) != 0:
            raise ValueError("backward needs a scalar loss")
        self._consumed = True
        loss.grad = 1.0
        for out, fn in reversed(self._ops):
            if out.grad is not None:
                fn(out.grad)
        return {name: (v.grad if v.grad is not None else np.zeros_like(v.value))
                for name, v in self.params.items()}

    def first_nonfinite(self) -> str | None:
        """Label of the earliest recorded value containing NaN or Inf."""
        for k, (label, var) in enumerate(self.trace):
            if not np.all(np.isfinite(var.value)):
                return f"op #{k} ({label})"
        return None


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def finite_diff_report(forward_fn, params: dict[str, np.ndarray], step: float = 1e-5,
                       floor: float = 1e-5) -> dict[str, float]:
    """Worst relative error per parameter slot between analytic and central-difference gradients.

    ``forward_fn(params) -> (loss, grads)`` must be deterministic; it is called
    twice at the base point and rejected if the two losses differ. The relative
    error of one scalar is |a - d| / max(|a|, |d|, floor). The floor keeps slots
    whose exact gradient is zero (a bias feeding straight into batch norm, say)
    from turning rounding noise into a huge ratio.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    loss0, grads = forward_fn(base)
    loss1, _ = forward_fn({k: v.copy() for k, v in base.items()})
    if float(loss0) != float(loss1):
        raise NondeterminismError("forward_fn gave different losses for identical parameters")
    report = {}
    for name, value in base.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        worst = 0.0
        for idx in np.ndindex(value.shape):
            trial = dict(base)
            plus = value.copy()
            plus[idx] += step
            trial[name] = plus
            fp = float(forward_fn(trial)[0])
            minus = value.copy()
            minus[idx] -= step
            trial[name] = minus
            fm = float(forward_fn(trial)[0])
            numeric = (fp - fm) / (2 * step)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report[name] = worst
    return report


def finite_diff_check(forward_fn, params: dict[str, np.ndarray], step: float = 1e-5,
                      floor: float = 1e-5) -> float:
    report = finite_diff_report(forward_fn, params, step, floor)
    return max(report.values(), default=0.0)
