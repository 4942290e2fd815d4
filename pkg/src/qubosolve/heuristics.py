"""Classical comparators (tau-EO Max-Cut, greedy MIS) and exact solvers for small graphs."""

from __future__ import annotations

import bisect
import heapq
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph
from .qubo import Assignment


class TooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class EoConfig:
    tau: float = 1.3
    update_budget: int = 10_000_000
    restarts: int = 20
    seed: int | None = 0

    def __post_init__(self):
        if self.tau <= 1:
            raise ValueError("tau must exceed 1")
        if self.update_budget < 1 or self.restarts < 1:
            raise ValueError("update_budget and restarts must be >= 1")


@dataclass
class EoResult:
    assignment: Assignment
    best_cut: int
    trace: list[tuple[int, int]]  # (update index, best cut so far), recorded on improvement
    restart_cuts: list[int] = field(default_factory=list)


class _FitnessBuckets:
    """Nodes grouped by fitness value, buckets kept in ascending fitness order."""

    def __init__(self, fitness: list[float]):
        self.keys: list[float] = sorted(set(fitness))
        self.members: dict[float, list[int]] = {k: [] for k in self.keys}
        self.pos = [0] * len(fitness)
        self.key_of = list(fitness)
        for i, f in enumerate(fitness):
            self.pos[i] = len(self.members[f])
            self.members[f].append(i)

    def move(self, i: int, new: float):
        old = self.key_of[i]
        if old == new:
            return
        bucket = self.members[old]
        last = bucket.pop()
        if last != i:
            bucket[self.pos[i]] = last
            self.pos[last] = self.pos[i]
        if new not in self.members:
            bisect.insort(self.keys, new)
            self.members[new] = []
        target = self.members[new]
        self.pos[i] = len(target)
        target.append(i)
        self.key_of[i] = new

    def at_rank(self, r: int, u: float) -> int:
        """Node at 0-based position r of the fitness order; ties split uniformly by ``u``."""
        for key in self.keys:
            bucket = self.members[key]
            if r < len(bucket):
                return bucket[min(int(u * len(bucket)), len(bucket) - 1)]
            r -= len(bucket)
        raise IndexError("rank beyond node count")


def _eo_run(graph: Graph, tau: float, budget: int, rng: np.random.Generator):
    n = graph.n_nodes
    nbrs = [graph.neighbors(i).tolist() for i in range(n)]
    deg = graph.degree.tolist()
    x = rng.integers(0, 2, n).tolist()
    cut_at = [sum(1 for j in nbrs[i] if x[j] != x[i]) for i in range(n)]
    fit = [cut_at[i] / deg[i] if deg[i] else 1.0 for i in range(n)]
    buckets = _FitnessBuckets(fit)
    cut = sum(cut_at) // 2
    best, best_x = cut, list(x)
    trace = [(0, best)]

    weights = np.arange(1, n + 1, dtype=np.float64) ** (-tau)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    chunk = 65536
    done = 0
    while done < budget:
        size = min(chunk, budget - done)
        ranks = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), n - 1).tolist()
        ties = rng.random(size).tolist()
        for step in range(size):
            i = buckets.at_rank(ranks[step], ties[step])
            xi = 1 - x[i]
            x[i] = xi
            cut += deg[i] - 2 * cut_at[i]
            cut_at[i] = deg[i] - cut_at[i]
            if deg[i]:
                buckets.move(i, cut_at[i] / deg[i])
            for j in nbrs[i]:
                # edge (i, j) is cut now iff x[j] != xi
                cut_at[j] += 1 if x[j] != xi else -1
                buckets.move(j, cut_at[j] / deg[j])
            if cut > best:
                best, best_x = cut, list(x)
                trace.append((done + step + 1, best))
        done += size
        if best == graph.n_edges:
            break
    return best, best_x, trace


def tau_eo_maxcut(graph: Graph, config: EoConfig | None = None) -> EoResult:
    """tau-extremal optimization for Max-Cut.

    Node fitness is the fraction of its edges that are cut (isolated nodes: 1).
    Each update flips the node at fitness rank r (1 = worst), with r drawn with
    probability proportional to r^-tau. The best cut over all restarts is kept;
    the trace is the running best across restarts, so it never decreases.
    """
    config = config or EoConfig()
    if graph.n_nodes == 0:
        raise ValueError("empty graph")
    rng = np.random.default_rng(config.seed)
    best_cut, best_x, trace, per_restart = -1, None, [], []
    offset = 0
    for _ in range(config.restarts):
        cut, x, tr = _eo_run(graph, config.tau, config.update_budget, rng)
        per_restart.append(cut)
        trace.extend((offset + step, value) for step, value in tr if value > best_cut)
        if cut > best_cut:
            best_cut, best_x = cut, x
        offset += config.update_budget
        if best_cut == graph.n_edges:
            break
    return EoResult(Assignment("maxcut", x=np.asarray(best_x, dtype=np.int8)), best_cut, trace, per_restart)


def greedy_mis(graph: Graph) -> Assignment:
    """Repeatedly take a minimum-degree node of the residual graph (smallest index on ties)."""
    n = graph.n_nodes
    nbrs = [graph.neighbors(i).tolist() for i in range(n)]
    deg = graph.degree.tolist()
    alive = [True] * n
    heap = [(deg[i], i) for i in range(n)]
    heapq.heapify(heap)
    x = np.zeros(n, dtype=np.int8)
    while heap:
        d, i = heapq.heappop(heap)
        if not alive[i] or d != deg[i]:
            continue
        x[i] = 1
        alive[i] = False
        removed = [j for j in nbrs[i] if alive[j]]
        for j in removed:
            alive[j] = False
        for j in removed:
            for w in nbrs[j]:
                if alive[w]:
                    deg[w] -= 1
                    heapq.heappush(heap, (deg[w], w))
    return Assignment("mis", x=x)


# -- exact solvers ------------------------------------------------------------

def brute_force_maxcut(graph: Graph, max_nodes: int = 24) -> int:
    """Exact maximum cut by enumeration; the last node is pinned to side 0."""
    n = graph.n_nodes
    if n > max_nodes:
        raise TooLargeError(f"brute-force max-cut limited to {max_nodes} nodes")
    if n <= 1 or graph.n_edges == 0:
        return 0
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    shifts = np.arange(n, dtype=np.int64)
    best = 0
    total = 1 << (n - 1)
    chunk = 1 << 15
    for start in range(0, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((masks[:, None] >> shifts) & 1).astype(np.int8)
        best = max(best, int((bits[:, u] != bits[:, v]).sum(axis=1).max()))
    return best


def _adjacency_masks(graph: Graph) -> list[int]:
    masks = [0] * graph.n_nodes
    for a, b in graph.edges.tolist():
        masks[a] |= 1 << b
        masks[b] |= 1 << a
    return masks


def brute_force_mis(graph: Graph, max_nodes: int = 30) -> int:
    """Exact maximum independent set size by branch and bound on bitsets."""
    n = graph.n_nodes
    if n > max_nodes:
        raise TooLargeError(f"brute-force MIS limited to {max_nodes} nodes")
    adj = _adjacency_masks(graph)
    best = 0

    def solve(cand: int, size: int):
        nonlocal best
        while cand:
            # Nodes of residual degree <= 1 can always be taken.
            forced = None
            c = cand
            while c:
                low = c & -c
                i = low.bit_length() - 1
                if (adj[i] & cand).bit_count() <= 1:
                    forced = i
                    break
                c ^= low
            if forced is None:
                break
            cand &= ~(adj[forced] | (1 << forced))
            size += 1
        if size + cand.bit_count() <= best:
            return
        if not cand:
            best = max(best, size)
            return
        # Branch on the node with most residual neighbors.
        c, pick, pick_deg = cand, -1, -1
        while c:
            low = c & -c
            i = low.bit_length() - 1
            d = (adj[i] & cand).bit_count()
            if d > pick_deg:
                pick, pick_deg = i, d
            c ^= low
        solve(cand & ~(adj[pick] | (1 << pick)), size + 1)
        solve(cand & ~(1 << pick), size)

    solve((1 << n) - 1, 0)
    return best


def brute_force_chromatic(graph: Graph, k_max: int | None = None, max_nodes: int = 20) -> int | None:
    """Exact chromatic number by backtracking; None if it exceeds ``k_max``."""
    n = graph.n_nodes
    if n > max_nodes:
        raise TooLargeError(f"brute-force coloring limited to {max_nodes} nodes")
    if n == 0:
        return 0
    k_max = n if k_max is None else k_max
    nbrs = [graph.neighbors(i).tolist() for i in range(n)]
    order = sorted(range(n), key=lambda i: -len(nbrs[i]))

    def colorable(k: int) -> bool:
        color = [-1] * n

        def place(idx: int, used: int) -> bool:
            if idx == n:
                return True
            i = order[idx]
            taken = {color[j] for j in nbrs[i]}
            # A fresh color is only worth trying once (colors are interchangeable).
            for c in range(min(k, used + 1)):
                if c not in taken:
                    color[i] = c
                    if place(idx + 1, max(used, c + 1)):
                        return True
            color[i] = -1
            return False

        return place(0, 0)

    for k in range(1, k_max + 1):
        if colorable(k):
            return k
    return None
