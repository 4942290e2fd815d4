"""Per-instance unsupervised training loop, multi-seed runs and chromatic-number search."""

from __future__ import annotations

import logging
import math
import os
import statistics
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import qubo
from .graph import Graph, disjoint_union, pagerank
from .model import (ModelConfig, ModelError, build_static_features, forward, init_model,
                    initial_recurrent, make_recurrent, save_params)

log = logging.getLogger(__name__)

STOP_REASONS = ("converged", "abs_stop", "target", "max_iters")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.014
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 2.0
    max_iters: int = 100_000
    loss_window: int = 500
    loss_delta: float = 1e-5
    coloring_abs_stop: float = 1e-3
    mis_penalty_start: float = 0.01
    mis_penalty_end: float = 2.0
    threshold: float = 0.5
    target: float | None = None  # stop once the tracked metric reaches this value
    dtype: str = "float32"
    deterministic: bool = True
    trace_every: int = 10
    checkpoint_every: int | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.grad_clip_norm <= 0 or self.max_iters < 1:
            raise ValueError("learning_rate, grad_clip_norm and max_iters must be positive")
        if self.loss_window < 1:
            raise ValueError("loss_window must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    kind: str
    seed: int | None
    best_assignment: qubo.Assignment
    best_metrics: qubo.Metrics
    best_iteration: int  # iterations completed when the best was first seen (1-based)
    iterations_run: int
    stop_reason: str
    wall_time: float
    loss_trace: list[tuple[int, float, float]] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)  # post-clip, at trace points
    max_clipped_norm: float = 0.0
    repaired: bool = False
    k: int | None = None
    final_loss: float = math.nan

    @property
    def score(self) -> float:
        """Higher is better for every kind."""
        return _score(self.kind, self.best_metrics)

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "seed": self.seed, "k": self.k,
            "best_assignment": self.best_assignment.to_json(),
            "best_metrics": self.best_metrics.to_json(),
            "best_iteration": self.best_iteration, "iterations_run": self.iterations_run,
            "stop_reason": self.stop_reason, "wall_time": self.wall_time,
            "repaired": self.repaired, "final_loss": self.final_loss,
            "max_clipped_norm": self.max_clipped_norm,
        }


class TrainingDiverged(RuntimeError):
    def __init__(self, message, partial: RunResult | None = None):
        super().__init__(message)
        self.partial = partial


def _score(kind: str, m: qubo.Metrics) -> float:
    if kind == "maxcut":
        return float(m.cut_size)
    if kind == "coloring":
        return -float(m.violations)
    if not m.feasible:
        return -math.inf
    return float(m.set_size)


# -- optimizer pieces -------------------------------------------------------

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by max_norm/g when their joint L2 norm g exceeds max_norm.

    Returns the (possibly) rescaled gradients and the norm before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = global_norm(grads)
    if total > max_norm:
        scale = max_norm / total
        grads = {k: g * g.dtype.type(scale) for k, g in grads.items()}
    return grads, total


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, t: int, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update (in place on ``params``); ``t`` counts from 1."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    state.t = t
    return params


# -- one run ----------------------------------------------------------------

def split_seed(seed: int | None, n: int = 4) -> list[np.random.Generator]:
    """Independent features / init / dropout / spare streams derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class _Tracker:
    def __init__(self, kind: str, graph: Graph, penalty_eval: float, degree: int | None):
        self.kind, self.graph = kind, graph
        self.penalty_eval, self.degree = penalty_eval, degree
        self.best = None
        self.best_metrics = None
        self.best_score = -math.inf
        self.best_iter = 0

    def update(self, prob: np.ndarray, it: int, threshold: float) -> bool:
        a = qubo.discretize(prob, self.kind, threshold)
        m = qubo.evaluate(a, self.graph, self.kind, penalty=self.penalty_eval, degree=self.degree)
        s = _score(self.kind, m)
        if s > self.best_score:
            self.best, self.best_metrics, self.best_score, self.best_iter = a, m, s, it
            return True
        return False


def _regular_degree(graph: Graph) -> int | None:
    deg = graph.degree
    if len(deg) and deg.min() == deg.max() and deg[0] > 0:
        return int(deg[0])
    return None


def default_max_iters(graph: Graph) -> int:
    """Iteration budget: 5e4 on regular graphs, 1e5 otherwise."""
    return 50_000 if _regular_degree(graph) is not None else 100_000


def _target_reached(kind, score, target) -> bool:
    if target is None:
        return False
    if kind == "coloring":
        return -score <= target
    return score >= target


def _train_loop(kind: str, graph: Graph, model_config: ModelConfig, train_config: TrainConfig,
                seed: int | None, copies: int = 1, k: int | None = None) -> list[RunResult]:
    tc = train_config
    dtype = np.dtype(tc.dtype)
    base = graph
    work = disjoint_union(graph, copies) if copies > 1 else graph
    n = base.n_nodes
    feat_rng, init_rng, drop_rng, _ = split_seed(seed)

    pr = np.tile(pagerank(base), copies) if model_config.use_pagerank and n else None
    static = build_static_features(work, model_config, feat_rng, pr=pr)
    params = {name: v.astype(dtype) for name, v in init_model(model_config, init_rng).items()}
    adam = AdamState.zeros_like(params)
    recurrent = initial_recurrent(work, model_config, dtype)
    degree = _regular_degree(base) if kind == "maxcut" else None
    trackers = [_Tracker(kind, base, tc.mis_penalty_end, degree) for _ in range(copies)]

    window: deque[float] = deque(maxlen=tc.loss_window)
    trace, norms = [], []
    max_norm_seen = 0.0
    stop = "max_iters"
    loss_value = math.nan
    prob_value = None
    started = time.perf_counter()
    it = 0

    def results(stop_reason):
        out = []
        wall = time.perf_counter() - started
        for c, tr in enumerate(trackers):
            repaired = False
            best, metrics, best_iter = tr.best, tr.best_metrics, tr.best_iter
            if kind == "mis" and (best is None or not metrics.feasible):
                p_c = prob_value[c * n:(c + 1) * n] if prob_value is not None else np.zeros((n, 1))
                x = qubo.discretize(p_c, kind, tc.threshold).x
                best = qubo.Assignment(kind, x=qubo.mis_repair(x, p_c, base))
                metrics = qubo.evaluate(best, base, kind, penalty=tc.mis_penalty_end)
                repaired, best_iter = True, it
            if best is None:  # zero iterations; only possible on an empty graph
                best = qubo.discretize(np.zeros((n, model_config.out_dim)), kind, tc.threshold)
                metrics = qubo.evaluate(best, base, kind, degree=degree)
            out.append(RunResult(kind, seed, best, metrics, best_iter, it, stop_reason, wall,
                                 loss_trace=trace, grad_norms=norms, max_clipped_norm=max_norm_seen,
                                 repaired=repaired, k=k, final_loss=loss_value))
        return out

    if work.n_edges == 0:
        # The loss is identically zero; the first iterate is already optimal.
        tc = replace(tc, max_iters=1)

    for t in range(tc.max_iters):
        try:
            prob, raw, tape = forward(params, work, static, recurrent, model_config, drop_rng)
        except ModelError as exc:
            raise TrainingDiverged(f"iteration {t}: {exc}", results("diverged")[0]) from exc
        penalty = (qubo.mis_penalty_at(t, tc.max_iters, tc.mis_penalty_start, tc.mis_penalty_end)
                   if kind == "mis" else None)
        loss = tape.scalar(prob, lambda v: qubo.loss_and_grad(kind, work, v, penalty))
        loss_value = float(loss.value)
        if not math.isfinite(loss_value):
            raise TrainingDiverged(f"iteration {t}: non-finite loss", results("diverged")[0])
        grads = tape.backward(loss)
        grads, _ = clip_global_norm(grads, tc.grad_clip_norm)
        clipped = global_norm(grads)
        max_norm_seen = max(max_norm_seen, clipped)
        adam_step(params, grads, adam, t + 1, tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)

        prob_value = prob.value
        recurrent = make_recurrent(raw.value, prob_value, model_config.recurrent_mode)
        it = t + 1
        for c, tr in enumerate(trackers):
            tr.update(prob_value[c * n:(c + 1) * n], it, tc.threshold)

        if kind == "mis":
            # Judge convergence at the final penalty so the ramp itself is not mistaken for drift.
            window_loss = qubo.loss_and_grad("mis", work, prob_value.astype(np.float64),
                                             tc.mis_penalty_end)[0]
        else:
            window_loss = loss_value
        window.append(window_loss)

        if tc.trace_every and (t % tc.trace_every == 0 or t == tc.max_iters - 1):
            trace.append((it, loss_value, max(tr.best_score for tr in trackers)))
            norms.append(clipped)
        if tc.checkpoint_every and tc.checkpoint_dir and it % tc.checkpoint_every == 0:
            save_params(params, Path(tc.checkpoint_dir) / f"params_{seed}_{it}",
                        extra={"iteration": it, "seed": seed})

        if all(_target_reached(kind, tr.best_score, tc.target) for tr in trackers):
            stop = "target"
            break
        if kind == "coloring" and abs(loss_value) < tc.coloring_abs_stop:
            stop = "abs_stop"
            break
        if len(window) == tc.loss_window and max(window) - min(window) < tc.loss_delta:
            stop = "converged"
            break
    if tc.trace_every and (not trace or trace[-1][0] != it):
        trace.append((it, loss_value, max(tr.best_score for tr in trackers)))
        norms.append(clipped if it else 0.0)
    return results(stop)


def train(kind: str, graph: Graph, model_config: ModelConfig | None = None,
          train_config: TrainConfig | None = None, seed: int | None = 0, k: int | None = None) -> RunResult:
    """Train a fresh QRF-GNN on one instance and return the best discrete solution seen.

    Every iteration discretizes the current probabilities (dropout active, as in
    training) and keeps the best: largest cut, fewest color conflicts, or
    largest independent set (infeasible iterates ignored). MIS falls back to
    repairing the final iterate if no feasible one ever appeared.
    """
    if kind not in qubo.KINDS:
        raise ValueError(f"unknown problem kind {kind!r}")
    model_config = model_config or ModelConfig.for_problem(kind, k)
    if kind == "coloring":
        k = k or model_config.out_dim
        if model_config.out_dim != k:
            raise ValueError("coloring needs model out_dim == k")
    elif model_config.out_dim != 1:
        raise ValueError(f"{kind} needs model out_dim == 1")
    return _train_loop(kind, graph, model_config, train_config or TrainConfig(), seed, 1, k)[0]


def train_union(kind: str, graph: Graph, copies: int, model_config: ModelConfig | None = None,
                train_config: TrainConfig | None = None, seed: int | None = 0,
                k: int | None = None) -> list[RunResult]:
    """One network trained on ``copies`` disjoint duplicates; one result per copy."""
    model_config = model_config or ModelConfig.for_problem(kind, k)
    if kind == "coloring":
        k = k or model_config.out_dim
    return _train_loop(kind, graph, model_config, train_config or TrainConfig(), seed, copies, k)


# -- multi-seed ---------------------------------------------------------------

@dataclass
class MultiSeedResult:
    best: RunResult
    runs: list[RunResult]

    @property
    def scores(self) -> list[float]:
        return [r.score for r in self.runs]

    def summary(self) -> dict:
        s = self.scores
        return {"best": max(s), "median": statistics.median(s), "min": min(s), "n_runs": len(s)}


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("QUBOSOLVE_THREADS", "1")))
    except ValueError:
        return 1


def _train_job(args):
    return train(*args)


def multi_seed(kind: str, graph: Graph, model_config: ModelConfig | None = None,
               train_config: TrainConfig | None = None, seeds=(0,), k: int | None = None,
               workers: int | None = None, union: bool = False) -> MultiSeedResult:
    """Independent runs over ``seeds``; the best run is chosen by the problem's metric.

    With ``union=True`` all seeds share one network trained on a disjoint union of
    copies (seeded by the first seed), which is cheaper but not seed-for-seed
    identical to separate runs.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if union and len(seeds) > 1:
        runs = train_union(kind, graph, len(seeds), model_config, train_config, seeds[0], k)
        for r, s in zip(runs, seeds):
            r.seed = s
    else:
        workers = default_workers() if workers is None else workers
        jobs = [(kind, graph, model_config, train_config, s, k) for s in seeds]
        if workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                runs = list(pool.map(_train_job, jobs))
        else:
            runs = [_train_job(j) for j in jobs]
    best = max(runs, key=lambda r: r.score)  # first of equal scores wins
    return MultiSeedResult(best, runs)


# -- chromatic number -----------------------------------------------------------

@dataclass
class ChromaticResult:
    found: bool
    k: int | None
    coloring: qubo.Assignment | None
    attempts: list[tuple[int, int]]  # (k, fewest violations over the seeds tried)
    runs: list[RunResult] = field(default_factory=list)


def chromatic_search(graph: Graph, start_k: int = 1, max_k: int | None = None, seeds_per_k: int = 10,
                     model_config: ModelConfig | None = None, train_config: TrainConfig | None = None,
                     base_seed: int = 0) -> ChromaticResult:
    """Smallest k, counting up from ``start_k``, for which some seed finds a conflict-free coloring.

    Seeds for color count k are ``base_seed .. base_seed + seeds_per_k - 1``;
    a k is abandoned after the first seed that succeeds.
    """
    if start_k < 1:
        raise ValueError("start_k must be >= 1")
    max_k = max_k or max(start_k, int(graph.degree.max(initial=0)) + 1)
    tc = replace(train_config or TrainConfig(), target=0)
    attempts, runs = [], []
    for k in range(start_k, max_k + 1):
        mc = replace(model_config, out_dim=k) if model_config else ModelConfig.for_problem("coloring", k)
        best_viol = None
        for s in range(base_seed, base_seed + seeds_per_k):
            r = train("coloring", graph, mc, tc, seed=s, k=k)
            runs.append(r)
            v = r.best_metrics.violations
            best_viol = v if best_viol is None else min(best_viol, v)
            log.info("k=%d seed=%d violations=%d iters=%d", k, s, v, r.iterations_run)
            if v == 0:
                attempts.append((k, 0))
                return ChromaticResult(True, k, r.best_assignment, attempts, runs)
        attempts.append((k, best_viol))
    return ChromaticResult(False, None, None, attempts, runs)
