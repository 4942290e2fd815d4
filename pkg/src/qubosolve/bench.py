"""Benchmark suites and the finite-difference gradient suite.

Every suite returns a list of row dicts (one per instance, plus summary rows
where useful) that the CLI writes as CSV and JSON. Rows carry the seeds and
configs needed to recompute them.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from pathlib import Path

import numpy as np

from . import qubo
from .autodiff import Tape, finite_diff_report
from .graph import Graph, gen_erdos_renyi, gen_random_regular
from .instances import COLOR_INSTANCES, toy_graph
from .model import CONV_TYPES, LAYER_MODES, RECURRENT_MODES, ModelConfig, build_static_features, forward, init_model
from .specs import find_instance, load_graph
from .trainer import TrainConfig, chromatic_search, multi_seed, split_seed

SUITES = ("dreg-pvalue", "gset", "color-chromatic", "mis-rb", "toy")
GSET_DEFAULT = ("G14", "G15", "G22", "G49", "G50", "G55", "G70")
MIS_RB_DEFAULT = tuple(f"frb30-15-{i}" for i in range(1, 6))


def _stats(values):
    return {"best": max(values), "median": statistics.median(values), "min": min(values)}


def toy_suite(seeds=range(20), model_config=None, train_config=None, workers=None):
    graph = toy_graph()
    tc = train_config or TrainConfig(max_iters=1000, target=graph.n_edges)
    res = multi_seed("maxcut", graph, model_config, tc, seeds=seeds, workers=workers)
    cuts = [r.best_metrics.cut_size for r in res.runs]
    hits = [r.best_iteration for r in res.runs if r.best_metrics.cut_size == graph.n_edges]
    return [{
        "instance": "toy", "n": graph.n_nodes, "m": graph.n_edges, "seeds": len(cuts),
        **_stats(cuts), "optimal_runs": len(hits),
        "median_iters_to_opt": statistics.median(hits) if hits else None,
        "mean_iters_to_opt": statistics.fmean(hits) if hits else None,
        "wall_time": sum(r.wall_time for r in res.runs),
    }]


def dreg_suite(d=5, n=500, graphs=20, seeds=5, max_iters=50_000, model_config=None, workers=None,
               graph_seed_base=0, check_invariants=False):
    """Best-of-``seeds`` P-value on ``graphs`` random d-regular graphs (graph g uses seed base+g)."""
    tc = TrainConfig(max_iters=max_iters)
    rows, best_p = [], []
    for g in range(graphs):
        graph = gen_random_regular(n, d, seed=graph_seed_base + g)
        res = multi_seed("maxcut", graph, model_config, tc, seeds=range(seeds), workers=workers)
        if check_invariants:
            for r in res.runs:
                check_run_invariants(r, tc.grad_clip_norm)
        pv = [r.best_metrics.p_value for r in res.runs]
        best_p.append(max(pv))
        rows.append({"instance": f"dreg:n={n},d={d},seed={graph_seed_base + g}", "n": n, "m": graph.n_edges,
                     "seeds": seeds, **_stats(pv), "best_cut": res.best.best_metrics.cut_size,
                     "wall_time": sum(r.wall_time for r in res.runs)})
    rows.append({"instance": "mean_best_p_value", "n": n, "m": n * d // 2, "seeds": seeds,
                 "best": statistics.fmean(best_p), "median": statistics.median(best_p), "min": min(best_p),
                 "wall_time": sum(r["wall_time"] for r in rows)})
    return rows


def check_run_invariants(run, clip_norm: float, tol: float = 1e-6):
    """Post-clip gradient norms stay under the clip and the best-metric trace never drops."""
    if run.max_clipped_norm > clip_norm + tol:
        raise AssertionError(f"post-clip norm {run.max_clipped_norm} exceeds {clip_norm}")
    best = [b for _, _, b in run.loss_trace]
    if any(b2 < b1 for b1, b2 in zip(best, best[1:])):
        raise AssertionError("best-metric trace decreased")


def _error_row(name, exc):
    return {"instance": name, "error": f"{type(exc).__name__}: {exc}"}


def gset_suite(names=GSET_DEFAULT, seeds=5, max_iters=100_000, model_config=None, data_dir=None, workers=None):
    rows = []
    tc = TrainConfig(max_iters=max_iters)
    for name in names:
        try:
            graph = load_graph(find_instance(name, data_dir))
        except (OSError, ValueError) as exc:
            rows.append(_error_row(name, exc))
            continue
        res = multi_seed("maxcut", graph, model_config, tc, seeds=range(seeds), workers=workers)
        cuts = [r.best_metrics.cut_size for r in res.runs]
        rows.append({"instance": name, "n": graph.n_nodes, "m": graph.n_edges, "seeds": seeds, **_stats(cuts),
                     "wall_time": sum(r.wall_time for r in res.runs)})
    return rows


def color_suite(names=None, seeds_per_k=10, max_iters=100_000, start_k=None, model_config=None):
    """Chromatic search per COLOR instance.

    The search starts at the known chromatic number unless ``start_k`` is given:
    no k below it can succeed, so counting up from 1 only adds runtime.
    """
    rows = []
    tc = TrainConfig(max_iters=max_iters)
    for name in names or COLOR_INSTANCES:
        if name not in COLOR_INSTANCES:
            rows.append(_error_row(name, KeyError(f"unknown COLOR instance {name!r}")))
            continue
        build, chi = COLOR_INSTANCES[name]
        graph = build()
        t0 = time.perf_counter()
        res = chromatic_search(graph, start_k=start_k or chi, seeds_per_k=seeds_per_k,
                               model_config=model_config, train_config=tc)
        rows.append({"instance": name, "n": graph.n_nodes, "m": graph.n_edges, "chi": chi,
                     "colors": res.k, "found": res.found, "attempts": json.dumps(res.attempts),
                     "iterations": res.runs[-1].iterations_run if res.runs else 0,
                     "wall_time": time.perf_counter() - t0})
    return rows


def mis_rb_suite(names=MIS_RB_DEFAULT, seeds=5, max_iters=100_000, model_config=None, data_dir=None, workers=None):
    rows, sizes = [], []
    tc = TrainConfig(max_iters=max_iters)
    for name in names:
        try:
            graph = load_graph(find_instance(name, data_dir))
        except (OSError, ValueError) as exc:
            rows.append(_error_row(name, exc))
            continue
        res = multi_seed("mis", graph, model_config, tc, seeds=range(seeds), workers=workers)
        found = [r.best_metrics.set_size for r in res.runs if r.best_metrics.feasible]
        sizes.append(max(found))
        rows.append({"instance": name, "n": graph.n_nodes, "m": graph.n_edges, "seeds": seeds, **_stats(found),
                     "repaired": sum(r.repaired for r in res.runs),
                     "wall_time": sum(r.wall_time for r in res.runs)})
    if sizes:
        rows.append({"instance": "mean_best_set_size", "best": statistics.fmean(sizes),
                     "std": statistics.pstdev(sizes)})
    return rows


# -- gradient check -------------------------------------------------------------

def _small_graph(seed=0, n=8) -> Graph:
    # Make sure no node is isolated so every aggregation path is exercised.
    for s in range(seed, seed + 100):
        g = gen_erdos_renyi(n, p=0.4, seed=s)
        if g.n_edges and g.degree.min() > 0:
            return g
    raise RuntimeError("could not draw a small test graph")


def gradcheck_cases():
    """(label, kind, ModelConfig) combinations covered by the gradient suite."""
    cases = []
    for kind in qubo.KINDS:
        k = 3 if kind == "coloring" else None
        for conv in CONV_TYPES:
            for layers in LAYER_MODES:
                mc = ModelConfig.for_problem(kind, k, hidden_size=6, random_dim=3, conv_type=conv,
                                             parallel_layers=layers, dropout_rate=0.3)
                cases.append((f"{kind}/{conv}/{layers}", kind, mc))
    for mode in RECURRENT_MODES:
        mc = ModelConfig.for_problem("maxcut", hidden_size=6, random_dim=3, recurrent_mode=mode)
        cases.append((f"maxcut/sage/recurrent-{mode}", "maxcut", mc))
    cases.append(("maxcut/sage/no-recurrent", "maxcut",
                  ModelConfig.for_problem("maxcut", hidden_size=6, random_dim=3, use_recurrent=False)))
    return cases


def gradcheck_case(kind: str, config: ModelConfig, seed: int = 0, n: int = 8) -> dict[str, float]:
    """Worst relative finite-difference error per parameter slot, in float64.

    The dropout mask is drawn from a generator re-seeded on every call, so the
    loss is a deterministic function of the parameters.
    """
    graph = _small_graph(seed, n)
    feat_rng, init_rng, _, rec_rng = split_seed(seed)
    static = build_static_features(graph, config, feat_rng)
    params = init_model(config, init_rng)
    # Random recurrent input and non-trivial BN affine parameters so no slot sits at a symmetric point.
    recurrent = rec_rng.random((graph.n_nodes, config.recurrent_dim))
    for name in params:
        if name.startswith(("b", "g")):
            params[name] = params[name] + rec_rng.normal(0, 0.3, params[name].shape)
    penalty = 1.3 if kind == "mis" else None

    def fn(p):
        prob, _, tape = forward(p, graph, static, recurrent, config, np.random.default_rng(seed + 1), Tape())
        loss = tape.scalar(prob, lambda v: qubo.loss_and_grad(kind, graph, v, penalty))
        return float(loss.value), tape.backward(loss)

    return finite_diff_report(fn, params)


def gradcheck_suite(seed: int = 0):
    rows = []
    for label, kind, mc in gradcheck_cases():
        report = gradcheck_case(kind, mc, seed)
        worst_slot = max(report, key=report.get)
        rows.append({"case": label, "worst_error": report[worst_slot], "worst_slot": worst_slot,
                     "per_slot": json.dumps({k: float(f"{v:.3g}") for k, v in report.items()})})
    return rows


# -- output ---------------------------------------------------------------------

def rows_to_csv(rows) -> str:
    cols = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
    return buf.getvalue()


def write_table(rows, out_dir, name: str, manifest: dict | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{name}.csv", out / f"{name}.json"
    csv_path.write_text(rows_to_csv(rows))
    json_path.write_text(json.dumps({"manifest": manifest or {}, "rows": rows}, indent=1, default=str))
    return csv_path, json_path
