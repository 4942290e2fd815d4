"""``qubosolve`` command line: solve, bench, gradcheck, generate, baseline.

Any flag can also come from a TOML file given with ``--config``. Keys use the
flag names with dashes or underscores, either at the top level or under a
table named after the subcommand; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__, bench as benchmod, qubo
from .graph import GraphError, to_dimacs_text, to_gset_text, to_plain_text
from .heuristics import EoConfig, greedy_mis, tau_eo_maxcut
from .model import ModelConfig
from .specs import SpecError, generate, guess_format, load_graph
from .trainer import TrainConfig, TrainingDiverged, chromatic_search, default_max_iters, multi_seed

log = logging.getLogger("qubosolve")

SCHEMA = "qubosolve.result/1"
KIND_ALIASES = {"maxcut": "maxcut", "color": "coloring", "coloring": "coloring", "mis": "mis"}
LAYER_ALIASES = {"both": "both", "mean": "mean_only", "pool": "pool_only"}
EXIT_OK, EXIT_ERROR, EXIT_REPAIRED = 0, 1, 2


class CliError(Exception):
    pass


# -- parser -------------------------------------------------------------------

def _add_instance_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--graph", help="graph file (gset, plain edge list or DIMACS)")
    src.add_argument("--gen", help="generator spec, e.g. dreg:n=500,d=5,seed=1")
    p.add_argument("--format", default="auto", choices=["auto", "gset", "plain", "dimacs"])


def _add_model_args(p):
    p.add_argument("--max-iters", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--no-recurrent", action="store_true", default=False)
    p.add_argument("--recurrent-mode", choices=["both", "raw", "prob"])
    p.add_argument("--conv", choices=["sage", "gcn"])
    p.add_argument("--layers", choices=list(LAYER_ALIASES))
    p.add_argument("--dropout", type=float)
    p.add_argument("--workers", type=int, help="process pool size (default: $QUBOSOLVE_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qubosolve", description="QRF-GNN QUBO solver")
    parser.add_argument("--config", help="TOML file with default flag values")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="train QRF-GNN on one instance")
    s.add_argument("kind", choices=["maxcut", "color", "mis"])
    _add_instance_args(s)
    s.add_argument("--k", type=int, help="colors; without it, color runs a chromatic search")
    s.add_argument("--seeds", type=int, default=1, help="number of seeds")
    s.add_argument("--seed-base", type=int, default=0, help="first seed; runs use seed-base .. seed-base+seeds-1")
    s.add_argument("--union", action="store_true", default=False,
                   help="train one network on a disjoint union of copies instead of separate runs")
    s.add_argument("--target", type=float, help="stop a run once its best metric reaches this")
    s.add_argument("--trace", action="store_true", default=False, help="also write trace.csv")
    s.add_argument("--out", default="out")
    s.add_argument("--lr", type=float)
    _add_model_args(s)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", choices=benchmod.SUITES)
    b.add_argument("--d", type=int, default=5, help="degree for dreg-pvalue")
    b.add_argument("--n", type=int, default=500, help="nodes per graph for dreg-pvalue")
    b.add_argument("--graphs", type=int, default=20, help="number of generated graphs for dreg-pvalue")
    b.add_argument("--seeds", type=int, help="seeds per instance (seeds per k for color-chromatic)")
    b.add_argument("--only", nargs="+", help="restrict to these instance names")
    b.add_argument("--start-k", type=int, help="first k of the chromatic search (default: known value)")
    b.add_argument("--data-dir", help="directory holding gset / frb files (also $QUBOSOLVE_DATA)")
    b.add_argument("--out", default="bench-out")
    _add_model_args(b)

    sub.add_parser("gradcheck", help="finite-difference check of every layer configuration")

    g = sub.add_parser("generate", help="write a generated instance to a file")
    g.add_argument("spec")
    g.add_argument("output")
    g.add_argument("--format", default="auto", choices=["auto", "gset", "plain", "dimacs"])

    bl = sub.add_parser("baseline", help="classical heuristics with the same result schema")
    bl.add_argument("method", choices=["eo", "greedy"])
    _add_instance_args(bl)
    bl.add_argument("--budget", type=int, default=EoConfig.update_budget, help="EO updates per restart")
    bl.add_argument("--restarts", type=int, default=EoConfig.restarts)
    bl.add_argument("--tau", type=float, default=EoConfig.tau)
    bl.add_argument("--seed", type=int, default=0)
    bl.add_argument("--out", default="out")
    return parser


def _read_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc


def _dests(sub) -> set[str]:
    return {a.dest for a in sub._actions}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        data = _read_config(args.config)
        subs = parser._subparsers._group_actions[0].choices
        sub = subs[args.command]
        known = _dests(sub)
        anywhere = set().union(*map(_dests, subs.values()))

        def norm(table):
            return {k.replace("-", "_"): v for k, v in table.items() if not isinstance(v, dict)}
        # Top-level keys are shared by all commands: apply those this command has,
        # reject only names no command knows. Keys in the command's table must fit it.
        top, own = norm(data), norm(data.get(args.command, {}))
        unknown = (set(top) - anywhere) | (set(own) - known)
        if unknown:
            raise CliError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        sub.set_defaults(**({k: v for k, v in top.items() if k in known} | own))
        args = parser.parse_args(argv)
    return args


# -- helpers --------------------------------------------------------------------

def _load_instance(args):
    if args.graph:
        return load_graph(args.graph, args.format), {"path": str(args.graph), "format": args.format}
    if args.gen:
        return generate(args.gen), {"generator": args.gen}
    raise CliError("give --graph or --gen")


def _model_config(args, kind, k) -> ModelConfig:
    overrides = {}
    if args.hidden is not None:
        overrides["hidden_size"] = args.hidden
    if args.no_recurrent:
        overrides["use_recurrent"] = False
    if args.recurrent_mode:
        overrides["recurrent_mode"] = args.recurrent_mode
    if args.conv:
        overrides["conv_type"] = args.conv
    if args.layers:
        overrides["parallel_layers"] = LAYER_ALIASES[args.layers]
    if args.dropout is not None:
        overrides["dropout_rate"] = args.dropout
    return ModelConfig.for_problem(kind, k, **overrides)


def _train_config(args, graph) -> TrainConfig:
    tc = TrainConfig(max_iters=args.max_iters or default_max_iters(graph))
    if args.lr is not None:
        tc = replace(tc, learning_rate=args.lr)
    if getattr(args, "target", None) is not None:
        tc = replace(tc, target=args.target)
    return tc


def _manifest(args, kind, source, mc=None, tc=None, seeds=None) -> dict:
    return {
        "command": " ".join(sys.argv[1:]) if sys.argv else "",
        "subcommand": args.command, "kind": kind, "source": source,
        "model_config": mc.to_json() if mc else None,
        "train_config": tc.to_json() if tc else None,
        "seeds": seeds, "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _natural_metric(kind, score):
    if kind == "coloring":
        return -score
    if kind == "mis" and math.isinf(score):
        return ""
    return score


def write_trace(path: Path, run):
    rows = ["iter,loss,best_metric"]
    rows += [f"{it},{loss!r},{_natural_metric(run.kind, best)}" for it, loss, best in run.loss_trace]
    path.write_text("\n".join(rows) + "\n")


def write_result(out: Path, manifest: dict, best, runs, summary: dict, extra: dict | None = None):
    out.mkdir(parents=True, exist_ok=True)
    result = {"schema": SCHEMA, "manifest": manifest, "summary": summary,
              "best": best if isinstance(best, dict) else best.to_json(),
              "runs": [r if isinstance(r, dict) else {k: v for k, v in r.to_json().items() if k != "best_assignment"}
                       for r in runs]}
    if extra:
        result.update(extra)
    (out / "result.json").write_text(json.dumps(result, indent=1))


# -- commands -------------------------------------------------------------------

def cmd_solve(args) -> int:
    kind = KIND_ALIASES[args.kind]
    graph, source = _load_instance(args)
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    tc = _train_config(args, graph)
    out = Path(args.out)
    if kind == "coloring" and args.k is None:
        mc = _model_config(args, kind, 2)
        start = 2 if graph.n_edges else 1
        res = chromatic_search(graph, start_k=start, seeds_per_k=len(seeds), model_config=mc,
                               train_config=tc, base_seed=args.seed_base)
        if not res.found:
            raise CliError(f"no conflict-free coloring found; attempts {res.attempts}")
        best = res.runs[-1]
        mc = replace(mc, out_dim=res.k)
        summary = {"colors": res.k, "attempts": res.attempts}
        runs = res.runs
    else:
        if kind == "coloring" and args.k < 1:
            raise CliError("--k must be >= 1")
        mc = _model_config(args, kind, args.k)
        res = multi_seed(kind, graph, mc, tc, seeds=seeds, k=args.k, workers=args.workers, union=args.union)
        best, runs, summary = res.best, res.runs, res.summary()
    manifest = _manifest(args, kind, source, mc, tc, seeds)
    write_result(out, manifest, best, runs, summary)
    (out / "assignment.json").write_text(json.dumps(best.best_assignment.to_json(best.best_metrics)))
    if args.trace:
        write_trace(out / "trace.csv", best)
    print(json.dumps({"kind": kind, **best.best_metrics.to_json(), "best_iteration": best.best_iteration,
                      "out": str(out)}))
    return EXIT_REPAIRED if kind == "mis" and best.repaired else EXIT_OK


def cmd_bench(args) -> int:
    mc_kind = {"color-chromatic": "coloring", "mis-rb": "mis"}.get(args.suite, "maxcut")
    mc = None
    if any(v is not None for v in (args.hidden, args.recurrent_mode, args.conv, args.layers, args.dropout)) \
            or args.no_recurrent:
        mc = _model_config(args, mc_kind, 2 if mc_kind == "coloring" else None)
    if args.suite == "toy":
        tc = TrainConfig(max_iters=args.max_iters or 1000, target=12)
        rows = benchmod.toy_suite(seeds=range(args.seeds or 20), model_config=mc, train_config=tc,
                                  workers=args.workers)
    elif args.suite == "dreg-pvalue":
        rows = benchmod.dreg_suite(d=args.d, n=args.n, graphs=args.graphs, seeds=args.seeds or 5,
                                   max_iters=args.max_iters or 50_000, model_config=mc, workers=args.workers)
    elif args.suite == "gset":
        rows = benchmod.gset_suite(args.only or benchmod.GSET_DEFAULT, seeds=args.seeds or 5,
                                   max_iters=args.max_iters or 100_000, model_config=mc,
                                   data_dir=args.data_dir, workers=args.workers)
    elif args.suite == "color-chromatic":
        rows = benchmod.color_suite(args.only, seeds_per_k=args.seeds or 10, max_iters=args.max_iters or 100_000,
                                    start_k=args.start_k, model_config=mc)
    else:
        rows = benchmod.mis_rb_suite(args.only or benchmod.MIS_RB_DEFAULT, seeds=args.seeds or 5,
                                     max_iters=args.max_iters or 100_000, model_config=mc,
                                     data_dir=args.data_dir, workers=args.workers)
    manifest = _manifest(args, mc_kind, {"suite": args.suite}, mc)
    manifest["args"] = {k: v for k, v in vars(args).items() if k != "func"}
    csv_path, _ = benchmod.write_table(rows, args.out, args.suite, manifest)
    sys.stdout.write(benchmod.rows_to_csv(rows))
    log.info("wrote %s", csv_path)
    errors = [r for r in rows if "error" in r]
    for r in errors:
        print(f"error: {r['instance']}: {r['error']}", file=sys.stderr)
    return EXIT_ERROR if errors else EXIT_OK


def cmd_gradcheck(args, tol: float = 1e-4) -> int:
    rows = benchmod.gradcheck_suite()
    failed = 0
    for r in rows:
        ok = r["worst_error"] < tol
        failed += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {r['case']:<32} worst {r['worst_error']:.2e} ({r['worst_slot']})")
    print(f"{len(rows) - failed}/{len(rows)} configurations under {tol:g}")
    return EXIT_OK if not failed else EXIT_ERROR


def cmd_generate(args) -> int:
    graph = generate(args.spec)
    path = Path(args.output)
    fmt = args.format
    if fmt == "auto":
        fmt = guess_format(path)
    text = {"gset": to_gset_text, "plain": to_plain_text, "dimacs": to_dimacs_text}[fmt](graph)
    path.write_text(text)
    print(f"{path}: {graph.n_nodes} nodes, {graph.n_edges} edges ({fmt})")
    return EXIT_OK


def cmd_baseline(args) -> int:
    graph, source = _load_instance(args)
    out = Path(args.out)
    if args.method == "eo":
        cfg = EoConfig(tau=args.tau, update_budget=args.budget, restarts=args.restarts, seed=args.seed)
        res = tau_eo_maxcut(graph, cfg)
        kind, assignment = "maxcut", res.assignment
        extra = {"trace": res.trace, "restart_cuts": res.restart_cuts, "eo_config": asdict(cfg)}
    else:
        kind, assignment = "mis", greedy_mis(graph)
        extra = {}
    metrics = qubo.evaluate(assignment, graph)
    manifest = _manifest(args, kind, source)
    manifest["method"] = args.method
    best = {"kind": kind, "best_assignment": assignment.to_json(), "best_metrics": metrics.to_json()}
    write_result(out, manifest, best, [], metrics.to_json(), extra)
    (out / "assignment.json").write_text(json.dumps(assignment.to_json(metrics)))
    print(json.dumps({"method": args.method, **metrics.to_json(), "out": str(out)}))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "gradcheck": cmd_gradcheck,
            "generate": cmd_generate, "baseline": cmd_baseline}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # argparse errors and --help
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, SpecError, GraphError, OSError, ValueError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
