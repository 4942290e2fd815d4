"""Instance sources: the generator mini-language, graph files and the data directory.

Generator specs look like ``kind:key=value,...``::

    dreg:n=500,d=5,seed=1
    er:n=700..800,p=0.15,seed=3     (n drawn uniformly from the inclusive range)
    union:k=4:dreg:n=100,d=3,seed=0
    queen:5   queen:rows=8,cols=12   myciel:6   color:queen6-6   toy
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .graph import Graph, disjoint_union, gen_erdos_renyi, gen_random_regular, load_dimacs_col, load_edge_list
from .instances import COLOR_INSTANCES, mycielski_graph, queen_graph, toy_graph

DEFAULT_ER_P = 0.15
DATA_ENV = "QUBOSOLVE_DATA"


class SpecError(ValueError):
    pass


def _parse_pairs(body: str, bare_key: str | None = None) -> dict[str, str]:
    out = {}
    for item in filter(None, body.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            if bare_key is None or bare_key in out:
                raise SpecError(f"expected key=value, got {item!r}")
            key, value = bare_key, item
        out[key.strip()] = value.strip()
    return out


def _int(fields, key, default=None) -> int:
    if key not in fields:
        if default is None:
            raise SpecError(f"missing {key}=")
        return default
    try:
        return int(fields[key])
    except ValueError:
        raise SpecError(f"{key} must be an integer, got {fields[key]!r}") from None


def _check_keys(kind, fields, allowed):
    extra = set(fields) - set(allowed)
    if extra:
        raise SpecError(f"{kind}: unknown keys {sorted(extra)}")


def generate(spec: str) -> Graph:
    kind, _, body = spec.strip().partition(":")
    if kind == "union":
        head, sep, inner = body.partition(":")
        fields = _parse_pairs(head)
        _check_keys(kind, fields, {"k"})
        if not sep:
            raise SpecError("union needs an inner spec: union:k=K:<spec>")
        return disjoint_union(generate(inner), _int(fields, "k"))
    if kind == "dreg":
        f = _parse_pairs(body)
        _check_keys(kind, f, {"n", "d", "seed"})
        return gen_random_regular(_int(f, "n"), _int(f, "d"), seed=_int(f, "seed", 0))
    if kind == "er":
        f = _parse_pairs(body)
        _check_keys(kind, f, {"n", "p", "m", "seed"})
        seed = _int(f, "seed", 0)
        if "n" not in f:
            raise SpecError("missing n=")
        lo, dots, hi = f["n"].partition("..")
        try:
            lo, hi = int(lo), int(hi) if dots else int(lo)
        except ValueError:
            raise SpecError(f"bad node count {f['n']!r}") from None
        if hi < lo:
            raise SpecError("empty node range")
        if lo == hi:
            n, edge_seed = lo, seed
        else:
            # A range draws the size from its own stream, separate from the edges.
            size_rng, edge_seed = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
            n = int(size_rng.integers(lo, hi + 1))
        if "m" in f:
            return gen_erdos_renyi(n, m=_int(f, "m"), seed=edge_seed)
        try:
            p = float(f.get("p", DEFAULT_ER_P))
        except ValueError:
            raise SpecError(f"bad edge probability {f['p']!r}") from None
        return gen_erdos_renyi(n, p=p, seed=edge_seed)
    if kind == "queen":
        f = _parse_pairs(body, bare_key="rows")
        _check_keys(kind, f, {"rows", "cols"})
        rows = _int(f, "rows")
        return queen_graph(rows, _int(f, "cols", rows))
    if kind == "myciel":
        f = _parse_pairs(body, bare_key="order")
        _check_keys(kind, f, {"order"})
        return mycielski_graph(_int(f, "order"))
    if kind == "color":
        if body not in COLOR_INSTANCES:
            raise SpecError(f"unknown COLOR instance {body!r}; known: {', '.join(COLOR_INSTANCES)}")
        return COLOR_INSTANCES[body][0]()
    if kind == "toy":
        return toy_graph()
    raise SpecError(f"unknown generator kind {kind!r}")


def guess_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix in (".col", ".clq", ".mis", ".dimacs"):
        return "dimacs"
    if suffix in (".txt", ".edges", ".plain"):
        return "plain"
    return "gset"


def load_graph(path, fmt: str = "auto") -> Graph:
    path = Path(path)
    text = path.read_text()
    fmt = guess_format(path) if fmt == "auto" else fmt
    if fmt == "dimacs":
        return load_dimacs_col(text)
    return load_edge_list(text, fmt)


def data_dirs(extra: str | None = None) -> list[Path]:
    dirs = [Path(extra)] if extra else []
    if os.environ.get(DATA_ENV):
        dirs.append(Path(os.environ[DATA_ENV]))
    dirs.append(Path("data"))
    return dirs


def find_instance(name: str, data_dir: str | None = None,
                  suffixes=("", ".gset", ".txt", ".col", ".clq", ".mis")) -> Path:
    """Locate ``name`` under the data directories; raises FileNotFoundError listing where it looked."""
    tried = []
    for d in data_dirs(data_dir):
        for s in suffixes:
            p = d / f"{name}{s}"
            tried.append(str(p))
            if p.is_file():
                return p
    raise FileNotFoundError(f"instance {name!r} not found (looked in: {', '.join(dict.fromkeys(str(p.parent) for p in map(Path, tried)))}; "
                            f"set {DATA_ENV} or pass --data-dir)")
