"""QRF-GNN: static node features, parameters and the forward pass.

Default wiring for one iteration (f = relu):

    h0   = [static | recurrent]
    b1   = BN(f(W1 [h0 | mean_N(h0)]))
    b2   = BN(f(W2 [h0 | pool_N(h0)]))
    h12  = dropout(f(b1 + b2))
    raw  = W_out [h12 | mean_N(h12)]
    prob = sigmoid(raw)  or  softmax_rows(raw) for coloring

The recurrent input of the next iteration is built from (raw, prob) and carries
no gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .autodiff import Tape, Var
from .graph import Graph, pagerank

CONV_TYPES = ("sage", "gcn")
RECURRENT_MODES = ("raw", "prob", "both")
LAYER_MODES = ("both", "mean_only", "pool_only")


class ModelError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    out_dim: int = 1
    hidden_size: int = 50
    conv_type: str = "sage"
    recurrent_mode: str = "both"
    parallel_layers: str = "both"
    dropout_rate: float = 0.5
    random_dim: int = 10
    use_shared: bool = True
    use_pagerank: bool = True
    use_recurrent: bool = True
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"conv_type must be one of {CONV_TYPES}")
        if self.recurrent_mode not in RECURRENT_MODES:
            raise ValueError(f"recurrent_mode must be one of {RECURRENT_MODES}")
        if self.parallel_layers not in LAYER_MODES:
            raise ValueError(f"parallel_layers must be one of {LAYER_MODES}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @classmethod
    def for_problem(cls, kind: str, k: int | None = None, **overrides) -> "ModelConfig":
        if kind == "coloring":
            if not k:
                raise ValueError("coloring needs the number of colors k")
            base = cls(out_dim=k, hidden_size=140)
        else:
            base = cls(out_dim=1, hidden_size=50)
        return replace(base, **overrides)

    @property
    def static_dim(self) -> int:
        return self.random_dim + int(self.use_shared) + int(self.use_pagerank)

    @property
    def recurrent_dim(self) -> int:
        if not self.use_recurrent:
            return 0
        return self.out_dim * (2 if self.recurrent_mode == "both" else 1)

    @property
    def input_dim(self) -> int:
        return self.static_dim + self.recurrent_dim

    def to_json(self) -> dict:
        return asdict(self)


def build_static_features(graph: Graph, config: ModelConfig, rng: np.random.Generator,
                          pr: np.ndarray | None = None) -> np.ndarray:
    """Columns: ``random_dim`` uniform [0, 1) draws, a constant 1.0 column, pagerank."""
    cols = [rng.random((graph.n_nodes, config.random_dim))]
    if config.use_shared:
        cols.append(np.ones((graph.n_nodes, 1)))
    if config.use_pagerank:
        cols.append((pagerank(graph) if pr is None else pr).reshape(-1, 1))
    return np.concatenate(cols, axis=1)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, BN scale 1 and shift 0.

    Slots: W1/b1 mean branch, Wp/bp pool pre-transform, W2/b2 pool branch,
    g1/be1 and g2/be2 batch norms, Wout/bout output layer. SAGE weights act on
    [self | aggregate] so they have twice the input width; GCN weights do not.
    """
    d, h, o = config.input_dim, config.hidden_size, config.out_dim
    sage = config.conv_type == "sage"
    k = 2 if sage else 1
    params: dict[str, np.ndarray] = {}
    if config.parallel_layers in ("both", "mean_only"):
        params["W1"] = _glorot(rng, k * d, h)
        params["b1"] = np.zeros(h)
        params["g1"] = np.ones(h)
        params["be1"] = np.zeros(h)
    if config.parallel_layers in ("both", "pool_only"):
        if sage:
            params["Wp"] = _glorot(rng, d, d)
            params["bp"] = np.zeros(d)
        params["W2"] = _glorot(rng, k * d, h)
        params["b2"] = np.zeros(h)
        params["g2"] = np.ones(h)
        params["be2"] = np.zeros(h)
    params["Wout"] = _glorot(rng, k * h, o)
    params["bout"] = np.zeros(o)
    return params


def make_recurrent(raw: np.ndarray, prob: np.ndarray, mode: str) -> np.ndarray:
    if mode == "both":
        return np.concatenate([raw, prob], axis=1)
    if mode == "raw":
        return raw
    if mode == "prob":
        return prob
    raise ValueError(f"unknown recurrent mode {mode!r}")


def initial_recurrent(graph: Graph, config: ModelConfig, dtype=np.float64) -> np.ndarray:
    return np.zeros((graph.n_nodes, config.recurrent_dim), dtype=dtype)


def _block(tape: Tape, graph: Graph, h: Var, w: Var, b: Var, conv: str, agg: str,
           pool: tuple[Var, Var] | None = None) -> Var:
    """One convolution: W [h | agg_N(h)] + b for SAGE, A_hat h W + b for GCN. No activation."""
    if conv == "gcn":
        return tape.affine(tape.gcn_aggregate(graph, h), w, b)
    if agg == "mean":
        neigh = tape.neighbor_mean(graph, h)
    else:
        neigh = tape.neighbor_pool(graph, h, *pool)
    return tape.affine(tape.concat_cols(h, neigh), w, b)


def forward(params: dict[str, np.ndarray], graph: Graph, static: np.ndarray,
            recurrent: np.ndarray | None, config: ModelConfig,
            rng: np.random.Generator | None, tape: Tape | None = None):
    """Run one forward pass; returns ``(prob, raw, tape)`` with ``prob``/``raw`` as tape variables.

    ``rng`` only drives dropout and may be None when ``dropout_rate`` is 0.
    Raises ``ModelError`` if any activation is non-finite.
    """
    tape = tape or Tape()
    dtype = next(iter(params.values())).dtype
    p = {name: tape.param(name, value) for name, value in params.items()}
    x = static.astype(dtype, copy=False)
    if config.use_recurrent:
        if recurrent is None or recurrent.shape != (graph.n_nodes, config.recurrent_dim):
            raise ValueError(f"recurrent input must have shape {(graph.n_nodes, config.recurrent_dim)}")
        x = np.concatenate([x, recurrent.astype(dtype, copy=False)], axis=1)
    h0 = tape.const(x)
    conv = config.conv_type

    branches = []
    if "W1" in p:
        h1 = tape.relu(_block(tape, graph, h0, p["W1"], p["b1"], conv, "mean"))
        branches.append(tape.batchnorm(h1, p["g1"], p["be1"], config.bn_eps))
    if "W2" in p:
        pool = (p["Wp"], p["bp"]) if conv == "sage" else None
        h2 = tape.relu(_block(tape, graph, h0, p["W2"], p["b2"], conv, "pool", pool))
        branches.append(tape.batchnorm(h2, p["g2"], p["be2"], config.bn_eps))
    h12 = branches[0] if len(branches) == 1 else tape.add(*branches)
    h12 = tape.dropout(tape.relu(h12), config.dropout_rate, rng)

    raw = _block(tape, graph, h12, p["Wout"], p["bout"], conv, "mean")
    prob = tape.softmax_rows(raw) if config.out_dim > 1 else tape.sigmoid(raw)
    if not np.all(np.isfinite(raw.value)):
        raise ModelError(f"non-finite activation, first at {tape.first_nonfinite()}")
    return prob, raw, tape


def save_params(params: dict[str, np.ndarray], path, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.bin`` (concatenated little-endian arrays) and ``<path>.json`` (shape manifest)."""
    path = Path(path)
    blob, manifest, offset = [], {"arrays": {}}, 0
    for name, arr in params.items():
        a = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        manifest["arrays"][name] = {"shape": list(a.shape), "dtype": a.dtype.str, "offset": offset,
                                    "nbytes": a.nbytes}
        blob.append(a.tobytes())
        offset += a.nbytes
    if extra:
        manifest["extra"] = extra
    bin_path, json_path = path.with_suffix(".bin"), path.with_suffix(".json")
    bin_path.write_bytes(b"".join(blob))
    json_path.write_text(json.dumps(manifest, indent=1))
    return bin_path, json_path


def load_params(path) -> dict[str, np.ndarray]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    data = path.with_suffix(".bin").read_bytes()
    out = {}
    for name, meta in manifest["arrays"].items():
        chunk = data[meta["offset"]:meta["offset"] + meta["nbytes"]]
        out[name] = np.frombuffer(chunk, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()
    return out
