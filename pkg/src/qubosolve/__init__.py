"""Per-instance unsupervised GNN solver (QRF-GNN) for QUBO problems on graphs.

Max-Cut, graph coloring and maximum independent set are supported, together
with a small reverse-mode autodiff engine, classical baselines and a CLI.
"""

__version__ = "0.1.0"

from .graph import Graph, gen_erdos_renyi, gen_random_regular, load_dimacs_col, load_edge_list
from .qubo import Assignment, Metrics, discretize, evaluate, relaxed_loss
from .model import ModelConfig
from .trainer import RunResult, TrainConfig, chromatic_search, multi_seed, train

__all__ = [
    "Assignment", "Graph", "Metrics", "ModelConfig", "RunResult", "TrainConfig",
    "chromatic_search", "discretize", "evaluate", "gen_erdos_renyi", "gen_random_regular",
    "load_dimacs_col", "load_edge_list", "multi_seed", "relaxed_loss", "train",
]
