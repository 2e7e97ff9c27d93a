"""Static ARM ELF control-flow recovery and mean-field graph classification."""

from .cfg import CallGraph, ControlFlowGraph, GraphStats, Recovery, compute_stats, coverage_compare, recover_cfg
from .dataset import read_dataset, write_dataset
from .elf import BinaryImage, load_executable, parse_executable, resolve_dependencies
from .estimator import CallGraphTagger, S2VClassifier
from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics
from .model import Hyperparams, ModelParams
from .prep import DatasetManifest, Label, LabeledGraph, TagDictionary, balance_and_split, to_undirected

__version__ = "0.1.0"

__all__ = [
    "BinaryImage", "CallGraph", "CallGraphTagger", "ConfusionMatrix", "ControlFlowGraph",
    "DatasetManifest", "GraphStats", "Hyperparams", "Label", "LabeledGraph", "MetricsReport",
    "ModelParams", "Recovery", "S2VClassifier", "TagDictionary", "balance_and_split",
    "compute_stats", "confusion", "coverage_compare", "load_executable", "metrics",
    "parse_executable", "read_dataset", "recover_cfg", "resolve_dependencies",
    "to_undirected", "write_dataset",
]
