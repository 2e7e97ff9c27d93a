"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from .errors import FeatureMismatch, InvalidGraph
from .prep import LabeledGraph


def check_graphs(X, require_labels: bool = False) -> list[LabeledGraph]:
    """Validate an iterable of :class:`LabeledGraph` and return it as a list."""
    if isinstance(X, LabeledGraph) or not isinstance(X, Iterable):
        raise TypeError("expected an iterable of LabeledGraph")
    graphs = list(X)
    for i, g in enumerate(graphs):
        if not isinstance(g, LabeledGraph):
            raise TypeError(f"item {i} is {type(g).__name__}, not LabeledGraph")
        n = g.n_nodes
        if any(t < 0 for t in g.node_tags):
            raise InvalidGraph(f"graph {i}: negative node tag")
        for u, v in g.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidGraph(f"graph {i}: edge ({u}, {v}) out of range")
        if require_labels and (g.label is None or g.label < 0):
            raise InvalidGraph(f"graph {i}: missing label")
    return graphs


def check_labels(y, graphs) -> np.ndarray:
    """Class indices for ``graphs``; taken from the graphs when ``y`` is None."""
    if y is None:
        check_graphs(graphs, require_labels=True)
        y = [g.label for g in graphs]
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(graphs):
        raise ValueError(f"y has shape {y.shape}, expected ({len(graphs)},)")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
        raise ValueError("labels must be non-negative integers")
    return y.astype(np.int64)


def map_unknown_tags(graphs, feat_dim: int, policy: str = "map") -> list[LabeledGraph]:
    """Tags above ``feat_dim`` become 0 (``"map"``) or raise (``"error"``)."""
    out = []
    for i, g in enumerate(graphs):
        if not g.node_tags or max(g.node_tags) <= feat_dim:
            out.append(g)
            continue
        if policy == "error":
            raise FeatureMismatch(
                f"graph {i}: tag {max(g.node_tags)} exceeds the model's feat_dim {feat_dim}")
        tags = tuple(t if t <= feat_dim else 0 for t in g.node_tags)
        out.append(LabeledGraph(tags, g.edges, g.label))
    return out
