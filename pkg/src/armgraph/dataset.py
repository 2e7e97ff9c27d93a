"""Reader and writer for the structure2vec graph-classification text format.

    N
    n label            # N times
    tag m j1 ... jm    # n times, 0-based neighbor indices

Undirected edges are listed at both endpoints, self-loops once, neighbors
in ascending order.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path

from .errors import ConsistencyError, IndexOutOfRange, InvalidGraph, ParseError
from .prep import LabeledGraph


def write_dataset(graphs) -> str:
    graphs = list(graphs)
    lines = [str(len(graphs))]
    for gi, g in enumerate(graphs):
        if g.label not in (0, 1):
            raise InvalidGraph(f"graph {gi}: label must be 0 or 1, got {g.label!r}")
        n = g.n_nodes
        for u, v in g.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidGraph(f"graph {gi}: edge ({u}, {v}) out of range for {n} nodes")
        if any(t < 0 for t in g.node_tags):
            raise InvalidGraph(f"graph {gi}: negative node tag")
        lines.append(f"{n} {g.label}")
        for tag, nbrs in zip(g.node_tags, g.neighbors()):
            lines.append(" ".join(map(str, [tag, len(nbrs), *nbrs])))
    return "\n".join(lines) + "\n"


def _ints(tokens, lineno, what):
    try:
        values = [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-integer token in {what}: {' '.join(tokens)!r}", lineno) from None
    if any(v < 0 for v in values):
        raise ParseError(f"negative value in {what}", lineno)
    return values


def read_dataset(text: str) -> list[LabeledGraph]:
    """Parse a dataset, checking each graph's node count and edge symmetry.

    Raises :class:`ParseError`, :class:`IndexOutOfRange` or
    :class:`ConsistencyError`, each carrying the offending line number.
    """
    if not text:
        raise ParseError("empty input", 1)
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    pos = 0

    def next_line(what):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of input, expected {what}", pos + 1)
        pos += 1
        return lines[pos - 1].split(), pos

    tokens, lineno = next_line("graph count")
    if len(tokens) != 1:
        raise ParseError("first line must hold the graph count", lineno)
    (count,) = _ints(tokens, lineno, "graph count")

    graphs = []
    for _ in range(count):
        tokens, header_line = next_line("graph header")
        if len(tokens) != 2:
            raise ParseError("graph header must be '<nodes> <label>'", header_line)
        n, label = _ints(tokens, header_line, "graph header")
        tags = []
        neighbor_lists = []
        for i in range(n):
            tokens, lineno = next_line(f"node line {i}")
            if len(tokens) < 2:
                raise ParseError("node line must be '<tag> <m> <neighbors...>'", lineno)
            tag, m, *nbrs = _ints(tokens, lineno, "node line")
            if len(nbrs) != m:
                raise ParseError(f"node declares {m} neighbors but lists {len(nbrs)}", lineno)
            for j in nbrs:
                if j >= n:
                    raise IndexOutOfRange(f"neighbor index {j} >= node count {n}", lineno)
            if len(set(nbrs)) != len(nbrs):
                raise ConsistencyError("duplicate neighbor index", lineno)
            tags.append(tag)
            neighbor_lists.append(nbrs)

        listed = Counter()
        for i, nbrs in enumerate(neighbor_lists):
            for j in nbrs:
                listed[(i, j)] += 1
        for (i, j) in listed:
            if listed[(j, i)] != listed[(i, j)]:
                raise ConsistencyError(
                    f"node {i} lists neighbor {j} but node {j} does not list {i}",
                    header_line + 1 + i)
        edges = sorted({(min(i, j), max(i, j)) for (i, j) in listed})
        # declared degree sum must match what the undirected edge set implies
        implied = sum(1 if u == v else 2 for u, v in edges)
        if implied != sum(len(x) for x in neighbor_lists):
            raise ConsistencyError("edge count does not match neighbor lists", header_line)
        graphs.append(LabeledGraph(tuple(tags), tuple(edges), label))

    for rest in range(pos, len(lines)):
        if lines[rest].strip():
            raise ParseError("trailing content after the last graph", rest + 1)
    return graphs


def label_universe(graphs) -> list[int]:
    """Labels in first-seen order, the way the loader assigns class ids."""
    seen = {}
    for g in graphs:
        seen.setdefault(g.label, len(seen))
    return list(seen)


def save_dataset(graphs, path):
    Path(path).write_bytes(write_dataset(graphs).encode("utf-8"))


def load_dataset(path) -> list[LabeledGraph]:
    return read_dataset(Path(path).read_bytes().decode("utf-8"))
