"""From recovered graphs to labeled, tagged, undirected graphs.

Node tags come from a corpus-wide dictionary keyed on basic-block bytes;
the first new byte sequence gets tag 1, the next 2, and so on. Tag 0 is
never assigned and stands for "not in the dictionary" at inference time.
"""

from __future__ import annotations

import enum
import hashlib
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

from .cfg import CallGraph, ControlFlowGraph, Recovery
from .errors import EmptyClass, ManifestError, MissingBlock, UnknownTag

UNKNOWN_TAG = 0


class Label(enum.IntEnum):
    MALWARE = 0
    BENIGN = 1


class TagDictionary:
    """Insertion-ordered map from block bytes to dense 1-based tags."""

    def __init__(self, entries=None):
        self._tags: dict[bytes, int] = {}
        for seq in entries or ():
            self.add(seq)

    def __len__(self):
        return len(self._tags)

    def __contains__(self, seq):
        return bytes(seq) in self._tags

    def __getitem__(self, seq) -> int:
        return self._tags[bytes(seq)]

    def __eq__(self, other):
        return isinstance(other, TagDictionary) and list(self.items()) == list(other.items())

    def __repr__(self):
        return f"TagDictionary({len(self)} entries)"

    def get(self, seq, default=None):
        return self._tags.get(bytes(seq), default)

    def add(self, seq) -> int:
        seq = bytes(seq)
        if seq not in self._tags:
            self._tags[seq] = len(self._tags) + 1
        return self._tags[seq]

    def items(self):
        return self._tags.items()

    def copy(self) -> TagDictionary:
        new = TagDictionary()
        new._tags = dict(self._tags)
        return new

    def dumps(self) -> str:
        return "".join(f"{tag}\t{seq.hex()}\n" for seq, tag in self._tags.items())

    @classmethod
    def loads(cls, text: str) -> TagDictionary:
        new = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                tag_s, hex_s = line.split("\t")
                tag, seq = int(tag_s), bytes.fromhex(hex_s)
            except ValueError as exc:
                raise ValueError(f"tag dictionary line {lineno}: {exc}") from None
            if tag != len(new) + 1 or seq in new:
                raise ValueError(f"tag dictionary line {lineno}: tags must be dense and unique")
            new.add(seq)
        return new

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> TagDictionary:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def extend_tag_dictionary(blocks, tags: TagDictionary) -> TagDictionary:
    """Give every unseen block byte string the next tag. Mutates and returns ``tags``."""
    for block in blocks:
        tags.add(block.byte_string)
    return tags


@dataclass(frozen=True)
class LabeledGraph:
    """Graph in the classifier's input form.

    ``edges`` holds index pairs; after :func:`to_undirected` each pair is
    ``(u, v)`` with ``u <= v``, sorted, at most once.
    """

    node_tags: tuple[int, ...]
    edges: tuple[tuple[int, int], ...] = ()
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "node_tags", tuple(int(t) for t in self.node_tags))
        object.__setattr__(self, "edges", tuple((int(u), int(v)) for u, v in self.edges))

    @property
    def n_nodes(self) -> int:
        return len(self.node_tags)

    def with_label(self, label) -> LabeledGraph:
        return replace(self, label=None if label is None else int(label))

    def neighbors(self) -> list[list[int]]:
        """Ascending neighbor lists; a self-loop lists the node once."""
        adj = [set() for _ in self.node_tags]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return [sorted(a) for a in adj]


def to_undirected(g: LabeledGraph) -> LabeledGraph:
    pairs = sorted({(min(u, v), max(u, v)) for u, v in g.edges})
    return replace(g, edges=tuple(pairs))


def select_call_graph_nodes(
    cfg: ControlFlowGraph,
    cg: CallGraph,
    tags: TagDictionary,
    keep=None,
    unknown_tag: int | None = None,
) -> LabeledGraph:
    """One node per call-graph function, tagged with its entry block's bytes.

    Nodes are indexed by ascending entry address. ``keep`` optionally
    restricts which entries are used (edges touching dropped entries go).
    With ``unknown_tag=None`` a block missing from ``tags`` raises
    :class:`UnknownTag`; otherwise it gets ``unknown_tag``.
    """
    entries = sorted(a for a in cg.nodes if keep is None or a in keep)
    index = {a: i for i, a in enumerate(entries)}
    node_tags = []
    for addr in entries:
        block = cfg.nodes.get(addr)
        if block is None:
            raise MissingBlock(f"no CFG block starts at call-graph node {addr:#x}")
        tag = tags.get(block.byte_string)
        if tag is None:
            if unknown_tag is None:
                raise UnknownTag(f"block {addr:#x} bytes {block.byte_string.hex()} not tagged")
            tag = unknown_tag
        node_tags.append(tag)
    edges = tuple(sorted((index[s], index[d]) for s, d in cg.edges if s in index and d in index))
    return LabeledGraph(tuple(node_tags), edges)


def select_cfg_nodes(cfg: ControlFlowGraph, tags: TagDictionary, unknown_tag: int | None = None) -> LabeledGraph:
    """Whole CFG as a graph: one node per block, ascending start address."""
    starts = sorted(cfg.nodes)
    index = {a: i for i, a in enumerate(starts)}
    node_tags = []
    for a in starts:
        tag = tags.get(cfg.nodes[a].byte_string)
        if tag is None:
            if unknown_tag is None:
                raise UnknownTag(f"block {a:#x} not tagged")
            tag = unknown_tag
        node_tags.append(tag)
    edges = tuple(sorted({(index[e.src], index[e.dst]) for e in cfg.edges}))
    return LabeledGraph(tuple(node_tags), edges)


def graph_blocks(recovery: Recovery, source: str = "call_graph", include_libraries: bool = False):
    """Blocks that contribute tags for one sample, in ascending address order."""
    if source == "cfg":
        return [recovery.cfg.nodes[a] for a in sorted(recovery.cfg.nodes)]
    entries = _kept_entries(recovery, include_libraries)
    return [recovery.cfg.nodes[a] for a in sorted(entries) if a in recovery.cfg.nodes]


def _kept_entries(recovery: Recovery, include_libraries: bool) -> set[int]:
    if include_libraries:
        return set(recovery.callgraph.nodes)
    main = {f.entry for f in recovery.functions if f.library is None}
    return {a for a in recovery.callgraph.nodes if a in main}


def recovery_to_graph(
    recovery: Recovery,
    tags: TagDictionary,
    source: str = "call_graph",
    include_libraries: bool = False,
    unknown_tag: int | None = None,
) -> LabeledGraph:
    """Tagged undirected graph for one recovered sample (label unset)."""
    if source == "cfg":
        g = select_cfg_nodes(recovery.cfg, tags, unknown_tag)
    elif source == "call_graph":
        keep = _kept_entries(recovery, include_libraries)
        g = select_call_graph_nodes(recovery.cfg, recovery.callgraph, tags, keep, unknown_tag)
    else:
        raise ValueError(f"unknown graph source {source!r}")
    return to_undirected(g)


# -- manifests -------------------------------------------------------------------

_SHA256_RE = re.compile(r"^[0-9a-f]{64}$")


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    path: str
    label: int
    sha256: str


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        ids = [r.sample_id for r in records]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate sample ids in manifest")
        for r in records:
            if not _SHA256_RE.match(r.sha256):
                raise ManifestError(f"{r.sample_id}: bad sha256 digest {r.sha256!r}")
            if r.label not in (Label.MALWARE, Label.BENIGN):
                raise ManifestError(f"{r.sample_id}: label must be 0 or 1, got {r.label}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_label(self, label) -> list[ManifestRecord]:
        return [r for r in self.records if r.label == label]

    def sorted(self) -> DatasetManifest:
        return DatasetManifest(tuple(sorted(self.records, key=lambda r: r.sample_id)))

    def dumps(self) -> str:
        return "".join(f"{r.sample_id}\t{r.path}\t{r.label}\t{r.sha256}\n" for r in self.records)

    @classmethod
    def loads(cls, text: str) -> DatasetManifest:
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[2] not in ("0", "1"):
                raise ManifestError(f"manifest line {lineno}: expected id<TAB>path<TAB>0|1<TAB>sha256")
            records.append(ManifestRecord(parts[0], parts[1], int(parts[2]), parts[3]))
        return cls(tuple(records))

    @classmethod
    def load(cls, path) -> DatasetManifest:
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")


def balance_and_split(manifest: DatasetManifest, seed: int = 1, train_fraction: float = 0.8):
    """Cap both classes at the smaller class size, then split stratified.

    Each class is shuffled with a generator seeded by ``seed`` before
    truncation; the split reuses the same seed, so reruns are identical.
    Returns ``(train, test)`` manifests.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    classes = []
    for label in (Label.MALWARE, Label.BENIGN):
        recs = sorted(manifest.by_label(label), key=lambda r: r.sample_id)
        if not recs:
            raise EmptyClass(f"no samples with label {label.value} ({label.name.lower()})")
        classes.append(recs)
    cap = min(len(c) for c in classes)
    pool = []
    for recs in classes:
        order = rng.permutation(len(recs))[:cap]
        pool.extend(recs[i] for i in order)
    labels = [r.label for r in pool]
    train, test = train_test_split(
        pool, train_size=train_fraction, stratify=labels,
        random_state=int(rng.integers(2**31 - 1)))
    return DatasetManifest(tuple(train)), DatasetManifest(tuple(test))


# -- files -----------------------------------------------------------------------

def compute_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def collect_shared_libraries(root) -> list[str]:
    """Every file below ``root`` whose name contains ``.so``, sorted by path."""
    found = []
    for dirpath, _dirs, files in os.walk(root):
        for name in files:
            if ".so" in name:
                found.append(os.path.join(dirpath, name))
    return sorted(found)
