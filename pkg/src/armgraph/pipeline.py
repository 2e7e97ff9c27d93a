"""Batch drivers: per-binary recovery, corpus extraction and dataset preparation."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .cfg import Recovery, compute_stats, coverage_compare, executable_addresses, format_edge_list, recover_cfg
from .dataset import save_dataset
from .elf import load_executable, resolve_dependencies
from .errors import ArmGraphError, DigestMismatch
from .prep import (
    DatasetManifest,
    TagDictionary,
    balance_and_split,
    compute_sha256,
    extend_tag_dictionary,
    graph_blocks,
    recovery_to_graph,
)

logger = logging.getLogger(__name__)


def sample_search_paths(lib_paths, sample_id: str = "", sha256: str = "") -> list[str]:
    """Expand ``{sample_id}`` / ``{sha256}`` placeholders in library paths,
    for corpora that keep each sample's libraries in its own folder."""
    return [str(p).format(sample_id=sample_id, sha256=sha256) for p in lib_paths or ()]


def analyze_binary(path, lib_paths=(), strict: bool = False, seeds: str = "all") -> Recovery:
    image = load_executable(path)
    libraries = resolve_dependencies(image, lib_paths, strict=strict) if lib_paths or strict else []
    return recover_cfg(image, libraries, seeds=seeds)


def _analyze_job(job):
    path, lib_paths, strict = job
    return analyze_binary(path, lib_paths, strict)


def _safe_job(job):
    try:
        return _analyze_job(job), None
    except (ArmGraphError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def run_jobs(fn, jobs_list, jobs: int | None):
    """``map`` that fans out over processes when ``jobs`` > 1; order preserved."""
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(jobs_list) <= 1:
        return [fn(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=min(jobs, len(jobs_list))) as pool:
        return list(pool.map(fn, jobs_list))


@dataclass
class StatsRow:
    sample: str
    path: str
    nodes: int
    edges: int
    components: int
    syscall_nodes: int
    functions: int
    callgraph_edges: int

    HEADER = "sample\tpath\tnodes\tedges\tcomponents\tsyscall_nodes\tfunctions\tcallgraph_edges"

    def tsv(self) -> str:
        return "\t".join(map(str, (self.sample, self.path, self.nodes, self.edges, self.components,
                                   self.syscall_nodes, self.functions, self.callgraph_edges)))


def stats_row(sample: str, path, recovery: Recovery) -> StatsRow:
    st = compute_stats(recovery.cfg)
    return StatsRow(sample, str(path), st.node_count, st.edge_count, st.weak_component_count,
                    st.syscall_node_count, len(recovery.callgraph.nodes), len(recovery.callgraph.edges))


def _sample_names(paths) -> list[str]:
    names, used = [], {}
    for p in paths:
        base = Path(p).name
        n = used.get(base, 0)
        used[base] = n + 1
        names.append(base if n == 0 else f"{base}-{n}")
    return names


def extract(paths, out_dir, lib_paths=(), strict=False, jobs=None):
    """Recover every binary, writing edge lists and ``stats.tsv`` to ``out_dir``.

    Failures are logged and reported, not raised. Returns ``(rows, failures)``
    where ``failures`` maps path to error text.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [str(p) for p in paths]
    results = run_jobs(_safe_job, [(p, sample_search_paths(lib_paths), strict) for p in paths], jobs)
    rows, failures = [], {}
    for name, path, (recovery, error) in zip(_sample_names(paths), paths, results):
        if error is not None:
            logger.error("%s: %s", path, error)
            failures[path] = error
            continue
        (out_dir / f"{name}.cfg.edges").write_text(format_edge_list(recovery.cfg))
        (out_dir / f"{name}.cg.edges").write_text(format_edge_list(recovery.callgraph))
        rows.append(stats_row(name, path, recovery))
    (out_dir / "stats.tsv").write_text("\n".join([StatsRow.HEADER] + [r.tsv() for r in rows]) + "\n")
    return rows, failures


def coverage_table(path, lib_paths=(), strict=False) -> tuple[int, int, int, int]:
    """Address coverage of all-seeds recovery vs entry-only recovery."""
    image = load_executable(path)
    libraries = resolve_dependencies(image, lib_paths, strict=strict) if lib_paths or strict else []
    full = compute_stats(recover_cfg(image, libraries, seeds="all").cfg)
    entry = compute_stats(recover_cfg(image, libraries, seeds="entry").cfg)
    universe = executable_addresses(image)
    # library addresses are outside the main image's universe
    return coverage_compare(full.covered_addresses & universe, entry.covered_addresses & universe, universe)


@dataclass
class PreparedDataset:
    train_graphs: list
    test_graphs: list
    tags: TagDictionary
    train: DatasetManifest
    test: DatasetManifest


def prepare(manifest: DatasetManifest, seed=1, train_fraction=0.8, source="call_graph",
            include_libraries=False, lib_paths=(), strict=False, jobs=None,
            verify_digests=True) -> PreparedDataset:
    """Recover, tag and split a labeled corpus.

    The tag dictionary is built over every manifest sample in ascending
    sample-id order, then the corpus is balanced and split.
    """
    manifest = manifest.sorted()
    records = list(manifest)
    if verify_digests:
        for r in records:
            actual = compute_sha256(r.path)
            if actual != r.sha256:
                raise DigestMismatch(f"{r.sample_id}: {r.path} has sha256 {actual}, manifest says {r.sha256}")
    # balance first so an empty class fails before any recovery work
    train_m, test_m = balance_and_split(manifest, seed=seed, train_fraction=train_fraction)

    job_list = [(r.path, sample_search_paths(lib_paths, r.sample_id, r.sha256), strict) for r in records]
    recoveries = {}
    for r, (result, error) in zip(records, run_jobs(_safe_job, job_list, jobs)):
        if error is not None:
            raise ArmGraphError(f"sample {r.sample_id} ({r.path}): {error}")
        recoveries[r.sample_id] = result

    tags = TagDictionary()
    for r in records:
        extend_tag_dictionary(graph_blocks(recoveries[r.sample_id], source, include_libraries), tags)

    def graphs_for(split):
        out = []
        for r in split:
            try:
                g = recovery_to_graph(recoveries[r.sample_id], tags, source, include_libraries)
            except ArmGraphError as exc:
                raise type(exc)(f"sample {r.sample_id}: {exc}") from exc
            out.append(g.with_label(r.label))
        return out

    return PreparedDataset(graphs_for(train_m), graphs_for(test_m), tags, train_m, test_m)


def write_prepared(prepared: PreparedDataset, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(prepared.train_graphs, out_dir / "train.txt")
    save_dataset(prepared.test_graphs, out_dir / "test.txt")
    prepared.tags.save(out_dir / "tags.tsv")
    prepared.train.save(out_dir / "train.manifest")
    prepared.test.save(out_dir / "test.manifest")
