import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from armgraph.arm import Kind
from armgraph.cfg import BasicBlock, CallGraph, ControlFlowGraph, recover_cfg
from armgraph.elf import parse_executable
from armgraph.errors import EmptyClass, ManifestError, MissingBlock, UnknownTag
from armgraph.prep import (
    DatasetManifest,
    LabeledGraph,
    ManifestRecord,
    TagDictionary,
    balance_and_split,
    collect_shared_libraries,
    compute_sha256,
    extend_tag_dictionary,
    graph_blocks,
    recovery_to_graph,
    select_call_graph_nodes,
    to_undirected,
)
from conftest import BAR, FOO, MAIN, three_function_elf


def blk(data, start=0):
    return BasicBlock(start, data, max(1, len(data) // 4), False, Kind.FALLTHROUGH)


# -- tag dictionary --------------------------------------------------------------

def test_first_block_gets_tag_one():
    d = extend_tag_dictionary([blk(b"AB")], TagDictionary())
    assert list(d.items()) == [(b"AB", 1)]


def test_duplicates_leave_dictionary_unchanged():
    d = TagDictionary({b"AB": 1})
    assert extend_tag_dictionary([blk(b"AB")], d) == TagDictionary({b"AB": 1})


def test_tags_follow_insertion_order():
    d = extend_tag_dictionary([blk(b"AB"), blk(b"CD")], TagDictionary())
    assert list(d.items()) == [(b"AB", 1), (b"CD", 2)]


@given(st.lists(st.binary(min_size=1, max_size=6), max_size=40))
def test_dictionary_is_dense_and_injective(seqs):
    d = extend_tag_dictionary([blk(s) for s in seqs], TagDictionary())
    assert sorted(t for _, t in d.items()) == list(range(1, len(set(seqs)) + 1))
    assert TagDictionary.loads(d.dumps()) == d


def test_dictionary_file_format():
    d = TagDictionary({b"\x1e\xff\x2f\xe1": 1, b"AB": 2})
    assert d.dumps() == "1\t1eff2fe1\n2\t4142\n"


@pytest.mark.parametrize("text", ["2\t41\n", "1\t41\n1\t42\n", "1\t41\n2\t41\n", "x\t41\n"])
def test_dictionary_rejects_malformed(text):
    with pytest.raises(ValueError):
        TagDictionary.loads(text)


# -- node selection ----------------------------------------------------------------

def test_three_function_selection():
    rec = recover_cfg(parse_executable(three_function_elf()))
    tags = extend_tag_dictionary(graph_blocks(rec), TagDictionary())
    g = select_call_graph_nodes(rec.cfg, rec.callgraph, tags)
    assert sorted(g.node_tags) == [1, 2, 3]
    idx = {FOO: 0, BAR: 1, MAIN: 2}
    assert set(g.edges) == {(idx[MAIN], idx[FOO]), (idx[MAIN], idx[BAR]), (idx[BAR], idx[FOO])}


def test_empty_call_graph():
    g = select_call_graph_nodes(ControlFlowGraph(), CallGraph(), TagDictionary())
    assert g.node_tags == () and g.edges == ()


def test_identical_bodies_share_tag():
    cfg = ControlFlowGraph({0x1000: blk(b"\x1e\xff\x2f\xe1", 0x1000), 0x2000: blk(b"\x1e\xff\x2f\xe1", 0x2000)})
    cg = CallGraph((0x1000, 0x2000), ())
    tags = extend_tag_dictionary(cfg.nodes.values(), TagDictionary())
    assert select_call_graph_nodes(cfg, cg, tags).node_tags == (1, 1)


def test_missing_block_and_unknown_tag():
    cfg = ControlFlowGraph({0x1000: blk(b"AAAA", 0x1000)})
    with pytest.raises(MissingBlock):
        select_call_graph_nodes(cfg, CallGraph((0x2000,), ()), TagDictionary())
    with pytest.raises(UnknownTag):
        select_call_graph_nodes(cfg, CallGraph((0x1000,), ()), TagDictionary())
    g = select_call_graph_nodes(cfg, CallGraph((0x1000,), ()), TagDictionary(), unknown_tag=0)
    assert g.node_tags == (0,)


def test_recovery_to_graph_is_undirected():
    rec = recover_cfg(parse_executable(three_function_elf()))
    tags = extend_tag_dictionary(graph_blocks(rec), TagDictionary())
    g = recovery_to_graph(rec, tags)
    assert g.edges == ((0, 1), (0, 2), (1, 2))
    cfg_graph = recovery_to_graph(rec, extend_tag_dictionary(graph_blocks(rec, "cfg"), TagDictionary()), "cfg")
    assert cfg_graph.n_nodes == 6


# -- undirected conversion -------------------------------------------------------

@pytest.mark.parametrize("edges,expected", [
    (((0, 1),), ((0, 1),)),
    (((0, 1), (1, 0)), ((0, 1),)),
    (((2, 2),), ((2, 2),)),
])
def test_to_undirected(edges, expected):
    assert to_undirected(LabeledGraph((1, 1, 1), edges)).edges == expected


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=20))
def test_to_undirected_properties(edges):
    g = to_undirected(LabeledGraph((1,) * 6, tuple(edges)))
    assert len(set(g.edges)) == len(g.edges)
    assert all(u <= v for u, v in g.edges)
    assert {frozenset(e) for e in g.edges} == {frozenset(e) for e in edges}
    assert to_undirected(g) == g


# -- manifests and balancing -----------------------------------------------------

def manifest(n_malware, n_benign):
    recs = [ManifestRecord(f"m{i:04d}", f"/m/{i}", 0, hashlib.sha256(b"m%d" % i).hexdigest())
            for i in range(n_malware)]
    recs += [ManifestRecord(f"b{i:04d}", f"/b/{i}", 1, hashlib.sha256(b"b%d" % i).hexdigest())
             for i in range(n_benign)]
    return DatasetManifest(tuple(recs))


def test_balance_caps_at_smaller_class():
    train, test = balance_and_split(manifest(1054, 547), seed=1)
    pool = list(train) + list(test)
    assert sum(r.label == 0 for r in pool) == 547
    assert sum(r.label == 1 for r in pool) == 547
    assert len({r.sample_id for r in pool}) == 1094


def test_split_sizes():
    train, test = balance_and_split(manifest(10, 10), seed=1, train_fraction=0.8)
    assert (len(train), len(test)) == (16, 4)
    assert sum(r.label for r in test) == 2
    assert not {r.sample_id for r in train} & {r.sample_id for r in test}


def test_split_is_deterministic_and_seeded():
    m = manifest(30, 20)
    assert balance_and_split(m, seed=7) == balance_and_split(m, seed=7)
    assert balance_and_split(m, seed=7) == balance_and_split(DatasetManifest(tuple(reversed(m.records))), seed=7)
    assert balance_and_split(m, seed=7) != balance_and_split(m, seed=8)


def test_empty_class():
    with pytest.raises(EmptyClass):
        balance_and_split(manifest(3, 0))


def test_manifest_validation_and_round_trip():
    m = manifest(2, 2)
    assert DatasetManifest.loads(m.dumps()) == m
    with pytest.raises(ManifestError):
        DatasetManifest((ManifestRecord("a", "p", 0, "0" * 64), ManifestRecord("a", "q", 1, "1" * 64)))
    with pytest.raises(ManifestError):
        DatasetManifest((ManifestRecord("a", "p", 0, "ABC"),))
    with pytest.raises(ManifestError):
        DatasetManifest.loads("a\tp\t2\t" + "0" * 64 + "\n")


# -- files -----------------------------------------------------------------------

def test_sha256_of_empty_file(tmp_path):
    p = tmp_path / "empty"
    p.write_bytes(b"")
    assert compute_sha256(p) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_collect_shared_libraries(tmp_path):
    for rel in ("a/libc.so.6", "a/readme.txt", "b/c/libm.so"):
        p = tmp_path / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(b"")
    found = [str(p.relative_to(tmp_path)) for p in map(__import__("pathlib").Path, collect_shared_libraries(tmp_path))]
    assert found == ["a/libc.so.6", "b/c/libm.so"]
