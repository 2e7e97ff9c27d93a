import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armgraph.dataset import label_universe, load_dataset, read_dataset, save_dataset, write_dataset
from armgraph.errors import ConsistencyError, DatasetFormatError, IndexOutOfRange, InvalidGraph, ParseError
from armgraph.prep import LabeledGraph

ONE_NODE = LabeledGraph((7,), (), 0)
TWO_NODES = LabeledGraph((1, 2), ((0, 1),), 1)


@st.composite
def graphs(draw, max_nodes=30):
    n = draw(st.integers(0, max_nodes))
    tags = draw(st.lists(st.integers(0, 1000), min_size=n, max_size=n))
    edges = ()
    if n:
        pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
        edges = tuple(sorted({(min(u, v), max(u, v)) for u, v in pairs}))
    return LabeledGraph(tuple(tags), edges, draw(st.sampled_from([0, 1])))


datasets = st.lists(graphs(), max_size=10)


def test_write_empty():
    assert write_dataset([]) == "0\n"


def test_write_single_node():
    assert write_dataset([ONE_NODE]) == "1\n1 0\n7 0\n"


def test_write_one_edge():
    assert write_dataset([TWO_NODES]) == "1\n2 1\n1 1 1\n2 1 0\n"


def test_self_loop_listed_once():
    assert write_dataset([LabeledGraph((3,), ((0, 0),), 0)]) == "1\n1 0\n3 1 0\n"


def test_write_rejects_bad_label_and_edge():
    with pytest.raises(InvalidGraph):
        write_dataset([LabeledGraph((1,), (), 2)])
    with pytest.raises(InvalidGraph):
        write_dataset([LabeledGraph((1,), ((0, 1),), 0)])


def test_read_examples():
    assert read_dataset("0\n") == []
    assert read_dataset("1\n1 0\n7 0\n") == [ONE_NODE]
    assert read_dataset("1\n2 1\n1 1 1\n2 1 0\n") == [TWO_NODES]


def test_asymmetric_adjacency():
    with pytest.raises(ConsistencyError) as exc:
        read_dataset("1\n2 1\n1 1 1\n2 0\n")
    assert exc.value.line == 3


@pytest.mark.parametrize("text,error,line", [
    ("", ParseError, 1),
    ("x\n", ParseError, 1),
    ("1\n2 0\n1 0\n", ParseError, 4),          # missing node line
    ("1\n1 0\n1 2 0\n", ParseError, 3),        # declared 2 neighbors, listed 1
    ("1\n1 0\n1 0\n5\n", ParseError, 4),       # trailing content
    ("1\n1 0\n-1 0\n", ParseError, 3),
    ("1\n2 0\n1 1 2\n1 0\n", IndexOutOfRange, 3),
    ("1\n2 0\n1 2 1 1\n1 2 0 0\n", ConsistencyError, 3),
])
def test_typed_errors_carry_line(text, error, line):
    with pytest.raises(error) as exc:
        read_dataset(text)
    assert isinstance(exc.value, DatasetFormatError)
    assert exc.value.line == line


def test_reader_accepts_other_labels():
    gs = read_dataset("2\n1 5\n1 0\n1 3\n1 0\n")
    assert [g.label for g in gs] == [5, 3]
    assert label_universe(gs) == [5, 3]


@settings(max_examples=200, deadline=None)
@given(datasets)
def test_round_trip(gs):
    text = write_dataset(gs)
    assert read_dataset(text) == gs
    assert write_dataset(read_dataset(text)) == text


def test_file_round_trip(tmp_path):
    save_dataset([ONE_NODE, TWO_NODES], tmp_path / "d.txt")
    assert (tmp_path / "d.txt").read_bytes() == b"2\n1 0\n7 0\n2 1\n1 1 1\n2 1 0\n"
    assert load_dataset(tmp_path / "d.txt") == [ONE_NODE, TWO_NODES]
