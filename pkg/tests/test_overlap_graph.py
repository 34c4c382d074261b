import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supscene.overlap_graph import (GraphFormatError, GraphValidationError, OverlapGraph,
                                    format_graph, induced_overlap_matrix, load_graph,
                                    neighbors_above, parse_graph, save_graph)


@st.composite
def graphs(draw, max_nodes=9):
    n = draw(st.integers(1, max_nodes))
    ids = [f"img{k}" for k in range(n)]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    weights = draw(st.lists(st.floats(1e-6, 1.0), min_size=len(chosen), max_size=len(chosen)))
    return OverlapGraph.from_edges("s", ids, [(i, j, w) for (i, j), w in zip(chosen, weights)])


TEXT = """# three images
scene s1 3
node 0 a
node 1 b
node 2 c
edge 0 1 0.4
"""


def test_three_node_file_with_one_edge():
    g = parse_graph(TEXT)
    assert g.scene_id == "s1" and g.num_nodes == 3
    assert g.edges == ((0, 1, 0.4),)
    assert g.weight("b", "a") == 0.4 and g.weight("a", "c") == 0.0


def test_weight_above_one_is_rejected():
    with pytest.raises(GraphValidationError):
        parse_graph(TEXT.replace("0.4", "1.5"))
    with pytest.raises(GraphValidationError):
        parse_graph(TEXT.replace("0.4", "0"))
    with pytest.raises(GraphValidationError):
        parse_graph(TEXT.replace("0.4", "nan"))


def test_empty_edge_list_is_valid():
    g = parse_graph("scene s 2\nnode 0 x\nnode 1 y\n")
    assert g.edges == ()
    np.testing.assert_array_equal(g.dense(), np.eye(2))


@pytest.mark.parametrize("text,line", [
    ("scene s 1\nnode 0 a\nedge 0 1\n", 3),
    ("scene s 1\nnode zero a\n", 2),
    ("scene s 1\nnode 0 a\nvertex 0\n", 3),
    ("scene s 1\nscene t 1\n", 2),
    ("scene s 2\nnode 0 a\nnode 0 b\n", 3),
    ("scene s 2\nnode 0 a\nnode 1 b\nedge 0 1 x\n", 4),
])
def test_malformed_lines_report_their_line_number(text, line):
    with pytest.raises(GraphFormatError) as info:
        parse_graph(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_missing_header_and_bad_node_list():
    with pytest.raises(GraphFormatError):
        parse_graph("node 0 a\n")
    with pytest.raises(GraphValidationError):
        parse_graph("scene s 3\nnode 0 a\nnode 2 c\n")


def test_dangling_endpoint_and_duplicates():
    with pytest.raises(GraphValidationError):
        parse_graph("scene s 2\nnode 0 a\nnode 1 b\nedge 0 5 0.3\n")
    with pytest.raises(GraphValidationError):
        parse_graph("scene s 2\nnode 0 a\nnode 1 b\nedge 0 1 0.3\nedge 1 0 0.3\n")
    with pytest.raises(GraphValidationError):
        parse_graph("scene s 2\nnode 0 a\nnode 1 b\nedge 1 1 0.3\n")
    with pytest.raises(GraphValidationError):
        OverlapGraph("s", ("a", "a"), ())


def test_edges_are_stored_once_with_i_below_j():
    g = OverlapGraph.from_edges("s", ["a", "b", "c"], [(2, 0, 0.3), (1, 0, 0.6)])
    assert g.edges == ((0, 1, 0.6), (0, 2, 0.3))
    with pytest.raises(GraphValidationError):
        OverlapGraph("s", ("a", "b"), ((1, 0, 0.5),))


def test_induced_matrix_examples():
    g = OverlapGraph.from_edges("s", ["a", "b", "c"], [(0, 1, 0.4)])
    np.testing.assert_array_equal(induced_overlap_matrix(g, ["a"]), [[1.0]])
    np.testing.assert_array_equal(induced_overlap_matrix(g, ["a", "b"]), [[1, 0.4], [0.4, 1]])
    m = induced_overlap_matrix(g, ["a", "b", "c"])
    assert m[0, 2] == m[1, 2] == m[2, 0] == 0.0
    np.testing.assert_array_equal(induced_overlap_matrix(g, ["b", "a"]), [[1, 0.4], [0.4, 1]])


def test_induced_matrix_rejects_bad_ids():
    g = OverlapGraph.from_edges("s", ["a", "b"], [])
    with pytest.raises(ValueError):
        induced_overlap_matrix(g, ["a", "a"])
    with pytest.raises(KeyError):
        induced_overlap_matrix(g, ["a", "zz"])


def test_neighbors_above_examples():
    g = OverlapGraph.from_edges("s", ["v", "p", "q", "lonely"], [(0, 1, 0.2), (0, 2, 0.3)])
    assert neighbors_above(g, "v", 0.0) == ["q", "p"]
    assert neighbors_above(g, "v", 0.25) == ["q"]
    assert neighbors_above(g, "v", 0.3) == ["q"]  # inclusive
    assert neighbors_above(g, "lonely", 0.0) == []
    with pytest.raises(KeyError):
        neighbors_above(g, "nobody", 0.1)


def test_neighbor_ties_break_by_id():
    g = OverlapGraph.from_edges("s", ["a", "z", "m", "b"], [(0, 1, 0.5), (0, 2, 0.5), (0, 3, 0.9)])
    assert neighbors_above(g, "a", 0.1) == ["b", "m", "z"]


@settings(max_examples=100, deadline=None)
@given(graphs(), st.data())
def test_induced_matrix_is_symmetric_with_unit_diagonal(g, data):
    nodes = data.draw(st.permutations(g.node_ids))
    k = data.draw(st.integers(1, len(nodes)))
    sub = list(nodes[:k])
    m = induced_overlap_matrix(g, sub)
    np.testing.assert_array_equal(m, m.T)
    np.testing.assert_array_equal(np.diag(m), 1.0)
    for a in range(k):
        for b in range(k):
            if a != b:
                assert m[a, b] == g.weight(sub[a], sub[b])


@settings(max_examples=100, deadline=None)
@given(graphs())
def test_text_round_trip_is_exact(g):
    back = parse_graph(format_graph(g))
    assert back == g


def test_file_round_trip(tmp_path):
    g = OverlapGraph.from_edges("scene_x", ["a", "b", "c"], [(0, 1, 1 / 3), (1, 2, 0.1 + 0.2)])
    save_graph(g, tmp_path / "g.graph")
    assert load_graph(tmp_path / "g.graph") == g


@settings(max_examples=100, deadline=None)
@given(graphs(), st.floats(0, 1), st.floats(0, 1))
def test_neighbors_above_is_nested_in_tau(g, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    for v in g.node_ids:
        assert set(neighbors_above(g, v, lo)) >= set(neighbors_above(g, v, hi))
