import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossipsim import bits
from gossipsim.graph import (
    DisconnectedGraphError,
    DuplicateEdgeError,
    Graph,
    GraphKind,
    InvalidParamsError,
    ParseError,
    SelfLoopError,
    UnknownUIDError,
    corpus_specs,
    diameter,
    generate,
    k_hop_bits,
    log2ceil,
    make,
    neighborhood,
    read_edge_list,
    shortest_path_len,
    write_edge_list,
)


def to_nx(g):
    h = nx.Graph()
    h.add_nodes_from(range(g.n))
    h.add_edges_from(g.edges().tolist())
    return h


def test_log2ceil():
    assert [log2ceil(n) for n in (1, 2, 3, 4, 5, 16, 17, 4096)] == [0, 1, 2, 2, 3, 4, 5, 12]


def test_smallest_path():
    g = make("path", 2)
    assert g.edges().tolist() == [[0, 1]]


def test_k4():
    g = make("complete", 4)
    assert g.m == 6
    assert g.degrees.tolist() == [3, 3, 3, 3]


def test_gnp_pinned():
    # pinned at first generation; guards generator determinism
    g = make("random-gnp", 64, seed=7, p=0.1)
    assert g.is_connected()
    assert g.m == 214
    assert np.array_equal(g.edges(), make("random-gnp", 64, seed=7, p=0.1).edges())


def test_neighborhood_examples():
    p5 = make("path", 5)
    assert neighborhood(p5, 2, 1) == {1, 2, 3}
    assert neighborhood(p5, 4, 0) == {4}
    assert len(neighborhood(make("hypercube", 16), 0, 2)) == 11


def test_diameter_examples():
    assert diameter(make("complete", 4)) == 1
    assert diameter(make("cycle", 8)) == 4
    bar = generate(GraphKind("barbell", {"clique": 8, "bridge": 5}))
    assert bar.n == 20
    assert diameter(bar) == 7


def test_shortest_path_examples():
    assert shortest_path_len(make("path", 3), 0, 2) == 2
    assert shortest_path_len(make("cycle", 5), 3, 3) == 0
    assert shortest_path_len(make("hypercube", 16), 0, 15) == 4


def test_unknown_uid():
    g = make("path", 3)
    with pytest.raises(UnknownUIDError):
        neighborhood(g, 7, 1)
    with pytest.raises(UnknownUIDError):
        shortest_path_len(g, 0, 9)


def test_hopeless_gnp_gives_up():
    with pytest.raises(InvalidParamsError, match="no connected"):
        make("random-gnp", 40, seed=0, p=0.001)


def test_disconnected_diameter():
    g = Graph.from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(DisconnectedGraphError):
        diameter(g)


@pytest.mark.parametrize("spec", [
    GraphKind("hypercube", {"n": 12}),
    GraphKind("cycle", {"n": 2}),
    GraphKind("random-gnp", {"n": 8, "p": 1.5}),
    GraphKind("grid2d", {"n": 10}),
    GraphKind("path", {}),
    GraphKind("moebius", {"n": 8}),
])
def test_invalid_params(spec):
    with pytest.raises(InvalidParamsError):
        generate(spec)


def test_edge_list_roundtrip():
    g = read_edge_list("0 1\n1 2\n")
    assert g.n == 3 and g.edges().tolist() == [[0, 1], [1, 2]]
    text = "# sparse ids\n30 10\n\n10 20\n"
    h = read_edge_list(text)
    assert h.uids == (10, 20, 30)
    assert write_edge_list(h) == "10 20\n10 30\n"
    assert write_edge_list(read_edge_list(write_edge_list(h))) == write_edge_list(h)


@pytest.mark.parametrize("text, exc, line", [
    ("0 0\n", SelfLoopError, 1),
    ("0 1\n1 0\n", DuplicateEdgeError, 2),
    ("0 1\n1 x\n", ParseError, 2),
    ("0 1 2\n", ParseError, 1),
])
def test_edge_list_errors(text, exc, line):
    with pytest.raises(exc) as info:
        read_edge_list(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_corpus_shape():
    specs = corpus_specs((16, 64))
    kinds = {s.kind for s in specs}
    assert kinds == {"path", "cycle", "star", "complete", "hypercube", "grid2d", "random-gnp",
                     "random-tree", "barbell", "caterpillar"}
    for s in specs:
        g = generate(s)
        assert g.is_connected(), s


@pytest.mark.parametrize("spec", corpus_specs((16, 64)), ids=lambda s: s.label())
def test_corpus_against_networkx(spec):
    g = generate(spec)
    h = to_nx(g)
    assert nx.is_connected(h)
    assert diameter(g) == nx.diameter(h)
    adj = bits.to_bool(g.adj_bits, g.n)
    assert np.array_equal(adj, adj.T)
    assert not adj.diagonal().any()
    for v in range(0, g.n, 7):
        assert neighborhood(g, v, 1) == {v} | set(g.neighbors(v).tolist())
        assert list(g.neighbors(v)) == sorted(g.neighbors(v))


def test_standard_diameters():
    for n in (2, 5, 16):
        assert diameter(make("path", n)) == n - 1
        assert diameter(make("complete", n)) == 1
    for n in (3, 8, 11):
        assert diameter(make("cycle", n)) == n // 2


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), p=st.floats(0.05, 0.6), seed=st.integers(0, 10**6), k=st.integers(0, 6))
def test_k_hop_bits_match_bfs(n, p, seed, k):
    # keep p above the connectivity threshold; the generator only returns connected graphs
    g = make("random-gnp", n, seed=seed, p=min(1.0, max(p, 2 * math.log(n) / n)))
    rows = bits.to_sets(k_hop_bits(g, k), g.n)
    lengths = dict(nx.all_pairs_shortest_path_length(to_nx(g)))
    for v in range(g.n):
        want = {u for u, d in lengths[v].items() if d <= k}
        assert rows[v] == want == neighborhood(g, v, k)
        assert neighborhood(g, v, k) <= neighborhood(g, v, k + 1)
    assert neighborhood(g, 0, diameter(g)) == set(range(g.n))
