import csv
import io

import numpy as np
import pytest

from gossipsim import bits
from gossipsim.graph import Graph, log2ceil, make
from gossipsim.policies import MinUID, SeededRandom, XorNearest
from gossipsim.protocols import tree_gossip
from gossipsim.verification import (
    InvariantViolation,
    NodeNotActiveError,
    WitnessForest,
    WitnessTree,
    check_local_broadcast,
    check_symmetry,
    extract_spanner,
    extract_witness_tree,
    k_hop_spanner_experiment,
    links_by_creator,
    local_broadcast_gaps,
    spanner_stats,
    spanner_stats_csv,
    stretch_samples_csv,
    unknown_neighbor_pairs,
)


def test_local_broadcast_and_symmetry_checks():
    g = make("path", 3)
    assert check_local_broadcast(g, 1, [{0, 1}, {0, 1, 2}, {1, 2}])
    assert not check_local_broadcast(g, 2, [{0, 1}, {0, 1, 2}, {1, 2}])
    assert local_broadcast_gaps(g, 2, [{0, 1}, {0, 1, 2}, {1, 2}]).tolist() == [1, 0, 1]
    assert check_symmetry([{0, 1}, {1}, {2}]) == [(0, 1)]
    assert check_symmetry([{0, 2}, {1}, {0, 2}]) == []
    assert unknown_neighbor_pairs(g, [{0}, {1, 2}, {1, 2}]).tolist() == [[0, 1]]


def test_witness_trees_k4_xor():
    # v links v^1 then v^2, so T_2(0) = {0, 1} plus T_1(2) = {2, 3}
    run = tree_gossip(make("complete", 4), XorNearest())
    terms = [extract_witness_tree(run.trace, v, 2).term() for v in range(4)]
    assert terms == ["0(1:1,2:2(1:3))", "1(1:0,2:3(1:2))", "2(1:3,2:0(1:1))", "3(1:2,2:1(1:0))"]
    assert extract_witness_tree(run.trace, 2, 2).term(uids=[10, 11, 12, 13]) == "12(1:13,2:10(1:11))"


def test_witness_tree_inactive_node():
    run = tree_gossip(make("path", 2), MinUID())
    assert extract_witness_tree(run.trace, 0, 1).term() == "0(1:1)"
    with pytest.raises(NodeNotActiveError):
        extract_witness_tree(run.trace, 0, 2)


def test_witness_tree_validate_rejects_bad_shapes():
    with pytest.raises(InvariantViolation):
        WitnessTree(0, 1, [(0, 0, 1)]).validate()
    with pytest.raises(InvariantViolation):
        WitnessTree(0, 2, [(0, 1, 1), (0, 2, 2), (1, 3, 1)]).validate()
    with pytest.raises(InvariantViolation):
        WitnessTree(0, 1, [(0, 1, 2)]).validate()


@pytest.mark.parametrize("kind", ["hypercube", "grid2d", "random-gnp", "caterpillar"])
def test_forest_matches_extracted_trees(kind):
    g = make(kind, 64, seed=3, **({"p": 0.1} if kind == "random-gnp" else {}))
    run = tree_gossip(g, SeededRandom(3))
    links = links_by_creator(run.trace)
    forest = WitnessForest(g.n)
    for i in range(1, run.report.iterations + 1):
        creators = np.array([v for v in links if i in links[v]], dtype=np.int64)
        peers = np.array([links[v][i] for v in creators.tolist()], dtype=np.int64)
        forest.advance(creators, peers)
        assert forest.bad_sizes().size == 0
        sets = bits.to_sets(forest.sets, g.n)
        trees = {}
        for v in creators.tolist():
            if forest.valid[v]:
                trees[v] = set(extract_witness_tree(run.trace, v, i, links).nodes)
                assert trees[v] == sets[v]
        act = sorted(trees)
        us, vs = np.array([(a, b) for a in act for b in act if a < b], dtype=np.int64).reshape(-1, 2).T
        inter = forest.intersecting(us, vs)
        for a, b, x in zip(us.tolist(), vs.tolist(), inter.tolist()):
            assert x == bool(trees[a] & trees[b])


def test_spanner_small_examples():
    g = make("path", 2)
    run = tree_gossip(g, MinUID())
    h, stats = extract_spanner(run.trace, g)
    assert h.m == 1 and stats.ok() and stats.max_stretch_observed == 1
    k256 = make("complete", 256)
    h, stats = extract_spanner(tree_gossip(k256, MinUID(), record="aggregate").trace, k256)
    assert stats.edge_count <= 2048 and stats.ok()
    bar = make("barbell", 64)
    h, stats = extract_spanner(tree_gossip(bar, MinUID()).trace, bar)
    assert stats.bound_stretch == 12
    assert stats.ok() and stats.max_stretch_observed <= 12


def test_spanner_stats_detects_failures():
    g = make("cycle", 8)
    h = Graph.from_edges(8, [(i, i + 1) for i in range(7)])
    s = spanner_stats(g, h, 6)
    assert not s.all_adjacent_within_bound and s.max_stretch_observed == 7
    assert spanner_stats(g, h, 7).ok()
    chord = Graph.from_edges(8, [(0, 4)])
    assert not spanner_stats(g, chord, 8).is_subgraph


def test_k_hop_spanner_pinned():
    # pinned at first measurement on one G(256, 0.1) instance
    g = make("random-gnp", 256, seed=0, p=0.1)
    got = {k: k_hop_spanner_experiment(g, k, MinUID()) for k in (2, 4, 8, 16)}
    assert {k: s.edge_count for k, s in got.items()} == {2: 2141, 4: 607, 8: 495, 16: 495}
    assert {k: s.max_stretch_observed for k, s in got.items()} == {2: 2, 4: 4, 8: 6, 16: 6}
    assert round(got[2].density, 4) == 8.3633
    assert all(s.all_adjacent_within_bound for s in got.values())
    with pytest.raises(ValueError):
        k_hop_spanner_experiment(g, 0)


def test_csv_outputs():
    g = make("grid2d", 16)
    _, s = extract_spanner(tree_gossip(g, MinUID()).trace, g)
    rows = list(csv.reader(io.StringIO(spanner_stats_csv([("grid16", s)]))))
    assert rows[0] == ["graph", "n", "edge_count", "bound_edges", "density", "bound_stretch",
                       "max_stretch_observed", "all_adjacent_within_bound", "sampled"]
    assert rows[1][:4] == ["grid16", "16", str(s.edge_count), str(16 * log2ceil(16))]
    samples = list(csv.reader(io.StringIO(stretch_samples_csv(s))))
    assert samples[0] == ["u", "v", "d_G", "d_spanner"]
    assert len(samples) - 1 == len(s.stretch_samples) >= g.m
