from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossipsim import bits
from gossipsim.engine import Network, OpRecord, RunTrace, replay
from gossipsim.graph import diameter, log2ceil, make, neighborhood
from gossipsim.policies import (
    Adversarial,
    MaxUID,
    MinUID,
    SeededRandom,
    XorNearest,
    adversarial_fuzzer,
    make_policy,
)
from gossipsim.protocols import (
    DegreeOverflowError,
    ProtocolConfig,
    deterministic_gossip,
    deterministic_gossip_unknown_n,
    flood,
    flood_sets,
    global_broadcast,
    k_local_broadcast,
    randomized_gossip,
    tree_gossip,
)
from gossipsim.verification import check_local_broadcast, check_symmetry, extract_witness_tree, links_by_creator

# ------------------------------------------------------------ flooding


def test_flood_one_hop_on_path():
    g = make("path", 3)
    got, rounds = flood_sets(g, [set(), set(), set()], [[1], [2], []], d=1, delta=2)
    assert got == [{0, 1}, {0, 1, 2}, {1, 2}]
    assert rounds == 2


def test_flood_two_hops_on_path():
    g = make("path", 3)
    got, rounds = flood_sets(g, [set(), set(), set()], [[1], [2], []], d=2, delta=2)
    assert got == [{0, 1, 2}] * 3
    assert rounds == 4


def test_flood_star():
    g = make("star", 5)
    got, rounds = flood_sets(g, [set()] * 5, [[1, 2, 3, 4], [], [], [], []], d=2, delta=4)
    assert got == [set(range(5))] * 5
    assert rounds == 8


def test_flood_degree_overflow():
    g = make("star", 5)
    with pytest.raises(DegreeOverflowError):
        flood_sets(g, [set()] * 5, [[1, 2, 3], [], [], [], []], d=1, delta=2)


def test_flood_counts_wait_rounds():
    g = make("path", 4)
    net = Network(g)
    net.begin_iteration(1)
    net.add_links([0], [1])
    assert flood(net, 3, 5) == 15
    assert net.trace.rounds == 15


def _ball(links, n, v, d):
    nb = [set() for _ in range(n)]
    for a, ps in enumerate(links):
        for b in ps:
            nb[a].add(b)
            nb[b].add(a)
    dist = {v: 0}
    q = deque([v])
    while q:
        x = q.popleft()
        if dist[x] < d:
            for y in nb[x] - dist.keys():
                dist[y] = dist[x] + 1
                q.append(y)
    return set(dist)


@settings(max_examples=80, deadline=None)
@given(n=st.integers(3, 30), seed=st.integers(0, 10**6), d=st.integers(1, 6))
def test_flood_matches_ball_union(n, seed, d):
    g = make("random-gnp", n, seed=seed, p=0.3)
    rng = np.random.default_rng(seed)
    links, seen = [], set()
    for v in range(n):
        picks = [int(u) for u in g.neighbors(v) if rng.random() < 0.4 and (min(u, v), max(u, v)) not in seen]
        seen.update((min(u, v), max(u, v)) for u in picks)
        links.append(picks)
    rumors = [set(rng.choice(n, size=2).tolist()) for _ in range(n)]
    deg = np.zeros(n, int)
    for v, ps in enumerate(links):
        deg[v] += len(ps)
        for u in ps:
            deg[u] += 1
    delta = max(1, int(deg.max()))
    got, rounds = flood_sets(g, rumors, links, d, delta)
    assert rounds == d * delta
    for v in range(n):
        want = set()
        for u in _ball(links, n, v, d):
            want |= rumors[u] | {u}
        assert got[v] == want


# --------------------------------------------------------- deterministic


def reference_alg3(n, adj, L):
    """Straight-line deterministic gossip with min-uid choice, written against sets only."""
    R = [{v} for v in range(n)]
    links = [set() for _ in range(n)]
    history = []
    while True:
        cand = [adj[v] - R[v] for v in range(n)]
        if not any(cand):
            return history
        for v in range(n):
            if cand[v]:
                u = min(cand[v])
                links[v].add(u)
                links[u].add(v)
        S = [{v} for v in range(n)]
        for _ in range(2 * L):
            S = [S[v].union(*(S[u] for u in links[v])) for v in range(n)]
        R = [R[v] | S[v] for v in range(n)]
        history.append([set(r) for r in R])


def test_alg3_cycle8_matches_reference():
    g = make("cycle", 8)
    adj = [set(g.neighbors(v).tolist()) for v in range(8)]
    want = reference_alg3(8, adj, log2ceil(8))
    got = []
    run = deterministic_gossip(g, MinUID(), observer=lambda net, i: i and got.append(net.rumor_sets()))
    assert got == want
    # hand derivation: iteration 1 links form the path 7-0-1-...-6; only 6,7 remain mutually unknown
    assert sorted(run.trace.link_creations)[:8] == [(1, 0, 1), (1, 1, 0), (1, 2, 1), (1, 3, 2), (1, 4, 3),
                                                    (1, 5, 4), (1, 6, 5), (1, 7, 0)]
    assert [(v, u) for v in range(8) for u in adj[v] if u not in want[0][v]] == [(6, 7), (7, 6)]
    assert run.report.iterations == 2
    assert run.report.iteration_rounds == [18, 18]


@pytest.mark.parametrize("policy", [MinUID(), MaxUID(), SeededRandom(3), adversarial_fuzzer(5)],
                         ids=lambda p: p.name)
def test_k2_every_protocol(policy):
    g = make("path", 2)
    for run in (deterministic_gossip(g, policy), tree_gossip(g, policy), randomized_gossip(g)):
        assert run.report.iterations == 1
        assert run.states == [{0, 1}, {0, 1}]
    assert tree_gossip(g, policy).report.rounds == 4


def test_alg3_adaptive_depth_rounds():
    g = make("path", 16)
    run = deterministic_gossip(g, MinUID(), ProtocolConfig(adaptive_depth=True))
    assert check_local_broadcast(g, 1, run.knowledge)
    assert run.report.iteration_rounds == [2 * i * i for i in range(1, run.report.iterations + 1)]
    with pytest.raises(ValueError):
        ProtocolConfig(adaptive_depth=True, d=3)


def test_alg3_unknown_n_squares_guess():
    g = make("cycle", 64)
    run = deterministic_gossip_unknown_n(g, initial_guess=2)
    assert run.report.completed
    assert check_local_broadcast(g, 1, run.knowledge)
    guesses = [a[0] for a in run.report.extras["attempts"]]
    assert all(b == a * a for a, b in zip(guesses, guesses[1:]))


@pytest.mark.parametrize("kind", ["cycle", "grid2d", "complete", "random-tree", "barbell"])
@pytest.mark.parametrize("policy", ["min-uid", "max-uid", "seeded-random", "adversarial", "xor-nearest"])
def test_single_link_protocols_bounds(kind, policy):
    g = make(kind, 64)
    L = log2ceil(g.n)
    snaps = []
    run3 = deterministic_gossip(g, make_policy(policy, 2), observer=lambda net, i: snaps.append(net.knowledge()))
    run4 = tree_gossip(g, make_policy(policy, 2), observer=lambda net, i: snaps.append(net.knowledge()))
    for run in (run3, run4):
        assert run.report.iterations <= L
        assert check_local_broadcast(g, 1, run.knowledge)
    assert run3.report.rounds <= 2 * L ** 3
    assert run4.report.rounds <= 2 * L * (L + 1)
    assert run4.report.iteration_rounds == [4 * i for i in range(1, run4.report.iterations + 1)]
    assert all(check_symmetry(s, g.n) == [] for s in snaps)


def test_alg4_knowledge_monotone():
    g = make("random-gnp", 64, seed=4, p=0.1)
    snaps = []
    tree_gossip(g, SeededRandom(1), observer=lambda net, i: snaps.append(net.knowledge()))
    for a, b in zip(snaps, snaps[1:]):
        assert not (a & ~b).any()


def test_xor_nearest_forces_log_n_iterations():
    for n in (16, 256):
        g = make("complete", n)
        assert deterministic_gossip(g, XorNearest()).report.iterations == log2ceil(n)
        assert tree_gossip(g, XorNearest()).report.iterations == log2ceil(n)


def test_policy_answers_are_candidates():
    seen = []

    def cb(v, cand, it, view):
        seen.append((v, set(cand.tolist()), view.iteration))
        return int(cand[-1])

    g = make("grid2d", 16)
    run = tree_gossip(g, Adversarial(cb))
    for it, v, u in run.trace.link_creations:
        assert (v, it) in {(a, i) for a, _, i in seen}
    for v, cand, _ in seen:
        assert cand and cand <= set(g.neighbors(v).tolist())


def test_hypercube_pipelining():
    # intersecting i-trees imply mutual knowledge right after the first PUSH-PULL
    g = make("hypercube", 16)
    run = tree_gossip(g, MinUID())
    tr = run.trace
    links = links_by_creator(tr)
    cuts = [j for j, r in enumerate(tr.records) if isinstance(r, OpRecord) and r.op == "reset" and r.dst == "Q"]
    checked = 0
    for i, cut in enumerate(cuts, start=1):
        P = bits.to_sets(replay(RunTrace(n=g.n, records=tr.records[:cut]))["P"], g.n)
        active = [v for v in range(g.n) if i in links.get(v, {})]
        trees = {v: set(extract_witness_tree(tr, v, i, links).nodes) for v in active}
        for u in active:
            for v in active:
                if u < v and trees[u] & trees[v]:
                    checked += 1
                    assert u in P[v] and v in P[u]
    assert checked > 0


# ------------------------------------------------------------ randomized


def test_alg2_complete64():
    its = [randomized_gossip(make("complete", 64), seed=s, record="aggregate").report.iterations
           for s in range(100)]
    assert max(its) <= 4 * 6


def test_alg2_path64_pinned():
    # pinned: with log^2 n = 36 samples per iteration every node draws both path neighbors
    g = make("path", 64)
    its = [randomized_gossip(g, seed=s, record="aggregate").report.iterations for s in range(100)]
    assert its == [1] * 100


def test_alg2_new_links_only_off():
    g = make("barbell", 32)
    run = randomized_gossip(g, ProtocolConfig(use_new_links_only=False, rand_constant=0.2), seed=1)
    assert check_local_broadcast(g, 1, run.knowledge)


# --------------------------------------------------------------- k-local


def test_klocal_k1_is_base():
    g = make("grid2d", 64)
    base = tree_gossip(g, MinUID())
    k1 = k_local_broadcast(g, 1, MinUID())
    assert np.array_equal(base.knowledge, k1.knowledge)
    assert base.report.rounds == k1.report.rounds


def test_klocal_path16_k3():
    g = make("path", 16)
    run = k_local_broadcast(g, 3, MinUID())
    assert run.report.rounds <= 2 * (3 * 4 + 16)
    for v, r in enumerate(run.states):
        assert neighborhood(g, v, 3) <= r
    I = run.report.iterations
    assert run.report.extras["repeat_rounds"] == [2 * I, 2 * I]


def test_klocal_four_phase_and_alg3_base():
    g = make("caterpillar", 32, legs=3)
    a = k_local_broadcast(g, 4, SeededRandom(2), config=ProtocolConfig(repeat_style="full-four-phase"))
    b = k_local_broadcast(g, 4, SeededRandom(2), base="alg3")
    for run in (a, b):
        assert check_local_broadcast(g, 4, run.knowledge)
    assert a.report.extras["repeat_rounds"] == [4 * a.report.iterations] * 3
    with pytest.raises(ValueError):
        k_local_broadcast(g, 0)


def test_final_knowledge_is_last_iteration_p_or_q():
    # R is replaced by P | Q, so final knowledge is exactly what the last iteration's two halves carried
    g = make("grid2d", 64)
    run = tree_gossip(g, SeededRandom(5))
    tr = run.trace
    cut = max(j for j, r in enumerate(tr.records) if isinstance(r, OpRecord) and r.op == "reset" and r.dst == "Q")
    P = replay(RunTrace(n=g.n, records=tr.records[:cut]))["P"]
    Q = replay(tr)["Q"]
    assert np.array_equal(P | Q, run.net.R)


def test_push_pull_repeat_counterexample():
    # pinned from the full-scale sweep: 185 knows 184, and 186 knows 185, only through the
    # PULL-then-PUSH half, so one PUSH-then-PULL repeat cannot carry 184 on to 186
    g = make("grid2d", 256)
    pol = lambda: make_policy("adversarial", 7)
    two = k_local_broadcast(g, 2, pol())
    four = k_local_broadcast(g, 2, pol(), config=ProtocolConfig(repeat_style="full-four-phase"))
    gaps = [(v, sorted(neighborhood(g, v, 2) - r)) for v, r in enumerate(two.states) if neighborhood(g, v, 2) - r]
    assert gaps == [(186, [184])]
    assert check_local_broadcast(g, 2, four.knowledge)
    tr = tree_gossip(g, pol()).trace
    cut = max(j for j, r in enumerate(tr.records) if isinstance(r, OpRecord) and r.op == "reset" and r.dst == "Q")
    P = bits.to_sets(replay(RunTrace(n=g.n, records=tr.records[:cut]))["P"], g.n)
    Q = bits.to_sets(replay(tr)["Q"], g.n)
    assert 184 not in P[185] and 184 in Q[185]
    assert 185 not in P[186] and 185 in Q[186]


@pytest.mark.parametrize("kind", ["grid2d", "random-gnp", "caterpillar"])
def test_four_phase_repeats_cover_k_hops(kind):
    g = make(kind, 256, **({"p": 0.02} if kind == "random-gnp" else {}))
    for s in range(3):
        for k in (2, 3):
            run = k_local_broadcast(g, k, SeededRandom(s), config=ProtocolConfig(repeat_style="full-four-phase"),
                                    record="aggregate")
            assert check_local_broadcast(g, k, run.knowledge)


def test_global_examples():
    k4 = global_broadcast(make("complete", 4), MinUID())
    assert k4.report.extras["diameter"] == 1
    assert k4.states == [set(range(4))] * 4
    c32 = make("cycle", 32)
    run = global_broadcast(c32, MinUID())
    assert diameter(c32) == 16
    assert run.report.rounds <= 210
    assert run.states == [set(range(32))] * 32
    bar = make("barbell", 64)
    assert global_broadcast(bar, SeededRandom(0)).states == [set(range(64))] * 64
