import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossipsim import bits
from gossipsim.engine import (
    DuplicateCallerError,
    FaultModel,
    GraphMismatchError,
    Network,
    NonEdgeCallError,
    RunTrace,
    StaleLinkError,
    TraceFormatError,
    exchange_round,
    export_jsonl,
    import_jsonl,
    knowledge_soundness_check,
    replay,
    validate_trace,
)
from gossipsim.graph import make
from gossipsim.policies import MinUID
from gossipsim.protocols import tree_gossip


def test_single_exchange():
    new, ev = exchange_round([{0}, {1}], [(0, 1)])
    assert new == [{0, 1}, {0, 1}]
    assert ev[0].ok


def test_certain_failure():
    new, ev = exchange_round([{0}, {1}], [(0, 1)], FaultModel("random-temporary", 1.0))
    assert new == [{0}, {1}]
    assert not ev[0].ok


def test_star_multi_callee():
    # center 0 already knows 3; leaves 1 and 2 both call it in the same round
    g = make("star", 4)
    new, _ = exchange_round([{0, 3}, {1}, {2}, {3}], [(1, 0), (2, 0)], g=g)
    assert new[0] == {0, 1, 2, 3}
    assert new[1] == {0, 1, 3}
    assert new[2] == {0, 2, 3}
    assert new[3] == {3}


def test_set_level_errors():
    with pytest.raises(DuplicateCallerError):
        exchange_round([{0}, {1}, {2}], [(0, 1), (0, 2)])
    with pytest.raises(NonEdgeCallError):
        exchange_round([{0}, {1}, {2}], [(0, 2)], g=make("path", 3))


def test_network_rejects_bad_calls():
    net = Network(make("path", 4))
    with pytest.raises(DuplicateCallerError):
        net.exchange_round([1, 1], [0, 2])
    with pytest.raises(NonEdgeCallError) as info:
        net.exchange_round([0], [3])
    assert isinstance(info.value.trace, RunTrace)


def test_stale_link_rejected():
    net = Network(make("path", 3))
    net.exchange_round([0], [1])
    net.begin_iteration(1)
    with pytest.raises(StaleLinkError):
        net.add_links([0], [1])


def test_fault_model_validation():
    with pytest.raises(ValueError):
        FaultModel("none", 0.5)
    with pytest.raises(ValueError):
        FaultModel("random-temporary", 1.5)
    fm = FaultModel("adversarial-permanent", killed_edges={(2, 1)})
    assert fm.killed_edges == frozenset({(1, 2)})


def test_killed_edge_never_carries():
    g = make("path", 3)
    net = Network(g, faults=FaultModel("adversarial-permanent", killed_edges={(0, 1)}))
    ok = net.exchange_round([0, 2], [1, 1])
    assert ok.tolist() == [False, True]
    assert net.rumor_sets() == [{0}, {1, 2}, {1, 2}]


def _hand_trace(g, calls_per_round):
    net = Network(g, check_calls=False)
    net.begin_iteration(1)
    for callers, callees in calls_per_round:
        net.exchange_round(callers, callees)
    net.finish()
    return net


def test_validate_trace_clean_run():
    g = make("cycle", 8)
    run = tree_gossip(g, MinUID())
    assert validate_trace(run.trace, g) == []


def test_validate_trace_duplicate_caller():
    g = make("cycle", 6)
    net = _hand_trace(g, [([0], [1]), ([2], [3]), ([4], [5]), ([1, 1], [0, 2])])
    assert validate_trace(net.trace, g) == ["duplicate-caller@3(1)"]


def test_validate_trace_non_edge():
    g = make("cycle", 6)
    net = _hand_trace(g, [([0], [3])])
    assert validate_trace(net.trace, g) == ["non-edge-call@0(0,3)"]


def test_validate_trace_stale_link():
    g = make("path", 3)
    net = Network(g, check_calls=False)
    net.exchange_round([0], [1])
    net.begin_iteration(1)
    net.add_links([0], [1])
    assert validate_trace(net.trace, g) == ["stale-link@1(0,1)"]


def test_soundness_check():
    g = make("complete", 8)
    run = tree_gossip(g, MinUID())
    final = run.net.rumor_sets()
    assert knowledge_soundness_check(run.trace, final)
    assert knowledge_soundness_check(run.trace, run.net.knowledge())
    forged = make("path", 5)
    fnet = _hand_trace(forged, [([0], [1])])
    states = fnet.rumor_sets()
    states[4] = states[4] | {0}  # injected out of band
    assert not knowledge_soundness_check(fnet.trace, states)


def test_aggregate_trace_not_replayable():
    run = tree_gossip(make("cycle", 8), MinUID(), record="aggregate")
    assert run.trace.rounds == run.report.rounds
    with pytest.raises(TraceFormatError):
        replay(run.trace)
    with pytest.raises(TraceFormatError):
        export_jsonl(run.trace)


def test_export_import_roundtrip():
    g = make("grid2d", 16)
    run = tree_gossip(g, MinUID())
    text = export_jsonl(run.trace, g)
    trace, embedded = import_jsonl(text)
    assert embedded.fingerprint() == g.fingerprint()
    assert trace.rounds == run.trace.rounds
    assert trace.link_creations == run.trace.link_creations
    assert trace.iteration_marks == run.trace.iteration_marks
    assert np.array_equal(replay(trace)["R"], run.net.R)
    assert export_jsonl(trace, embedded) == text


def test_truncated_trace():
    g = make("cycle", 8)
    text = export_jsonl(tree_gossip(g, MinUID()).trace, g)
    lines = text.splitlines(keepends=True)
    with pytest.raises(TraceFormatError):
        import_jsonl("".join(lines[: len(lines) // 2]))
    with pytest.raises(TraceFormatError):
        import_jsonl("".join(lines[:-2] + lines[-1:]))
    with pytest.raises(TraceFormatError):
        import_jsonl("not json\n")


def test_graph_mismatch():
    g = make("cycle", 8)
    text = export_jsonl(tree_gossip(g, MinUID()).trace, g)
    with pytest.raises(GraphMismatchError):
        import_jsonl(text, make("path", 8))


def test_payload_sizes_and_messages():
    g = make("path", 3)
    net = Network(g)
    net.exchange_round([0], [1])
    net.exchange_round([2], [1])
    ev = list(net.trace.events)
    assert [e.payload_size for e in ev] == [(1, 1), (1, 2)]
    assert net.trace.messages == 4


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 24), seed=st.integers(0, 10**6), rounds=st.integers(1, 8),
       gamma=st.sampled_from([0.0, 0.3]))
def test_random_rounds_monotone_and_symmetric(n, seed, rounds, gamma):
    g = make("random-gnp", n, seed=seed, p=0.3)
    rng = np.random.default_rng(seed)
    faults = FaultModel("random-temporary", gamma, seed) if gamma else None
    net = Network(g, faults=faults)
    prev = net.rumor_sets()
    for _ in range(rounds):
        callers, callees = [], []
        for v in range(g.n):
            if rng.random() < 0.7:
                callers.append(v)
                callees.append(int(rng.choice(g.neighbors(v))))
        before = net.rumor_sets()
        ok = net.exchange_round(callers, callees)
        now = net.rumor_sets()
        for v in range(g.n):
            assert v in now[v]
            assert prev[v] <= now[v]
        for c, e, k in zip(callers, callees, ok):
            if k:
                assert before[c] | before[e] <= now[c]
                assert before[c] | before[e] <= now[e]
        prev = now
    assert net.trace.calls <= rounds * g.n
    assert net.trace.messages == 2 * int(sum(r.ok.sum() for r in net.trace.round_records))
    assert knowledge_soundness_check(net.trace, net.rumor_sets())
    assert validate_trace(net.trace, g) == []
    assert bits.popcount(net.knowledge()).min() >= 1
