import csv
import io

import numpy as np
import pytest

from gossipsim.graph import log2ceil, make
from gossipsim.natural import (
    KnowledgeTimes,
    RumorToken,
    TemplateConfig,
    faulty_flood_run,
    measure_symmetry_lag,
    periodic_run,
    permanent_failure_run,
    shy_config,
    template_run,
    ttl_violations,
)
from gossipsim.policies import MinUID, SeededRandom
from gossipsim.protocols import ProtocolConfig, deterministic_gossip
from gossipsim.verification import check_local_broadcast


def test_token_ttl():
    t = RumorToken(5)
    assert t.forwarded(2) == RumorToken(5, 1)
    assert t.forwarded(2).forwarded(2).forwarded(2) is None
    assert RumorToken(5, 40).forwarded(None) == RumorToken(5, 41)


@pytest.mark.parametrize("kw", [dict(propagation="gossip"), dict(p=1.5), dict(lam=0), dict(alpha=0),
                                dict(gamma=1.0), dict(step_cap=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TemplateConfig(**kw)


@pytest.mark.parametrize("kind", ["cycle", "grid2d", "barbell"])
def test_round_robin_template_is_adaptive_alg3(kind):
    g = make(kind, 16)
    a = template_run(g, TemplateConfig(link_policy=MinUID()))
    b = deterministic_gossip(g, MinUID(), ProtocolConfig(adaptive_depth=True))
    assert np.array_equal(a.knowledge, b.knowledge)
    assert a.report.rounds == b.report.rounds
    assert a.report.iterations == b.report.iterations


@pytest.mark.parametrize("cfg", [
    TemplateConfig(),
    TemplateConfig(propagation="periodic", alpha=2, beta=3, lam=3),
    shy_config(2),
])
def test_two_nodes(cfg):
    run = template_run(make("path", 2), cfg)
    assert run.report.completed
    assert run.states == [{0, 1}, {0, 1}]


def test_periodic_path64():
    g = make("path", 64)
    run = periodic_run(g, 2, 3, 13, MinUID())
    assert run.report.completed
    assert run.report.rounds <= 2 * 3 * 13
    assert check_local_broadcast(g, 1, run.knowledge)


@pytest.mark.parametrize("kind", ["cycle", "random-tree", "hypercube"])
def test_periodic_within_alpha_beta_lambda(kind):
    g = make(kind, 64)
    L = log2ceil(g.n)
    for alpha, beta in [(1, 1), (2, 3), (3, 2)]:
        run = periodic_run(g, alpha, beta, 2 * L, SeededRandom(alpha))
        assert run.report.completed
        assert run.report.rounds <= alpha * beta * 2 * L


def test_symmetry_lag_from_hand_times():
    kt = KnowledgeTimes.empty(3)
    kt.learn[0, 1], kt.learn[1, 0] = 1, 4
    kt.learn[1, 2], kt.learn[2, 1] = 2, 2
    kt.linked[0, 1] = kt.linked[1, 0] = 1
    lag = measure_symmetry_lag(kt)
    assert lag.t_diff == 3
    assert lag.t_min == 4
    assert lag.T == 4 and lag.iteration_bound == 4 * 2
    with pytest.raises(ValueError):
        measure_symmetry_lag(template_run(make("path", 3), TemplateConfig()))


@pytest.mark.parametrize("seed", range(4))
def test_template_steps_within_lag_bound(seed):
    g = make("random-gnp", 32, seed=seed, p=0.2)
    for cfg in (shy_config(32, seed=seed, record_times=True),
                TemplateConfig(propagation="periodic", alpha=2, beta=2, lam=10, record_times=True)):
        run = template_run(g, cfg)
        lag = measure_symmetry_lag(run)
        assert run.report.completed
        assert run.report.rounds <= lag.iteration_bound


def test_knowledge_times_csv():
    run = template_run(make("path", 3), TemplateConfig(link_policy=MinUID(), record_times=True))
    rows = list(csv.reader(io.StringIO(run.trace.knowledge_times.to_csv())))
    assert rows[0] == ["u", "v", "u_learns_v", "linked_within_2logn"]
    assert len(rows) == 1 + 3 * 2
    assert all(int(r[2]) >= 1 for r in rows[1:])
    with pytest.raises(ValueError):
        KnowledgeTimes.empty(513).to_csv()


def test_ttl_audit():
    run = periodic_run(make("cycle", 32), 1, 1, 12, record="full")
    assert run.report.completed
    assert ttl_violations(run.trace) == []
    shy = template_run(make("grid2d", 36), shy_config(36, seed=1))
    assert ttl_violations(shy.trace) == []


def test_shy_completes_small():
    g = make("random-gnp", 64, seed=1, p=0.1)
    run = template_run(g, shy_config(64, seed=2))
    assert run.report.completed
    assert check_local_broadcast(g, 1, run.knowledge)


def test_step_cap_is_reported():
    g = make("cycle", 32)
    run = template_run(g, TemplateConfig(propagation="periodic", alpha=3, beta=3, lam=10, step_cap=2))
    assert not run.report.completed
    assert "step-cap-exceeded" in run.report.flags


def test_faulty_gamma_zero_matches_plain():
    g = make("grid2d", 64)
    a = faulty_flood_run(g, 0.0)
    b = deterministic_gossip(g, MinUID(), record="aggregate")
    assert np.array_equal(a.knowledge, b.knowledge)
    assert a.report.rounds == b.report.rounds
    assert a.report.extras["slowdown"] == 1.0
    with pytest.raises(ValueError):
        faulty_flood_run(g, 1.0)


def test_faulty_cycle64_pinned():
    # pinned: the fixed-length flood absorbs the lost exchanges on this ring
    g = make("cycle", 64)
    runs = [faulty_flood_run(g, 0.5, seed=s) for s in range(50)]
    assert all(r.report.completed for r in runs)
    assert sorted({r.report.extras["slowdown"] for r in runs}) == [1.0]
    assert runs[0].report.extras["reference_slowdown"] == 2.0


@pytest.mark.parametrize("kind", ["path", "barbell", "random-tree"])
def test_faults_never_speed_things_up(kind):
    g = make(kind, 32)
    for s in range(5):
        run = faulty_flood_run(g, 0.5, SeededRandom(s), seed=s)
        assert run.report.rounds >= run.report.extras["baseline_rounds"]


def test_permanent_failures():
    g = make("cycle", 16)
    run, h = permanent_failure_run(g, [(0, 1)])
    assert h.m == 15
    assert run.report.extras["killed_edges"] == 1
    assert check_local_broadcast(h, 1, run.knowledge)
    assert 1 not in h.neighbors(0).tolist()
