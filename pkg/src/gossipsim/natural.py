"""The gossip template: link to an unknown neighbor, then propagate over established links.

Three propagation schedules are provided:

* ``round-robin-all-links``: each iteration floods ``2i`` hops over all links
  (the deterministic protocol with adaptive depth).
* ``random-established-link``: every step each node either approaches a new
  neighbor (probability ``p``, always when it has no links yet) or talks to a
  uniformly random link it created earlier.
* ``periodic``: a new link every ``alpha`` steps; each link is used every
  ``beta`` steps, counted from its creation.

Rumors travel as hop-counted tokens and stop being forwarded after ``lam``
hops. Runs can record per-pair knowledge times for the symmetry-lag metrics.
"""

from __future__ import annotations

import copy
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import bits
from .engine import INF, FaultModel, Network, RunTrace, TraceFormatError, _apply_calls, _apply_op, _init_register
from .engine import OpRecord, RoundRecord
from .graph import Graph, closure_bits, log2ceil
from .policies import ChoicePolicy, MinUID
from .protocols import Run, _report, _rank_rounds, deterministic_gossip, labelled_flood

PROPAGATIONS = ("round-robin-all-links", "random-established-link", "periodic")


@dataclass(frozen=True)
class RumorToken:
    origin: int
    hops: int = 0

    def forwarded(self, lam: int | None) -> "RumorToken | None":
        """The token as received one exchange later, or None once expired."""
        if lam is not None and self.hops >= lam:
            return None
        return RumorToken(self.origin, self.hops + 1)


@dataclass(frozen=True)
class TemplateConfig:
    link_policy: ChoicePolicy | None = None
    propagation: str = "round-robin-all-links"
    lam: int | None = None  # TTL in hops; None means unlimited
    p: float = 1.0
    alpha: int = 1
    beta: int = 1
    gamma: float = 0.0
    seed: int = 0
    flood_depth: int | None = None  # round-robin only; default 2i at iteration i
    step_cap: int | None = None  # default 64 log^4 n
    record_times: bool = False

    def __post_init__(self):
        if self.propagation not in PROPAGATIONS:
            raise ValueError(f"propagation must be one of {PROPAGATIONS}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.lam is not None and self.lam < 1:
            raise ValueError("lam must be >= 1 (or None for no TTL)")
        if self.alpha < 1 or self.beta < 1:
            raise ValueError("alpha and beta must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.step_cap is not None and self.step_cap < 1:
            raise ValueError("step_cap must be >= 1")


def default_step_cap(n: int) -> int:
    return max(64 * log2ceil(n) ** 4, 64)


# --------------------------------------------------------- knowledge times


@dataclass
class KnowledgeTimes:
    """``learn[u, v]``: first step after which u knows v (-1 never).

    ``linked[u, v]``: first step after which an established-link path of
    length at most ``2 log n`` joins u and v (-1 never). ``end`` is the last
    recorded step.
    """

    n: int
    learn: np.ndarray
    linked: np.ndarray
    end: int = 0

    @classmethod
    def empty(cls, n: int) -> "KnowledgeTimes":
        learn = np.full((n, n), -1, dtype=np.int32)
        np.fill_diagonal(learn, 0)
        linked = np.full((n, n), -1, dtype=np.int32)
        np.fill_diagonal(linked, 0)
        return cls(n, learn, linked)

    def update(self, step: int, know: np.ndarray, link_creators=None, link_peers=None) -> None:
        """Record state after ``step``; ``know`` is packed rumor bits."""
        kb = bits.to_bool(know, self.n)
        fresh = kb & (self.learn < 0)
        self.learn[fresh] = step
        if link_creators is not None and len(link_creators):
            reach = _link_reach(self.n, link_creators, link_peers, 2 * log2ceil(self.n))
            fresh = reach & (self.linked < 0)
            self.linked[fresh] = step
        self.end = step

    def observer(self):
        """Observer for the deterministic protocols, sampling at iteration boundaries."""

        def watch(net, i):
            c, p, _, _ = net.link_table()
            self.update(i, net.knowledge(), c, p)

        return watch

    def to_csv(self) -> str:
        if self.n > 512:
            raise ValueError("knowledge-time export is limited to n <= 512")
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["u", "v", "u_learns_v", "linked_within_2logn"])
        for u in range(self.n):
            for v in range(self.n):
                if u != v:
                    w.writerow([u, v, int(self.learn[u, v]), int(self.linked[u, v])])
        return buf.getvalue()


def _link_reach(n: int, creators, peers, steps: int) -> np.ndarray:
    a = np.concatenate([creators, peers]).astype(np.int64)
    b = np.concatenate([peers, creators]).astype(np.int64)
    o = np.argsort(a, kind="stable")
    a, b = a[o], b[o]
    indptr = np.r_[0, np.cumsum(np.bincount(a, minlength=n))]
    return bits.to_bool(closure_bits(indptr, b, bits.identity(n), steps, rows=a), n)


@dataclass
class SymmetryLag:
    t_min: int
    t_diff: int
    L: int
    pairs_measured: int = 0

    @property
    def T(self) -> int:
        return max(self.t_min, self.t_diff)

    @property
    def iteration_bound(self) -> int:
        return self.T * self.L


def measure_symmetry_lag(source) -> SymmetryLag:
    """Observed T_min and T_diff from recorded knowledge times.

    ``T_diff``: largest gap between u learning v and v learning u, over
    pairs where both happened. ``T_min``: largest number of steps from the
    moment a pair is joined by a short established-link path until both
    know each other, counting the step that completes it.
    """
    kt = source
    if isinstance(source, Run):
        kt = source.trace.knowledge_times
    elif isinstance(source, RunTrace):
        kt = source.knowledge_times
    if kt is None:
        raise ValueError("no knowledge times were recorded for this run")
    learn, linked = kt.learn, kt.linked
    n = kt.n
    off = ~np.eye(n, dtype=bool)
    both = (learn >= 0) & (learn.T >= 0) & off
    t_diff = int((learn - learn.T)[both].max()) if both.any() else 0
    mutual = np.maximum(learn, learn.T)
    sel = both & (linked >= 0) & (mutual >= linked)
    lag = mutual - linked + 1
    t_min = int(lag[sel].max()) if sel.any() else 0
    return SymmetryLag(t_min=t_min, t_diff=max(t_diff, 0), L=log2ceil(n), pairs_measured=int(sel.sum()))


# ------------------------------------------------------------ template


def _fresh_network(g: Graph, config: TemplateConfig, record: str, protocol: str) -> Network:
    faults = FaultModel("random-temporary", config.gamma, config.seed) if config.gamma else None
    net = Network(g, faults=faults, record=record, hops=True, ttl=config.lam, protocol=protocol)
    net.trace.meta.update(
        propagation=config.propagation, lam=config.lam, p=config.p, alpha=config.alpha,
        beta=config.beta, gamma=config.gamma, seed=config.seed,
        single_link=config.propagation != "random-established-link",
    )
    return net


def template_run(g: Graph, config: TemplateConfig | None = None, *, record: str = "full") -> Run:
    """Run the gossip template until 1-local broadcast completes or the step cap.

    Hitting the cap is reported (``completed=False``, flag
    ``step-cap-exceeded``), not raised.
    """
    config = config or TemplateConfig()
    policy = config.link_policy or MinUID()
    kind = {"round-robin-all-links": "rr", "random-established-link": "rand", "periodic": "periodic"}
    protocol = f"template-{kind[config.propagation]}"
    net = _fresh_network(g, config, record, protocol)
    L = log2ceil(g.n)
    cap = config.step_cap or default_step_cap(g.n)
    times = KnowledgeTimes.empty(g.n) if config.record_times else None
    runner = {
        "round-robin-all-links": _round_robin,
        "random-established-link": _random_link,
        "periodic": _periodic,
    }[config.propagation]
    steps, iterations, completed = runner(net, config, policy, cap, times)
    flags = [] if completed else ["step-cap-exceeded"]
    if config.propagation == "periodic" and config.lam is not None and config.lam <= L:
        flags.append("hypothesis-violation")
    rep = _report(net, protocol, policy.name, iterations, completed, flags=flags)
    rep.extras.update(steps=steps, lam=config.lam, p=config.p, alpha=config.alpha,
                      beta=config.beta, gamma=config.gamma, seed=config.seed)
    if config.propagation == "periodic" and config.lam is not None:
        rep.extras["bound_steps"] = config.alpha * config.beta * config.lam
    net.trace.knowledge_times = times
    return Run(rep, net)


def _times_update(times, step, net, changed_links):
    if times is None:
        return
    if changed_links:
        c, p, _, _ = net.link_table()
        times.update(step, net.knowledge(), c, p)
    else:
        times.update(step, net.knowledge())


def _round_robin(net, config, policy, cap, times):
    from .protocols import _active_nodes, _link_step

    i = 0
    _times_update(times, 0, net, False)
    while True:
        actives, cand = _active_nodes(net)
        if len(actives) == 0:
            return i, i, True
        if i >= cap:
            return i, i, False
        i += 1
        net.begin_iteration(i)
        _link_step(net, policy, actives, cand, i)
        max_links = int(net.link_count().max())
        labelled_flood(net, config.flood_depth or 2 * i, max(i, max_links))
        _times_update(times, i, net, True)


class _LinkSlots:
    """Peers of each node's created links, in creation order, as a padded matrix."""

    def __init__(self, n: int):
        self.count = np.zeros(n, dtype=np.int64)
        self.peers = np.zeros((n, 4), dtype=np.int64)

    def add(self, creators: np.ndarray, peers: np.ndarray) -> None:
        need = int(self.count.max(initial=0)) + 1
        if need > self.peers.shape[1]:
            grown = np.zeros((len(self.count), 2 * need), dtype=np.int64)
            grown[:, : self.peers.shape[1]] = self.peers
            self.peers = grown
        self.peers[creators, self.count[creators]] = peers
        self.count[creators] += 1


def _random_link(net, config, policy, cap, times):
    from .policies import ProtocolView

    n = net.n
    rng = np.random.default_rng([config.seed, 0x5A7])
    slots = _LinkSlots(n)
    _times_update(times, 0, net, False)
    s = 0
    while True:
        cand = net.candidates()
        active = bits.any_rows(cand)
        if not active.any():
            return s, s, True
        if s >= cap:
            return s, s, False
        s += 1
        net.begin_iteration(s)
        coin = rng.random(n)
        approach = active & ((slots.count == 0) | (coin < config.p))
        newcomers = np.flatnonzero(approach)
        targets = policy.choose_many(newcomers, cand[newcomers], s, ProtocolView(net, s))
        keep = targets >= 0
        newcomers, targets = newcomers[keep], targets[keep]
        talkers = np.flatnonzero(~approach & (slots.count > 0))
        pick = np.floor(rng.random(len(talkers)) * slots.count[talkers]).astype(np.int64)
        peers = slots.peers[talkers, pick]
        net.add_links(newcomers, targets)
        slots.add(newcomers, targets)
        net.exchange_round(np.r_[newcomers, talkers], np.r_[targets, peers], "R", "R")
        _times_update(times, s, net, len(newcomers) > 0)


def _periodic(net, config, policy, cap, times):
    from .protocols import _active_nodes, _link_step

    alpha, beta = config.alpha, config.beta
    _times_update(times, 0, net, False)
    s = 0
    it = 0
    while True:
        actives, cand = _active_nodes(net)
        if len(actives) == 0:
            return s, it, True
        if s >= cap:
            return s, it, False
        s += 1
        linked = False
        if (s - 1) % alpha == 0:
            it += 1
            net.begin_iteration(it)
            linked = _link_step(net, policy, actives, cand, it) > 0
        creator, peer, label, order = net.link_table()
        born = (label - 1) * alpha + 1
        due = (s - born) % beta == 0
        if due.any():
            c, p, o = creator[due], peer[due], order[due]
            rank_c = np.bincount(c, minlength=net.n)
            rounds = _rank_rounds(c, p, o, int(rank_c.max()))
            net.reset("F", "empty")
            net.exchange_phase(rounds, "R", "F")
            net.merge("R", ["F"], mode="union")
        else:
            net.wait_round()
        _times_update(times, s, net, linked)


def periodic_run(g: Graph, alpha: int, beta: int, lam: int | None, policy: ChoicePolicy | None = None,
                 *, record: str = "aggregate", record_times: bool = False, step_cap: int | None = None) -> Run:
    """Periodic schedule; completion is expected within ``alpha * beta * lam`` steps when lam > log n."""
    cfg = TemplateConfig(link_policy=policy, propagation="periodic", lam=lam, alpha=alpha, beta=beta,
                         record_times=record_times, step_cap=step_cap)
    return template_run(g, cfg, record=record)


def shy_config(n: int, seed: int = 0, policy: ChoicePolicy | None = None, **kw) -> TemplateConfig:
    """The shy-person setting: p = 1/log^2 n, TTL 4 log n, random contact among old links."""
    from .policies import SeededRandom

    L = max(log2ceil(n), 1)
    return TemplateConfig(
        link_policy=policy or SeededRandom(seed),
        propagation="random-established-link",
        lam=4 * L,
        p=1.0 / (L * L),
        seed=seed,
        **kw,
    )


# ---------------------------------------------------------------- TTL audit


def ttl_violations(trace: RunTrace) -> list[str]:
    """Replay a hop-register trace and report any token that travelled more than the TTL."""
    if not trace.hops:
        return []
    if not trace.replayable:
        raise TraceFormatError("aggregate-mode trace cannot be audited")
    ttl = trace.ttl
    if ttl is None:
        return []
    n = trace.n
    regs = {"R": _init_register(n, True, "self")}
    out = []
    for rec in trace.records:
        if isinstance(rec, OpRecord):
            _apply_op(regs, rec, n, True)
        elif isinstance(rec, RoundRecord):
            src = regs[rec.src].copy()
            ok = rec.ok
            _apply_calls(regs[rec.dst], src, rec.callers[ok].astype(np.int64),
                         rec.callees[ok].astype(np.int64), True, ttl)
            reg = regs[rec.dst]
            over = (reg > ttl) & (reg < INF)
            if over.any():
                v, u = map(int, np.argwhere(over)[0])
                out.append(f"round {rec.round}: node {v} holds token {u} at hop {int(reg[v, u])} > {ttl}")
    return out


# ------------------------------------------------------------------ faults


def faulty_flood_run(g: Graph, gamma: float, policy: ChoicePolicy | None = None, seed: int = 0, *,
                     record: str = "aggregate", baseline: bool = True) -> Run:
    """Deterministic gossip with round-robin flooding under random temporary edge faults.

    The report carries ``slowdown = rounds(gamma) / rounds(0)`` (same policy,
    fault-free) next to the reference ``1 / (1 - gamma)``.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    policy = policy or MinUID()
    ref_policy = copy.deepcopy(policy)
    faults = FaultModel("random-temporary", gamma, seed) if gamma > 0 else None
    run = deterministic_gossip(g, policy, record=record, faults=faults)
    rep = run.report
    rep.protocol = "faulty-alg3"
    rep.extras.update(gamma=gamma, seed=seed, reference_slowdown=1.0 / (1.0 - gamma))
    if baseline:
        base = rep if gamma == 0 else deterministic_gossip(g, ref_policy, record="aggregate").report
        rep.extras["baseline_rounds"] = base.rounds
        rep.extras["slowdown"] = rep.rounds / base.rounds if base.rounds else 1.0
    if not rep.completed and "step-cap-exceeded" not in rep.flags:
        rep.flags.append("step-cap-exceeded")
    return run


def permanent_failure_run(g: Graph, killed_edges, policy: ChoicePolicy | None = None, *,
                          record: str = "aggregate") -> tuple[Run, Graph]:
    """Remove ``killed_edges`` up front and run on what survives; returns the run and that graph."""
    fm = FaultModel("adversarial-permanent", 0.0, 0, frozenset(map(tuple, killed_edges)))
    h = fm.surviving_graph(g)
    run = deterministic_gossip(h, policy, record=record)
    run.report.protocol = "faulty-permanent-alg3"
    run.report.extras["killed_edges"] = len(fm.killed_edges)
    return run, h
