"""Local-broadcast gossip protocols.

* :func:`flood` -- round-robin flooding along established links.
* :func:`randomized_gossip` -- many random new links per iteration, deep flooding.
* :func:`deterministic_gossip` -- one arbitrary new link per iteration, flood 2 log n hops.
  Flooding carries each node's own rumor (distance-labelled), which keeps
  knowledge symmetric; flooding whole rumor sets does not.
* :func:`tree_gossip` -- one new link per iteration, PUSH/PULL pipelining over link labels.
* :func:`k_local_broadcast` / :func:`global_broadcast` -- reuse the final links for k > 1.

All nodes advance iterations in lockstep. A node with no unknown neighbor
stops creating links but keeps relaying over the links it already made.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import bits
from .engine import FaultModel, Network, ProtocolError, RunTrace
from .graph import Graph, diameter, log2ceil
from .policies import ChoicePolicy, MinUID, ProtocolView


class NonTerminationError(RuntimeError):
    """Iteration guard tripped; correctness is by construction, so this is a bug."""

    def __init__(self, message: str, trace: RunTrace | None = None):
        super().__init__(message)
        self.trace = trace


class DegreeOverflowError(ProtocolError):
    kind = "degree-overflow"


REPEAT_STYLES = ("push-pull", "full-four-phase")


@dataclass(frozen=True)
class ProtocolConfig:
    d: int | None = None  # flooding depth; default 2 log n
    delta_cap: int | None = None  # flooding Delta; default log n
    rand_links_per_iter: int | None = None  # default c * log^2 n
    rand_flood_hops: int | None = None  # default c * log^2 n
    rand_constant: float = 1.0
    use_new_links_only: bool = True
    adaptive_depth: bool = False  # flood 2i hops with Delta = i at iteration i
    repeat_style: str = "push-pull"
    max_iterations: int | None = None  # explicit budget: stop and report incomplete

    def __post_init__(self):
        for name in ("d", "delta_cap", "rand_links_per_iter", "rand_flood_hops", "max_iterations"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rand_constant <= 0:
            raise ValueError("rand_constant must be positive")
        if self.repeat_style not in REPEAT_STYLES:
            raise ValueError(f"repeat_style must be one of {REPEAT_STYLES}")
        if self.adaptive_depth and self.d is not None:
            raise ValueError("adaptive_depth chooses d itself; leave d unset")


@dataclass
class RunReport:
    protocol: str
    n: int
    m: int
    policy: str
    iterations: int
    rounds: int
    calls_initiated: int
    completed: bool
    k: int = 1
    messages: int = 0
    failed_calls: int = 0
    repeats: int = 0
    per_node_links: dict = field(default_factory=dict)
    iteration_rounds: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "protocol": self.protocol,
            "n": self.n,
            "m": self.m,
            "policy": self.policy,
            "k": self.k,
            "iterations": self.iterations,
            "rounds": self.rounds,
            "calls": self.calls_initiated,
            "completed": self.completed,
        }


@dataclass
class Run:
    report: RunReport
    net: Network

    @property
    def trace(self) -> RunTrace:
        return self.net.trace

    @property
    def knowledge(self) -> np.ndarray:
        return self.net.knowledge()

    @property
    def states(self) -> list[set[int]]:
        return self.net.rumor_sets()


# ---------------------------------------------------------------- helpers


def _rank_rounds(creators: np.ndarray, peers: np.ndarray, order: np.ndarray, delta: int):
    """Split links into ``delta`` rounds: round t holds each creator's t-th link."""
    if len(creators):
        o = np.lexsort((order, creators))
        creators, peers = creators[o], peers[o]
        first = np.r_[True, creators[1:] != creators[:-1]]
        starts = np.flatnonzero(first)
        group_start = np.repeat(starts, np.diff(np.r_[starts, len(creators)]))
        rank = np.arange(len(creators)) - group_start
        if rank.max() >= delta:
            v = int(creators[np.argmax(rank)])
            raise DegreeOverflowError(f"node {v} has {int(rank.max()) + 1} links > Delta={delta}")
    else:
        rank = np.zeros(0, dtype=np.int64)
    return [(creators[rank == t], peers[rank == t]) for t in range(delta)]


def flood(net: Network, d: int, delta: int, links: np.ndarray | None = None, reg: str = "R") -> int:
    """Round-robin flooding for ``d`` hops along the selected links.

    Each hop is ``delta`` rounds; in round t every node exchanges with its
    t-th selected link (or waits). Payloads are the hop-start rumor sets and
    received rumors are merged at the end of the hop, so after ``d`` hops
    node v knows exactly the union of R_u over its d-hop neighborhood in the
    link graph. ``links`` is a boolean mask over :meth:`Network.link_table`;
    ``reg`` names the register being flooded. Returns the rounds used,
    always ``d * delta``.
    """
    creator, peer, _, order = net.link_table()
    if links is not None:
        creator, peer, order = creator[links], peer[links], order[links]
    rounds = _rank_rounds(creator, peer, order, delta)
    deterministic = net.faults.mode == "none" or net.faults.gamma == 0
    settled = False
    for _ in range(d):
        if settled:
            net.exchange_phase(rounds, reg, "F", compute=False)
            continue
        before = net.registers[reg].copy() if deterministic else None
        net.reset("F", "empty")
        net.exchange_phase(rounds, reg, "F")
        net.merge(reg, ["F"], mode="union")
        if deterministic and np.array_equal(before, net.registers[reg]):
            settled = True
    return d * delta


def labelled_flood(net: Network, d: int, delta: int, links: np.ndarray | None = None) -> int:
    """Flood every node's own rumor for ``d`` hops and add what arrives to R.

    This is :func:`flood` run on fresh ``{v}`` sets (a distance label on each
    rumor), so after the call R_v also contains the d-hop neighborhood of v
    in the link graph. Unlike flooding R itself, the relation it adds is
    symmetric.
    """
    net.reset("S", "self")
    used = flood(net, d, delta, links, reg="S")
    net.merge("R", ["S"], mode="union")
    return used


def flood_sets(g: Graph, rumors, links, d: int, delta: int):
    """Set-level wrapper around :func:`flood`.

    ``rumors[v]`` is the initial rumor set of v and ``links[v]`` its ordered
    selected peers. Returns ``(final rumor sets, rounds used)``.
    """
    net = Network(g, protocol="flood")
    net.registers["R"] = bits.from_sets([set(r) | {v} for v, r in enumerate(rumors)], g.n)
    net.check_calls = False
    creators = [v for v, peers in enumerate(links) for _ in peers]
    peers = [u for ps in links for u in ps]
    if creators and not bits.test_pairs(g.adj_bits, creators, peers).all():
        from .engine import NonEdgeCallError

        raise NonEdgeCallError("selected link is not an edge of G")
    net.add_links(creators, peers)
    used = flood(net, d, delta)
    return net.rumor_sets(), used


def _active_nodes(net: Network):
    cand = net.candidates()
    return np.flatnonzero(bits.any_rows(cand)), cand


def _link_step(net: Network, policy: ChoicePolicy, actives, cand, iteration, exclude_linked=False):
    if exclude_linked:
        creator, peer, _, _ = net.link_table()
        linked = bits.zeros(net.n, net.n)
        if len(creator):
            bits.set_bits(linked, creator, peer)
        cand = cand & ~linked
    rows = cand[actives]
    view = ProtocolView(net, iteration)
    targets = policy.choose_many(actives, rows, iteration, view)
    keep = targets >= 0
    net.add_links(actives[keep], targets[keep])
    return int(keep.sum())


def _guard(L: int, g: Graph) -> int:
    maxdeg = int(g.degrees.max()) if g.n else 0
    return max(64 * max(L, 1), maxdeg + 1)


def _report(net: Network, protocol: str, policy: str, iterations: int, completed: bool, **extra):
    tr = net.trace
    counts = Counter(len(x) for x in net.links)
    rep = RunReport(
        protocol=protocol,
        n=net.n,
        m=net.g.m,
        policy=policy,
        iterations=iterations,
        rounds=tr.rounds,
        calls_initiated=tr.calls,
        completed=completed,
        messages=tr.messages,
        failed_calls=tr.calls - tr.ok_calls,
        per_node_links=dict(sorted(counts.items())),
        iteration_rounds=[tr.per_iteration.get(i, [0])[0] for i in range(1, iterations + 1)],
    )
    for key, val in extra.items():
        setattr(rep, key, val) if hasattr(rep, key) else rep.extras.__setitem__(key, val)
    net.finish()
    return rep


# ----------------------------------------------------------- randomized


def randomized_gossip(g: Graph, config: ProtocolConfig | None = None, seed: int = 0, *,
                      record: str = "full", observer=None) -> Run:
    """Random-link local broadcast: ~c log^2 n random new links and hops per iteration."""
    config = config or ProtocolConfig()
    rng = np.random.default_rng(seed)
    L = log2ceil(g.n)
    base = max(1, math.ceil(config.rand_constant * L * L))
    n_links = config.rand_links_per_iter or base
    hops = config.rand_flood_hops or base
    net = Network(g, record=record, protocol="alg2")
    net.trace.meta.update(single_link=False, seed=seed, links_per_iter=n_links, hops=hops)
    guard = config.max_iterations or 64 * max(L, 1)
    i = 0
    while True:
        if observer:
            observer(net, i)
        actives, cand = _active_nodes(net)
        if len(actives) == 0:
            break
        if i >= guard:
            if config.max_iterations:
                return Run(_report(net, "alg2", f"random({seed})", i, False), net)
            raise NonTerminationError(f"alg2 exceeded {guard} iterations", net.trace)
        i += 1
        net.begin_iteration(i)
        creators, peers = [], []
        for v in actives.tolist():
            pool = bits.members(cand[v], g.n)
            picks = np.unique(rng.choice(pool, size=n_links, replace=True))
            creators += [v] * len(picks)
            peers += picks.tolist()
        net.add_links(creators, peers)
        _, _, label, _ = net.link_table()
        if config.use_new_links_only:
            labelled_flood(net, hops, n_links, links=label == i)
        else:
            labelled_flood(net, hops, n_links * i)
    return Run(_report(net, "alg2", f"random({seed})", i, True), net)


# -------------------------------------------------------- deterministic


def deterministic_gossip(g: Graph, policy: ChoicePolicy | None = None,
                         config: ProtocolConfig | None = None, *, record: str = "full",
                         faults: FaultModel | None = None, observer=None,
                         n_hint: int | None = None) -> Run:
    """One arbitrary new link per active node per iteration, then flood.

    Default flooding is ``d = 2 log n`` hops with ``Delta = log n``; with
    ``adaptive_depth`` iteration i floods ``2i`` hops with ``Delta = i``.
    ``n_hint`` replaces n wherever the protocol needs log n.
    """
    policy = policy or MinUID()
    config = config or ProtocolConfig()
    net = Network(g, faults=faults, record=record, protocol="alg3")
    faulty = faults is not None and faults.mode != "none"
    net.trace.meta.update(policy=policy.name, single_link=True)
    L = log2ceil(n_hint or g.n)
    guard = config.max_iterations or _guard(L, g)
    i = 0
    while True:
        if observer:
            observer(net, i)
        actives, cand = _active_nodes(net)
        if len(actives) == 0:
            break
        if i >= guard:
            if config.max_iterations or faulty:
                return Run(_report(net, "alg3", policy.name, i, False, flags=["iteration-cap"]), net)
            raise NonTerminationError(f"alg3 exceeded {guard} iterations", net.trace)
        i += 1
        net.begin_iteration(i)
        _link_step(net, policy, actives, cand, i, exclude_linked=faulty)
        max_links = int(net.link_count().max())
        if config.adaptive_depth:
            d, delta = 2 * i, max(i, max_links)
        else:
            d = config.d or 2 * max(L, 1)
            delta = max(config.delta_cap or max(L, 1), max_links)
        labelled_flood(net, d, delta)
    return Run(_report(net, "alg3", policy.name, i, True), net)


def deterministic_gossip_unknown_n(g: Graph, policy_factory=MinUID, config: ProtocolConfig | None = None,
                                   initial_guess: int = 4) -> Run:
    """Run without knowing n: guess, verify locally, square the guess on failure.

    Each attempt restarts from scratch with budget ``log(guess)`` iterations.
    The returned report counts rounds over all attempts.
    """
    config = config or ProtocolConfig()
    guess = max(2, initial_guess)
    total_rounds = total_calls = 0
    attempts = []
    while True:
        budget = max(1, log2ceil(guess))
        run = deterministic_gossip(g, policy_factory(), replace(config, max_iterations=budget),
                                   record="aggregate", n_hint=guess)
        total_rounds += run.report.rounds
        total_calls += run.report.calls_initiated
        attempts.append((guess, run.report.iterations, run.report.completed))
        if run.report.completed:
            break
        guess = guess * guess
    rep = run.report
    rep.extras.update(attempts=attempts, final_guess=guess)
    rep.rounds, rep.calls_initiated = total_rounds, total_calls
    rep.protocol = "alg3-unknown-n"
    return run


# ----------------------------------------------------------------- trees


def _label_calls(net: Network) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    creator, peer, label, _ = net.link_table()
    out = {}
    for j in np.unique(label).tolist():
        sel = label == j
        out[j] = (creator[sel], peer[sel])
    return out


def _sweep(net: Network, calls, labels, reg: str) -> None:
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    for j in labels:
        c, p = calls.get(j, empty)
        net.exchange_round(c, p, reg, reg)


def push(net: Network, i: int, reg: str, calls=None) -> None:
    """Activate links labelled i, i-1, ..., 1 in consecutive rounds."""
    _sweep(net, calls or _label_calls(net), range(i, 0, -1), reg)


def pull(net: Network, i: int, reg: str, calls=None) -> None:
    """Activate links labelled 1, ..., i in consecutive rounds."""
    _sweep(net, calls or _label_calls(net), range(1, i + 1), reg)


def tree_gossip(g: Graph, policy: ChoicePolicy | None = None, *, record: str = "full",
                observer=None, config: ProtocolConfig | None = None) -> Run:
    """PUSH/PULL tree gossip: iteration i costs exactly 4i rounds.

    Per iteration: new link; ``R' = {v}``, PUSH then PULL on R'; ``R'' = {v}``,
    PULL then PUSH on R''; ``R = R' | R''``. The second half is the time
    reversal of the first, which keeps knowledge symmetric.
    """
    policy = policy or MinUID()
    config = config or ProtocolConfig()
    net = Network(g, record=record, protocol="alg4")
    net.trace.meta.update(policy=policy.name, single_link=True)
    L = log2ceil(g.n)
    guard = config.max_iterations or _guard(L, g)
    i = 0
    while True:
        if observer:
            observer(net, i)
        actives, cand = _active_nodes(net)
        if len(actives) == 0:
            break
        if i >= guard:
            if config.max_iterations:
                return Run(_report(net, "alg4", policy.name, i, False, flags=["iteration-cap"]), net)
            raise NonTerminationError(f"alg4 exceeded {guard} iterations", net.trace)
        i += 1
        net.begin_iteration(i)
        _link_step(net, policy, actives, cand, i)
        calls = _label_calls(net)
        net.reset("P", "self")
        push(net, i, "P", calls)
        pull(net, i, "P", calls)
        net.reset("Q", "self")
        pull(net, i, "Q", calls)
        push(net, i, "Q", calls)
        net.merge("R", ["P", "Q"], mode="replace")
    return Run(_report(net, "alg4", policy.name, i, True), net)


# ------------------------------------------------------------- k-local


def k_local_broadcast(g: Graph, k: int, policy: ChoicePolicy | None = None, base: str = "alg4",
                      config: ProtocolConfig | None = None, *, record: str = "full",
                      observer=None) -> Run:
    """Solve 1-local broadcast once, then repeat the last iteration's propagation k-1 times.

    With ``base="alg4"`` a ``push-pull`` repeat is one PUSH and one PULL
    sweep over labels of the final iteration I (2I rounds) carrying full
    rumor sets; ``full-four-phase`` adds PULL and PUSH sweeps (4I rounds).
    With ``base="alg3"`` a repeat is the final iteration's flood.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    config = config or ProtocolConfig()
    if base == "alg4":
        run = tree_gossip(g, policy, record=record, observer=observer, config=config)
    elif base == "alg3":
        run = deterministic_gossip(g, policy, config, record=record, observer=observer)
    else:
        raise ValueError(f"unknown base protocol {base!r}")
    net, rep = run.net, run.report
    I = rep.iterations
    L = log2ceil(g.n)
    calls = _label_calls(net) if base == "alg4" else None
    for r in range(1, k):
        net.begin_iteration(I + r, tag="repeat")
        if base == "alg4":
            push(net, I, "R", calls)
            pull(net, I, "R", calls)
            if config.repeat_style == "full-four-phase":
                pull(net, I, "R", calls)
                push(net, I, "R", calls)
        else:
            max_links = int(net.link_count().max()) if g.n else 0
            if config.adaptive_depth:
                d, delta = 2 * I, max(I, max_links)
            else:
                d = config.d or 2 * max(L, 1)
                delta = max(config.delta_cap or max(L, 1), max_links)
            flood(net, d, delta)
    net.finish()
    tr = net.trace
    rep.rounds, rep.calls_initiated, rep.messages = tr.rounds, tr.calls, tr.messages
    rep.failed_calls = tr.calls - tr.ok_calls
    rep.k, rep.repeats = k, k - 1
    rep.protocol = f"klocal-{base}"
    rep.extras["repeat_style"] = config.repeat_style if base == "alg4" else "flood"
    rep.extras["repeat_rounds"] = [tr.per_iteration.get(I + r, [0])[0] for r in range(1, k)]
    return run


def global_broadcast(g: Graph, policy: ChoicePolicy | None = None, base: str = "alg4",
                     config: ProtocolConfig | None = None, *, record: str = "full") -> Run:
    """k-local broadcast with k = diameter (simulator-side knowledge)."""
    D = diameter(g)
    run = k_local_broadcast(g, max(D, 1), policy, base, config, record=record)
    run.report.protocol = f"global-{base}"
    run.report.extras["diameter"] = D
    return run
