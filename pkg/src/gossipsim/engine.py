"""Round-synchronous GOSSIP execution with a replayable trace.

Every node owns named registers. ``R`` is the rumor set; protocols add scratch
registers (flood buffers, PUSH/PULL accumulators) and combine them with
``reset``/``merge`` ops. A round is a list of calls, each caller appearing at
most once; every surviving call moves ``src`` content of each endpoint into the
``dst`` register of the other, read from the round-start snapshot of ``src``.

Registers are either packed bitsets or hop-count matrices (``hops=True``).
Hop registers carry rumor tokens with the number of exchanges travelled;
with a TTL a token is only forwarded while its hop count is below the TTL.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import bits
from .graph import Graph

INF = np.int16(np.iinfo(np.int16).max)


class ProtocolError(RuntimeError):
    """A protocol asked the engine for something the model forbids."""

    kind = "protocol-error"

    def __init__(self, message: str, trace: "RunTrace | None" = None):
        super().__init__(f"{self.kind}: {message}")
        self.trace = trace


class DuplicateCallerError(ProtocolError):
    kind = "duplicate-caller"


class NonEdgeCallError(ProtocolError):
    kind = "non-edge-call"


class StaleLinkError(ProtocolError):
    kind = "stale-link"


class TraceFormatError(ValueError):
    pass


class GraphMismatchError(ValueError):
    pass


# ---------------------------------------------------------------- faults

FAULT_MODES = ("none", "random-temporary", "adversarial-permanent")


@dataclass(frozen=True)
class FaultModel:
    mode: str = "none"
    gamma: float = 0.0
    seed: int = 0
    killed_edges: frozenset = frozenset()

    def __post_init__(self):
        if self.mode not in FAULT_MODES:
            raise ValueError(f"unknown fault mode {self.mode!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.mode == "none" and (self.gamma or self.killed_edges):
            raise ValueError("fault mode 'none' takes no gamma or killed edges")
        edges = frozenset((min(u, v), max(u, v)) for u, v in self.killed_edges)
        object.__setattr__(self, "killed_edges", edges)

    def surviving_graph(self, g: Graph) -> Graph:
        if not self.killed_edges:
            return g
        keep = [(u, v) for u, v in g.edges().tolist() if (u, v) not in self.killed_edges]
        return Graph.from_edges(g.n, keep, uids=g.uids, name=g.name + "-survivors")


# ----------------------------------------------------------------- trace


@dataclass(frozen=True)
class CallEvent:
    round: int
    caller: int
    callee: int
    payload_size: tuple  # (caller -> callee, callee -> caller) rumor counts
    ok: bool = True


@dataclass
class NodeState:
    uid: int
    rumors: frozenset
    links: list  # (peer UID, creation iteration) in creation order
    active: bool


@dataclass
class RoundRecord:
    round: int
    iteration: int
    callers: np.ndarray
    callees: np.ndarray
    ok: np.ndarray
    src: str = "R"
    dst: str = "R"
    payload: np.ndarray | None = None


@dataclass
class OpRecord:
    op: str  # reset | merge
    dst: str
    srcs: tuple = ()
    init: str = ""
    mode: str = ""


@dataclass
class LinkRecord:
    iteration: int
    caller: int
    callee: int


@dataclass
class IterationRecord:
    iteration: int
    round: int
    tag: str = ""


@dataclass
class RunTrace:
    """Ordered run records plus aggregate counters.

    In aggregate mode (``full=False``) round and op records are dropped, so
    the trace cannot be replayed; link and iteration records are kept.
    """

    n: int
    protocol: str = ""
    full: bool = True
    hops: bool = False
    ttl: int | None = None
    graph_fingerprint: str = ""
    uids: tuple = ()
    meta: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    rounds: int = 0
    calls: int = 0
    ok_calls: int = 0
    per_iteration: dict = field(default_factory=dict)  # iteration -> [rounds, calls, ok]
    digest: str = ""
    knowledge_times: object = None

    def record_round(self, iteration, callers, callees, ok, src="R", dst="R", payload=None):
        callers = np.asarray(callers, dtype=np.int32)
        callees = np.asarray(callees, dtype=np.int32)
        ok = np.ones(len(callers), dtype=bool) if ok is None else np.asarray(ok, dtype=bool)
        if self.full:
            self.records.append(
                RoundRecord(self.rounds, iteration, callers, callees, ok, src, dst, payload)
            )
        agg = self.per_iteration.setdefault(iteration, [0, 0, 0])
        agg[0] += 1
        agg[1] += len(callers)
        agg[2] += int(ok.sum())
        self.rounds += 1
        self.calls += len(callers)
        self.ok_calls += int(ok.sum())

    def record_op(self, op: OpRecord):
        if self.full:
            self.records.append(op)

    @property
    def replayable(self) -> bool:
        return self.full

    @property
    def messages(self) -> int:
        return 2 * self.ok_calls

    @property
    def round_records(self) -> list[RoundRecord]:
        return [r for r in self.records if isinstance(r, RoundRecord)]

    @property
    def iteration_marks(self) -> list[tuple[int, int]]:
        return [(r.iteration, r.round) for r in self.records if isinstance(r, IterationRecord)]

    @property
    def link_creations(self) -> list[tuple[int, int, int]]:
        return [(r.iteration, r.caller, r.callee) for r in self.records if isinstance(r, LinkRecord)]

    @property
    def events(self) -> Iterator[CallEvent]:
        for rec in self.round_records:
            pay = rec.payload
            for j in range(len(rec.callers)):
                size = (int(pay[j, 0]), int(pay[j, 1])) if pay is not None else (-1, -1)
                yield CallEvent(rec.round, int(rec.callers[j]), int(rec.callees[j]), size, bool(rec.ok[j]))


# ------------------------------------------------------------- registers


def _init_register(n: int, hops: bool, init: str) -> np.ndarray:
    if hops:
        reg = np.full((n, n), INF, dtype=np.int16)
        if init == "self":
            np.fill_diagonal(reg, 0)
        return reg
    return bits.identity(n) if init == "self" else bits.zeros(n, n)


def _forwardable(src: np.ndarray, ttl: int | None) -> np.ndarray:
    """Hop register as seen by a receiver: +1 hop, expired tokens dropped."""
    limit = INF if ttl is None else min(int(ttl), int(INF))
    out = src + np.int16(1)
    out[src >= limit] = INF
    return out


def _apply_calls(dst, src, callers, callees, hops, ttl):
    rows = np.concatenate([callers, callees])
    cols = np.concatenate([callees, callers])
    if hops:
        bits.gather_min(dst, _forwardable(src, ttl), rows, cols)
    else:
        bits.gather_or(dst, src, rows, cols)


def _apply_op(regs, op: OpRecord, n: int, hops: bool):
    if op.op == "reset":
        if op.init.startswith("copy:"):
            regs[op.dst] = regs[op.init[5:]].copy()
        else:
            regs[op.dst] = _init_register(n, hops, op.init)
    elif op.op == "merge":
        parts = [regs[s] for s in op.srcs]
        out = parts[0].copy()
        for p in parts[1:]:
            if hops:
                np.minimum(out, p, out=out)
            else:
                out |= p
        if op.mode == "union":
            if hops:
                np.minimum(out, regs[op.dst], out=out)
            else:
                out |= regs[op.dst]
        regs[op.dst] = out
    else:
        raise TraceFormatError(f"unknown op {op.op!r}")


def knowledge_of(reg: np.ndarray, n: int, hops: bool) -> np.ndarray:
    """Packed rumor-set bits of a register."""
    return bits.from_bool(reg < INF) if hops else reg


def state_digest(reg: np.ndarray, n: int, hops: bool) -> str:
    data = reg if hops else bits.to_bool(reg, n)
    return hashlib.sha256(np.ascontiguousarray(data).tobytes()).hexdigest()


# --------------------------------------------------------------- network


class Network:
    """Mutable per-run state: registers, links, round counter and trace."""

    def __init__(
        self,
        g: Graph,
        *,
        faults: FaultModel | None = None,
        record: str = "full",
        hops: bool = False,
        ttl: int | None = None,
        protocol: str = "",
        check_calls: bool = True,
    ):
        if record not in ("full", "aggregate"):
            raise ValueError("record must be 'full' or 'aggregate'")
        self.g = g
        self.n = g.n
        self.faults = faults or FaultModel()
        self._rng = np.random.default_rng(self.faults.seed)
        self.hops = hops
        self.ttl = ttl
        self.check_calls = check_calls
        self.trace = RunTrace(
            n=g.n,
            protocol=protocol,
            full=record == "full",
            hops=hops,
            ttl=ttl,
            graph_fingerprint=g.fingerprint(),
            uids=tuple(g.uids),
        )
        self.registers = {"R": _init_register(self.n, hops, "self")}
        self.links: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        self._link_cols: list[list[int]] = [[], [], [], []]  # creator, peer, label, order
        self._link_cache = None
        self.iteration = 0
        self._killed = None
        if self.faults.killed_edges:
            self._killed = bits.zeros(self.n, self.n)
            kill = np.array(sorted(self.faults.killed_edges), dtype=np.int64)
            bits.set_bits(self._killed, kill[:, 0], kill[:, 1])
            bits.set_bits(self._killed, kill[:, 1], kill[:, 0])

    # -- knowledge -------------------------------------------------------

    @property
    def R(self) -> np.ndarray:
        return self.registers["R"]

    def knowledge(self) -> np.ndarray:
        return knowledge_of(self.R, self.n, self.hops)

    def knows(self, v: int, u: int) -> bool:
        if self.hops:
            return bool(self.R[v, u] < INF)
        return bits.test(self.R, v, u)

    def rumor_sets(self) -> list[set[int]]:
        return bits.to_sets(self.knowledge(), self.n)

    def candidates(self) -> np.ndarray:
        """Row v = Gamma(v) minus R_v."""
        return self.g.adj_bits & ~self.knowledge()

    def active_mask(self) -> np.ndarray:
        return bits.any_rows(self.candidates())

    def node_state(self, v: int) -> NodeState:
        uids = self.g.uids
        known = bits.members(self.knowledge()[v], self.n)
        return NodeState(
            uid=uids[v],
            rumors=frozenset(uids[u] for u in known.tolist()),
            links=[(uids[p], lab) for p, lab in self.links[v]],
            active=bool(self.active_mask()[v]),
        )

    # -- iterations and links --------------------------------------------

    def begin_iteration(self, i: int, tag: str = "") -> None:
        self.iteration = i
        self.trace.records.append(IterationRecord(i, self.trace.rounds, tag))

    def add_links(self, creators, peers) -> None:
        creators = np.asarray(creators, dtype=np.int64)
        peers = np.asarray(peers, dtype=np.int64)
        if len(creators) == 0:
            return
        if self.check_calls:
            if not bits.test_pairs(self.g.adj_bits, creators, peers).all():
                raise NonEdgeCallError("link along a non-edge", self.trace)
            if bits.test_pairs(self.knowledge(), creators, peers).any():
                raise StaleLinkError("link to an already known node", self.trace)
        it = self.iteration
        cols = self._link_cols
        for v, u in zip(creators.tolist(), peers.tolist()):
            cols[0].append(v)
            cols[1].append(u)
            cols[2].append(it)
            cols[3].append(len(self.links[v]))
            self.links[v].append((u, it))
            self.trace.records.append(LinkRecord(it, v, u))
        self._link_cache = None

    def link_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(creator, peer, label, per-creator order) arrays for every link."""
        if self._link_cache is None:
            self._link_cache = tuple(np.asarray(c, dtype=np.int64) for c in self._link_cols)
        return self._link_cache

    def link_count(self) -> np.ndarray:
        return np.array([len(x) for x in self.links], dtype=np.int64)

    # -- registers -------------------------------------------------------

    def reset(self, name: str, init: str = "self") -> None:
        op = OpRecord("reset", name, init=init)
        _apply_op(self.registers, op, self.n, self.hops)
        self.trace.record_op(op)

    def merge(self, dst: str, srcs, mode: str = "union") -> None:
        op = OpRecord("merge", dst, tuple(srcs), mode=mode)
        _apply_op(self.registers, op, self.n, self.hops)
        self.trace.record_op(op)

    # -- rounds ----------------------------------------------------------

    def _validate_calls(self, callers, callees):
        if len(np.unique(callers)) != len(callers):
            vals, counts = np.unique(callers, return_counts=True)
            raise DuplicateCallerError(
                f"node {int(vals[counts > 1][0])} calls twice in round {self.trace.rounds}", self.trace
            )
        if len(callers) and not bits.test_pairs(self.g.adj_bits, callers, callees).all():
            bad = np.flatnonzero(~bits.test_pairs(self.g.adj_bits, callers, callees))[0]
            raise NonEdgeCallError(
                f"{int(callers[bad])}->{int(callees[bad])} in round {self.trace.rounds}", self.trace
            )

    def _survivors(self, callers, callees) -> np.ndarray:
        ok = np.ones(len(callers), dtype=bool)
        if self.faults.mode == "random-temporary" and self.faults.gamma > 0:
            ok = self._rng.random(len(callers)) >= self.faults.gamma
        if self._killed is not None and len(callers):
            ok &= ~bits.test_pairs(self._killed, callers, callees)
        return ok

    def _payload(self, reg, callers, callees):
        if not self.trace.full:
            return None
        if self.hops:
            limit = INF if self.ttl is None else self.ttl
            sizes = (reg < limit).sum(axis=1)
        else:
            sizes = bits.popcount(reg)
        return np.stack([sizes[callers], sizes[callees]], axis=1)

    def exchange_round(self, callers, callees, src: str = "R", dst: str = "R") -> np.ndarray:
        """One round; returns the survival mask of the calls."""
        callers = np.asarray(callers, dtype=np.int64)
        callees = np.asarray(callees, dtype=np.int64)
        if self.check_calls:
            self._validate_calls(callers, callees)
        ok = self._survivors(callers, callees)
        source = self.registers[src]
        payload = self._payload(source, callers, callees)
        if src == dst:
            source = source.copy()
        _apply_calls(self.registers[dst], source, callers[ok], callees[ok], self.hops, self.ttl)
        self.trace.record_round(self.iteration, callers, callees, ok, src, dst, payload)
        return ok

    def exchange_phase(self, rounds, src: str, dst: str, compute: bool = True) -> None:
        """Several rounds whose payloads all come from ``src``, which they leave untouched.

        Equivalent to calling :meth:`exchange_round` per round as ``src != dst``;
        computed in one vectorised pass. With ``compute=False`` the rounds are
        only recorded (the caller knows they cannot change anything).
        """
        if src == dst:
            raise ValueError("exchange_phase needs distinct src and dst registers")
        source = self.registers[src]
        live_r, live_c = [], []
        for callers, callees in rounds:
            callers = np.asarray(callers, dtype=np.int64)
            callees = np.asarray(callees, dtype=np.int64)
            if self.check_calls:
                self._validate_calls(callers, callees)
            ok = self._survivors(callers, callees)
            payload = self._payload(source, callers, callees)
            self.trace.record_round(self.iteration, callers, callees, ok, src, dst, payload)
            live_r.append(callers[ok])
            live_c.append(callees[ok])
        if compute and live_r:
            _apply_calls(
                self.registers[dst], source, np.concatenate(live_r), np.concatenate(live_c),
                self.hops, self.ttl,
            )

    def wait_round(self) -> None:
        empty = np.zeros(0, dtype=np.int64)
        self.trace.record_round(self.iteration, empty, empty, None)

    def finish(self) -> RunTrace:
        self.trace.digest = state_digest(self.R, self.n, self.hops)
        return self.trace


# ---------------------------------------------------------------- replay


def exchange_round(states: list[set], calls, faults: FaultModel | None = None, g: Graph | None = None,
                   seed_rng=None):
    """Set-based single round, for hand simulation and small checks.

    Returns ``(new_states, events)``; calls failing under ``faults`` are
    kept in the events with ``ok=False``.
    """
    faults = faults or FaultModel()
    rng = seed_rng or np.random.default_rng(faults.seed)
    callers = [c for c, _ in calls]
    if len(set(callers)) != len(callers):
        raise DuplicateCallerError("duplicate caller in round")
    if g is not None:
        for c, e in calls:
            if not g.has_edge(c, e):
                raise NonEdgeCallError(f"{c}->{e} is not an edge")
    new = [set(s) for s in states]
    events = []
    for c, e in calls:
        ok = True
        if faults.mode == "random-temporary" and faults.gamma > 0:
            ok = bool(rng.random() >= faults.gamma)
        if (min(c, e), max(c, e)) in faults.killed_edges:
            ok = False
        if ok:
            new[c] |= states[e]
            new[e] |= states[c]
        events.append(CallEvent(0, c, e, (len(states[c]), len(states[e])), ok))
    return new, events


def replay(trace: RunTrace) -> dict[str, np.ndarray]:
    """Re-execute a full trace round by round from the initial states."""
    if not trace.replayable:
        raise TraceFormatError("aggregate-mode trace cannot be replayed")
    n, hops = trace.n, trace.hops
    regs = {"R": _init_register(n, hops, "self")}
    for rec in trace.records:
        if isinstance(rec, OpRecord):
            _apply_op(regs, rec, n, hops)
        elif isinstance(rec, RoundRecord):
            src = regs[rec.src]
            if rec.src == rec.dst:
                src = src.copy()
            ok = rec.ok
            _apply_calls(regs[rec.dst], src, rec.callers[ok].astype(np.int64),
                         rec.callees[ok].astype(np.int64), hops, trace.ttl)
    return regs


def _as_bits(states, n: int, hops: bool) -> np.ndarray:
    if isinstance(states, np.ndarray):
        if states.dtype == np.int16:
            return knowledge_of(states, n, True)
        return states
    return bits.from_sets(list(states), n)


def knowledge_soundness_check(trace: RunTrace, final_states) -> bool:
    """True iff replaying ``trace`` reproduces ``final_states`` exactly."""
    regs = replay(trace)
    got = knowledge_of(regs["R"], trace.n, trace.hops)
    want = _as_bits(final_states, trace.n, trace.hops)
    return bool(np.array_equal(got, want))


def validate_trace(trace: RunTrace, g: Graph) -> list[str]:
    """Model-contract violations in a full trace; empty means clean."""
    out = []
    if trace.n != g.n:
        return [f"graph-mismatch: trace n={trace.n}, graph n={g.n}"]
    single_link = trace.meta.get("single_link", True)
    n, hops = trace.n, trace.hops
    regs = {"R": _init_register(n, hops, "self")}
    adj = g.adj_bits
    expected_round = 0
    last_iter = None
    links_this_iter: dict[int, set] = {}
    for rec in trace.records:
        if isinstance(rec, IterationRecord):
            if last_iter is not None and rec.iteration <= last_iter:
                out.append(f"iteration-order@{rec.iteration}")
            last_iter = rec.iteration
        elif isinstance(rec, LinkRecord):
            v, u = rec.caller, rec.callee
            if not (0 <= v < n and 0 <= u < n) or not bits.test(adj, v, u):
                out.append(f"non-edge-link@{rec.iteration}({v},{u})")
                continue
            known = knowledge_of(regs["R"], n, hops)
            if bits.test(known, v, u):
                out.append(f"stale-link@{rec.iteration}({v},{u})")
            seen = links_this_iter.setdefault(rec.iteration, set())
            if single_link and v in seen:
                out.append(f"multiple-links@{rec.iteration}({v})")
            seen.add(v)
        elif isinstance(rec, OpRecord):
            _apply_op(regs, rec, n, hops)
        elif isinstance(rec, RoundRecord):
            if rec.round != expected_round:
                out.append(f"round-gap@{rec.round}")
            expected_round = rec.round + 1
            callers = rec.callers.astype(np.int64)
            callees = rec.callees.astype(np.int64)
            vals, counts = np.unique(callers, return_counts=True)
            for v in vals[counts > 1].tolist():
                out.append(f"duplicate-caller@{rec.round}({v})")
            valid = (callers >= 0) & (callers < n) & (callees >= 0) & (callees < n)
            edge = np.zeros(len(callers), dtype=bool)
            edge[valid] = bits.test_pairs(adj, callers[valid], callees[valid])
            for j in np.flatnonzero(~edge).tolist():
                out.append(f"non-edge-call@{rec.round}({int(callers[j])},{int(callees[j])})")
            keep = rec.ok & edge
            src = regs[rec.src].copy() if rec.src == rec.dst else regs[rec.src]
            _apply_calls(regs[rec.dst], src, callers[keep], callees[keep], hops, trace.ttl)
    return out


# ------------------------------------------------------------ JSON lines


def export_jsonl(trace: RunTrace, g: Graph | None = None, embed_graph: bool = True) -> str:
    """Serialise a full trace: header, records, end marker."""
    if not trace.replayable:
        raise TraceFormatError("only full traces can be exported")
    uids = list(trace.uids) or list(range(trace.n))
    header = {
        "type": "header",
        "version": 1,
        "protocol": trace.protocol,
        "n": trace.n,
        "uids": uids,
        "graph": trace.graph_fingerprint,
        "hops": trace.hops,
        "ttl": trace.ttl,
        "meta": trace.meta,
    }
    if embed_graph and g is not None:
        header["edges"] = [[uids[u], uids[v]] for u, v in g.edges().tolist()]
    lines = [json.dumps(header, sort_keys=True)]
    for rec in trace.records:
        if isinstance(rec, RoundRecord):
            calls = [
                [uids[c], uids[e], bool(k)]
                for c, e, k in zip(rec.callers.tolist(), rec.callees.tolist(), rec.ok.tolist())
            ]
            row = {"type": "round", "round": rec.round, "iteration": rec.iteration,
                   "calls": calls, "src": rec.src, "dst": rec.dst}
        elif isinstance(rec, OpRecord):
            row = {"type": "op", "op": rec.op, "dst": rec.dst, "srcs": list(rec.srcs),
                   "init": rec.init, "mode": rec.mode}
        elif isinstance(rec, LinkRecord):
            row = {"type": "link", "iteration": rec.iteration,
                   "caller": uids[rec.caller], "callee": uids[rec.callee]}
        else:
            row = {"type": "iteration", "iteration": rec.iteration, "round": rec.round, "tag": rec.tag}
        lines.append(json.dumps(row, sort_keys=True))
    lines.append(json.dumps({"type": "end", "rounds": trace.rounds, "records": len(trace.records),
                             "digest": trace.digest}))
    return "\n".join(lines) + "\n"


def import_jsonl(text: str, g: Graph | None = None) -> tuple[RunTrace, Graph | None]:
    """Parse an exported trace; returns the trace and the embedded graph if any."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"line {lineno}: {exc.msg}") from None
    if not rows or rows[0].get("type") != "header":
        raise TraceFormatError("missing header record")
    if rows[-1].get("type") != "end":
        raise TraceFormatError("missing end record (truncated trace?)")
    head = rows[0]
    try:
        n = int(head["n"])
        uids = list(head["uids"])
        index = {u: i for i, u in enumerate(uids)}
        embedded = None
        if "edges" in head:
            embedded = Graph.from_edges(n, [(index[u], index[v]) for u, v in head["edges"]],
                                        uids=tuple(uids))
        if g is not None and g.fingerprint() != head["graph"]:
            raise GraphMismatchError(
                f"trace was recorded on graph {head['graph']}, got {g.fingerprint()}"
            )
        if embedded is not None and embedded.fingerprint() != head["graph"]:
            raise TraceFormatError("embedded edge list does not match graph fingerprint")
        trace = RunTrace(n=n, protocol=head.get("protocol", ""), full=True, hops=bool(head["hops"]),
                         ttl=head.get("ttl"), graph_fingerprint=head["graph"], uids=tuple(uids),
                         meta=dict(head.get("meta", {})))
        for row in rows[1:-1]:
            kind = row.get("type")
            if kind == "round":
                if row["round"] != trace.rounds:
                    raise TraceFormatError(f"round {row['round']} out of sequence")
                calls = row["calls"]
                callers = [index[c] for c, _, _ in calls]
                callees = [index[e] for _, e, _ in calls]
                ok = [bool(k) for _, _, k in calls]
                trace.record_round(row["iteration"], callers, callees, ok, row["src"], row["dst"])
            elif kind == "op":
                trace.records.append(OpRecord(row["op"], row["dst"], tuple(row["srcs"]),
                                              row.get("init", ""), row.get("mode", "")))
            elif kind == "link":
                trace.records.append(LinkRecord(row["iteration"], index[row["caller"]],
                                                index[row["callee"]]))
            elif kind == "iteration":
                trace.records.append(IterationRecord(row["iteration"], row["round"], row.get("tag", "")))
            else:
                raise TraceFormatError(f"unknown record type {kind!r}")
        end = rows[-1]
        if end.get("rounds") != trace.rounds or end.get("records") != len(trace.records):
            raise TraceFormatError("end record counts disagree with the body (truncated?)")
        trace.digest = end.get("digest", "")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (TraceFormatError, GraphMismatchError)):
            raise
        raise TraceFormatError(f"malformed record: {exc!r}") from None
    return trace, embedded
