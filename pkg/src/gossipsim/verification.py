"""Oracles and structural checks over finished runs.

Everything here reads graphs, rumor-set snapshots and trace link records;
nothing consults protocol internals.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import bits
from .engine import RunTrace, knowledge_of
from .graph import Graph, closure_bits, k_hop_bits, log2ceil


def _knowledge(states, n: int) -> np.ndarray:
    if isinstance(states, np.ndarray):
        if states.dtype == np.int16:
            return knowledge_of(states, n, True)
        return states
    return bits.from_sets([set(s) for s in states], n)


# ------------------------------------------------------ local broadcast


def local_broadcast_gaps(g: Graph, k: int, states) -> np.ndarray:
    """Per node, how many rumors of its k-neighborhood it is missing."""
    need = k_hop_bits(g, k)
    have = _knowledge(states, g.n)
    return bits.popcount(need & ~have)


def check_local_broadcast(g: Graph, k: int, states) -> bool:
    """True iff every node knows every rumor within distance k."""
    return not local_broadcast_gaps(g, k, states).any()


def check_symmetry(states, n: int | None = None) -> list[tuple[int, int]]:
    """Pairs (u, v), u < v, where one knows the other but not vice versa."""
    if n is None:
        n = len(states)
    return [tuple(p) for p in bits.symmetric_violations(_knowledge(states, n), n).tolist()]


# --------------------------------------------------------- witness trees


class WitnessError(ValueError):
    pass


class NodeNotActiveError(WitnessError):
    pass


class InvariantViolation(WitnessError):
    pass


@dataclass
class WitnessTree:
    root: int
    order: int
    edges: list = field(default_factory=list)  # (parent, child, label)

    @property
    def nodes(self) -> list[int]:
        return [self.root] + [c for _, c, _ in self.edges]

    def children(self, v: int) -> list[tuple[int, int]]:
        return sorted((lab, c) for p, c, lab in self.edges if p == v)

    def depth(self) -> int:
        parent = {c: p for p, c, _ in self.edges}
        best = 0
        for v in parent:
            d, x = 0, v
            while x in parent:
                x = parent[x]
                d += 1
            best = max(best, d)
        return best

    def validate(self) -> None:
        nodes = self.nodes
        if len(set(nodes)) != len(nodes):
            raise InvariantViolation(f"{self.root}/{self.order}: repeated node in witness tree")
        if len(nodes) != 1 << self.order:
            raise InvariantViolation(f"{self.root}/{self.order}: {len(nodes)} nodes, want {1 << self.order}")
        if self.depth() > self.order:
            raise InvariantViolation(f"{self.root}/{self.order}: depth {self.depth()} > order")
        if [lab for lab, _ in self.children(self.root)] != list(range(1, self.order + 1)):
            raise InvariantViolation(f"{self.root}/{self.order}: root labels are not 1..{self.order}")
        into = {c: lab for _, c, lab in self.edges}
        for p, c, lab in self.edges:
            if p in into and into[p] <= lab:
                raise InvariantViolation(f"labels do not decrease along {p}->{c}")

    def term(self, uids=None) -> str:
        """Parenthesised form, children by ascending label: ``0(1:1,2:3(1:2))``."""
        name = (lambda x: str(uids[x])) if uids is not None else str

        def walk(v):
            kids = self.children(v)
            if not kids:
                return name(v)
            return name(v) + "(" + ",".join(f"{lab}:{walk(c)}" for lab, c in kids) + ")"

        return walk(self.root)


def links_by_creator(trace: RunTrace) -> dict[int, dict[int, int]]:
    """creator -> {label: peer} from the trace's link records."""
    out: dict[int, dict[int, int]] = {}
    for it, v, u in trace.link_creations:
        slot = out.setdefault(v, {})
        if it in slot:
            raise InvariantViolation(f"node {v} created two links in iteration {it}")
        slot[it] = u
    return out


def extract_witness_tree(trace: RunTrace, v: int, i: int, _links=None) -> WitnessTree:
    """The order-i witness tree of ``v`` rebuilt from link records.

    Children of the root are the nodes v linked to in iterations 1..i; a
    child linked at iteration j contributes its own links from iterations
    1..j-1, recursively.
    """
    links = _links if _links is not None else links_by_creator(trace)
    own = links.get(v, {})
    if any(j not in own for j in range(1, i + 1)):
        raise NodeNotActiveError(f"node {v} did not create a link in each iteration 1..{i}")
    tree = WitnessTree(v, i)
    stack = [(v, i)]
    while stack:
        x, bound = stack.pop()
        mine = links.get(x, {})
        for lab in range(1, bound + 1):
            if lab not in mine:
                raise InvariantViolation(f"node {x} in tree of {v} lacks a link labelled {lab}")
            tree.edges.append((x, mine[lab], lab))
            stack.append((mine[lab], lab - 1))
    tree.validate()
    return tree


class WitnessForest:
    """All witness trees of one order at once, as packed node sets.

    Order i is built from order i-1: ``T_i(v) = T_{i-1}(v) | T_{i-1}(u_i(v))``
    where ``u_i(v)`` is v's iteration-i link. ``valid`` marks nodes whose tree
    is defined (every required link exists).
    """

    def __init__(self, n: int):
        self.n = n
        self.order = 0
        self.sets = bits.identity(n)
        self.valid = np.ones(n, dtype=bool)

    def advance(self, creators: np.ndarray, peers: np.ndarray) -> None:
        """Add the links labelled ``order + 1``."""
        nxt = bits.zeros(self.n, self.n)
        valid = np.zeros(self.n, dtype=bool)
        if len(creators):
            nxt[creators] = self.sets[creators] | self.sets[peers]
            valid[creators] = self.valid[creators] & self.valid[peers]
        self.sets, self.valid = nxt, valid
        self.order += 1

    def bad_sizes(self) -> np.ndarray:
        """Valid nodes whose tree does not have exactly 2^order distinct nodes."""
        sizes = bits.popcount(self.sets)
        return np.flatnonzero(self.valid & (sizes != (1 << self.order)))

    def intersecting(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Mask of pairs whose trees share a node."""
        out = np.zeros(len(us), dtype=bool)
        step = max(1, (1 << 22) // self.sets.shape[1])
        for s in range(0, len(us), step):
            a = self.sets[us[s : s + step]]
            b = self.sets[vs[s : s + step]]
            out[s : s + step] = ((a & b) != 0).any(axis=1)
        return out


def unknown_neighbor_pairs(g: Graph, states) -> np.ndarray:
    """G-edges (u, v), u < v, with v not in R_u."""
    know = _knowledge(states, g.n)
    e = g.edges()
    if len(e) == 0:
        return e
    miss = ~bits.test_pairs(know, e[:, 0], e[:, 1])
    return e[miss]


# --------------------------------------------------------------- spanners


@dataclass
class SpannerStats:
    n: int
    edge_count: int
    bound_edges: int
    bound_stretch: int
    all_adjacent_within_bound: bool
    max_stretch_observed: int
    stretch_samples: list = field(default_factory=list)  # (u, v, d_G, d_spanner)
    sampled: bool = False
    is_subgraph: bool = True

    @property
    def density(self) -> float:
        return self.edge_count / self.n if self.n else 0.0

    def ok(self) -> bool:
        return (self.is_subgraph and self.edge_count <= self.bound_edges
                and self.all_adjacent_within_bound)


def spanner_from_trace(trace: RunTrace, g: Graph) -> Graph:
    pairs = {(min(v, u), max(v, u)) for _, v, u in trace.link_creations}
    return Graph.from_edges(g.n, sorted(pairs), uids=g.uids, name="spanner")


def _bfs_dist(h: Graph, sources: np.ndarray) -> np.ndarray:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import shortest_path

    a = csr_matrix((np.ones(len(h.indices), dtype=np.int8), h.indices, h.indptr), shape=(h.n, h.n))
    return shortest_path(a, unweighted=True, indices=sources)


def spanner_stats(g: Graph, h: Graph, bound_stretch: int, *, exhaustive_limit: int = 512,
                  seed: int = 0, far_pairs: int = 64, measure_pairs: bool = True) -> SpannerStats:
    """Size and adjacent-pair stretch of ``h`` as a spanner of ``g``.

    The bound check over all G-edges is exhaustive (bitset BFS to depth
    ``bound_stretch``). Exact per-pair distances in ``stretch_samples``
    cover every G-edge up to ``exhaustive_limit`` nodes and ``10 n`` random
    G-edges above; a few non-adjacent pairs are added for reference. With
    ``measure_pairs=False`` only the bound check runs.
    """
    n = g.n
    L = log2ceil(n)
    he = h.edges()
    subgraph = bool(len(he) == 0 or bits.test_pairs(g.adj_bits, he[:, 0], he[:, 1]).all())
    reach = closure_bits(h.indptr, h.indices, bits.identity(n), bound_stretch, rows=h.edge_rows)
    within = not (g.adj_bits & ~reach).any()
    rng = np.random.default_rng(seed)
    ge = g.edges()
    sampled = n > exhaustive_limit
    if sampled and len(ge) > 10 * n:
        ge = ge[np.sort(rng.choice(len(ge), size=10 * n, replace=False))]
    samples = []
    worst = 0
    if not measure_pairs:
        ge = ge[:0]
        far_pairs = 0
    if len(ge):
        src = np.unique(ge[:, 0])
        col = {s: j for j, s in enumerate(src.tolist())}
        for s in range(0, len(src), 512):
            chunk = src[s : s + 512]
            dist = _bfs_dist(h, chunk)
            sel = np.isin(ge[:, 0], chunk)
            for u, v in ge[sel].tolist():
                d = dist[col[u] - s, v]
                d = int(d) if np.isfinite(d) else -1
                samples.append((u, v, 1, d))
                worst = max(worst, d if d >= 0 else 10**9)
    if far_pairs and n > 2:
        us = rng.integers(0, n, size=far_pairs)
        vs = rng.integers(0, n, size=far_pairs)
        dg = _bfs_dist(g, np.unique(us))
        dh = _bfs_dist(h, np.unique(us))
        idx = {u: j for j, u in enumerate(np.unique(us).tolist())}
        for u, v in zip(us.tolist(), vs.tolist()):
            a, b = dg[idx[u], v], dh[idx[u], v]
            if u != v and np.isfinite(a) and a > 1:
                samples.append((u, v, int(a), int(b) if np.isfinite(b) else -1))
    return SpannerStats(
        n=n,
        edge_count=h.m,
        bound_edges=n * L,
        bound_stretch=bound_stretch,
        all_adjacent_within_bound=bool(within),
        max_stretch_observed=worst,
        stretch_samples=samples,
        sampled=sampled,
        is_subgraph=subgraph,
    )


def extract_spanner(trace: RunTrace, g: Graph, **kw) -> tuple[Graph, SpannerStats]:
    """Union of all created links, with stretch bound 2 log n."""
    h = spanner_from_trace(trace, g)
    return h, spanner_stats(g, h, 2 * log2ceil(g.n), **kw)


def k_hop_spanner_experiment(g: Graph, k_hops: int, policy=None, **kw) -> SpannerStats:
    """Deterministic gossip flooding only ``k_hops`` per iteration; stretch bound k_hops."""
    from .protocols import ProtocolConfig, deterministic_gossip

    if k_hops < 1:
        raise ValueError("k_hops must be >= 1")
    run = deterministic_gossip(g, policy, ProtocolConfig(d=k_hops), record="aggregate")
    h = spanner_from_trace(run.trace, g)
    stats = spanner_stats(g, h, k_hops, **kw)
    return stats


# ------------------------------------------------------------------ export


def spanner_stats_csv(rows: list[tuple[str, SpannerStats]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["graph", "n", "edge_count", "bound_edges", "density", "bound_stretch",
                "max_stretch_observed", "all_adjacent_within_bound", "sampled"])
    for name, s in rows:
        w.writerow([name, s.n, s.edge_count, s.bound_edges, f"{s.density:.4f}", s.bound_stretch,
                    s.max_stretch_observed, int(s.all_adjacent_within_bound), int(s.sampled)])
    return buf.getvalue()


def stretch_samples_csv(stats: SpannerStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["u", "v", "d_G", "d_spanner"])
    w.writerows(stats.stretch_samples)
    return buf.getvalue()


def violations_csv(violations: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["violation"])
    for v in violations:
        w.writerow([v if isinstance(v, str) else " ".join(map(str, v))])
    return buf.getvalue()
