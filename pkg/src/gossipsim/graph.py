"""Undirected topologies: generation, BFS queries and edge-list IO.

Nodes are dense indices ``0..n-1``. ``Graph.uids`` maps an index back to the
external UID (identity for generated graphs; ascending order for edge-list
input, so index order and UID order agree).
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import bits


class GraphError(ValueError):
    """Invalid graph construction or query."""


class InvalidParamsError(GraphError):
    pass


class UnknownUIDError(GraphError, KeyError):
    pass


class DisconnectedGraphError(GraphError):
    pass


class EdgeListError(GraphError):
    kind = "parse-error"

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"{self.kind} at line {line}: {message}")


class ParseError(EdgeListError):
    kind = "parse-error"


class SelfLoopError(EdgeListError):
    kind = "self-loop"


class DuplicateEdgeError(EdgeListError):
    kind = "duplicate-edge"


def log2ceil(n: int) -> int:
    """Rounded-up binary logarithm; 0 for n <= 1."""
    return (int(n) - 1).bit_length() if n > 1 else 0


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable CSR adjacency with sorted neighbor lists."""

    indptr: np.ndarray
    indices: np.ndarray
    uids: tuple = ()
    name: str = ""

    def __post_init__(self):
        if not self.uids:
            object.__setattr__(self, "uids", tuple(range(len(self.indptr) - 1)))
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_edges(cls, n: int, edges, uids=(), name: str = "") -> "Graph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and (e.min() < 0 or e.max() >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self-loop")
        both = np.concatenate([e, e[:, ::-1]]) if len(e) else e
        key = both[:, 0] * n + both[:, 1]
        key = np.unique(key)
        if len(key) != 2 * len(e):
            raise GraphError("duplicate edge")
        src, dst = np.divmod(key, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(indptr, dst.astype(np.int32), tuple(uids), name)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def m(self) -> int:
        return len(self.indices) // 2

    @property
    def nodes(self) -> range:
        return range(self.n)

    def neighbors(self, v: int) -> np.ndarray:
        self._check(v)
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        self._check(v)
        return int(self.indptr[v + 1] - self.indptr[v])

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    @cached_property
    def edge_rows(self) -> np.ndarray:
        """Source index of each CSR entry (both directions)."""
        return np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)

    def edges(self) -> np.ndarray:
        """Canonical ``(u, v)`` pairs with u < v, sorted (read-only)."""
        return self._edges

    @cached_property
    def _edges(self) -> np.ndarray:
        rows = self.edge_rows
        keep = rows < self.indices
        out = np.stack([rows[keep], self.indices[keep].astype(np.int64)], axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def adj_bits(self) -> np.ndarray:
        out = bits.zeros(self.n, self.n)
        bits.set_bits(out, self.edge_rows, self.indices)
        out.setflags(write=False)
        return out

    def index_of(self, uid) -> int:
        try:
            return self._uid_index[uid]
        except KeyError:
            raise UnknownUIDError(f"unknown UID {uid!r}") from None

    @cached_property
    def _uid_index(self) -> dict:
        return {u: i for i, u in enumerate(self.uids)}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(self.edges().astype(np.int64).tobytes())
        return h.hexdigest()[:16]

    def is_connected(self) -> bool:
        return self.n <= 1 or len(bfs_distances(self, 0)[0]) == self.n

    def _check(self, v) -> None:
        if not (0 <= v < self.n):
            raise UnknownUIDError(f"unknown node {v!r}")

    def __repr__(self) -> str:
        label = f"{self.name} " if self.name else ""
        return f"<Graph {label}n={self.n} m={self.m}>"


# ---------------------------------------------------------------- queries


def bfs_distances(g: Graph, source: int, limit: int | None = None):
    """Plain deque BFS; returns ``(dist: dict, order)``."""
    g._check(source)
    dist = {source: 0}
    order = [source]
    q = deque([source])
    indptr, indices = g.indptr, g.indices
    while q:
        v = q.popleft()
        dv = dist[v]
        if limit is not None and dv >= limit:
            continue
        for u in indices[indptr[v] : indptr[v + 1]].tolist():
            if u not in dist:
                dist[u] = dv + 1
                order.append(u)
                q.append(u)
    return dist, order


def neighborhood(g: Graph, v: int, k: int) -> set[int]:
    """All nodes at distance at most ``k`` from ``v`` (``v`` included)."""
    if k < 0:
        raise InvalidParamsError("k must be >= 0")
    return set(bfs_distances(g, v, limit=k)[0])


def shortest_path_len(g: Graph, u: int, v: int) -> int:
    g._check(v)
    dist, _ = bfs_distances(g, u)
    if v not in dist:
        raise DisconnectedGraphError(f"{v} unreachable from {u}")
    return dist[v]


def eccentricity(g: Graph, v: int) -> int:
    dist, _ = bfs_distances(g, v)
    if len(dist) != g.n:
        raise DisconnectedGraphError("graph is disconnected")
    return max(dist.values())


def diameter(g: Graph) -> int:
    """Exact diameter via all-pairs BFS (scipy's C BFS for speed)."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import shortest_path

    if g.n <= 1:
        return 0
    a = csr_matrix(
        (np.ones(len(g.indices), dtype=np.int8), g.indices, g.indptr), shape=(g.n, g.n)
    )
    best = 0
    block = max(1, (1 << 22) // g.n)
    for s in range(0, g.n, block):
        d = shortest_path(a, unweighted=True, indices=np.arange(s, min(g.n, s + block)))
        if np.isinf(d).any():
            raise DisconnectedGraphError("graph is disconnected")
        best = max(best, int(d.max()))
    return best


def closure_bits(indptr, indices, start: np.ndarray, steps: int, rows=None) -> np.ndarray:
    """Expand each row of ``start`` by ``steps`` hops along a CSR graph.

    Row ``v`` of the result is ``start[v]`` unioned with ``start[u]`` for
    every ``u`` within ``steps`` hops of ``v``.
    """
    cur = start.copy()
    if rows is None:
        rows = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))
    for _ in range(steps):
        nxt = cur.copy()
        bits.gather_or(nxt, cur, rows, indices)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    return cur


def k_hop_bits(g: Graph, k: int) -> np.ndarray:
    """Row v = Gamma^k(v) as a packed bitset, level-synchronous BFS for all v."""
    if k < 0:
        raise InvalidParamsError("k must be >= 0")
    if k == 1:
        return g.adj_bits | bits.identity(g.n)
    return closure_bits(g.indptr, g.indices, bits.identity(g.n), k, rows=g.edge_rows)


# ------------------------------------------------------------- generation

KINDS = (
    "path",
    "cycle",
    "star",
    "complete",
    "hypercube",
    "grid2d",
    "random-gnp",
    "random-tree",
    "barbell",
    "caterpillar",
    "from-file",
)


@dataclass(frozen=True)
class GraphKind:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def label(self) -> str:
        inner = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in sorted(self.params.items()))
        tail = f",seed={self.seed}" if self.kind in ("random-gnp", "random-tree") else ""
        return f"{self.kind}({inner}{tail})"


def _need(params, key, lo=1):
    if key not in params:
        raise InvalidParamsError(f"missing parameter {key!r}")
    val = params[key]
    if not isinstance(val, (int, np.integer)) or val < lo:
        raise InvalidParamsError(f"{key} must be an integer >= {lo}, got {val!r}")
    return int(val)


def _path(n):
    return [(i, i + 1) for i in range(n - 1)]


def _gnp_edges(n, p, rng):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def _prufer_tree(n, rng):
    if n <= 2:
        return _path(n)
    import heapq

    seq = rng.integers(0, n, size=n - 2).tolist()
    degree = [1] * n
    for x in seq:
        degree[x] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, x))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, x)
    u, v = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((u, v))
    return edges


def generate(spec: GraphKind) -> Graph:
    """Build the connected, canonical graph described by ``spec``."""
    kind, p = spec.kind, dict(spec.params)
    name = spec.label()
    if kind == "from-file":
        if "path" not in p:
            raise InvalidParamsError("from-file needs 'path'")
        with open(p["path"]) as fh:
            g = read_edge_list(fh.read())
        return Graph(g.indptr, g.indices, g.uids, name)
    if kind == "grid2d":
        if "rows" in p or "cols" in p:
            r, c = _need(p, "rows"), _need(p, "cols")
        else:
            n = _need(p, "n")
            r = math.isqrt(n)
            if r * r != n:
                raise InvalidParamsError("grid2d with n needs a perfect square")
            c = r
        n = r * c
        edges = [(i * c + j, i * c + j + 1) for i in range(r) for j in range(c - 1)]
        edges += [(i * c + j, (i + 1) * c + j) for i in range(r - 1) for j in range(c)]
        return Graph.from_edges(n, edges, name=name)
    if kind == "barbell":
        if "clique" in p:
            k, b = _need(p, "clique", 1), _need(p, "bridge", 1)
        else:
            n = _need(p, "n", 4)
            k = n // 2 - 1
            b = n - 2 * k + 1
        left = [(i, j) for i in range(k) for j in range(i + 1, k)]
        chain = list(range(k - 1, k + b))  # k-1 .. k+b-1: b edges
        mid = [(chain[i], chain[i + 1]) for i in range(b)]
        off = k + b - 1
        right = [(off + i, off + j) for i in range(k) for j in range(i + 1, k)]
        return Graph.from_edges(2 * k + b - 1, left + mid + right, name=name)
    if kind == "caterpillar":
        if "spine" in p:
            s, legs = _need(p, "spine"), _need(p, "legs", 0)
        else:
            n = _need(p, "n")
            legs = int(p.get("legs", 3))
            if n % (legs + 1):
                raise InvalidParamsError(f"caterpillar n must be divisible by legs+1={legs + 1}")
            s = n // (legs + 1)
        edges = _path(s)
        nxt = s
        for v in range(s):
            for _ in range(legs):
                edges.append((v, nxt))
                nxt += 1
        return Graph.from_edges(nxt, edges, name=name)

    n = _need(p, "n")
    if kind == "path":
        return Graph.from_edges(n, _path(n), name=name)
    if kind == "cycle":
        if n < 3:
            raise InvalidParamsError("cycle needs n >= 3")
        return Graph.from_edges(n, _path(n) + [(0, n - 1)], name=name)
    if kind == "star":
        return Graph.from_edges(n, [(0, i) for i in range(1, n)], name=name)
    if kind == "complete":
        iu, ju = np.triu_indices(n, k=1)
        return Graph.from_edges(n, np.stack([iu, ju], axis=1), name=name)
    if kind == "hypercube":
        if n & (n - 1):
            raise InvalidParamsError("hypercube needs a power-of-two n")
        dim = n.bit_length() - 1
        edges = [(v, v ^ (1 << b)) for v in range(n) for b in range(dim) if v < v ^ (1 << b)]
        return Graph.from_edges(n, edges, name=name)
    if kind == "random-gnp":
        prob = float(p.get("p", -1))
        if not 0.0 <= prob <= 1.0:
            raise InvalidParamsError("random-gnp needs 0 <= p <= 1")
        attempts = int(p.get("attempts", 10000))
        ss = np.random.SeedSequence(spec.seed)
        for child in ss.spawn(attempts):
            g = Graph.from_edges(n, _gnp_edges(n, prob, np.random.default_rng(child)), name=name)
            if g.is_connected():
                return g
        raise InvalidParamsError(f"no connected G({n},{prob}) within {attempts} attempts")
    if kind == "random-tree":
        return Graph.from_edges(n, _prufer_tree(n, np.random.default_rng(spec.seed)), name=name)
    raise InvalidParamsError(f"unknown graph kind {kind!r}")


def make(kind: str, n: int | None = None, seed: int = 0, **params) -> Graph:
    """Shorthand: ``make("cycle", 8)``."""
    if n is not None:
        params["n"] = n
    return generate(GraphKind(kind, params, seed))


def corpus_specs(sizes=(16, 64, 256, 1024, 4096), seed: int = 0) -> list[GraphKind]:
    """Default corpus: ten topology families, two G(n,p) densities."""
    out = []
    for n in sizes:
        out += [
            GraphKind("path", {"n": n}),
            GraphKind("cycle", {"n": n}),
            GraphKind("star", {"n": n}),
            GraphKind("complete", {"n": n}),
        ]
        if n & (n - 1) == 0:
            out.append(GraphKind("hypercube", {"n": n}))
        if math.isqrt(n) ** 2 == n:
            out.append(GraphKind("grid2d", {"n": n}))
        out += [
            GraphKind("random-gnp", {"n": n, "p": round(min(1.0, 2 * math.log(n) / n), 6)}, seed),
            GraphKind("random-gnp", {"n": n, "p": 0.1}, seed),
            GraphKind("random-tree", {"n": n}, seed),
            GraphKind("barbell", {"n": n}),
        ]
        if n % 4 == 0:
            out.append(GraphKind("caterpillar", {"n": n, "legs": 3}))
    return out


# ------------------------------------------------------------------- IO


def read_edge_list(text: str) -> Graph:
    """Parse ``u v`` lines (decimal UIDs). Blank lines and ``#`` comments are skipped."""
    pairs = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(lineno, f"expected two UIDs, got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(lineno, f"non-integer UID in {raw!r}") from None
        if u < 0 or v < 0:
            raise ParseError(lineno, "UIDs must be unsigned")
        if u == v:
            raise SelfLoopError(lineno, f"self-loop on {u}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdgeError(lineno, f"edge {key[0]}-{key[1]} repeated")
        seen.add(key)
        pairs.append(key)
    uids = sorted({x for e in pairs for x in e})
    index = {u: i for i, u in enumerate(uids)}
    edges = [(index[u], index[v]) for u, v in pairs]
    return Graph.from_edges(len(uids), edges, uids=tuple(uids))


def write_edge_list(g: Graph) -> str:
    uids = g.uids
    lines = [f"{uids[u]} {uids[v]}" for u, v in g.edges().tolist()]
    lines.sort(key=lambda s: tuple(int(x) for x in s.split()))
    return "".join(line + "\n" for line in lines)
