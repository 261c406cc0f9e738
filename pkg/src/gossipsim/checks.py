"""Per-run assertion checks shared by the harness and the acceptance suite."""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass, field

import numpy as np

from . import bits
from .graph import Graph, log2ceil
from .verification import (
    WitnessForest,
    check_symmetry,
    extract_spanner,
    local_broadcast_gaps,
)

ASSERTIONS = ("iteration-bound", "round-bound", "oracle", "symmetry", "witness-trees", "spanner")

# ------------------------------------------------------- bound formulas

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.FloorDiv: operator.floordiv,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
}


def eval_bound(expr, env: dict) -> float:
    """Evaluate an arithmetic bound such as ``"2 * (L + 1) ** 2"`` over named integers."""
    if isinstance(expr, (int, float)):
        return expr

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id in env:
            return env[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](walk(node.operand))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in ("max", "min"):
            return {"max": max, "min": min}[node.func.id](*(walk(a) for a in node.args))
        raise ValueError(f"unsupported bound expression: {ast.dump(node)}")

    return walk(ast.parse(str(expr), mode="eval"))


# ------------------------------------------------- boundary observers


@dataclass
class BoundaryChecks:
    """Observer run at every iteration boundary of a single-link protocol.

    Checks knowledge symmetry (full scan up to ``symmetry_limit`` nodes) and
    the witness-tree invariants: every active node has a tree of 2^i
    distinct nodes, and mutually unknown neighbors have disjoint trees
    (every such pair up to ``exhaustive_limit`` nodes, ``10 n`` sampled
    above).
    """

    g: Graph
    symmetry: bool = True
    witness: bool = True
    symmetry_limit: int = 512
    exhaustive_limit: int = 256
    seed: int = 0
    violations: list = field(default_factory=list)
    boundaries: int = 0
    max_order: int = 0
    sampled: bool = False

    def __post_init__(self):
        self._forest = WitnessForest(self.g.n)
        self._rng = np.random.default_rng([self.seed, 0x77])

    def __call__(self, net, i: int) -> None:
        self.boundaries += 1
        know = net.knowledge()
        if self.symmetry and self.g.n <= self.symmetry_limit:
            bad = check_symmetry(know, self.g.n)
            if bad:
                self.violations.append(f"symmetry@{i}: {len(bad)} pairs, first {bad[0]}")
        if not self.witness:
            return
        forest = self._forest
        while forest.order < i:
            creator, peer, label, _ = net.link_table()
            sel = label == forest.order + 1
            forest.advance(creator[sel], peer[sel])
        active = bits.any_rows(self.g.adj_bits & ~know)
        if not active.any():
            return
        self.max_order = max(self.max_order, i)
        if (~forest.valid & active).any():
            v = int(np.flatnonzero(~forest.valid & active)[0])
            self.violations.append(f"witness@{i}: active node {v} has no complete {i}-tree")
        bad = np.intersect1d(forest.bad_sizes(), np.flatnonzero(active))
        if len(bad):
            self.violations.append(f"witness@{i}: tree of node {int(bad[0])} does not have 2^{i} nodes")
        if (1 << i) > self.g.n:
            self.violations.append(f"witness@{i}: 2^{i} > n with active nodes left")
        pairs = self._unknown_pairs(know, active)
        if len(pairs):
            hit = forest.intersecting(pairs[:, 0], pairs[:, 1])
            if hit.any():
                u, v = pairs[np.argmax(hit)].tolist()
                self.violations.append(f"witness@{i}: trees of unknown neighbors {u},{v} intersect")

    def _unknown_pairs(self, know, active) -> np.ndarray:
        """Mutually unknown neighbor pairs: all of them, or 10 n sampled above the limit."""
        n = self.g.n
        if n <= self.exhaustive_limit:
            return np.argwhere(np.triu(bits.to_bool(self.g.adj_bits & ~know, n), k=1))
        self.sampled = True
        if 8 * self.g.m >= n * n // 2:
            # dense: rejection sampling on bit rows beats scanning every edge
            us = self._rng.choice(np.flatnonzero(active), size=10 * n)
            vs = bits.random_members(self.g.adj_bits[us] & ~know[us], n, self._rng, tries=8)
            return np.stack([us, vs], axis=1)[vs >= 0]
        e = self.g.edges()
        e = e[active[e[:, 0]]]
        pairs = e[~bits.test_pairs(know, e[:, 0], e[:, 1])]
        if len(pairs) > 10 * n:
            pairs = pairs[self._rng.choice(len(pairs), size=10 * n, replace=False)]
        return pairs


def chain(*observers):
    obs = [o for o in observers if o is not None]
    if not obs:
        return None

    def call(net, i):
        for o in obs:
            o(net, i)

    return call


# --------------------------------------------------------- end-of-run


def oracle_failures(g: Graph, k: int, knowledge) -> list[str]:
    gaps = local_broadcast_gaps(g, k, knowledge)
    if not gaps.any():
        return []
    v = int(np.argmax(gaps))
    return [f"oracle: {int((gaps > 0).sum())} nodes miss rumors within {k} hops (node {v} misses {int(gaps[v])})"]


def spanner_failures(run, g: Graph) -> list[str]:
    _, st = extract_spanner(run.trace, g, measure_pairs=False)
    out = []
    if not st.is_subgraph:
        out.append("spanner: a link is not an edge of G")
    if st.edge_count > st.bound_edges:
        out.append(f"spanner: {st.edge_count} edges > n log n = {st.bound_edges}")
    if not st.all_adjacent_within_bound:
        out.append(f"spanner: an adjacent pair is farther than {st.bound_stretch} in the spanner")
    return out


# Bound formulas per protocol; names: L, n, k, D, d, delta, alpha, beta, lam, T.
DEFAULT_BOUNDS = {
    "alg2": {"iterations": "4 * L"},
    "alg3": {"iterations": "L", "rounds": "2 * L ** 3"},
    "alg4": {"iterations": "L", "rounds": "2 * (L + 1) ** 2 - 1"},
    "klocal": {"iterations": "L", "rounds": "2 * (k * L + L ** 2)"},
    "global": {"iterations": "L", "rounds": "2 * (k * L + L ** 2)"},
    "flood": {"rounds": "d * delta"},
    "periodic": {"iterations": "alpha * beta * lam"},
    "template": {"iterations": "T * L"},
}

APPLICABLE = {
    "flood": {"round-bound", "oracle"},
    "alg2": {"iteration-bound", "oracle", "symmetry"},
    "alg3": set(ASSERTIONS),
    "alg4": set(ASSERTIONS),
    "klocal": {"iteration-bound", "round-bound", "oracle", "witness-trees", "spanner"},
    "global": {"iteration-bound", "round-bound", "oracle", "witness-trees", "spanner"},
    "template": {"iteration-bound", "oracle"},
    "periodic": {"iteration-bound", "oracle"},
    "faulty": {"oracle"},
}
