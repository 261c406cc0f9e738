"""Strategies resolving "pick any new neighbor" in the link step.

A policy sees the active nodes and their candidate rows (``Gamma(v) - R_v``
as packed bits) and returns one candidate per node, or -1 if a row is
empty. Adversarial policies get a :class:`ProtocolView` with the run state.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import bits


class PolicyError(RuntimeError):
    pass


class ProtocolView:
    """Read-only look at a running protocol, handed to adversarial callbacks."""

    def __init__(self, net, iteration: int):
        self._net = net
        self.iteration = iteration

    @property
    def graph(self):
        return self._net.g

    @property
    def trace(self):
        return self._net.trace

    @cached_property
    def knowledge(self) -> np.ndarray:
        k = self._net.knowledge().copy()
        k.setflags(write=False)
        return k

    @cached_property
    def rumor_counts(self) -> np.ndarray:
        return bits.popcount(self.knowledge)

    @cached_property
    def unknown_degree(self) -> np.ndarray:
        return bits.popcount(self._net.g.adj_bits & ~self.knowledge)

    @cached_property
    def link_degree(self) -> np.ndarray:
        creator, peer, _, _ = self._net.link_table()
        n = self._net.n
        return np.bincount(creator, minlength=n) + np.bincount(peer, minlength=n)

    def links(self, v: int) -> list[tuple[int, int]]:
        return list(self._net.links[v])

    def knows(self, v: int, u: int) -> bool:
        return bits.test(self.knowledge, v, u)


class ChoicePolicy:
    name = "policy"

    def choose(self, v: int, candidates: np.ndarray, iteration: int, view: ProtocolView) -> int:
        raise NotImplementedError

    def choose_many(self, actives: np.ndarray, cand_rows: np.ndarray, iteration: int,
                    view: ProtocolView) -> np.ndarray:
        n = view.graph.n
        out = np.full(len(actives), -1, dtype=np.int64)
        for j, v in enumerate(actives.tolist()):
            cands = bits.members(cand_rows[j], n)
            if len(cands) == 0:
                continue
            pick = int(self.choose(v, cands, iteration, view))
            if pick not in set(cands.tolist()):
                raise PolicyError(f"{self.name} returned {pick}, not a candidate of node {v}")
            out[j] = pick
        return out

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


def _first_set(cand_rows: np.ndarray, n: int, last: bool) -> np.ndarray:
    out = np.full(len(cand_rows), -1, dtype=np.int64)
    step = 1024
    for s in range(0, len(cand_rows), step):
        mat = bits.to_bool(cand_rows[s : s + step], n)
        has = mat.any(axis=1)
        if last:
            idx = n - 1 - np.argmax(mat[:, ::-1], axis=1)
        else:
            idx = np.argmax(mat, axis=1)
        out[s : s + step] = np.where(has, idx, -1)
    return out


class MinUID(ChoicePolicy):
    name = "min-uid"

    def choose(self, v, candidates, iteration, view):
        return int(candidates.min())

    def choose_many(self, actives, cand_rows, iteration, view):
        return _first_set(cand_rows, view.graph.n, last=False)


class MaxUID(ChoicePolicy):
    name = "max-uid"

    def choose(self, v, candidates, iteration, view):
        return int(candidates.max())

    def choose_many(self, actives, cand_rows, iteration, view):
        return _first_set(cand_rows, view.graph.n, last=True)


class SeededRandom(ChoicePolicy):
    """Uniform choice from the candidate set, reproducible from ``seed``."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.name = f"seeded-random({seed})"
        self._rng = np.random.default_rng(seed)

    def choose(self, v, candidates, iteration, view):
        return int(candidates[self._rng.integers(len(candidates))])

    def choose_many(self, actives, cand_rows, iteration, view):
        return bits.random_members(cand_rows, view.graph.n, self._rng)


class XorNearest(ChoicePolicy):
    """Candidate with the smallest ``u xor v``.

    On a complete graph with 2^L nodes this links along hypercube dimensions
    in order, so every node stays active for exactly L iterations.
    """

    name = "xor-nearest"

    def choose(self, v, candidates, iteration, view):
        return int(candidates[np.argmin(candidates ^ v)])


Callback = Callable[[int, np.ndarray, int, ProtocolView], int]


class Adversarial(ChoicePolicy):
    """Delegates each choice to ``callback(node, candidates, iteration, view)``."""

    def __init__(self, callback: Callback, name: str = "adversarial"):
        self.callback = callback
        self.name = name

    def choose(self, v, candidates, iteration, view):
        return self.callback(v, candidates, iteration, view)


ADVERSARY_MODES = (
    "xor-nearest",
    "least-informed",
    "most-informed",
    "most-unknown",
    "fewest-links",
    "most-links",
    "herd",
    "far-uid",
)


@dataclass
class _Fuzzer:
    """Seeded heuristic adversary trying to keep nodes ignorant of each other."""

    seed: int
    noise: float = 0.15

    def __post_init__(self):
        self.rng = np.random.default_rng([self.seed, 0xAD5])
        self.mode = ADVERSARY_MODES[self.seed % len(ADVERSARY_MODES)]
        self._last_targets: dict[int, int] = {}

    def __call__(self, v, candidates, iteration, view):
        rng = self.rng
        if rng.random() < self.noise:
            return int(candidates[rng.integers(len(candidates))])
        mode = self.mode
        if mode == "least-informed":
            score = -view.rumor_counts[candidates]
        elif mode == "most-informed":
            score = view.rumor_counts[candidates]
        elif mode == "most-unknown":
            score = view.unknown_degree[candidates]
        elif mode == "fewest-links":
            score = -view.link_degree[candidates]
        elif mode == "most-links":
            score = view.link_degree[candidates]
        elif mode == "herd":
            # follow whatever was chosen most recently by anyone
            score = np.array([self._last_targets.get(int(c), -1) for c in candidates])
        elif mode == "xor-nearest":
            score = -(candidates ^ v)
        else:
            score = np.abs(candidates - v)
        best = np.flatnonzero(score == score.max())
        pick = int(candidates[best[rng.integers(len(best))]])
        self._last_targets[pick] = iteration * view.graph.n + v
        return pick


def adversarial_fuzzer(seed: int) -> Adversarial:
    fz = _Fuzzer(seed)
    return Adversarial(fz, name=f"adversarial({fz.mode},{seed})")


POLICY_NAMES = ("min-uid", "max-uid", "seeded-random", "adversarial", "xor-nearest")


def make_policy(name: str, seed: int = 0) -> ChoicePolicy:
    if name == "min-uid":
        return MinUID()
    if name == "max-uid":
        return MaxUID()
    if name in ("seeded-random", "random"):
        return SeededRandom(seed)
    if name == "adversarial":
        return adversarial_fuzzer(seed)
    if name == "xor-nearest":
        return XorNearest()
    raise PolicyError(f"unknown policy {name!r}")
