"""Packed row bitsets.

Row ``v`` of an ``(rows, words)`` uint64 array is the set of column indices
whose bit is set. Bit ``u`` lives in word ``u >> 6`` at position ``u & 63``.
"""

from __future__ import annotations

import numpy as np

# cap on gathered words per chunk in gather_or/gather_min (about 64 MiB)
_CHUNK_WORDS = 1 << 23


def n_words(n: int) -> int:
    return max(1, (n + 63) >> 6)


def zeros(rows: int, n: int) -> np.ndarray:
    return np.zeros((rows, n_words(n)), dtype=np.uint64)


def identity(n: int) -> np.ndarray:
    out = zeros(n, n)
    idx = np.arange(n)
    out[idx, idx >> 6] = np.left_shift(np.uint64(1), (idx & 63).astype(np.uint64))
    return out


def from_bool(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=bool)
    rows, n = mat.shape
    w = n_words(n)
    packed = np.packbits(mat, axis=1, bitorder="little")
    out = np.zeros((rows, w * 8), dtype=np.uint8)
    out[:, : packed.shape[1]] = packed
    return out.view(np.uint64)


def to_bool(bits: np.ndarray, n: int) -> np.ndarray:
    bits = np.ascontiguousarray(bits)
    raw = np.unpackbits(bits.view(np.uint8), axis=1, bitorder="little")
    return raw[:, :n].astype(bool)


def from_sets(sets, n: int) -> np.ndarray:
    mat = np.zeros((len(sets), n), dtype=bool)
    for v, s in enumerate(sets):
        if s:
            mat[v, list(s)] = True
    return from_bool(mat)


def to_sets(bits: np.ndarray, n: int) -> list[set[int]]:
    mat = to_bool(bits, n)
    return [set(np.flatnonzero(row).tolist()) for row in mat]


def members(row: np.ndarray, n: int) -> np.ndarray:
    return np.flatnonzero(to_bool(row[None, :], n)[0])


def test(bits: np.ndarray, v: int, u: int) -> bool:
    return bool((int(bits[v, u >> 6]) >> (u & 63)) & 1)


def set_bit(bits: np.ndarray, v: int, u: int) -> None:
    bits[v, u >> 6] |= np.uint64(1) << np.uint64(u & 63)


def set_bits(bits: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> None:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    masks = np.left_shift(np.uint64(1), (cols & 63).astype(np.uint64))
    np.bitwise_or.at(bits, (rows, cols >> 6), masks)


def test_pairs(bits: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Vectorised membership: ``cols[i] in row rows[i]``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    words = bits[rows, cols >> 6]
    return ((words >> (cols & 63).astype(np.uint64)) & np.uint64(1)).astype(bool)


def popcount(bits: np.ndarray) -> np.ndarray:
    return np.bitwise_count(bits).sum(axis=-1, dtype=np.int64)


def any_rows(bits: np.ndarray) -> np.ndarray:
    return (bits != 0).any(axis=1)


def _sorted_pairs(rows, cols):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.argsort(rows, kind="stable")
    return rows[order], cols[order]


def gather_or(dst: np.ndarray, src: np.ndarray, rows, cols) -> None:
    """``dst[rows[i]] |= src[cols[i]]`` for every i.

    ``src`` must not alias ``dst``; pass a snapshot when a round reads and
    writes the same register.
    """
    if len(rows) == 0:
        return
    rows, cols = _sorted_pairs(rows, cols)
    step = max(1, _CHUNK_WORDS // src.shape[1])
    for s in range(0, len(rows), step):
        r = rows[s : s + step]
        c = cols[s : s + step]
        starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
        dst[r[starts]] |= np.bitwise_or.reduceat(src[c], starts, axis=0)


def gather_min(dst: np.ndarray, src: np.ndarray, rows, cols) -> None:
    """``dst[rows[i]] = min(dst[rows[i]], src[cols[i]])`` elementwise."""
    if len(rows) == 0:
        return
    rows, cols = _sorted_pairs(rows, cols)
    step = max(1, _CHUNK_WORDS // src.shape[1])
    for s in range(0, len(rows), step):
        r = rows[s : s + step]
        c = cols[s : s + step]
        starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
        red = np.minimum.reduceat(src[c], starts, axis=0)
        np.minimum(dst[r[starts]], red, out=red)
        dst[r[starts]] = red


def random_members(rows: np.ndarray, n: int, rng: np.random.Generator, tries: int = 0) -> np.ndarray:
    """One uniformly random member per row, -1 for empty rows.

    With ``tries > 0`` each row first gets that many rejection-sampling
    draws, which is much cheaper for dense rows; the rest fall back to an
    exact scan. Both paths are uniform.
    """
    out = np.full(len(rows), -1, dtype=np.int64)
    todo = np.arange(len(rows))
    for _ in range(tries):
        if not len(todo):
            break
        c = rng.integers(0, n, size=len(todo))
        hit = (rows[todo, c >> 6] >> (c & 63).astype(np.uint64)) & np.uint64(1)
        hit = hit.astype(bool)
        out[todo[hit]] = c[hit]
        todo = todo[~hit]
    step = max(1, (1 << 21) // max(n, 1))
    for s in range(0, len(todo), step):
        sel = todo[s : s + step]
        mat = to_bool(rows[sel], n)
        counts = mat.sum(axis=1)
        r = np.floor(rng.random(len(mat)) * counts).astype(np.int64)
        csum = np.cumsum(mat, axis=1, dtype=np.int32)
        idx = np.argmax(csum > r[:, None], axis=1)
        out[sel] = np.where(counts > 0, idx, -1)
    return out


def symmetric_violations(bits: np.ndarray, n: int) -> np.ndarray:
    """Pairs ``(u, v)``, u < v, where exactly one of them knows the other."""
    mat = to_bool(bits, n)
    diff = np.triu(mat != mat.T, k=1)
    return np.argwhere(diff)
