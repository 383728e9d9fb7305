"""Conformance suite for :class:`~tersoffvec.simd.VectorBackend` implementations.

Every building block is compared with a plain Python loop over lanes on
randomized inputs. Agreement must be exact: the blocks only move, select and
add values, and the order of additions is part of the contract.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .simd import LaneCursorSet

BLOCKS = ("vall", "vany", "reduce_add", "scatter_add", "adjacent_gather", "fast_forward")


def _rand_mask(rng, w):
    mode = rng.integers(4)
    if mode == 0:
        return np.ones(w, bool)
    if mode == 1:
        return np.zeros(w, bool)
    return rng.random(w) < rng.random()


def _rand_values(rng, w, dtype):
    scale = 10.0 ** rng.integers(-8, 9, size=w)
    return (rng.standard_normal(w) * scale).astype(dtype)


def oracle_reduce_add(vec, mask, acc):
    s = acc
    for l in range(len(vec)):
        if mask[l]:
            s = s + vec[l]
    return s


def oracle_scatter_add(target, idx, vals, mask):
    out = target.copy()
    for l in range(len(idx)):
        if mask[l]:
            out[idx[l]] = out[idx[l]] + vals[l]
    return out


def oracle_fast_forward_trace(begin, end, table):
    """Per-lane traversal: firing t puts lane l on its t-th ready position."""
    ready = [[c for c in range(begin[l], end[l]) if table[l, c]] for l in range(len(begin))]
    trace = []
    for t in range(max((len(r) for r in ready), default=0)):
        mask = np.array([t < len(r) for r in ready])
        cur = np.array([r[t] if t < len(r) else end[l] for l, r in enumerate(ready)])
        trace.append((mask, cur))
    return trace


def _check_fast_forward(backend, rng):
    w = backend.width
    span = int(rng.integers(0, 12))
    begin = rng.integers(0, 4, size=w)
    end = begin + rng.integers(0, span + 1, size=w)
    table = rng.random((w, int(end.max(initial=0)) + 1)) < rng.random()
    cursors = LaneCursorSet(begin, end)
    trace = []
    total = 0
    while True:
        mask = backend.fast_forward(cursors, table)
        if not mask.any():
            break
        trace.append((mask.copy(), cursors.cursor.copy()))
        backend.advance(cursors, mask)
        total += 1
        if total > int((end - begin).sum()) + 1:
            return False
    if not np.array_equal(cursors.cursor, end):
        return False
    want = oracle_fast_forward_trace(begin, end, table)
    return len(trace) == len(want) and all(
        np.array_equal(m, wm) and np.array_equal(c, wc) for (m, c), (wm, wc) in zip(trace, want))


def run_conformance(backend, cases=10_000, seed=0):
    """Return a ``Counter`` of failures per block over ``cases`` random cases each."""
    rng = np.random.default_rng(seed)
    w = backend.width
    dt = backend.real_dtype
    fails = Counter()
    for _ in range(cases):
        mask = _rand_mask(rng, w)
        if backend.vall(mask) != bool(all(mask)):
            fails["vall"] += 1
        if backend.vany(mask) != bool(any(mask)):
            fails["vany"] += 1

        vec = _rand_values(rng, w, dt)
        got = backend.reduce_add(vec, mask)
        want = oracle_reduce_add(vec, mask, backend.accum_dtype.type(0))
        if not (got == want and np.asarray(got).dtype == backend.accum_dtype):
            fails["reduce_add"] += 1

        n = int(rng.integers(1, 2 * w + 2))
        target = _rand_values(rng, n, backend.accum_dtype)
        idx = rng.integers(0, n, size=w)
        vals = _rand_values(rng, w, backend.accum_dtype)
        want = oracle_scatter_add(target, idx, vals, mask)
        backend.scatter_add(target, idx, vals, mask)
        if not np.array_equal(target, want):
            fails["scatter_add"] += 1

        rw = int(rng.integers(1, 24))
        nrows = int(rng.integers(1, 10))
        table = _rand_values(rng, nrows * rw, dt)
        rows = rng.integers(0, nrows, size=w)
        out = backend.adjacent_gather(table, rows, rw)
        want = np.array([[table[rows[l] * rw + f] for l in range(w)] for f in range(rw)])
        if out.shape != (rw, w) or not np.array_equal(out, want):
            fails["adjacent_gather"] += 1

        if not _check_fast_forward(backend, rng):
            fails["fast_forward"] += 1
    return fails
