"""Lane-width-oblivious vector layer.

A vector is a length-``W`` numpy array; a mask is a length-``W`` boolean
array. Kernels are written once against the building blocks in this module
and never assume a particular ``W``:

* ``vall`` / ``vany``           vector-wide conditionals
* ``reduce_add``                 in-register reduction to one location
* ``scatter_add``                conflict-safe (serialized) indexed update
* ``adjacent_gather``            load W parameter rows, transpose to fields
* ``fast_forward`` / ``advance`` per-lane cursors that skip to computable
                                 iterations before a kernel fires

The software backend implements lanes as plain element loops compiled by
numba. A hardware backend subclasses :class:`VectorBackend`, supplies its own
``blocks`` namespace with the same signatures, and must pass the same
conformance suite (``tests/test_simd.py``).
"""

from __future__ import annotations

import types
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError
from .model import PrecisionMode

SOFTWARE_WIDTHS = (1, 4, 8, 16)


@njit(cache=True)
def vall(mask):
    for l in range(mask.shape[0]):
        if not mask[l]:
            return False
    return True


@njit(cache=True)
def vany(mask):
    for l in range(mask.shape[0]):
        if mask[l]:
            return True
    return False


@njit(cache=True)
def reduce_add(vec, mask, acc):
    """Sum of the set lanes, ascending lane order, accumulated in ``acc``'s type."""
    s = acc
    for l in range(vec.shape[0]):
        if mask[l]:
            s += vec[l]
    return s


@njit(cache=True)
def scatter_add(target, idx, vals, mask):
    """``target[idx[l]] += vals[l]`` for set lanes, serialized in lane order."""
    for l in range(idx.shape[0]):
        if mask[l]:
            target[idx[l]] += vals[l]


@njit(cache=True)
def adjacent_gather(table, rows, row_width, out):
    """``out[f, l] = table[rows[l] * row_width + f]``.

    Each lane's row is one contiguous load; writing it down a column of
    ``out`` is the in-register transpose.
    """
    for l in range(rows.shape[0]):
        base = rows[l] * row_width
        for f in range(row_width):
            out[f, l] = table[base + f]


@njit(cache=True)
def fast_forward(cur, end, mask, pred, ctx):
    """Advance searching lanes until every lane is ready or exhausted.

    A lane is ready when ``pred(l, cur[l], ctx)`` holds and exhausted when
    ``cur[l] == end[l]``. On return ``mask`` holds the ready lanes. Returns
    the number of lockstep spin iterations taken.
    """
    w = cur.shape[0]
    spins = 0
    while True:
        for l in range(w):
            mask[l] = cur[l] < end[l] and not pred(l, cur[l], ctx)
        if not vany(mask):
            break
        for l in range(w):
            if mask[l]:
                cur[l] += 1
        spins += 1
    for l in range(w):
        mask[l] = cur[l] < end[l]
    return spins


@njit(cache=True)
def advance(cur, end, mask):
    """Step every lane in ``mask`` past the iteration it just computed."""
    for l in range(cur.shape[0]):
        if mask[l] and cur[l] < end[l]:
            cur[l] += 1


SOFTWARE_BLOCKS = types.SimpleNamespace(
    vall=vall, vany=vany, reduce_add=reduce_add, scatter_add=scatter_add,
    adjacent_gather=adjacent_gather, fast_forward=fast_forward, advance=advance)


@njit(cache=True)
def _table_pred(l, c, ctx):
    return ctx[0][l, c]


@dataclass
class LaneCursorSet:
    """Per-lane cursors over ragged segments ``[begin_l, end_l)``."""

    begin: np.ndarray
    end: np.ndarray
    cursor: np.ndarray = None

    def __post_init__(self):
        self.begin = np.ascontiguousarray(self.begin, dtype=np.int64)
        self.end = np.ascontiguousarray(self.end, dtype=np.int64)
        if self.cursor is None:
            self.cursor = self.begin.copy()
        self.cursor = np.ascontiguousarray(self.cursor, dtype=np.int64)
        if np.any(self.begin > self.cursor) or np.any(self.cursor > self.end):
            raise ValueError("cursor outside its segment")

    @property
    def width(self):
        return len(self.cursor)

    @property
    def exhausted(self):
        return self.cursor == self.end

    def state(self, ready_mask=None):
        out = []
        for l in range(self.width):
            if self.exhausted[l]:
                out.append("exhausted")
            elif ready_mask is not None and ready_mask[l]:
                out.append("ready")
            else:
                out.append("searching")
        return out


def _predicate_table(cursors, predicate):
    if callable(predicate):
        table = np.zeros((cursors.width, int(cursors.end.max(initial=0))), dtype=np.bool_)
        for l in range(cursors.width):
            for c in range(cursors.cursor[l], cursors.end[l]):
                table[l, c] = bool(predicate(l, c))
        return table
    table = np.asarray(predicate, dtype=np.bool_)
    if table.ndim == 1:
        table = np.broadcast_to(table, (cursors.width, len(table)))
    return np.ascontiguousarray(table)


@dataclass(frozen=True)
class VectorBackend:
    """Software vector backend of a given lane width and precision mode."""

    width: int
    precision: PrecisionMode = PrecisionMode.OPT_D
    name = "software"
    blocks = SOFTWARE_BLOCKS

    def __post_init__(self):
        if not isinstance(self.precision, PrecisionMode):
            object.__setattr__(self, "precision", PrecisionMode.parse(self.precision))
        self._check_width(int(self.width))
        object.__setattr__(self, "width", int(self.width))

    def _check_width(self, width):
        if width not in SOFTWARE_WIDTHS:
            raise ConfigurationError(
                f"software backend supports widths {SOFTWARE_WIDTHS}, got {width}")

    @property
    def real_dtype(self):
        return np.dtype(self.precision.compute_dtype)

    @property
    def accum_dtype(self):
        return np.dtype(self.precision.accum_dtype)

    def kernels(self):
        """Compiled kernel set bound to this backend's building blocks."""
        from .potential_opt import kernels_for

        return kernels_for(self.blocks)

    # Python-facing building blocks; they validate shapes and bounds, then
    # delegate to the compiled blocks the kernels use.

    def _lanes(self, arr, dtype=None):
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.shape != (self.width,):
            raise ValueError(f"expected {self.width} lanes, got shape {arr.shape}")
        return arr

    def vall(self, mask):
        return bool(self.blocks.vall(self._lanes(mask, np.bool_)))

    def vany(self, mask):
        return bool(self.blocks.vany(self._lanes(mask, np.bool_)))

    def reduce_add(self, vec, mask, accumulate=None):
        vec = self._lanes(vec, self.real_dtype)
        acc = np.dtype(accumulate or self.accum_dtype).type(0)
        # numba hands scalars back as Python floats; restore the accumulation type
        return type(acc)(self.blocks.reduce_add(vec, self._lanes(mask, np.bool_), acc))

    def scatter_add(self, target, indices, values, mask):
        idx = self._lanes(indices, np.int64)
        mask = self._lanes(mask, np.bool_)
        sel = idx[mask]
        if sel.size and (sel.min() < 0 or sel.max() >= len(target)):
            raise IndexError(f"scatter index out of bounds for buffer of length {len(target)}")
        self.blocks.scatter_add(target, idx, self._lanes(values, target.dtype), mask)

    def adjacent_gather(self, table, rows, row_width):
        rows = self._lanes(rows, np.int64)
        table = np.ascontiguousarray(table).reshape(-1)
        if rows.size and (rows.min() < 0 or (rows.max() + 1) * row_width > len(table)):
            raise IndexError("adjacent_gather row index out of bounds")
        out = np.empty((row_width, self.width), dtype=table.dtype)
        self.blocks.adjacent_gather(table, rows, int(row_width), out)
        return out

    def fast_forward(self, cursors, predicate):
        """Fast-forward ``cursors`` in place; returns the ready mask.

        ``predicate`` is either ``f(lane, position) -> bool`` or a boolean
        table indexed ``[lane, position]`` (a 1-D table is shared by all lanes).
        """
        if cursors.width != self.width:
            raise ValueError(f"expected {self.width} cursors, got {cursors.width}")
        table = _predicate_table(cursors, predicate)
        mask = np.zeros(self.width, dtype=np.bool_)
        self.blocks.fast_forward(cursors.cursor, cursors.end, mask, _table_pred, (table,))
        return mask

    def advance(self, cursors, mask):
        self.blocks.advance(cursors.cursor, cursors.end, self._lanes(mask, np.bool_))
        return cursors


_REGISTRY = {"software": VectorBackend}


def register_backend(name, cls):
    """Make a :class:`VectorBackend` subclass selectable by name."""
    if not (isinstance(cls, type) and issubclass(cls, VectorBackend)):
        raise TypeError("backend must subclass VectorBackend")
    _REGISTRY[name] = cls


def get_backend(width, precision=PrecisionMode.OPT_D, name="software"):
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown backend {name!r}; have {sorted(_REGISTRY)}") from None
    return cls(width, precision)


def registered_backends():
    return dict(_REGISTRY)


# -- fast-forward instrumentation -------------------------------------------

def count_invocations(begin, end, ready, strategy="all"):
    """Kernel firings needed to visit every ready position of every lane.

    ``strategy="all"`` fast-forwards each lane to its next ready position
    and fires once all live lanes are ready. ``strategy="any"`` walks all
    lanes in lockstep and fires whenever at least one lane is ready.
    ``ready`` is a boolean table indexed ``[lane, position]``.
    """
    begin = np.asarray(begin, dtype=np.int64)
    end = np.asarray(end, dtype=np.int64)
    ready = np.ascontiguousarray(ready, dtype=np.bool_)
    if strategy == "all":
        cur = begin.copy()
        mask = np.zeros(len(cur), dtype=np.bool_)
        fired = 0
        while True:
            fast_forward(cur, end, mask, _table_pred, (ready,))
            if not vany(mask):
                return fired
            fired += 1
            advance(cur, end, mask)
    if strategy == "any":
        fired = 0
        span = int((end - begin).max(initial=0))
        for step in range(span):
            pos = begin + step
            live = pos < end
            if np.any(ready[np.arange(len(pos))[live], pos[live]]):
                fired += 1
        return fired
    raise ValueError(f"unknown strategy {strategy!r}")
