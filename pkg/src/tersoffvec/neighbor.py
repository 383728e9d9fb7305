"""Extended (skin) neighbor lists built with a cell list.

Segments are stored CSR-style: the neighbors of atom ``i`` are
``neighbors[offsets[i]:offsets[i + 1]]``, in ascending atom index. Every
listing is full, i.e. ``j`` is in segment ``i`` iff ``i`` is in segment ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError
from .model import minimum_image


@dataclass(frozen=True)
class NeighborList:
    offsets: np.ndarray
    neighbors: np.ndarray
    skin: float
    build_cutoff: float
    reference_positions: np.ndarray

    def segment(self, i):
        return self.neighbors[self.offsets[i]:self.offsets[i + 1]]

    @property
    def n(self):
        return len(self.offsets) - 1

    def pairs(self):
        """Set of ordered pairs ``(i, j)`` in the list."""
        counts = np.diff(self.offsets)
        ii = np.repeat(np.arange(self.n), counts)
        return set(zip(ii.tolist(), self.neighbors.tolist()))


@njit(cache=True)
def _mi(d, L, pbc):
    if pbc:
        d -= L * np.floor(d / L + 0.5)
    return d


@njit(cache=True)
def _cell_coord(x, L, pbc, ncell):
    if pbc:
        x -= L * math.floor(x / L)
    c = int(math.floor(x / L * ncell))
    if c < 0:
        c = 0
    elif c >= ncell:
        c = ncell - 1
    return c


@njit(cache=True)
def _stencil(c, ncell, pbc, out):
    """Distinct neighbor cell indices of cell ``c`` along one axis."""
    n = 0
    for off in (-1, 0, 1):
        cc = c + off
        if pbc:
            cc %= ncell
        elif cc < 0 or cc >= ncell:
            continue
        dup = False
        for t in range(n):
            if out[t] == cc:
                dup = True
        if not dup:
            out[n] = cc
            n += 1
    return n


@njit(cache=True)
def _build(pos, L, pbc, rc):
    n = pos.shape[0]
    ncell = np.empty(3, np.int64)
    for d in range(3):
        ncell[d] = max(1, int(math.floor(L[d] / rc)))
    cell_of = np.empty((n, 3), np.int64)
    flat = np.empty(n, np.int64)
    for i in range(n):
        for d in range(3):
            cell_of[i, d] = _cell_coord(pos[i, d], L[d], pbc[d], ncell[d])
        flat[i] = (cell_of[i, 0] * ncell[1] + cell_of[i, 1]) * ncell[2] + cell_of[i, 2]
    # counting sort atoms into cells, ascending index within a cell
    total = ncell[0] * ncell[1] * ncell[2]
    head = np.zeros(total + 1, np.int64)
    for i in range(n):
        head[flat[i] + 1] += 1
    for c in range(total):
        head[c + 1] += head[c]
    fill = head[:-1].copy()
    members = np.empty(n, np.int64)
    for i in range(n):
        members[fill[flat[i]]] = i
        fill[flat[i]] += 1

    rc2 = rc * rc
    sx = np.empty(3, np.int64)
    sy = np.empty(3, np.int64)
    sz = np.empty(3, np.int64)
    counts = np.zeros(n + 1, np.int64)
    scratch = np.empty(n, np.int64)
    # two passes: count, then fill
    for sweep in range(2):
        if sweep == 1:
            for i in range(n):
                counts[i + 1] += counts[i]
            nbrs = np.empty(counts[n], np.int64)
        else:
            nbrs = np.empty(0, np.int64)
        for i in range(n):
            nx = _stencil(cell_of[i, 0], ncell[0], pbc[0], sx)
            ny = _stencil(cell_of[i, 1], ncell[1], pbc[1], sy)
            nz = _stencil(cell_of[i, 2], ncell[2], pbc[2], sz)
            m = 0
            for a in range(nx):
                for b in range(ny):
                    for c in range(nz):
                        cid = (sx[a] * ncell[1] + sy[b]) * ncell[2] + sz[c]
                        for t in range(head[cid], head[cid + 1]):
                            j = members[t]
                            if j == i:
                                continue
                            dx = _mi(pos[j, 0] - pos[i, 0], L[0], pbc[0])
                            dy = _mi(pos[j, 1] - pos[i, 1], L[1], pbc[1])
                            dz = _mi(pos[j, 2] - pos[i, 2], L[2], pbc[2])
                            if dx * dx + dy * dy + dz * dz <= rc2:
                                scratch[m] = j
                                m += 1
            if sweep == 0:
                counts[i + 1] = m
            else:
                seg = np.sort(scratch[:m])
                nbrs[counts[i]:counts[i] + m] = seg
    return counts, nbrs


def build_neighbor_list(system, cutoff, skin):
    """Build the extended list at radius ``cutoff + skin``.

    Raises :class:`ConfigurationError` when ``cutoff + skin`` exceeds half the
    smallest periodic box length (minimum image would become ambiguous).
    """
    if cutoff <= 0 or skin < 0:
        raise ConfigurationError(f"need cutoff > 0 and skin >= 0, got {cutoff}, {skin}")
    rc = float(cutoff) + float(skin)
    system.box.check_cutoff(rc)
    pos = system.positions
    offsets, nbrs = _build(pos, system.box.L, system.box.pbc, rc)
    for arr in (offsets, nbrs):
        arr.setflags(write=False)
    ref = pos.copy()
    ref.setflags(write=False)
    return NeighborList(offsets, nbrs, float(skin), rc, ref)


def needs_rebuild(nlist, system):
    """True iff some atom moved more than ``skin / 2`` since the build."""
    if len(nlist.reference_positions) != system.n:
        raise ConfigurationError("neighbor list was built for a different atom count")
    disp = minimum_image(system.positions - nlist.reference_positions, system.box)
    return bool(np.max(np.einsum("ij,ij->i", disp, disp), initial=0.0) > (0.5 * nlist.skin) ** 2)


@njit(cache=True)
def _filter_all(pos, offsets, nbrs, L, pbc, rmax):
    n = offsets.shape[0] - 1
    out_off = np.zeros(n + 1, np.int64)
    out = np.empty(nbrs.shape[0], np.int64)
    rmax2 = rmax * rmax
    m = 0
    for i in range(n):
        for t in range(offsets[i], offsets[i + 1]):
            j = nbrs[t]
            dx = _mi(pos[j, 0] - pos[i, 0], L[0], pbc[0])
            dy = _mi(pos[j, 1] - pos[i, 1], L[1], pbc[1])
            dz = _mi(pos[j, 2] - pos[i, 2], L[2], pbc[2])
            if dx * dx + dy * dy + dz * dz <= rmax2:
                out[m] = j
                m += 1
        out_off[i + 1] = m
    return out_off, out[:m]


def filter_segment(nlist, i, system, r_cut_max):
    """Neighbors of ``i`` currently within ``r_cut_max``, original order kept."""
    seg = nlist.segment(i)
    d = minimum_image(system.positions[seg] - system.positions[i], system.box)
    keep = np.einsum("ij,ij->i", d, d) <= r_cut_max * r_cut_max
    return seg[keep]


def filter_all(positions, nlist, box, r_cut_max):
    """Filter every segment at once; returns ``(offsets, neighbors)``.

    Distances are evaluated in the dtype of ``positions`` so single precision
    runs filter on the same coordinates their kernels see.
    """
    dt = positions.dtype
    return _filter_all(positions, nlist.offsets, nlist.neighbors, box.L.astype(dt),
                       box.pbc, dt.type(r_cut_max))


def brute_force_pairs(system, cutoff):
    """O(N^2) reference pair set used as a test oracle."""
    pos = system.positions
    d = minimum_image(pos[None, :, :] - pos[:, None, :], system.box)
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, np.inf)
    ii, jj = np.nonzero(r2 <= cutoff * cutoff)
    return set(zip(ii.tolist(), jj.tolist()))
