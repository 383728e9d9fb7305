"""Vectorized Tersoff kernels.

Work is split into a *filter* and a *computational* component. The filter
trims every extended neighbor segment to the largest cutoff in the table and
packs the (i, j) pairs that lie inside their own pair cutoff into a
:class:`PairQueue`. The computational kernels then run one of three lane
mappings:

``v1``  one atom i at a time, its neighbors j spread over the lanes; the K
        loop walks i's segment with k uniform across lanes.
``v2``  queue pairs (i, j) fused onto the lanes; each lane walks its own
        K segment with :func:`~tersoffvec.simd.fast_forward`, and every force
        update goes through the serialized ``scatter_add``.
``v3``  ``v2`` instantiated at width 1 (one pair per "lane", sequential J).

All kernels cache zeta derivatives for up to ``k_max`` contributing k atoms
per pair and recompute the rest in a second K pass.

Arithmetic runs in the backend's compute dtype; energy and forces are
accumulated in its accumulation dtype (float64 for mixed precision).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError, NumericalError
from .model import PrecisionMode
from .potential_ref import (AA, BB, BETA, C, D, DD, ETA, GAMMA, H, LAM1, LAM2, LAM3, M, RR,
                            EnergyForces)
from .simd import SOFTWARE_BLOCKS, VectorBackend, get_backend

# precomputed parameter row layout
(CUT, CUTSQ, R_, RIN, PI2D, PI4D, GAM, C2, D2, C2D2, H_, L3, M_, BET, ETA_, NEGINV2ETA,
 A_, L1, B_, L2) = range(20)
ROW_WIDTH = 20

# typed constants, indices into the K array passed to every kernel
K0, KHALF, K1, K2, K3, KNEG1 = range(6)

SCHEMES = ("ref", "scalar-opt", "v1", "v2", "v3")


def opt_table(params, dtype):
    """Flat ``S**3 * ROW_WIDTH`` table of derived per-triplet constants."""
    raw = params.raw()
    t = np.empty((len(raw), ROW_WIDTH))
    R, Dd = raw[:, RR], raw[:, DD]
    t[:, CUT] = R + Dd
    t[:, CUTSQ] = (R + Dd) ** 2
    t[:, R_] = R
    t[:, RIN] = R - Dd
    t[:, PI2D] = 0.5 * math.pi / Dd
    t[:, PI4D] = 0.25 * math.pi / Dd
    t[:, GAM] = raw[:, GAMMA]
    t[:, C2] = raw[:, C] ** 2
    t[:, D2] = raw[:, D] ** 2
    t[:, C2D2] = raw[:, C] ** 2 / raw[:, D] ** 2
    t[:, H_] = raw[:, H]
    t[:, L3] = raw[:, LAM3]
    t[:, M_] = raw[:, M]
    t[:, BET] = raw[:, BETA]
    t[:, ETA_] = raw[:, ETA]
    t[:, NEGINV2ETA] = -0.5 / raw[:, ETA]
    t[:, A_] = raw[:, AA]
    t[:, L1] = raw[:, LAM1]
    t[:, B_] = raw[:, BB]
    t[:, L2] = raw[:, LAM2]
    return np.ascontiguousarray(t.astype(dtype).reshape(-1))


def constants(dtype):
    return np.array([0.0, 0.5, 1.0, 2.0, 3.0, -1.0], dtype=dtype)


# -- lanewise math ---------------------------------------------------------
# Each helper evaluates one lane ``l`` of a gathered parameter block ``P``
# (shape ROW_WIDTH x W). Every literal comes from ``K`` so that single
# precision kernels never promote to double.

@njit(cache=True)
def _disp_lane(pos, i, j, L, pbc, K):
    dx = pos[j, 0] - pos[i, 0]
    dy = pos[j, 1] - pos[i, 1]
    dz = pos[j, 2] - pos[i, 2]
    if pbc[0]:
        dx -= L[0] * np.floor(dx / L[0] + K[KHALF])
    if pbc[1]:
        dy -= L[1] * np.floor(dy / L[1] + K[KHALF])
    if pbc[2]:
        dz -= L[2] * np.floor(dz / L[2] + K[KHALF])
    return dx, dy, dz


@njit(cache=True)
def _fc_lane(r, P, l, K):
    if r <= P[RIN, l]:
        return K[K1], K[K0]
    if r >= P[CUT, l]:
        return K[K0], K[K0]
    arg = P[PI2D, l] * (r - P[R_, l])
    return K[KHALF] - K[KHALF] * math.sin(arg), -P[PI4D, l] * math.cos(arg)


@njit(cache=True)
def _bij_lane(zeta, P, l, K):
    if zeta <= K[K0]:
        return K[K1], K[K0]
    t = P[BET, l] * zeta
    if t <= K[K1]:
        x = t ** P[ETA_, l]
        b = (K[K1] + x) ** P[NEGINV2ETA, l]
        return b, -K[KHALF] * b * x / (zeta * (K[K1] + x))
    y = t ** -P[ETA_, l]
    b = (K[K1] + y) ** P[NEGINV2ETA, l] / math.sqrt(t)
    return b, -K[KHALF] * b / (zeta * (K[K1] + y))


@njit(cache=True)
def _zeta_lane(ux, uy, uz, rij, dkx, dky, dkz, rik, P, l, K):
    """zeta(i, j, k) and gradients wrt x_j, x_k; ``u`` is the unit vector i->j."""
    fc, dfc = _fc_lane(rik, P, l, K)
    z0 = K[K0]
    if fc == z0 and dfc == z0:
        return z0, z0, z0, z0, z0, z0, z0
    vx = dkx / rik
    vy = dky / rik
    vz = dkz / rik
    cos_t = ux * vx + uy * vy + uz * vz
    cc = min(K[K1], max(K[KNEG1], cos_t))
    u = P[H_, l] - cc
    den = P[D2, l] + u * u
    g = P[GAM, l] * (K[K1] + P[C2D2, l] - P[C2, l] / den)
    dg = -K[K2] * P[GAM, l] * P[C2, l] * u / (den * den)
    if P[M_, l] == K[K3]:
        t = P[L3, l] * (rij - rik)
        ex = math.exp(t * t * t)
        dex = K[K3] * P[L3, l] * t * t * ex
    else:
        ex = math.exp(P[L3, l] * (rij - rik))
        dex = P[L3, l] * ex
    a = fc * dg * ex
    ej = fc * g * dex
    ek = dfc * g * ex - ej
    ar = a / rij
    ak = a / rik
    gjx = ar * (vx - cos_t * ux) + ej * ux
    gjy = ar * (vy - cos_t * uy) + ej * uy
    gjz = ar * (vz - cos_t * uz) + ej * uz
    gkx = ak * (ux - cos_t * vx) + ek * vx
    gky = ak * (uy - cos_t * vy) + ek * vy
    gkz = ak * (uz - cos_t * vz) + ek * vz
    return fc * g * ex, gjx, gjy, gjz, gkx, gky, gkz


@njit(cache=True)
def _pair_lane(r, zeta, P, l, K):
    """Pair energy V, dV/dr at fixed zeta, and dV/dzeta for one lane."""
    fc, dfc = _fc_lane(r, P, l, K)
    fr = P[A_, l] * math.exp(-P[L1, l] * r)
    fa = -P[B_, l] * math.exp(-P[L2, l] * r)
    b, db = _bij_lane(zeta, P, l, K)
    inner = fr + b * fa
    v = K[KHALF] * fc * inner
    dvdr = K[KHALF] * (dfc * inner + fc * (-P[L1, l] * fr - b * P[L2, l] * fa))
    return v, dvdr, K[KHALF] * fc * fa * db


@njit(cache=True)
def _filter_disp(pos, offsets, nbrs, L, pbc, K, rmax2, keep_all):
    """Trim segments to ``rmax2`` and keep each survivor's displacement and r^2.

    The kernels read ``fd``/``fr2`` instead of recomputing minimum-image
    vectors, so every scheme sees bitwise the same geometry.
    """
    n = offsets.shape[0] - 1
    out_off = np.zeros(n + 1, np.int64)
    out = np.empty(nbrs.shape[0], np.int64)
    fd = np.empty((nbrs.shape[0], 3), pos.dtype)
    fr2 = np.empty(nbrs.shape[0], pos.dtype)
    m = 0
    for i in range(n):
        for t in range(offsets[i], offsets[i + 1]):
            j = nbrs[t]
            dx, dy, dz = _disp_lane(pos, i, j, L, pbc, K)
            r2 = dx * dx + dy * dy + dz * dz
            if keep_all or r2 <= rmax2:
                out[m] = j
                fd[m, 0] = dx
                fd[m, 1] = dy
                fd[m, 2] = dz
                fr2[m] = r2
                m += 1
        out_off[i + 1] = m
    return out_off, out[:m], fd[:m], fr2[:m]


@njit(cache=True)
def _build_queue(species, nspec, foff, fnb, fd, fr2, table, apply_cutoff):
    n = foff.shape[0] - 1
    qi = np.empty(fnb.shape[0], np.int64)
    qj = np.empty(fnb.shape[0], np.int64)
    qt = np.empty(fnb.shape[0], np.int64)
    rv = np.empty((fnb.shape[0], 3), fd.dtype)
    rr = np.empty(fnb.shape[0], fd.dtype)
    q = 0
    for i in range(n):
        si = species[i]
        for t in range(foff[i], foff[i + 1]):
            j = fnb[t]
            sj = species[j]
            if apply_cutoff and fr2[t] > table[((si * nspec + sj) * nspec + sj) * ROW_WIDTH + CUTSQ]:
                continue
            qi[q] = i
            qj[q] = j
            qt[q] = t
            rv[q, 0] = fd[t, 0]
            rv[q, 1] = fd[t, 1]
            rv[q, 2] = fd[t, 2]
            rr[q] = math.sqrt(fr2[t])
            q += 1
    return qi[:q], qj[:q], rv[:q], rr[:q], qt[:q]


# -- kernels ---------------------------------------------------------------

def make_kernels(blocks):
    """Compile the V1/V2 kernels against a namespace of building blocks."""
    vany = blocks.vany
    reduce_add = blocks.reduce_add
    scatter_add = blocks.scatter_add
    adjacent_gather = blocks.adjacent_gather
    fast_forward = blocks.fast_forward
    advance = blocks.advance

    @njit
    def k_ready(l, c, ctx):
        fnb, fr2, species, nspec, table, il, jl = ctx
        k = fnb[c]
        if k == jl[l]:
            return False
        row = (species[il[l]] * nspec + species[jl[l]]) * nspec + species[k]
        return fr2[c] <= table[row * ROW_WIDTH + CUTSQ]

    @njit(nogil=True)
    def v2(qi, qj, qt, q0, q1, foff, fnb, fd, fr2, species, nspec, table, K, W, k_max,
           fx, fy, fz, eacc, err, stats):
        z0 = K[K0]
        il = np.zeros(W, np.int64)
        jl = np.zeros(W, np.int64)
        kl = np.zeros(W, np.int64)
        rowij = np.zeros(W, np.int64)
        rowk = np.zeros(W, np.int64)
        cur = np.zeros(W, np.int64)
        end = np.zeros(W, np.int64)
        resume = np.zeros(W, np.int64)
        ncache = np.zeros(W, np.int64)
        active = np.zeros(W, np.bool_)
        mask = np.zeros(W, np.bool_)
        smask = np.zeros(W, np.bool_)
        ovf = np.zeros(W, np.bool_)
        Pij = np.zeros((ROW_WIDTH, W), K.dtype)
        Pk = np.zeros((ROW_WIDTH, W), K.dtype)
        ux = np.zeros(W, K.dtype)
        uy = np.zeros(W, K.dtype)
        uz = np.zeros(W, K.dtype)
        rij = np.ones(W, K.dtype)
        zeta = np.zeros(W, K.dtype)
        gix = np.zeros(W, K.dtype)
        giy = np.zeros(W, K.dtype)
        giz = np.zeros(W, K.dtype)
        gjx = np.zeros(W, K.dtype)
        gjy = np.zeros(W, K.dtype)
        gjz = np.zeros(W, K.dtype)
        nk = max(k_max, 1)
        ck = np.zeros((nk, W), np.int64)
        cgx = np.zeros((nk, W), K.dtype)
        cgy = np.zeros((nk, W), K.dtype)
        cgz = np.zeros((nk, W), K.dtype)
        ev = np.zeros(W, K.dtype)
        dz = np.zeros(W, K.dtype)
        fp = np.zeros(W, K.dtype)
        vx = np.zeros(W, K.dtype)
        vy = np.zeros(W, K.dtype)
        vw = np.zeros(W, K.dtype)
        idx = np.zeros(W, np.int64)
        ctx = (fnb, fr2, species, nspec, table, il, jl)

        for g0 in range(q0, q1, W):
            # lanes <- queue slice
            for l in range(W):
                q = g0 + l
                active[l] = q < q1
                zeta[l] = z0
                gix[l] = z0
                giy[l] = z0
                giz[l] = z0
                gjx[l] = z0
                gjy[l] = z0
                gjz[l] = z0
                ncache[l] = 0
                ovf[l] = False
                if active[l]:
                    i = qi[q]
                    j = qj[q]
                    il[l] = i
                    jl[l] = j
                    rowij[l] = (species[i] * nspec + species[j]) * nspec + species[j]
                    t = qt[q]
                    r = math.sqrt(fr2[t])
                    rij[l] = r
                    dx = fd[t, 0]
                    dy = fd[t, 1]
                    dw = fd[t, 2]
                    ux[l] = dx / r
                    uy[l] = dy / r
                    uz[l] = dw / r
                    cur[l] = foff[i]
                    end[l] = foff[i + 1]
                else:
                    il[l] = 0
                    jl[l] = -1
                    rowij[l] = 0
                    cur[l] = 0
                    end[l] = 0
                resume[l] = end[l]
            adjacent_gather(table, rowij, ROW_WIDTH, Pij)

            # first K pass: zeta, cached derivatives
            while True:
                fast_forward(cur, end, mask, k_ready, ctx)
                if not vany(mask):
                    break
                stats[0] += 1
                for l in range(W):
                    if mask[l]:
                        kl[l] = fnb[cur[l]]
                        rowk[l] = (species[il[l]] * nspec + species[jl[l]]) * nspec + species[kl[l]]
                    else:
                        rowk[l] = 0
                adjacent_gather(table, rowk, ROW_WIDTH, Pk)
                for l in range(W):
                    if not mask[l]:
                        continue
                    c = cur[l]
                    dkx = fd[c, 0]
                    dky = fd[c, 1]
                    dkz = fd[c, 2]
                    rik = math.sqrt(fr2[c])
                    z, ajx, ajy, ajz, akx, aky, akz = _zeta_lane(
                        ux[l], uy[l], uz[l], rij[l], dkx, dky, dkz, rik, Pk, l, K)
                    zeta[l] += z
                    if ncache[l] < k_max:
                        gix[l] += -ajx - akx
                        giy[l] += -ajy - aky
                        giz[l] += -ajz - akz
                        gjx[l] += ajx
                        gjy[l] += ajy
                        gjz[l] += ajz
                        s = ncache[l]
                        ck[s, l] = kl[l]
                        cgx[s, l] = akx
                        cgy[s, l] = aky
                        cgz[s, l] = akz
                        ncache[l] = s + 1
                    elif not ovf[l]:
                        ovf[l] = True
                        resume[l] = cur[l]
                advance(cur, end, mask)

            # pair term
            for l in range(W):
                if not active[l]:
                    ev[l] = z0
                    dz[l] = z0
                    fp[l] = z0
                    continue
                v, dvdr, dzl = _pair_lane(rij[l], zeta[l], Pij, l, K)
                if not (math.isfinite(v) and math.isfinite(zeta[l])):
                    err[0] = 1
                    err[1] = il[l]
                    err[2] = jl[l]
                    return
                ev[l] = v
                fp[l] = dvdr
                dz[l] = dzl
            eacc[0] = reduce_add(ev, active, eacc[0])
            for l in range(W):
                vx[l] = fp[l] * ux[l] - dz[l] * gix[l]
                vy[l] = fp[l] * uy[l] - dz[l] * giy[l]
                vw[l] = fp[l] * uz[l] - dz[l] * giz[l]
            scatter_add(fx, il, vx, active)
            scatter_add(fy, il, vy, active)
            scatter_add(fz, il, vw, active)
            for l in range(W):
                vx[l] = -fp[l] * ux[l] - dz[l] * gjx[l]
                vy[l] = -fp[l] * uy[l] - dz[l] * gjy[l]
                vw[l] = -fp[l] * uz[l] - dz[l] * gjz[l]
            scatter_add(fx, jl, vx, active)
            scatter_add(fy, jl, vy, active)
            scatter_add(fz, jl, vw, active)
            smax = 0
            for l in range(W):
                smax = max(smax, ncache[l])
            for s in range(smax):
                for l in range(W):
                    smask[l] = active[l] and s < ncache[l]
                    idx[l] = ck[s, l] if smask[l] else 0
                    vx[l] = -dz[l] * cgx[s, l]
                    vy[l] = -dz[l] * cgy[s, l]
                    vw[l] = -dz[l] * cgz[s, l]
                scatter_add(fx, idx, vx, smask)
                scatter_add(fy, idx, vy, smask)
                scatter_add(fz, idx, vw, smask)

            # second K pass for lanes whose cache overflowed
            if not vany(ovf):
                continue
            for l in range(W):
                cur[l] = resume[l] if ovf[l] else end[l]
            while True:
                fast_forward(cur, end, mask, k_ready, ctx)
                if not vany(mask):
                    break
                stats[0] += 1
                for l in range(W):
                    if mask[l]:
                        kl[l] = fnb[cur[l]]
                        rowk[l] = (species[il[l]] * nspec + species[jl[l]]) * nspec + species[kl[l]]
                    else:
                        kl[l] = 0
                        rowk[l] = 0
                adjacent_gather(table, rowk, ROW_WIDTH, Pk)
                for l in range(W):
                    cgx[0, l] = z0
                    cgy[0, l] = z0
                    cgz[0, l] = z0
                    gjx[l] = z0
                    gjy[l] = z0
                    gjz[l] = z0
                    if not mask[l]:
                        continue
                    c = cur[l]
                    dkx = fd[c, 0]
                    dky = fd[c, 1]
                    dkz = fd[c, 2]
                    rik = math.sqrt(fr2[c])
                    z, ajx, ajy, ajz, akx, aky, akz = _zeta_lane(
                        ux[l], uy[l], uz[l], rij[l], dkx, dky, dkz, rik, Pk, l, K)
                    gjx[l] = ajx
                    gjy[l] = ajy
                    gjz[l] = ajz
                    cgx[0, l] = akx
                    cgy[0, l] = aky
                    cgz[0, l] = akz
                for l in range(W):
                    vx[l] = dz[l] * (gjx[l] + cgx[0, l])
                    vy[l] = dz[l] * (gjy[l] + cgy[0, l])
                    vw[l] = dz[l] * (gjz[l] + cgz[0, l])
                scatter_add(fx, il, vx, mask)
                scatter_add(fy, il, vy, mask)
                scatter_add(fz, il, vw, mask)
                for l in range(W):
                    vx[l] = -dz[l] * gjx[l]
                    vy[l] = -dz[l] * gjy[l]
                    vw[l] = -dz[l] * gjz[l]
                scatter_add(fx, jl, vx, mask)
                scatter_add(fy, jl, vy, mask)
                scatter_add(fz, jl, vw, mask)
                for l in range(W):
                    vx[l] = -dz[l] * cgx[0, l]
                    vy[l] = -dz[l] * cgy[0, l]
                    vw[l] = -dz[l] * cgz[0, l]
                scatter_add(fx, kl, vx, mask)
                scatter_add(fy, kl, vy, mask)
                scatter_add(fz, kl, vw, mask)
                advance(cur, end, mask)

    @njit(nogil=True)
    def v1(a0, a1, foff, fnb, fd, fr2, species, nspec, table, K, W, k_max,
           fx, fy, fz, eacc, err, stats):
        z0 = K[K0]
        jl = np.zeros(W, np.int64)
        rowij = np.zeros(W, np.int64)
        rowk = np.zeros(W, np.int64)
        active = np.zeros(W, np.bool_)
        mask = np.zeros(W, np.bool_)
        Pij = np.zeros((ROW_WIDTH, W), K.dtype)
        Pk = np.zeros((ROW_WIDTH, W), K.dtype)
        ux = np.zeros(W, K.dtype)
        uy = np.zeros(W, K.dtype)
        uz = np.zeros(W, K.dtype)
        rij = np.ones(W, K.dtype)
        zeta = np.zeros(W, K.dtype)
        gix = np.zeros(W, K.dtype)
        giy = np.zeros(W, K.dtype)
        giz = np.zeros(W, K.dtype)
        gjx = np.zeros(W, K.dtype)
        gjy = np.zeros(W, K.dtype)
        gjz = np.zeros(W, K.dtype)
        nk = max(k_max, 1)
        sk = np.zeros(nk, np.int64)
        sm = np.zeros((nk, W), np.bool_)
        sgx = np.zeros((nk, W), K.dtype)
        sgy = np.zeros((nk, W), K.dtype)
        sgz = np.zeros((nk, W), K.dtype)
        tjx = np.zeros(W, K.dtype)
        tjy = np.zeros(W, K.dtype)
        tjz = np.zeros(W, K.dtype)
        tkx = np.zeros(W, K.dtype)
        tky = np.zeros(W, K.dtype)
        tkz = np.zeros(W, K.dtype)
        ev = np.zeros(W, K.dtype)
        dz = np.zeros(W, K.dtype)
        fp = np.zeros(W, K.dtype)
        vx = np.zeros(W, K.dtype)
        vy = np.zeros(W, K.dtype)
        vw = np.zeros(W, K.dtype)

        for i in range(a0, a1):
            si = species[i]
            sb = foff[i]
            se = foff[i + 1]
            for c0 in range(sb, se, W):
                # lanes <- neighbors j of i
                for l in range(W):
                    t = c0 + l
                    active[l] = t < se
                    zeta[l] = z0
                    gix[l] = z0
                    giy[l] = z0
                    giz[l] = z0
                    gjx[l] = z0
                    gjy[l] = z0
                    gjz[l] = z0
                    if active[l]:
                        j = fnb[t]
                        jl[l] = j
                        rowij[l] = (si * nspec + species[j]) * nspec + species[j]
                        dx = fd[t, 0]
                        dy = fd[t, 1]
                        dw = fd[t, 2]
                        r = math.sqrt(fr2[t])
                        rij[l] = r
                        ux[l] = dx / r
                        uy[l] = dy / r
                        uz[l] = dw / r
                    else:
                        jl[l] = -1
                        rowij[l] = 0
                        rij[l] = K[K1]
                adjacent_gather(table, rowij, ROW_WIDTH, Pij)
                for l in range(W):
                    active[l] = active[l] and rij[l] <= Pij[CUT, l]
                if not vany(active):
                    continue

                # first K pass, k uniform across lanes
                nslots = 0
                resume = -1
                for kk in range(sb, se):
                    k = fnb[kk]
                    dkx = fd[kk, 0]
                    dky = fd[kk, 1]
                    dkz = fd[kk, 2]
                    r2 = fr2[kk]
                    for l in range(W):
                        rowk[l] = (si * nspec + species[jl[l]]) * nspec + species[k] if active[l] else 0
                    adjacent_gather(table, rowk, ROW_WIDTH, Pk)
                    for l in range(W):
                        mask[l] = active[l] and k != jl[l] and r2 <= Pk[CUTSQ, l]
                    if not vany(mask):
                        continue
                    stats[0] += 1
                    caching = resume < 0 and nslots < k_max
                    if resume < 0 and not caching:
                        resume = kk
                    rik = math.sqrt(r2)
                    for l in range(W):
                        if not mask[l]:
                            continue
                        z, ajx, ajy, ajz, akx, aky, akz = _zeta_lane(
                            ux[l], uy[l], uz[l], rij[l], dkx, dky, dkz, rik, Pk, l, K)
                        zeta[l] += z
                        if caching:
                            gix[l] += -ajx - akx
                            giy[l] += -ajy - aky
                            giz[l] += -ajz - akz
                            gjx[l] += ajx
                            gjy[l] += ajy
                            gjz[l] += ajz
                            sgx[nslots, l] = akx
                            sgy[nslots, l] = aky
                            sgz[nslots, l] = akz
                    if caching:
                        sk[nslots] = k
                        for l in range(W):
                            sm[nslots, l] = mask[l]
                        nslots += 1

                # pair term
                for l in range(W):
                    if not active[l]:
                        ev[l] = z0
                        dz[l] = z0
                        fp[l] = z0
                        continue
                    v, dvdr, dzl = _pair_lane(rij[l], zeta[l], Pij, l, K)
                    if not (math.isfinite(v) and math.isfinite(zeta[l])):
                        err[0] = 1
                        err[1] = i
                        err[2] = jl[l]
                        return
                    ev[l] = v
                    fp[l] = dvdr
                    dz[l] = dzl
                eacc[0] = reduce_add(ev, active, eacc[0])
                for l in range(W):
                    vx[l] = fp[l] * ux[l] - dz[l] * gix[l]
                    vy[l] = fp[l] * uy[l] - dz[l] * giy[l]
                    vw[l] = fp[l] * uz[l] - dz[l] * giz[l]
                fx[i] = reduce_add(vx, active, fx[i])
                fy[i] = reduce_add(vy, active, fy[i])
                fz[i] = reduce_add(vw, active, fz[i])
                # j's are distinct within one segment, so this scatter is conflict-free
                for l in range(W):
                    vx[l] = -fp[l] * ux[l] - dz[l] * gjx[l]
                    vy[l] = -fp[l] * uy[l] - dz[l] * gjy[l]
                    vw[l] = -fp[l] * uz[l] - dz[l] * gjz[l]
                scatter_add(fx, jl, vx, active)
                scatter_add(fy, jl, vy, active)
                scatter_add(fz, jl, vw, active)
                for s in range(nslots):
                    k = sk[s]
                    for l in range(W):
                        vx[l] = -dz[l] * sgx[s, l]
                        vy[l] = -dz[l] * sgy[s, l]
                        vw[l] = -dz[l] * sgz[s, l]
                        mask[l] = sm[s, l]
                    fx[k] = reduce_add(vx, mask, fx[k])
                    fy[k] = reduce_add(vy, mask, fy[k])
                    fz[k] = reduce_add(vw, mask, fz[k])

                # second K pass past the cache
                if resume < 0:
                    continue
                for kk in range(resume, se):
                    k = fnb[kk]
                    dkx = fd[kk, 0]
                    dky = fd[kk, 1]
                    dkz = fd[kk, 2]
                    r2 = fr2[kk]
                    for l in range(W):
                        rowk[l] = (si * nspec + species[jl[l]]) * nspec + species[k] if active[l] else 0
                    adjacent_gather(table, rowk, ROW_WIDTH, Pk)
                    for l in range(W):
                        mask[l] = active[l] and k != jl[l] and r2 <= Pk[CUTSQ, l]
                    if not vany(mask):
                        continue
                    stats[0] += 1
                    rik = math.sqrt(r2)
                    for l in range(W):
                        tjx[l] = z0
                        tjy[l] = z0
                        tjz[l] = z0
                        tkx[l] = z0
                        tky[l] = z0
                        tkz[l] = z0
                        if not mask[l]:
                            continue
                        z, ajx, ajy, ajz, akx, aky, akz = _zeta_lane(
                            ux[l], uy[l], uz[l], rij[l], dkx, dky, dkz, rik, Pk, l, K)
                        tjx[l] = ajx
                        tjy[l] = ajy
                        tjz[l] = ajz
                        tkx[l] = akx
                        tky[l] = aky
                        tkz[l] = akz
                    for l in range(W):
                        vx[l] = dz[l] * (tjx[l] + tkx[l])
                        vy[l] = dz[l] * (tjy[l] + tky[l])
                        vw[l] = dz[l] * (tjz[l] + tkz[l])
                    fx[i] = reduce_add(vx, mask, fx[i])
                    fy[i] = reduce_add(vy, mask, fy[i])
                    fz[i] = reduce_add(vw, mask, fz[i])
                    for l in range(W):
                        vx[l] = -dz[l] * tjx[l]
                        vy[l] = -dz[l] * tjy[l]
                        vw[l] = -dz[l] * tjz[l]
                    scatter_add(fx, jl, vx, mask)
                    scatter_add(fy, jl, vy, mask)
                    scatter_add(fz, jl, vw, mask)
                    for l in range(W):
                        vx[l] = -dz[l] * tkx[l]
                        vy[l] = -dz[l] * tky[l]
                        vw[l] = -dz[l] * tkz[l]
                    fx[k] = reduce_add(vx, mask, fx[k])
                    fy[k] = reduce_add(vy, mask, fy[k])
                    fz[k] = reduce_add(vw, mask, fz[k])

    return {"v1": v1, "v2": v2}


_KERNEL_CACHE = {}


def kernels_for(blocks):
    key = id(blocks)
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = (blocks, make_kernels(blocks))
    return _KERNEL_CACHE[key][1]


# -- filter component ---------------------------------------------------------

@dataclass(frozen=True)
class PairQueue:
    """Packed (i, j) work items for the computational kernels."""

    i_idx: np.ndarray
    j_idx: np.ndarray
    rvec: np.ndarray
    r: np.ndarray
    entry: np.ndarray = None

    def __len__(self):
        return len(self.i_idx)

    def pairs(self):
        return list(zip(self.i_idx.tolist(), self.j_idx.tolist()))


@dataclass
class _Prepared:
    pos: np.ndarray
    species: np.ndarray
    nspec: int
    table: np.ndarray
    L: np.ndarray
    pbc: np.ndarray
    K: np.ndarray
    foff: np.ndarray
    fnb: np.ndarray
    fd: np.ndarray
    fr2: np.ndarray


def _prepare(system, nlist, params, dtype, use_filter=True):
    dtype = np.dtype(dtype)
    pos = np.ascontiguousarray(system.positions, dtype=dtype)
    L = system.box.L.astype(dtype)
    K = constants(dtype)
    rmax = dtype.type(params.r_cut_max)
    foff, fnb, fd, fr2 = _filter_disp(pos, nlist.offsets, nlist.neighbors, L, system.box.pbc,
                                      K, rmax * rmax, not use_filter)
    return _Prepared(pos, system.species, params.nspecies, opt_table(params, dtype),
                     L, system.box.pbc, K, foff, fnb, fd, fr2)


def _queue(prep, apply_cutoff=True):
    return PairQueue(*_build_queue(prep.species, prep.nspec, prep.foff, prep.fnb, prep.fd,
                                   prep.fr2, prep.table, apply_cutoff))


def build_pair_queue(system, nlist, params, dtype=np.float64, use_filter=True):
    """Ordered pairs within their (si, sj, sj) cutoff, ascending i then list order.

    With ``use_filter=False`` every pair of the extended list is queued,
    skin atoms included.
    """
    return _queue(_prepare(system, nlist, params, dtype, use_filter), apply_cutoff=use_filter)


def _chunks(total, workers, align=1):
    """Contiguous ``[lo, hi)`` blocks, boundaries rounded to ``align``."""
    bounds = [0]
    for w in range(1, workers):
        b = (total * w // workers) // align * align
        bounds.append(max(b, bounds[-1]))
    bounds.append(total)
    return [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]


def _run_workers(job, ranges, n, acc_dtype):
    """Run ``job(lo, hi, fx, fy, fz, eacc, err, stats)`` per range with private buffers."""
    bufs = [(np.zeros(n, acc_dtype), np.zeros(n, acc_dtype), np.zeros(n, acc_dtype),
             np.zeros(1, acc_dtype), np.zeros(3, np.int64), np.zeros(1, np.int64))
            for _ in ranges]
    if len(ranges) == 1:
        job(*ranges[0], *bufs[0])
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            list(pool.map(lambda a: job(*a[0], *a[1]), zip(ranges, bufs)))
    forces = np.zeros((n, 3), acc_dtype)
    energy = acc_dtype.type(0)
    invocations = 0
    for fx, fy, fz, eacc, err, stats in bufs:
        if err[0]:
            raise NumericalError(f"non-finite energy or zeta for pair ({err[1]}, {err[2]})")
        forces[:, 0] += fx
        forces[:, 1] += fy
        forces[:, 2] += fz
        energy += eacc[0]
        invocations += int(stats[0])
    return EnergyForces(float(energy), forces.astype(np.float64), invocations)


def _check_backend(backend, k_max, workers):
    if not isinstance(backend, VectorBackend):
        raise ConfigurationError(f"expected a VectorBackend, got {backend!r}")
    if k_max < 0:
        raise ConfigurationError(f"k_max must be >= 0, got {k_max}")
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")


def compute_v1(system, nlist, params, backend, k_max=16, workers=1, use_filter=True):
    """Scheme V1: neighbors j of one atom i mapped onto the lanes."""
    _check_backend(backend, k_max, workers)
    prep = _prepare(system, nlist, params, backend.real_dtype, use_filter)
    kern = backend.kernels()["v1"]
    W = backend.width

    def job(lo, hi, fx, fy, fz, eacc, err, stats):
        kern(lo, hi, prep.foff, prep.fnb, prep.fd, prep.fr2, prep.species, prep.nspec,
             prep.table, prep.K, W, int(k_max), fx, fy, fz, eacc, err, stats)

    return _run_workers(job, _chunks(system.n, workers), system.n, backend.accum_dtype)


def compute_v2(system, nlist, params, backend, k_max=16, workers=1, use_filter=True):
    """Scheme V2: queue pairs fused onto lanes, per-lane fast-forwarded K loops."""
    _check_backend(backend, k_max, workers)
    prep = _prepare(system, nlist, params, backend.real_dtype, use_filter)
    queue = _queue(prep, apply_cutoff=use_filter)
    kern = backend.kernels()["v2"]
    W = backend.width

    def job(lo, hi, fx, fy, fz, eacc, err, stats):
        kern(queue.i_idx, queue.j_idx, queue.entry, lo, hi, prep.foff, prep.fnb, prep.fd,
             prep.fr2, prep.species, prep.nspec, prep.table, prep.K, W, int(k_max),
             fx, fy, fz, eacc, err, stats)

    return _run_workers(job, _chunks(len(queue), workers, align=W), system.n,
                        backend.accum_dtype)


def compute_v3(system, nlist, params, backend, k_max=16, workers=1, use_filter=True):
    """Scheme V3: the V2 control flow at width 1."""
    scalar = type(backend)(1, backend.precision) if backend.width != 1 else backend
    return compute_v2(system, nlist, params, scalar, k_max, workers, use_filter)


def select_scheme(width, precision=PrecisionMode.OPT_D, override=None):
    """Pick a lane mapping for a backend width.

    Width 1 runs V3, short vectors (up to 4 lanes) run V1 where a neighbor
    list fills the lanes, and anything wider runs the fused V2.
    """
    if override not in (None, "auto"):
        if override not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {override!r}; choose from {SCHEMES}")
        return override
    if width < 1:
        raise ConfigurationError(f"width must be >= 1, got {width}")
    if width == 1:
        return "v3"
    if width <= 4:
        return "v1"
    return "v2"


def evaluate(scheme, system, nlist, params, backend=None, k_max=16, workers=1, use_filter=True):
    """Dispatch a force evaluation to the named scheme."""
    from .potential_ref import compute_opt_scalar, compute_ref

    if scheme == "ref":
        return compute_ref(system, nlist, params)
    if scheme == "scalar-opt":
        return compute_opt_scalar(system, nlist, params, k_max)
    if backend is None:
        backend = get_backend(1)
    if scheme == "auto":
        scheme = select_scheme(backend.width, backend.precision)
    fn = {"v1": compute_v1, "v2": compute_v2, "v3": compute_v3}.get(scheme)
    if fn is None:
        raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return fn(system, nlist, params, backend, k_max, workers, use_filter)
