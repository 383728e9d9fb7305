"""Scalar reference Tersoff kernels in double precision.

The functional forms are the standard Tersoff ones::

    f_C(r) = 1                                  r <= R - D
           = 1/2 - 1/2 sin(pi (r - R) / (2 D))  R - D < r < R + D
           = 0                                  r >= R + D
    f_R(r) = A exp(-lambda1 r)
    f_A(r) = -B exp(-lambda2 r)
    g(t)   = gamma (1 + c^2/d^2 - c^2 / (d^2 + (h - t)^2))
    zeta_ij = sum_k f_C(r_ik) g(cos theta_ijk) exp(lambda3^m (r_ij - r_ik)^m)
    b_ij   = (1 + beta^eta zeta_ij^eta)^(-1 / (2 eta))

Energy convention: every *ordered* pair contributes
``V = 1/2 f_C(r_ij) [f_R(r_ij) + b_ij f_A(r_ij)]``, so that the double count
over (i, j) and (j, i) reproduces the conventional total and stock parameter
files stay valid.

Two-body terms use the (si, sj, sj) entry; the three-body term zeta(i, j, k)
uses the (si, sj, sk) entry, its cutoff applied to r_ik.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError, NumericalError

# column layout of ParamTable.raw()
M, GAMMA, LAM3, C, D, H, ETA, BETA, LAM2, BB, RR, DD, LAM1, AA = range(14)


@dataclass
class EnergyForces:
    energy: float
    forces: np.ndarray
    #: kernel firing count (instrumentation); -1 when the path does not count
    invocations: int = -1


@dataclass
class ZetaAccumulator:
    """Cache of zeta and its position derivatives for one (i, j) pair."""

    k_max: int
    zeta: float = 0.0
    dzeta_di: np.ndarray = None
    dzeta_dj: np.ndarray = None
    k_indices: list = None
    dzeta_dk: list = None
    overflowed: bool = False

    def __post_init__(self):
        self.dzeta_di = np.zeros(3) if self.dzeta_di is None else self.dzeta_di
        self.dzeta_dj = np.zeros(3) if self.dzeta_dj is None else self.dzeta_dj
        self.k_indices = [] if self.k_indices is None else self.k_indices
        self.dzeta_dk = [] if self.dzeta_dk is None else self.dzeta_dk

    def add(self, k, zeta, gi, gj, gk):
        """Record one contributing k; returns False once the cache is full."""
        self.zeta += zeta
        if len(self.k_indices) >= self.k_max:
            self.overflowed = True
            return False
        self.dzeta_di += gi
        self.dzeta_dj += gj
        self.k_indices.append(k)
        self.dzeta_dk.append(np.asarray(gk, dtype=float))
        return True


# -- scalar building blocks -------------------------------------------------

@njit(cache=True)
def _fc(r, p):
    R = p[RR]
    Dd = p[DD]
    if r <= R - Dd:
        return 1.0, 0.0
    if r >= R + Dd:
        return 0.0, 0.0
    arg = 0.5 * math.pi * (r - R) / Dd
    return 0.5 - 0.5 * math.sin(arg), -0.25 * math.pi / Dd * math.cos(arg)


@njit(cache=True)
def _pair(r, p):
    fr = p[AA] * math.exp(-p[LAM1] * r)
    fa = -p[BB] * math.exp(-p[LAM2] * r)
    return fr, -p[LAM1] * fr, fa, -p[LAM2] * fa


@njit(cache=True)
def _g(cos_theta, p):
    c2 = p[C] * p[C]
    d2 = p[D] * p[D]
    u = p[H] - cos_theta
    den = d2 + u * u
    val = p[GAMMA] * (1.0 + c2 / d2 - c2 / den)
    return val, -2.0 * p[GAMMA] * c2 * u / (den * den)


@njit(cache=True)
def _bond_order(zeta, p):
    if zeta <= 0.0:
        return 1.0, 0.0
    eta = p[ETA]
    t = p[BETA] * zeta
    if t <= 1.0:
        x = t ** eta
        b = (1.0 + x) ** (-0.5 / eta)
        return b, -0.5 * b * x / (zeta * (1.0 + x))
    # large-argument form keeps (beta zeta)^eta from overflowing
    y = t ** (-eta)
    b = t ** -0.5 * (1.0 + y) ** (-0.5 / eta)
    return b, -0.5 * b / (zeta * (1.0 + y))


@njit(cache=True)
def _exp_term(drr, p):
    """exp(lambda3^m dr^m) and its derivative with respect to dr."""
    lam = p[LAM3]
    if p[M] == 3.0:
        t = lam * drr
        ex = math.exp(t * t * t)
        return ex, 3.0 * lam * t * t * ex
    ex = math.exp(lam * drr)
    return ex, lam * ex


@njit(cache=True)
def _zeta(dij, rij, dik, rik, p):
    """zeta(i, j, k) and its gradients wrt x_j and x_k (grad_i = -grad_j - grad_k).

    ``dij = x_j - x_i`` and ``dik = x_k - x_i`` are minimum-image displacements.
    """
    fc, dfc = _fc(rik, p)
    if fc == 0.0 and dfc == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    uijx = dij[0] / rij
    uijy = dij[1] / rij
    uijz = dij[2] / rij
    uikx = dik[0] / rik
    uiky = dik[1] / rik
    uikz = dik[2] / rik
    cos_t = uijx * uikx + uijy * uiky + uijz * uikz
    g, dg = _g(min(1.0, max(-1.0, cos_t)), p)
    ex, dex = _exp_term(rij - rik, p)
    z = fc * g * ex
    # d cos / d x_j and d cos / d x_k
    a = fc * dg * ex
    e_j = fc * g * dex
    gjx = a * (uikx - cos_t * uijx) / rij + e_j * uijx
    gjy = a * (uiky - cos_t * uijy) / rij + e_j * uijy
    gjz = a * (uikz - cos_t * uijz) / rij + e_j * uijz
    e_k = dfc * g * ex - fc * g * dex
    gkx = a * (uijx - cos_t * uikx) / rik + e_k * uikx
    gky = a * (uijy - cos_t * uiky) / rik + e_k * uiky
    gkz = a * (uijz - cos_t * uikz) / rik + e_k * uikz
    return z, gjx, gjy, gjz, gkx, gky, gkz


@njit(cache=True)
def _disp(pos, i, j, L, pbc, out):
    for d in range(3):
        x = pos[j, d] - pos[i, d]
        if pbc[d]:
            x -= L[d] * math.floor(x / L[d] + 0.5)
        out[d] = x
    return math.sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2])


# -- Algorithm 2, literal -----------------------------------------------------

@njit(cache=True)
def _compute_ref(pos, species, offsets, nbrs, raw, nspec, L, pbc, forces, err):
    n = pos.shape[0]
    energy = 0.0
    dij = np.empty(3)
    dik = np.empty(3)
    for i in range(n):
        si = species[i]
        for jj in range(offsets[i], offsets[i + 1]):
            j = nbrs[jj]
            sj = species[j]
            pij = raw[(si * nspec + sj) * nspec + sj]
            rij = _disp(pos, i, j, L, pbc, dij)
            if rij > pij[RR] + pij[DD]:
                continue
            zeta = 0.0
            for kk in range(offsets[i], offsets[i + 1]):
                k = nbrs[kk]
                if k == j:
                    continue
                rik = _disp(pos, i, k, L, pbc, dik)
                zeta += _zeta(dij, rij, dik, rik, raw[(si * nspec + sj) * nspec + species[k]])[0]
            fc, dfc = _fc(rij, pij)
            fr, dfr, fa, dfa = _pair(rij, pij)
            b, db = _bond_order(zeta, pij)
            v = 0.5 * fc * (fr + b * fa)
            if not (math.isfinite(v) and math.isfinite(zeta)):
                err[0] = 1
                err[1] = i
                err[2] = j
                return energy
            energy += v
            dvdr = 0.5 * (dfc * (fr + b * fa) + fc * (dfr + b * dfa))
            for d in range(3):
                f = dvdr * dij[d] / rij
                forces[i, d] += f
                forces[j, d] -= f
            dz = 0.5 * fc * fa * db
            for kk in range(offsets[i], offsets[i + 1]):
                k = nbrs[kk]
                if k == j:
                    continue
                rik = _disp(pos, i, k, L, pbc, dik)
                z, gjx, gjy, gjz, gkx, gky, gkz = _zeta(
                    dij, rij, dik, rik, raw[(si * nspec + sj) * nspec + species[k]])
                forces[i, 0] -= dz * (-gjx - gkx)
                forces[i, 1] -= dz * (-gjy - gky)
                forces[i, 2] -= dz * (-gjz - gkz)
                forces[j, 0] -= dz * gjx
                forces[j, 1] -= dz * gjy
                forces[j, 2] -= dz * gjz
                forces[k, 0] -= dz * gkx
                forces[k, 1] -= dz * gky
                forces[k, 2] -= dz * gkz
    return energy


# -- Algorithm 3, scalar ------------------------------------------------------

@njit(cache=True)
def _compute_opt_scalar(pos, species, offsets, nbrs, raw, nspec, L, pbc, k_max, forces, err):
    n = pos.shape[0]
    energy = 0.0
    dij = np.empty(3)
    dik = np.empty(3)
    ck = np.empty(max(k_max, 1), np.int64)
    cg = np.empty((max(k_max, 1), 3))
    for i in range(n):
        si = species[i]
        for jj in range(offsets[i], offsets[i + 1]):
            j = nbrs[jj]
            sj = species[j]
            pij = raw[(si * nspec + sj) * nspec + sj]
            rij = _disp(pos, i, j, L, pbc, dij)
            if rij > pij[RR] + pij[DD]:
                continue
            zeta = 0.0
            gix = 0.0
            giy = 0.0
            giz = 0.0
            gjx_s = 0.0
            gjy_s = 0.0
            gjz_s = 0.0
            ncached = 0
            rest = offsets[i + 1]
            # first K loop: cache derivatives until k_max entries are stored
            for kk in range(offsets[i], offsets[i + 1]):
                if ncached >= k_max:
                    rest = kk
                    break
                k = nbrs[kk]
                if k == j:
                    continue
                pk = raw[(si * nspec + sj) * nspec + species[k]]
                rik = _disp(pos, i, k, L, pbc, dik)
                if rik > pk[RR] + pk[DD]:
                    continue
                z, gjx, gjy, gjz, gkx, gky, gkz = _zeta(dij, rij, dik, rik, pk)
                zeta += z
                gix += -gjx - gkx
                giy += -gjy - gky
                giz += -gjz - gkz
                gjx_s += gjx
                gjy_s += gjy
                gjz_s += gjz
                ck[ncached] = k
                cg[ncached, 0] = gkx
                cg[ncached, 1] = gky
                cg[ncached, 2] = gkz
                ncached += 1
            # remaining k: original scheme, zeta only
            for kk in range(rest, offsets[i + 1]):
                k = nbrs[kk]
                if k == j:
                    continue
                pk = raw[(si * nspec + sj) * nspec + species[k]]
                rik = _disp(pos, i, k, L, pbc, dik)
                if rik > pk[RR] + pk[DD]:
                    continue
                zeta += _zeta(dij, rij, dik, rik, pk)[0]
            fc, dfc = _fc(rij, pij)
            fr, dfr, fa, dfa = _pair(rij, pij)
            b, db = _bond_order(zeta, pij)
            v = 0.5 * fc * (fr + b * fa)
            if not (math.isfinite(v) and math.isfinite(zeta)):
                err[0] = 1
                err[1] = i
                err[2] = j
                return energy
            energy += v
            dvdr = 0.5 * (dfc * (fr + b * fa) + fc * (dfr + b * dfa))
            for d in range(3):
                f = dvdr * dij[d] / rij
                forces[i, d] += f
                forces[j, d] -= f
            dz = 0.5 * fc * fa * db
            if ncached > 0:
                forces[i, 0] -= dz * gix
                forces[i, 1] -= dz * giy
                forces[i, 2] -= dz * giz
                forces[j, 0] -= dz * gjx_s
                forces[j, 1] -= dz * gjy_s
                forces[j, 2] -= dz * gjz_s
                for t in range(ncached):
                    k = ck[t]
                    forces[k, 0] -= dz * cg[t, 0]
                    forces[k, 1] -= dz * cg[t, 1]
                    forces[k, 2] -= dz * cg[t, 2]
            for kk in range(rest, offsets[i + 1]):
                k = nbrs[kk]
                if k == j:
                    continue
                pk = raw[(si * nspec + sj) * nspec + species[k]]
                rik = _disp(pos, i, k, L, pbc, dik)
                if rik > pk[RR] + pk[DD]:
                    continue
                z, gjx, gjy, gjz, gkx, gky, gkz = _zeta(dij, rij, dik, rik, pk)
                forces[i, 0] -= dz * (-gjx - gkx)
                forces[i, 1] -= dz * (-gjy - gky)
                forces[i, 2] -= dz * (-gjz - gkz)
                forces[j, 0] -= dz * gjx
                forces[j, 1] -= dz * gjy
                forces[j, 2] -= dz * gjz
                forces[k, 0] -= dz * gkx
                forces[k, 1] -= dz * gky
                forces[k, 2] -= dz * gkz
    return energy


# -- public wrappers ----------------------------------------------------------

def cutoff_fc(r, entry):
    """Cutoff function value and radial derivative."""
    return _fc(float(r), entry.as_row())


def pair_terms(r, entry):
    """``(f_R, f_R', f_A, f_A')`` at distance ``r``."""
    return _pair(float(r), entry.as_row())


def angle_g(cos_theta, entry):
    """Angular term and its derivative with respect to cos(theta)."""
    return _g(float(cos_theta), entry.as_row())


def bond_order(zeta, entry):
    """Bond order b(zeta) and db/dzeta; the derivative is defined as 0 at zeta = 0."""
    return _bond_order(float(zeta), entry.as_row())


def zeta_term(ri, rj, rk, entry):
    """zeta(i, j, k) with gradients wrt the three positions (no periodic wrap)."""
    ri, rj, rk = (np.asarray(x, dtype=float) for x in (ri, rj, rk))
    dij = rj - ri
    dik = rk - ri
    z, *g = _zeta(dij, float(np.linalg.norm(dij)), dik, float(np.linalg.norm(dik)), entry.as_row())
    grad_j = np.array(g[:3])
    grad_k = np.array(g[3:])
    return z, -grad_j - grad_k, grad_j, grad_k


def _check(err, label):
    if err[0]:
        raise NumericalError(f"{label}: non-finite energy or zeta for pair ({err[1]}, {err[2]})")


def compute_ref(system, nlist, params):
    """Energy and forces by the literal triple loop over the extended list."""
    forces = np.zeros((system.n, 3))
    err = np.zeros(3, np.int64)
    e = _compute_ref(system.positions, system.species, nlist.offsets, nlist.neighbors,
                     params.raw(), params.nspecies, system.box.L, system.box.pbc, forces, err)
    _check(err, "ref")
    return EnergyForces(float(e), forces)


def compute_opt_scalar(system, nlist, params, k_max):
    """Scalar variant with per-pair derivative caching of up to ``k_max`` k atoms."""
    if k_max < 0:
        raise ConfigurationError(f"k_max must be >= 0, got {k_max}")
    forces = np.zeros((system.n, 3))
    err = np.zeros(3, np.int64)
    e = _compute_opt_scalar(system.positions, system.species, nlist.offsets, nlist.neighbors,
                            params.raw(), params.nspecies, system.box.L, system.box.pbc,
                            int(k_max), forces, err)
    _check(err, "scalar-opt")
    return EnergyForces(float(e), forces)


def total_energy(system, nlist, params):
    return compute_ref(system, nlist, params).energy


def fd_force_oracle(system, nlist, params, step=1e-5):
    """Forces by central differences of the reference energy.

    Displaced coordinates are not wrapped back into the box; the neighbor
    list and minimum image handle the small excursions.
    """
    if step <= 0:
        raise ConfigurationError(f"step must be > 0, got {step}")
    work = system.copy()
    base = system.positions
    out = np.zeros((system.n, 3))

    def energy_at(pos):
        work.positions = pos
        e = _compute_ref(pos, work.species, nlist.offsets, nlist.neighbors, params.raw(),
                         params.nspecies, work.box.L, work.box.pbc, np.zeros((work.n, 3)),
                         np.zeros(3, np.int64))
        return e

    for a in range(system.n):
        for d in range(3):
            pos = base.copy()
            pos[a, d] += step
            ep = energy_at(pos)
            pos[a, d] -= 2.0 * step
            em = energy_at(pos)
            out[a, d] = -(ep - em) / (2.0 * step)
    return out
