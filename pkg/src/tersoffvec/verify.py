"""Property suite shared by ``tersoffvec verify`` and the test-suite.

Each check builds its own seeded system, runs the relevant kernels and
returns a :class:`CheckResult`. Nothing here mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import make_diamond_lattice
from .neighbor import build_neighbor_list
from .potential_opt import compute_v1, compute_v2, evaluate
from .potential_ref import compute_opt_scalar, compute_ref, fd_force_oracle
from .simd import SOFTWARE_WIDTHS, get_backend

KMAX_SWEEP = (0, 2, 16)
ENERGY_RTOL = 1e-12
FORCE_ATOL = 1e-10
FD_RTOL = 1e-6
PRECISION_RTOL = 2e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def perturbed_lattice(cells=(2, 2, 2), sigma=0.1, seed=1, a0=5.431):
    """Diamond lattice with Gaussian displacements of width ``sigma`` (Å)."""
    system = make_diamond_lattice(*cells, a0=a0)
    rng = np.random.Generator(np.random.PCG64(seed))
    system.positions = system.box.wrap(system.positions + rng.normal(0.0, sigma, (system.n, 3)))
    return system


def relative_fd_error(analytic, numeric):
    """``max |F_fd - F| / max |F|``, the scale-free gradient-check metric."""
    return float(np.abs(numeric - analytic).max() / np.abs(analytic).max())


def _setup(system, params, skin=1.0):
    return build_neighbor_list(system, params.r_cut_max, skin)


def check_force_gradient(params, seed=1, step=1e-5):
    system = perturbed_lattice((2, 2, 2), 0.1, seed)
    nl = _setup(system, params)
    err = relative_fd_error(compute_ref(system, nl, params).forces,
                            fd_force_oracle(system, nl, params, step))
    return CheckResult("force-gradient", err < FD_RTOL,
                       f"64 atoms, h={step:g}, max relative error {err:.3e} (< {FD_RTOL:g})")


def check_newton(params, cells=(4, 4, 4), seed=1):
    system = perturbed_lattice(cells, 0.1, seed)
    nl = _setup(system, params)
    worst = 0.0
    for scheme, width in (("ref", 1), ("scalar-opt", 1), ("v1", 4), ("v2", 8)):
        ef = evaluate(scheme, system, nl, params, get_backend(width))
        worst = max(worst, float(np.abs(ef.forces.sum(axis=0)).max()))
    return CheckResult("newton", worst < FORCE_ATOL,
                       f"{system.n} atoms, max |sum F| component {worst:.3e} eV/A")


def _compare(ref, ef):
    de = abs(ef.energy - ref.energy) / abs(ref.energy)
    df = float(np.abs(ef.forces - ref.forces).max())
    return de, df


def scheme_matrix(params, systems, widths=SOFTWARE_WIDTHS, k_values=KMAX_SWEEP):
    """Worst energy/force deviation from Ref per (scheme, width, k_max)."""
    rows = []
    for system in systems:
        nl = _setup(system, params)
        ref = compute_ref(system, nl, params)
        for km in k_values:
            rows.append(("scalar-opt", 1, km, system.n,
                         *_compare(ref, compute_opt_scalar(system, nl, params, km))))
            for fn, name in ((compute_v1, "v1"), (compute_v2, "v2")):
                for w in widths:
                    rows.append((name, w, km, system.n,
                                 *_compare(ref, fn(system, nl, params, get_backend(w), km))))
    return rows


def check_scheme_equivalence(params, seed=1, cells=(4, 4, 4)):
    systems = [perturbed_lattice((2, 2, 2), 0.1, seed), perturbed_lattice(cells, 0.1, seed)]
    rows = scheme_matrix(params, systems, k_values=(16,))
    de = max(r[4] for r in rows)
    df = max(r[5] for r in rows)
    ok = de < ENERGY_RTOL and df < FORCE_ATOL
    return CheckResult("scheme-equivalence", ok,
                       f"{len(rows)} runs over widths {SOFTWARE_WIDTHS}, "
                       f"dE/E {de:.2e}, max dF {df:.2e} eV/A")


def check_kmax_sweep(params, seed=1):
    system = perturbed_lattice((2, 2, 2), 0.1, seed)
    rows = scheme_matrix(params, [system], widths=(1, 8), k_values=KMAX_SWEEP)
    de = max(r[4] for r in rows)
    df = max(r[5] for r in rows)
    ok = de < ENERGY_RTOL and df < FORCE_ATOL
    return CheckResult("kmax-sweep", ok,
                       f"k_max {KMAX_SWEEP}, dE/E {de:.2e}, max dF {df:.2e} eV/A")


def check_filter(params, seed=1, cells=(4, 4, 4)):
    system = perturbed_lattice(cells, 0.1, seed)
    nl = _setup(system, params)
    de = 0.0
    df = 0.0
    for fn, w in ((compute_v1, 4), (compute_v2, 8)):
        a = fn(system, nl, params, get_backend(w), use_filter=True)
        b = fn(system, nl, params, get_backend(w), use_filter=False)
        e, f = _compare(a, b)
        de = max(de, e)
        df = max(df, f / np.abs(a.forces).max())
    ok = de < ENERGY_RTOL and df < ENERGY_RTOL
    return CheckResult("filter-soundness", ok,
                       f"filtered vs unfiltered dE/E {de:.2e}, dF/|F| {df:.2e}")


def check_precision_gap(params, seed=1, cells=(4, 4, 4)):
    system = perturbed_lattice(cells, 0.1, seed)
    nl = _setup(system, params)
    ref = compute_ref(system, nl, params)
    parts = []
    ok = True
    for prec in ("single", "mixed"):
        ef = compute_v2(system, nl, params, get_backend(8, prec))
        de = abs(ef.energy - ref.energy) / abs(ref.energy)
        ok &= de < PRECISION_RTOL
        parts.append(f"{prec} dE/E {de:.2e}")
    return CheckResult("precision-gap", bool(ok),
                       ", ".join(parts) + f" (< {PRECISION_RTOL:g})")


def check_lattice_energy(params):
    """Perfect silicon crystal against the closed-form cohesive energy."""
    from .potential_ref import angle_g, bond_order, pair_terms

    a0 = 5.431
    system = make_diamond_lattice(2, 2, 2, a0=a0)
    nl = _setup(system, params)
    e_num = compute_ref(system, nl, params).energy / system.n
    entry = params.entry(0, 0, 0)
    r = a0 * np.sqrt(3.0) / 4.0
    fr, _, fa, _ = pair_terms(r, entry)
    g, _ = angle_g(-1.0 / 3.0, entry)
    b, _ = bond_order(3.0 * g, entry)
    e_exact = 2.0 * (fr + b * fa)
    de = abs(e_num - e_exact) / abs(e_exact)
    return CheckResult("lattice-energy", de < ENERGY_RTOL,
                       f"{e_num:.6f} eV/atom vs closed form {e_exact:.6f}")


def run_suite(params, seed=1, cells=(4, 4, 4)):
    """Run every check; ``cells`` sizes the larger of the generated systems."""
    cells = tuple(cells)
    return [
        check_lattice_energy(params),
        check_force_gradient(params, seed),
        check_newton(params, cells, seed),
        check_scheme_equivalence(params, seed, cells),
        check_kmax_sweep(params, seed),
        check_filter(params, seed, cells),
        check_precision_gap(params, seed, cells),
    ]
