"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also repeated in the terminal summary. Expect a few
minutes: the 10^4-step trajectories dominate.
"""

import numpy as np
import pytest

from tersoffvec.conformance import run_conformance
from tersoffvec.engine import RunConfig, init_velocities, make_diamond_lattice, run
from tersoffvec.neighbor import build_neighbor_list
from tersoffvec.potential_opt import compute_v1, compute_v2
from tersoffvec.potential_ref import compute_ref, fd_force_oracle
from tersoffvec.simd import SOFTWARE_WIDTHS, count_invocations, get_backend
from tersoffvec.verify import perturbed_lattice, relative_fd_error, scheme_matrix

LONG_STEPS = 10_000
SAMPLE_EVERY = 10


def verdict(ok, name, detail):
    return f"{'PASS' if ok else 'FAIL'} [{name}] {detail}"


def long_run(si, **kw):
    s = make_diamond_lattice(4, 4, 4)
    init_velocities(s, 300.0, seed=2024)
    cfg = RunConfig(steps=LONG_STEPS, dt=0.001, thermo_every=SAMPLE_EVERY, **kw)
    return run(s, cfg, si)


@pytest.fixture(scope="module")
def ref_run(si):
    return long_run(si, scheme="ref", precision="ref")


@pytest.fixture(scope="module")
def v2_double_run(si):
    return long_run(si, scheme="v2", backend_width=8, precision="double")


@pytest.fixture(scope="module")
def opt_s_run(si):
    return long_run(si, scheme="v2", backend_width=8, precision="single")


def test_1_single_precision_accuracy(ref_run, opt_s_run, report_line):
    dev = np.max(np.abs(opt_s_run.pe - ref_run.pe) / np.abs(ref_run.pe))
    ok = len(opt_s_run.samples) == len(ref_run.samples) and dev < 2e-5
    report_line(verdict(ok, "1 accuracy", f"Opt-S vs Ref max relative PE deviation {dev:.3e} "
                        f"over {LONG_STEPS} steps, {len(ref_run.samples)} samples (< 2e-05)"))
    assert ok


def test_2_scheme_equivalence(si, report_line):
    systems = [perturbed_lattice((2, 2, 2), 0.1, seed=101),
               perturbed_lattice((4, 4, 4), 0.1, seed=102)]
    rows = scheme_matrix(si, systems, SOFTWARE_WIDTHS, (0, 2, 16))
    de = max(r[4] for r in rows)
    df = max(r[5] for r in rows)
    ok = len(rows) == 2 * 3 * (1 + 2 * len(SOFTWARE_WIDTHS)) and de < 1e-12 and df < 1e-10
    report_line(verdict(ok, "2 scheme equivalence",
                        f"{len(rows)} combinations, worst dE/E {de:.2e} (< 1e-12), "
                        f"worst |dF| {df:.2e} eV/A (< 1e-10)"))
    assert ok


def test_3_force_gradient(si, report_line):
    s = perturbed_lattice((2, 2, 2), 0.1, seed=103)
    nl = build_neighbor_list(s, si.r_cut_max, 1.0)
    err = relative_fd_error(compute_ref(s, nl, si).forces, fd_force_oracle(s, nl, si, 1e-5))
    ok = s.n == 64 and err < 1e-6
    report_line(verdict(ok, "3 force gradient", f"64 atoms, h=1e-5 A, max relative error "
                        f"{err:.3e} (< 1e-06)"))
    assert ok


@pytest.mark.parametrize("which", ["ref", "v2-double"])
def test_4_conservation(which, ref_run, v2_double_run, report_line):
    rep = ref_run if which == "ref" else v2_double_run
    e = rep.etot
    drift = np.max(np.abs(e - e[0]) / abs(e[0]))
    fsum = max(np.abs(smp.force_sum).max() for smp in rep.samples)
    p = np.array([smp.momentum for smp in rep.samples])
    pdrift = np.abs(p - p[0]).max()
    ok = drift < 1e-4 and fsum < 1e-10 and pdrift < 1e-8
    report_line(verdict(ok, f"4 conservation {which}",
                        f"{LONG_STEPS} steps: energy drift {drift:.2e} (< 1e-04), "
                        f"max |sum F| {fsum:.2e} (< 1e-10), momentum drift {pdrift:.2e} "
                        f"(< 1e-08)"))
    assert ok


def test_5_filter_soundness(si, report_line):
    worst = 0.0
    for cells, seed in (((2, 2, 2), 104), ((4, 4, 4), 105)):
        s = perturbed_lattice(cells, 0.1, seed=seed)
        nl = build_neighbor_list(s, si.r_cut_max, 1.0)
        for fn, w in ((compute_v1, 4), (compute_v2, 8), (compute_v2, 16)):
            a = fn(s, nl, si, get_backend(w), use_filter=True)
            b = fn(s, nl, si, get_backend(w), use_filter=False)
            worst = max(worst, abs(a.energy - b.energy) / abs(b.energy),
                        np.abs(a.forces - b.forces).max() / np.abs(b.forces).max())
    ok = worst < 1e-12
    report_line(verdict(ok, "5 filter soundness",
                        f"filtered vs unfiltered worst relative difference {worst:.2e} (< 1e-12)"))
    assert ok


def test_6_fast_forward_instrumentation(report_line):
    rng = np.random.default_rng(6)
    le = strict = 0
    for case in range(100):
        w = int(SOFTWARE_WIDTHS[case % len(SOFTWARE_WIDTHS)])
        begin = rng.integers(0, 6, w)
        end = begin + rng.integers(0, 40, w)
        ready = rng.random((w, int(end.max()) + 1)) < rng.uniform(0.05, 0.9)
        n_all = count_invocations(begin, end, ready, "all")
        n_any = count_invocations(begin, end, ready, "any")
        le += n_all <= n_any
        strict += n_all < n_any
    ok = le == 100 and strict >= 1
    report_line(verdict(ok, "6 fast-forward", f"all-ready <= any-ready in {le}/100 cases, "
                        f"strictly fewer in {strict}"))
    assert ok


def test_7_backend_conformance(report_line):
    failures = {w: run_conformance(get_backend(w, "double"), cases=10_000, seed=w)
                for w in SOFTWARE_WIDTHS}
    bad = {w: dict(f) for w, f in failures.items() if f}
    ok = not bad
    report_line(verdict(ok, "7 backend conformance",
                        f"10000 cases x 6 blocks at W={list(SOFTWARE_WIDTHS)}, failures: "
                        f"{bad or 'none'}"))
    assert ok


def test_8_performance_smoke(si, report_line):
    """Non-gating: the line is reported, the test does not fail on speed."""
    steps = 3
    ns = {}
    for label, kw in (("Ref", dict(scheme="ref", precision="ref")),
                      ("Opt-D", dict(backend_width=8, precision="double")),
                      ("Opt-S", dict(backend_width=8, precision="single"))):
        s = make_diamond_lattice(16, 16, 16)
        init_velocities(s, 300.0, seed=8)
        ns[label] = run(s, RunConfig(steps=steps, thermo_every=steps, **kw), si).ns_per_day
    ok = ns["Opt-D"] >= ns["Ref"] and ns["Opt-S"] >= ns["Ref"]
    detail = ", ".join(f"{k} {v:.3g} ns/day" for k, v in ns.items())
    report_line(verdict(ok, "8 performance smoke (non-gating)",
                        f"32000 atoms, {steps} steps: {detail}; Opt-D/Ref "
                        f"{ns['Opt-D'] / ns['Ref']:.2f}x, Opt-S/Ref {ns['Opt-S'] / ns['Ref']:.2f}x"))
