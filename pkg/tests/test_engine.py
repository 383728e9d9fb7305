import numpy as np
import pytest

from conftest import open_system
from tersoffvec import PrecisionMode
from tersoffvec.engine import (CSV_HEADER, RunConfig, kinetic_energy, make_diamond_lattice,
                               init_velocities, make_state, momentum, run, temperature, vv_step)
from tersoffvec.errors import ConfigurationError
from tersoffvec.model import KB, MVV2E, minimum_image
from tersoffvec.neighbor import brute_force_pairs


def test_lattice_counts():
    assert make_diamond_lattice(1, 1, 1).n == 8
    assert make_diamond_lattice(4, 4, 4).n == 512


@pytest.mark.parametrize("cells", [(2, 2, 2), (3, 2, 4)])
def test_lattice_has_four_nearest_neighbors(cells):
    s = make_diamond_lattice(*cells)
    cut = 1.2 * 5.431 * np.sqrt(3) / 4
    counts = np.zeros(s.n, int)
    for i, j in brute_force_pairs(s, cut):
        counts[i] += 1
    assert np.all(counts == 4)


def test_lattice_box_too_small():
    with pytest.raises(ConfigurationError, match="box too small"):
        make_diamond_lattice(1, 1, 1, min_cutoff=4.2)


def test_init_velocities_zero_temperature():
    s = make_diamond_lattice(2, 2, 2)
    init_velocities(s, 0.0, seed=3)
    assert not s.velocities.any()
    with pytest.raises(ConfigurationError):
        init_velocities(s, -1.0)


@pytest.mark.parametrize("T", [1.0, 300.0, 1500.0])
def test_init_velocities_momentum_and_temperature(T):
    s = make_diamond_lattice(4, 4, 4)
    init_velocities(s, T, seed=5)
    assert np.abs(momentum(s)).max() < 1e-10
    assert temperature(s) == pytest.approx(T, rel=1e-9)


def test_init_velocities_reproducible():
    a, b = make_diamond_lattice(2, 2, 2), make_diamond_lattice(2, 2, 2)
    init_velocities(a, 300.0, seed=9)
    init_velocities(b, 300.0, seed=9)
    assert np.array_equal(a.velocities, b.velocities)
    init_velocities(b, 300.0, seed=10)
    assert not np.array_equal(a.velocities, b.velocities)


def test_temperature_uses_3n_minus_3():
    s = make_diamond_lattice(1, 1, 1)
    init_velocities(s, 100.0, seed=1)
    assert kinetic_energy(s) == pytest.approx(0.5 * (3 * 8 - 3) * KB * 100.0, rel=1e-12)


def _far_apart(si, velocities=None):
    s = open_system([[0, 0, 0], [20, 0, 0], [0, 20, 0]])
    if velocities is not None:
        s.velocities = np.asarray(velocities, float)
    return s, make_state(s, si, RunConfig(scheme="ref", precision="ref"))


def test_vv_step_zero_forces_zero_velocity(si):
    s, state = _far_apart(si)
    before = s.positions.copy()
    vv_step(s, state, 0.001)
    assert np.array_equal(s.positions, before)


def test_vv_step_uniform_drift(si):
    v = [[1.0, 0, 0], [0, -2.0, 0], [0.5, 0.5, 0.5]]
    s, state = _far_apart(si, v)
    before = s.positions.copy()
    vv_step(s, state, 0.002)
    assert np.allclose(s.positions - before, 0.002 * np.asarray(v), atol=1e-14)
    assert np.array_equal(s.velocities, np.asarray(v))


def test_vv_step_wraps_positions(si):
    s = make_diamond_lattice(3, 3, 3)
    s.velocities[:] = [-500.0, 0, 0]
    state = make_state(s, si, RunConfig(scheme="v1"))
    vv_step(s, state, 0.001)
    assert np.all(s.positions >= 0) and np.all(s.positions < s.box.lengths)


def test_dimer_energy_drift(si):
    s = open_system([[0, 0, 0], [2.45, 0, 0]])
    state = make_state(s, si, RunConfig(scheme="ref", precision="ref"))
    steps = 4000
    e0 = state.potential_energy + kinetic_energy(s)
    worst = 0.0
    for _ in range(steps):
        vv_step(s, state, 0.0005)
        worst = max(worst, abs(state.potential_energy + kinetic_energy(s) - e0))
    r = np.linalg.norm(minimum_image(s.positions[1] - s.positions[0], s.box))
    assert 2.0 < r < 2.9
    assert worst / abs(e0) / steps < 1e-8


def test_steps_zero_report(si):
    s = make_diamond_lattice(2, 2, 2)
    init_velocities(s, 300.0)
    rep = run(s, RunConfig(steps=0, scheme="ref", precision="ref"), si)
    assert len(rep.samples) == 1
    smp = rep.samples[0]
    assert smp.step == 0 and smp.time_ps == 0.0
    assert smp.temp_K == pytest.approx(300.0, rel=1e-9)
    assert smp.etot_eV == smp.pe_eV + smp.ke_eV
    assert rep.ns_per_day == 0.0


def test_sampling_schedule(si):
    s = make_diamond_lattice(2, 2, 2)
    rep = run(s, RunConfig(steps=25, thermo_every=10, scheme="v1"), si)
    assert [x.step for x in rep.samples] == [0, 10, 20, 25]
    assert rep.ns_per_day > 0


def test_ref_vs_v2_trajectories(si):
    reps = []
    for kw in (dict(scheme="ref", precision="ref"), dict(scheme="v2", backend_width=8)):
        s = make_diamond_lattice(4, 4, 4)
        init_velocities(s, 300.0, seed=21)
        reps.append(run(s, RunConfig(steps=100, thermo_every=1, **kw), si))
    a, b = reps
    assert len(a.samples) == 101
    assert np.max(np.abs(a.etot - b.etot) / np.abs(a.etot)) < 1e-10
    assert np.max(np.abs(a.pe - b.pe) / np.abs(a.pe)) < 1e-10


def test_neighbor_rebuilds_during_run(si):
    s = make_diamond_lattice(3, 3, 3)
    init_velocities(s, 3000.0, seed=2)
    rep = run(s, RunConfig(steps=200, skin=0.3, scheme="v2", backend_width=4), si)
    assert rep.rebuilds > 0
    e = rep.etot
    assert np.max(np.abs(e - e[0]) / abs(e[0])) < 1e-3


@pytest.mark.parametrize("kw", [
    dict(steps=-1), dict(dt=0.0), dict(skin=-0.1), dict(k_max=-2), dict(workers=0),
    dict(thermo_every=0), dict(scheme="v9"), dict(scheme="ref", precision="single"),
    dict(scheme="v1", precision="ref"), dict(precision="quad"),
])
def test_run_config_validation(kw):
    with pytest.raises(ConfigurationError):
        RunConfig(**kw)


def test_run_config_resolution():
    assert RunConfig(backend_width=16).resolved_scheme == "v2"
    assert RunConfig(backend_width=1).resolved_scheme == "v3"
    assert RunConfig(scheme="ref", precision="ref").mode is PrecisionMode.REF
    assert RunConfig(precision="mixed").mode is PrecisionMode.OPT_M


def test_csv_format(si):
    s = make_diamond_lattice(2, 2, 2)
    init_velocities(s, 300.0)
    rep = run(s, RunConfig(steps=3, thermo_every=1, scheme="v2", backend_width=8,
                           precision="mixed"), si)
    lines = rep.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    rows = [line.split(",") for line in lines[1:5]]
    assert [r[0] for r in rows] == ["0", "1", "2", "3"]
    for row, smp in zip(rows, rep.samples):
        assert float(row[3]) == smp.pe_eV and float(row[5]) == smp.etot_eV
    assert lines[5].startswith("ns_per_day,")
    assert lines[6:] == ["scheme,v2", "width,8", "precision,mixed"]


def test_single_precision_run_tracks_double(si):
    reps = []
    for prec in ("double", "single"):
        s = make_diamond_lattice(3, 3, 3)
        init_velocities(s, 300.0, seed=4)
        reps.append(run(s, RunConfig(steps=50, thermo_every=10, scheme="v2",
                                     backend_width=8, precision=prec), si))
    assert np.max(np.abs(reps[1].pe - reps[0].pe) / np.abs(reps[0].pe)) < 2e-5


def test_mass_units():
    # 1 amu * (1 A/ps)^2 in eV
    assert MVV2E == pytest.approx(1.0364269e-4, rel=1e-7)
