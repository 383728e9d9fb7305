"""Velocity-Verlet integration, lattice setup and the timed benchmark loop."""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .model import KB, MASSES, MVV2E, AtomSystem, PrecisionMode, SimulationBox
from .neighbor import build_neighbor_list, needs_rebuild
from .potential_opt import SCHEMES, evaluate, select_scheme
from .simd import get_backend

log = logging.getLogger(__name__)

SI_LATTICE = 5.431

_DIAMOND_BASIS = np.array([
    [0.00, 0.00, 0.00], [0.00, 0.50, 0.50], [0.50, 0.00, 0.50], [0.50, 0.50, 0.00],
    [0.25, 0.25, 0.25], [0.25, 0.75, 0.75], [0.75, 0.25, 0.75], [0.75, 0.75, 0.25],
])


def make_diamond_lattice(nx, ny, nz, a0=SI_LATTICE, species=0, mass=MASSES["Si"],
                         min_cutoff=None):
    """Diamond-cubic crystal of ``8 * nx * ny * nz`` atoms in a periodic box.

    ``min_cutoff`` (typically cutoff + skin) is checked against the box so a
    lattice too small for minimum image is rejected up front.
    """
    if min(nx, ny, nz) < 1:
        raise ConfigurationError(f"cell counts must be >= 1, got {(nx, ny, nz)}")
    cells = np.array([(i, j, k) for i in range(nx) for j in range(ny) for k in range(nz)], float)
    pos = ((cells[:, None, :] + _DIAMOND_BASIS[None, :, :]) * a0).reshape(-1, 3)
    box = SimulationBox((nx * a0, ny * a0, nz * a0))
    if min_cutoff is not None:
        box.check_cutoff(min_cutoff)
    masses = {s: mass for s in range(species + 1)}
    return AtomSystem(pos, np.full(len(pos), species), box, masses)


def kinetic_energy(system):
    v2 = np.einsum("ij,ij->i", system.velocities, system.velocities)
    return 0.5 * MVV2E * float(np.dot(system.masses, v2))


def degrees_of_freedom(system):
    return max(3 * system.n - 3, 0)


def temperature(system):
    dof = degrees_of_freedom(system)
    return 2.0 * kinetic_energy(system) / (dof * KB) if dof else 0.0


def momentum(system):
    return system.masses @ system.velocities


def init_velocities(system, T, seed=12345):
    """Maxwell-Boltzmann velocities at ``T`` with zero net momentum.

    Draws come from numpy's PCG64 generator seeded with ``seed``, so the
    result is reproducible bit-for-bit. After zeroing the momentum the
    velocities are rescaled so the instantaneous temperature equals ``T``.
    """
    if T < 0:
        raise ConfigurationError(f"temperature must be >= 0, got {T}")
    rng = np.random.Generator(np.random.PCG64(seed))
    m = system.masses
    v = rng.standard_normal((system.n, 3)) * np.sqrt(KB * T / (m * MVV2E))[:, None]
    if system.n:
        v -= (m @ v) / m.sum()
    system.velocities = v
    t_now = temperature(system)
    if T == 0 or t_now == 0:
        system.velocities = np.zeros_like(v)
    else:
        system.velocities = v * math.sqrt(T / t_now)
        # the rescale can leave a few ulps of net momentum behind
        system.velocities -= (m @ system.velocities) / m.sum()


@dataclass
class RunConfig:
    steps: int = 1000
    dt: float = 0.001
    skin: float = 1.0
    rebuild_check_every: int = 1
    k_max: int = 16
    scheme: str = "auto"
    precision: PrecisionMode = PrecisionMode.OPT_D
    backend_width: int = 4
    workers: int = 1
    thermo_every: int = 100
    seed: int = 12345
    temperature: float = 300.0
    use_filter: bool = True

    def __post_init__(self):
        if not isinstance(self.precision, PrecisionMode):
            self.precision = PrecisionMode.parse(self.precision)
        problems = []
        if self.steps < 0:
            problems.append(f"steps={self.steps} must be >= 0")
        if not self.dt > 0:
            problems.append(f"dt={self.dt} must be > 0")
        if self.skin < 0:
            problems.append(f"skin={self.skin} must be >= 0")
        if self.k_max < 0:
            problems.append(f"kmax={self.k_max} must be >= 0")
        if self.workers < 1:
            problems.append(f"workers={self.workers} must be >= 1")
        if self.rebuild_check_every < 1:
            problems.append("rebuild_check_every must be >= 1")
        if self.thermo_every < 1:
            problems.append("thermo_every must be >= 1")
        if self.scheme != "auto" and self.scheme not in SCHEMES:
            problems.append(f"unknown scheme {self.scheme!r}")
        if self.scheme in ("ref", "scalar-opt") and self.precision not in (
                PrecisionMode.REF, PrecisionMode.OPT_D):
            problems.append(f"scheme {self.scheme} runs in double precision only")
        if self.scheme not in ("ref", "scalar-opt") and self.precision is PrecisionMode.REF:
            problems.append("precision 'ref' requires scheme 'ref'")
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def resolved_scheme(self):
        if self.scheme == "auto":
            return select_scheme(self.backend_width, self.precision)
        return self.scheme

    @property
    def mode(self):
        """Execution mode label (Ref, Opt-D, Opt-S, Opt-M)."""
        if self.scheme == "ref":
            return PrecisionMode.REF
        return self.precision


class ForceEvaluator:
    """Binds a scheme, backend and k_max to a parameter table."""

    def __init__(self, params, config):
        self.params = params
        self.scheme = config.resolved_scheme
        self.k_max = config.k_max
        self.workers = config.workers
        self.use_filter = config.use_filter
        self.backend = None
        if self.scheme not in ("ref", "scalar-opt"):
            self.backend = get_backend(config.backend_width, config.precision)

    def __call__(self, system, nlist):
        return evaluate(self.scheme, system, nlist, self.params, self.backend, self.k_max,
                        self.workers, self.use_filter)


@dataclass
class EngineState:
    evaluator: ForceEvaluator
    params: object
    skin: float
    rebuild_check_every: int = 1
    nlist: object = None
    potential_energy: float = 0.0
    step: int = 0
    rebuilds: int = 0

    def rebuild(self, system):
        self.nlist = build_neighbor_list(system, self.params.r_cut_max, self.skin)
        self.rebuilds += 1

    def compute_forces(self, system):
        if self.nlist is None or needs_rebuild(self.nlist, system):
            self.rebuild(system)
        ef = self.evaluator(system, self.nlist)
        system.forces = ef.forces
        self.potential_energy = ef.energy
        return ef


def make_state(system, params, config):
    state = EngineState(ForceEvaluator(params, config), params, config.skin,
                        config.rebuild_check_every)
    state.rebuild(system)
    state.compute_forces(system)
    return state


def vv_step(system, state, dt):
    """One velocity-Verlet step; ``system.forces`` must match the positions."""
    inv_m = 1.0 / (system.masses * MVV2E)
    system.velocities += 0.5 * dt * system.forces * inv_m[:, None]
    system.positions = system.box.wrap(system.positions + dt * system.velocities)
    state.step += 1
    if state.step % state.rebuild_check_every == 0 and needs_rebuild(state.nlist, system):
        state.rebuild(system)
    ef = state.evaluator(system, state.nlist)
    system.forces = ef.forces
    state.potential_energy = ef.energy
    system.velocities += 0.5 * dt * system.forces * inv_m[:, None]
    return ef


@dataclass
class ThermoSample:
    step: int
    time_ps: float
    temp_K: float
    pe_eV: float
    ke_eV: float
    etot_eV: float
    momentum: tuple = (0.0, 0.0, 0.0)
    force_sum: tuple = (0.0, 0.0, 0.0)


CSV_HEADER = "step,time_ps,temp_K,pe_eV,ke_eV,etot_eV"


@dataclass
class RunReport:
    samples: list = field(default_factory=list)
    ns_per_day: float = 0.0
    wall_seconds: float = 0.0
    scheme: str = ""
    width: int = 1
    precision: str = ""
    rebuilds: int = 0
    natoms: int = 0

    def to_csv(self):
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for s in self.samples:
            row = [str(s.step)] + [repr(float(x)) for x in
                                   (s.time_ps, s.temp_K, s.pe_eV, s.ke_eV, s.etot_eV)]
            out.write(",".join(row) + "\n")
        out.write(f"ns_per_day,{self.ns_per_day!r}\n")
        out.write(f"scheme,{self.scheme}\nwidth,{self.width}\nprecision,{self.precision}\n")
        return out.getvalue()

    @property
    def pe(self):
        return np.array([s.pe_eV for s in self.samples])

    @property
    def etot(self):
        return np.array([s.etot_eV for s in self.samples])


def _sample(system, state, dt):
    ke = kinetic_energy(system)
    pe = state.potential_energy
    return ThermoSample(state.step, state.step * dt, temperature(system), pe, ke, pe + ke,
                        tuple(momentum(system)), tuple(system.forces.sum(axis=0)))


def run(system, config, params, sample_every=None):
    """Integrate ``config.steps`` steps and report thermodynamics and ns/day.

    Setup (neighbor list, first force pass, kernel compilation) and
    teardown are outside the timed region; rebuilds, force passes and
    integration are inside it.
    """
    sample_every = sample_every or config.thermo_every
    state = make_state(system, params, config)
    report = RunReport(scheme=config.resolved_scheme,
                       width=1 if config.resolved_scheme in ("ref", "scalar-opt")
                       else config.backend_width,
                       precision=config.mode.value, natoms=system.n)
    report.samples.append(_sample(system, state, config.dt))
    rebuilds0 = state.rebuilds
    t0 = time.perf_counter()
    for step in range(1, config.steps + 1):
        vv_step(system, state, config.dt)
        if step % sample_every == 0 or step == config.steps:
            report.samples.append(_sample(system, state, config.dt))
    wall = time.perf_counter() - t0
    report.wall_seconds = wall
    report.rebuilds = state.rebuilds - rebuilds0
    sim_ns = config.steps * config.dt * 1e-3
    report.ns_per_day = sim_ns / wall * 86400.0 if wall > 0 and config.steps else 0.0
    log.info("%d steps of %d atoms in %.3f s (%.4g ns/day, %d rebuilds)", config.steps,
             system.n, wall, report.ns_per_day, report.rebuilds)
    return report
