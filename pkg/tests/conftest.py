import numpy as np
import pytest

from tersoffvec import AtomSystem, SimulationBox, silicon_params
from tersoffvec.neighbor import build_neighbor_list
from tersoffvec.verify import perturbed_lattice

SI_LINE = "Si Si Si 3.0 1.0 1.3258 4.8381 2.0417 0.0000 22.956 0.33675 1.3258 95.373 3.0 0.2 3.2394 3264.7\n"


@pytest.fixture(scope="session")
def si():
    return silicon_params()


@pytest.fixture(scope="session")
def lattice64(si):
    s = perturbed_lattice((2, 2, 2), 0.1, seed=7)
    return s, build_neighbor_list(s, si.r_cut_max, 1.0)


@pytest.fixture(scope="session")
def lattice512(si):
    s = perturbed_lattice((4, 4, 4), 0.1, seed=11)
    return s, build_neighbor_list(s, si.r_cut_max, 1.0)


def open_system(positions, masses=28.0855):
    """Atoms in a large non-periodic box (no images)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    box = SimulationBox((100.0, 100.0, 100.0), (False, False, False))
    return AtomSystem(pos + 50.0, np.zeros(len(pos), int), box, {0: masses})


_ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Record a one-line acceptance verdict, printed again in the summary."""

    def emit(line):
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
