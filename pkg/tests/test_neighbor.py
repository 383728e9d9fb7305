import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import open_system
from tersoffvec import AtomSystem, SimulationBox
from tersoffvec.errors import ConfigurationError
from tersoffvec.model import minimum_image
from tersoffvec.neighbor import (brute_force_pairs, build_neighbor_list, filter_all,
                                 filter_segment, needs_rebuild)


def random_box(n, L, seed, periodic=(True, True, True)):
    rng = np.random.default_rng(seed)
    return AtomSystem(rng.uniform(0, L, (n, 3)), np.zeros(n, int),
                      SimulationBox((L, L, L), periodic), {0: 1.0})


def check_invariants(nl, system):
    for i in range(system.n):
        seg = nl.segment(i)
        assert i not in seg
        assert len(set(seg.tolist())) == len(seg)
        assert np.all(np.diff(seg) > 0)
        d = minimum_image(system.positions[seg] - system.positions[i], system.box)
        assert np.all(np.linalg.norm(d, axis=1) <= nl.build_cutoff)
    pairs = nl.pairs()
    assert all((j, i) in pairs for i, j in pairs)


def test_pair_inside_build_cutoff():
    s = open_system([[0, 0, 0], [2.0, 0, 0]])
    nl = build_neighbor_list(s, 3.0, 0.3)
    assert nl.segment(0).tolist() == [1]
    assert nl.segment(1).tolist() == [0]
    assert nl.build_cutoff == pytest.approx(3.3)


def test_pair_outside_build_cutoff():
    s = open_system([[0, 0, 0], [3.5, 0, 0]])
    nl = build_neighbor_list(s, 3.0, 0.3)
    assert len(nl.segment(0)) == 0 and len(nl.segment(1)) == 0


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("periodic", [(True, True, True), (True, False, True)])
def test_matches_brute_force(seed, periodic):
    s = random_box(64, 9.0, seed, periodic)
    nl = build_neighbor_list(s, 3.2, 1.0)
    assert nl.pairs() == brute_force_pairs(s, 4.2)
    check_invariants(nl, s)


def test_larger_random_box_many_cells():
    s = random_box(600, 21.0, 3)
    nl = build_neighbor_list(s, 3.2, 1.0)
    assert nl.pairs() == brute_force_pairs(s, 4.2)


def test_box_too_small_is_rejected():
    s = random_box(8, 5.431, 0)
    with pytest.raises(ConfigurationError, match="box too small"):
        build_neighbor_list(s, 3.2, 1.0)


def test_deterministic():
    s = random_box(100, 12.0, 4)
    a = build_neighbor_list(s, 3.2, 1.0)
    b = build_neighbor_list(s.copy(), 3.2, 1.0)
    assert np.array_equal(a.offsets, b.offsets)
    assert np.array_equal(a.neighbors, b.neighbors)


def test_needs_rebuild_threshold():
    s = random_box(20, 12.0, 5)
    nl = build_neighbor_list(s, 3.0, 1.0)
    assert not needs_rebuild(nl, s)
    moved = s.copy()
    shift = np.zeros((20, 3))
    shift[3, 1] = 0.51
    moved.positions = moved.box.wrap(moved.positions + shift)
    assert needs_rebuild(nl, moved)
    exact = open_system([[0, 0, 0], [2.0, 0, 0]])
    nl2 = build_neighbor_list(exact, 3.0, 1.0)
    exact.positions = exact.positions + np.array([[0.5, 0, 0], [0, 0, 0]])
    assert not needs_rebuild(nl2, exact)
    exact.positions = exact.positions + np.array([[1e-9, 0, 0], [0, 0, 0]])
    assert needs_rebuild(nl2, exact)


def test_needs_rebuild_uses_minimum_image():
    s = AtomSystem([[9.9, 5, 5], [5, 5, 5]], [0, 0], SimulationBox((10.0,) * 3), {0: 1.0})
    nl = build_neighbor_list(s, 3.0, 1.0)
    s.positions = s.box.wrap(s.positions + [[0.2, 0, 0], [0, 0, 0]])
    assert s.positions[0, 0] == pytest.approx(0.1)
    assert not needs_rebuild(nl, s)


def test_filter_segment_examples():
    s = open_system([[0, 0, 0], [1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.6], [3.9, 0, 0]])
    nl = build_neighbor_list(s, 3.2, 1.0)
    assert filter_segment(nl, 0, s, 10.0).tolist() == nl.segment(0).tolist()
    assert filter_segment(nl, 0, s, 3.2).tolist() == [1, 2]
    shell = open_system([[0, 0, 0], [3.5, 0, 0], [0, 3.7, 0]])
    nl = build_neighbor_list(shell, 3.2, 1.0)
    assert len(filter_segment(nl, 0, shell, 3.2)) == 0


def test_filter_equals_scalar_rescan():
    s = random_box(80, 10.0, 6)
    nl = build_neighbor_list(s, 3.2, 1.0)
    for i in range(s.n):
        want = [j for j in nl.segment(i)
                if np.linalg.norm(minimum_image(s.positions[j] - s.positions[i], s.box)) <= 3.2]
        assert filter_segment(nl, i, s, 3.2).tolist() == want


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 90))
def test_filter_reproduces_direct_build(seed, n):
    s = random_box(n, 9.0, seed)
    nl = build_neighbor_list(s, 3.2, 1.0)
    direct = build_neighbor_list(s, 3.2, 0.0)
    off, nb = filter_all(s.positions, nl, s.box, 3.2)
    assert np.array_equal(off, direct.offsets)
    assert np.array_equal(nb, direct.neighbors)
    pairs = {(i, j) for i in range(s.n) for j in nb[off[i]:off[i + 1]]}
    assert all((j, i) in pairs for i, j in pairs)
