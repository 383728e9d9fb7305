import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SI_LINE
from tersoffvec import (AtomSystem, ParamTable, PrecisionMode, SimulationBox, TersoffEntry,
                        load_param_file, minimum_image, silicon_params)
from tersoffvec.errors import (CompletenessError, ConfigurationError, ParseError,
                               ValidationError)
from tersoffvec.model import FIELD_NAMES, KB, MVV2E


def test_units():
    assert MVV2E == 1.0364269e-4
    assert KB == 8.617333e-5


def test_single_entry_file():
    t = load_param_file(SI_LINE.encode())
    assert t.species_names == ("Si",)
    assert len(t.entries) == 1
    assert t.r_cut_max == pytest.approx(3.0 + 0.2, abs=0)
    e = t.entry(0, 0, 0)
    assert e.m == 3
    assert (e.gamma, e.lambda3, e.c, e.d, e.h) == (1.0, 1.3258, 4.8381, 2.0417, 0.0)
    assert (e.eta, e.beta, e.lambda2, e.B) == (22.956, 0.33675, 1.3258, 95.373)
    assert (e.R, e.D, e.lambda1, e.A) == (3.0, 0.2, 3.2394, 3264.7)


def test_comments_and_blank_lines():
    text = "# header\n\n   # indented comment\n" + SI_LINE.rstrip() + "  # trailing\n\n#end\n"
    t = load_param_file(text)
    assert t == load_param_file(SI_LINE)


def test_bundled_silicon_file_wraps_lines():
    t = silicon_params()
    assert t == load_param_file(SI_LINE)


def test_wrong_field_count_reports_line():
    text = "# c\n\nSi Si Si 3.0 1.0 1.3258\n"
    with pytest.raises(ParseError, match="line 3"):
        load_param_file(text)


def test_non_numeric_field_reports_line():
    bad = SI_LINE.replace("4.8381", "four")
    with pytest.raises(ParseError, match="line 2"):
        load_param_file("# x\n" + bad)


def test_duplicate_triplet():
    with pytest.raises(ParseError, match="line 2"):
        load_param_file(SI_LINE + SI_LINE)


def _two_species_lines():
    lines = []
    for a in "AB":
        for b in "AB":
            for c in "AB":
                lines.append(f"{a} {b} {c}" + SI_LINE[len("Si Si Si"):])
    return lines


def test_completeness_error_on_missing_triplet():
    lines = _two_species_lines()
    assert len(load_param_file("".join(lines)).entries) == 8
    with pytest.raises(CompletenessError, match="B A B"):
        load_param_file("".join(lines[:5] + lines[6:]))


@pytest.mark.parametrize("field,value", [("d", "0.0"), ("D", "-0.2"), ("R", "0.1"),
                                         ("m", "2.0"), ("eta", "0.0"), ("A", "-1.0")])
def test_validation_names_field_and_triplet(field, value):
    toks = SI_LINE.split()
    toks[3 + FIELD_NAMES.index(field)] = value
    with pytest.raises(ValidationError, match=rf"Si Si Si.*{field}"):
        load_param_file(" ".join(toks))


def test_species_subset_selection():
    text = "".join(_two_species_lines())
    t = load_param_file(text, species=["B"])
    assert t.species_names == ("B",)


def test_index_layout():
    t = load_param_file("".join(_two_species_lines()))
    for idx in range(8):
        a, b, c = t.triplet_names(idx)
        si, sj, sk = (t.species_id(x) for x in (a, b, c))
        assert t.index(si, sj, sk) == idx


def test_r_cut_max_is_recomputed():
    lines = _two_species_lines()
    lines[3] = lines[3].replace(" 3.0 0.2 ", " 3.4 0.3 ")
    t = load_param_file("".join(lines))
    assert t.r_cut_max == pytest.approx(3.7)


positive = st.floats(0.01, 100.0, allow_nan=False)


@st.composite
def entries(draw):
    D = draw(st.floats(0.05, 1.0))
    return TersoffEntry(m=draw(st.sampled_from([1, 3])), gamma=draw(positive),
                        lambda3=draw(st.floats(-5, 5)), c=draw(positive),
                        d=draw(st.floats(0.1, 50)), h=draw(st.floats(-1, 1)), eta=draw(positive),
                        beta=draw(st.floats(0, 10)), lambda2=draw(positive), B=draw(positive),
                        R=D + draw(st.floats(0.5, 4.0)), D=D, lambda1=draw(positive),
                        A=draw(positive))


@settings(max_examples=60, deadline=None)
@given(st.lists(entries(), min_size=8, max_size=8))
def test_roundtrip_is_lossless(ents):
    t = ParamTable(("X", "Y"), tuple(ents))
    back = load_param_file(t.dumps())
    assert back == t
    assert np.array_equal(back.raw(), t.raw())


def test_precision_mode_dtypes():
    assert PrecisionMode.REF.compute_dtype is np.float64
    assert PrecisionMode.OPT_D.accum_dtype is np.float64
    assert PrecisionMode.OPT_S.compute_dtype is np.float32
    assert PrecisionMode.OPT_S.accum_dtype is np.float32
    assert PrecisionMode.OPT_M.compute_dtype is np.float32
    assert PrecisionMode.OPT_M.accum_dtype is np.float64
    assert PrecisionMode.parse("Opt-M") is PrecisionMode.OPT_M
    with pytest.raises(ConfigurationError):
        PrecisionMode.parse("quad")


def test_minimum_image_examples():
    box = SimulationBox((10.0, 10.0, 10.0))
    assert np.array_equal(minimum_image([0, 0, 0], box), [0, 0, 0])
    assert np.array_equal(minimum_image([9, 0, 0], box), [-1, 0, 0])
    assert np.array_equal(minimum_image([5, 0, 0], box), [-5, 0, 0])
    open_x = SimulationBox((10.0, 10.0, 10.0), (False, True, True))
    assert np.array_equal(minimum_image([9, 9, 0], open_x), [9, -1, 0])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.tuples(finite, finite, finite), st.tuples(*[st.floats(1.0, 50.0)] * 3))
def test_minimum_image_properties(delta, lengths):
    box = SimulationBox(lengths)
    once = minimum_image(delta, box)
    L = np.array(lengths)
    assert np.all(once >= -L / 2) and np.all(once < L / 2)
    assert np.array_equal(minimum_image(once, box), once)
    assert np.all(np.abs(once) <= np.abs(np.array(delta)) + 1e-12)
    k = (np.array(delta) - once) / L
    assert np.allclose(k, np.round(k), atol=1e-9)


def test_box_invariants():
    with pytest.raises(ConfigurationError):
        SimulationBox((0.0, 1.0, 1.0))
    box = SimulationBox((10.0, 12.0, 20.0), (True, True, False))
    box.check_cutoff(5.0)
    with pytest.raises(ConfigurationError, match="box too small"):
        box.check_cutoff(5.01)


def test_atom_system_invariants():
    box = SimulationBox((10.0, 10.0, 10.0))
    s = AtomSystem([[11.0, -1.0, 5.0]], [0], box, {0: 1.0})
    assert np.allclose(s.positions, [[1.0, 9.0, 5.0]])
    assert np.all(s.positions >= 0) and np.all(s.positions < 10.0)
    with pytest.raises(ConfigurationError):
        AtomSystem([[0, 0, 0], [1, 1, 1]], [0, 2], box, {0: 1.0, 2: 1.0})
    with pytest.raises(ConfigurationError):
        AtomSystem([[0, 0, 0]], [0], box, {0: 1.0}, velocities=np.zeros((2, 3)))
