"""Domain types, units and the Tersoff parameter table.

Units follow the "metal" convention used by standard Tersoff parameter files:
lengths in Angstrom, energies in eV, time in ps, masses in g/mol.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CompletenessError, ConfigurationError, ParseError, ValidationError

#: (g/mol) * (A/ps)^2 -> eV
MVV2E = 1.0364269e-4
#: Boltzmann constant in eV/K
KB = 8.617333e-5

MASSES = {"Si": 28.0855, "C": 12.011, "Ge": 72.630}


class PrecisionMode(enum.Enum):
    """Execution mode of a force evaluation.

    ``REF`` and ``OPT_D`` compute and accumulate in double, ``OPT_S`` does both
    in single, ``OPT_M`` computes in single but accumulates forces and energy
    in double.
    """

    REF = "ref"
    OPT_D = "double"
    OPT_S = "single"
    OPT_M = "mixed"

    @property
    def compute_dtype(self):
        return np.float32 if self in (PrecisionMode.OPT_S, PrecisionMode.OPT_M) else np.float64

    @property
    def accum_dtype(self):
        return np.float32 if self is PrecisionMode.OPT_S else np.float64

    @property
    def label(self):
        return {"ref": "Ref", "double": "Opt-D", "single": "Opt-S", "mixed": "Opt-M"}[self.value]

    @classmethod
    def parse(cls, text):
        key = str(text).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "ref": cls.REF,
            "double": cls.OPT_D, "d": cls.OPT_D, "optd": cls.OPT_D,
            "single": cls.OPT_S, "s": cls.OPT_S, "opts": cls.OPT_S,
            "mixed": cls.OPT_M, "m": cls.OPT_M, "optm": cls.OPT_M,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigurationError(f"unknown precision mode {text!r}") from None


@dataclass(frozen=True)
class SimulationBox:
    """Orthorhombic box anchored at the origin."""

    lengths: tuple[float, float, float]
    periodic: tuple[bool, bool, bool] = (True, True, True)

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        periodic = tuple(bool(p) for p in self.periodic)
        if len(lengths) != 3 or len(periodic) != 3:
            raise ConfigurationError("box needs three lengths and three periodic flags")
        if not all(math.isfinite(x) and x > 0 for x in lengths):
            raise ConfigurationError(f"box lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "periodic", periodic)

    @property
    def L(self):
        return np.array(self.lengths)

    @property
    def pbc(self):
        return np.array(self.periodic)

    def min_periodic_length(self):
        periodic = [L for L, p in zip(self.lengths, self.periodic) if p]
        return min(periodic) if periodic else math.inf

    def check_cutoff(self, cutoff):
        """Raise unless ``cutoff`` fits the minimum-image constraint."""
        if 2.0 * cutoff > self.min_periodic_length():
            raise ConfigurationError(
                f"box too small: periodic length {self.min_periodic_length():.6g} A "
                f"< 2 * (cutoff + skin) = {2.0 * cutoff:.6g} A")

    def wrap(self, positions):
        pos = np.array(positions, dtype=float, copy=True)
        for d in range(3):
            if self.periodic[d]:
                pos[..., d] -= self.lengths[d] * np.floor(pos[..., d] / self.lengths[d])
                # x - L*floor(x/L) can round up to exactly L
                pos[..., d][pos[..., d] >= self.lengths[d]] = 0.0
        return pos


def minimum_image(delta, box):
    """Map displacement(s) onto the nearest periodic image.

    Periodic components end up in ``[-L/2, L/2)``; other components are
    returned unchanged. Works on a single vector or any ``(..., 3)`` array.
    """
    out = np.array(delta, dtype=float, copy=True)
    for d in range(3):
        if box.periodic[d]:
            L = box.lengths[d]
            out[..., d] -= L * np.floor(out[..., d] / L + 0.5)
    return out


@dataclass
class AtomSystem:
    """Mutable simulation state; per-atom arrays are ``(N, 3)`` float64."""

    positions: np.ndarray
    species: np.ndarray
    box: SimulationBox
    species_masses: Mapping[int, float]
    velocities: np.ndarray | None = None
    forces: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.species = np.ascontiguousarray(self.species, dtype=np.int64).reshape(-1)
        if self.velocities is None:
            self.velocities = np.zeros((n, 3))
        if self.forces is None:
            self.forces = np.zeros((n, 3))
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64).reshape(-1, 3)
        self.forces = np.ascontiguousarray(self.forces, dtype=np.float64).reshape(-1, 3)
        self.species_masses = {int(k): float(v) for k, v in dict(self.species_masses).items()}
        if not (len(self.species) == len(self.velocities) == len(self.forces) == n):
            raise ConfigurationError("per-atom arrays must all have length N")
        if n:
            nspec = int(self.species.max()) + 1
            if self.species.min() < 0 or set(range(nspec)) - set(self.species_masses):
                raise ConfigurationError("species ids must be dense 0..S-1, each with a mass")
        if not np.all(np.isfinite(self.positions)):
            raise ConfigurationError("non-finite atom position")
        self.positions = self.box.wrap(self.positions)

    @property
    def n(self):
        return len(self.positions)

    @property
    def masses(self):
        """Per-atom masses in g/mol."""
        table = np.array([self.species_masses[s] for s in range(max(self.species_masses) + 1)])
        return table[self.species]

    def copy(self):
        return AtomSystem(self.positions.copy(), self.species.copy(), self.box,
                          dict(self.species_masses), self.velocities.copy(), self.forces.copy())


@dataclass(frozen=True)
class TersoffEntry:
    """Parameters for one ordered species triplet.

    Field order is the parameter-file order. ``eta`` is the bond-order
    exponent usually written ``n``; ``h`` is ``cos(theta0)``.
    """

    m: int
    gamma: float
    lambda3: float
    c: float
    d: float
    h: float
    eta: float
    beta: float
    lambda2: float
    B: float
    R: float
    D: float
    lambda1: float
    A: float

    def validate(self, triplet=("?", "?", "?")):
        name = " ".join(triplet)
        vals = self.as_tuple()
        for f, v in zip(FIELD_NAMES, vals):
            if not math.isfinite(v):
                raise ValidationError(f"{name}: field {f} is not finite")
        checks = [
            ("m", self.m in (1, 3), "must be 1 or 3"),
            ("D", self.D > 0, "must be > 0"),
            ("R", self.R > self.D, "must exceed D"),
            ("eta", self.eta > 0, "must be > 0"),
            ("beta", self.beta >= 0, "must be >= 0"),
            ("d", self.d != 0, "must be nonzero"),
            ("A", self.A >= 0, "must be >= 0"),
            ("B", self.B >= 0, "must be >= 0"),
            ("gamma", self.gamma >= 0, "must be >= 0"),
        ]
        for fname, ok, what in checks:
            if not ok:
                raise ValidationError(
                    f"{name}: field {fname}={getattr(self, fname)!r} {what}")
        return self

    @property
    def cutoff(self):
        return self.R + self.D

    def as_tuple(self):
        return tuple(getattr(self, f) for f in FIELD_NAMES)

    def as_row(self):
        return np.array(self.as_tuple(), dtype=np.float64)


FIELD_NAMES = tuple(f.name for f in fields(TersoffEntry))
NFIELDS = len(FIELD_NAMES)


@dataclass(frozen=True)
class ParamTable:
    """Dense ``S x S x S`` table of :class:`TersoffEntry` keyed by (si, sj, sk)."""

    species_names: tuple[str, ...]
    entries: tuple[TersoffEntry, ...]
    _raw: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.species_names)
        s = len(names)
        if s == 0:
            raise CompletenessError("parameter table declares no species")
        if len(set(names)) != s:
            raise ValidationError(f"duplicate species names in {names}")
        if len(self.entries) != s ** 3:
            raise CompletenessError(
                f"{len(self.entries)} entries for {s} species, expected {s ** 3}")
        object.__setattr__(self, "species_names", names)
        object.__setattr__(self, "entries", tuple(self.entries))
        for idx, e in enumerate(self.entries):
            e.validate(self.triplet_names(idx))
        raw = np.array([e.as_tuple() for e in self.entries], dtype=np.float64)
        raw.setflags(write=False)
        object.__setattr__(self, "_raw", raw)

    @property
    def nspecies(self):
        return len(self.species_names)

    @property
    def r_cut_max(self):
        return float(np.max(self._raw[:, FIELD_NAMES.index("R")] + self._raw[:, FIELD_NAMES.index("D")]))

    def index(self, si, sj, sk):
        s = self.nspecies
        return (si * s + sj) * s + sk

    def triplet_names(self, idx):
        s = self.nspecies
        return (self.species_names[idx // (s * s)], self.species_names[(idx // s) % s],
                self.species_names[idx % s])

    def entry(self, si, sj, sk):
        return self.entries[self.index(si, sj, sk)]

    def raw(self):
        """``(S**3, 14)`` float64 array of entries in file field order."""
        return self._raw

    def species_id(self, name):
        try:
            return self.species_names.index(name)
        except ValueError:
            raise ConfigurationError(f"species {name!r} not in parameter table") from None

    def dumps(self):
        """Serialize to the whitespace parameter-file format (lossless)."""
        out = io.StringIO()
        out.write("# " + " ".join(("e1", "e2", "e3") + FIELD_NAMES) + "\n")
        for idx, e in enumerate(self.entries):
            vals = [str(e.m)] + [repr(float(v)) for v in e.as_tuple()[1:]]
            out.write(" ".join(self.triplet_names(idx) + tuple(vals)) + "\n")
        return out.getvalue()


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_param_file(text, species: Sequence[str] | None = None):
    """Parse a Tersoff parameter file into a :class:`ParamTable`.

    Each entry is ``e1 e2 e3`` followed by 14 numbers; an entry may wrap
    onto continuation lines, as in the stock silicon file. ``#`` starts a
    comment. ``species`` selects and orders the declared species; by default
    every element named in the file is declared, in order of appearance.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")

    width = 3 + NFIELDS
    raw_entries = []  # (lineno, tokens)
    pending = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = line.split("#", 1)[0].split()
        if not toks:
            continue
        if pending is not None:
            if not _is_number(toks[0]):
                start, got = pending
                raise ParseError(f"expected {width} fields, got {len(got)}", start)
            pending[1].extend(toks)
        else:
            if _is_number(toks[0]):
                raise ParseError(f"entry must start with three element names, got {toks[0]!r}", lineno)
            pending = (lineno, list(toks))
        start, got = pending
        if len(got) > width:
            raise ParseError(f"expected {width} fields, got {len(got)}", start)
        if len(got) == width:
            raw_entries.append(pending)
            pending = None
    if pending is not None:
        raise ParseError(f"expected {width} fields, got {len(pending[1])}", pending[0])

    parsed = {}
    order = []
    for lineno, toks in raw_entries:
        key = tuple(toks[:3])
        for name in key:
            if _is_number(name):
                raise ParseError(f"element name expected, got {name!r}", lineno)
            if name not in order:
                order.append(name)
        vals = []
        for fname, tok in zip(FIELD_NAMES, toks[3:]):
            try:
                vals.append(float(tok))
            except ValueError:
                raise ParseError(f"field {fname}: non-numeric value {tok!r}", lineno) from None
        m = vals[0]
        if m != int(m):
            raise ValidationError(f"{' '.join(key)}: field m={m!r} must be 1 or 3")
        vals[0] = int(m)
        if key in parsed:
            raise ParseError(f"duplicate entry for triplet {' '.join(key)}", lineno)
        parsed[key] = TersoffEntry(*vals).validate(key)

    names = tuple(species) if species is not None else tuple(order)
    if not names:
        raise CompletenessError("parameter file contains no entries")
    entries = []
    for a in names:
        for b in names:
            for c in names:
                try:
                    entries.append(parsed[(a, b, c)])
                except KeyError:
                    raise CompletenessError(f"missing entry for triplet {a} {b} {c}") from None
    return ParamTable(names, tuple(entries))


def read_param_file(path, species=None):
    with open(path, "rb") as fh:
        return load_param_file(fh.read(), species)


def silicon_params():
    """The stock single-species silicon table shipped with the package."""
    from importlib import resources

    return load_param_file(resources.files(__package__).joinpath("data/Si.tersoff").read_bytes())
