"""Core data model for chemical reaction networks with mass-action kinetics.

A network is a species registry plus a list of integer-stoichiometry
reactions.  Everything here is a pure function of its inputs; registries,
complexes, reactions and networks are immutable after construction and can
be shared freely.  Concentration vectors (:class:`State`) are the only
mutable objects.

The rate law is mass action throughout: reaction ``j`` with reactant
coefficients ``v_ij`` proceeds at ``k_j * prod_i x_i**v_ij``.  Other rate
laws are out of scope.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "CrnError",
    "Complex",
    "Reaction",
    "SpeciesRegistry",
    "State",
    "Crn",
    "reaction_rate",
    "rhs",
    "stoichiometric_matrix",
    "conservation_laws",
    "add_catalyst",
    "format_reaction",
    "parse_reaction",
    "crn_to_text",
    "crn_from_text",
]


class CrnError(ValueError):
    """Structural error in a reaction network definition."""


_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TERM_RE = re.compile(r"^\s*(\d+)?\s*([A-Za-z_][A-Za-z0-9_]*)\s*$")


def _check_name(name: str) -> str:
    if not _IDENT_RE.match(name):
        raise CrnError(f"invalid species identifier {name!r}")
    return name


class Complex:
    """Sparse linear combination of species with nonnegative integer coefficients.

    Absent species have coefficient zero.  The empty complex represents
    "nothing" (used for pure production or degradation).
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Optional[Mapping[str, int]] = None):
        clean: Dict[str, int] = {}
        for name, coeff in (terms or {}).items():
            _check_name(name)
            if coeff != int(coeff) or coeff < 0:
                raise CrnError(f"coefficient of {name!r} must be a nonnegative integer, got {coeff!r}")
            if coeff:
                clean[name] = int(coeff)
        self._terms = dict(sorted(clean.items()))

    @property
    def terms(self) -> Dict[str, int]:
        return dict(self._terms)

    def coeff(self, name: str) -> int:
        return self._terms.get(name, 0)

    def species(self) -> Tuple[str, ...]:
        return tuple(self._terms)

    def size(self) -> int:
        """Total multiplicity (sum of coefficients)."""
        return sum(self._terms.values())

    def adding(self, name: str, count: int = 1) -> "Complex":
        terms = dict(self._terms)
        terms[name] = terms.get(name, 0) + count
        return Complex(terms)

    def items(self):
        return self._terms.items()

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __eq__(self, other) -> bool:
        return isinstance(other, Complex) and self._terms == other._terms

    def __hash__(self) -> int:
        return hash(tuple(self._terms.items()))

    def __repr__(self) -> str:
        return f"Complex({self._terms!r})"


@dataclass(frozen=True)
class Reaction:
    """One irreversible reaction ``reactant -> product`` with a mass-action rate constant."""

    reactant: Complex
    product: Complex
    rate: float = 1.0
    phase: Optional[str] = None

    def __post_init__(self):
        if not self.rate > 0:
            raise CrnError(f"rate constant must be positive, got {self.rate}")
        if self.reactant == self.product:
            raise CrnError(f"reactant and product complexes are identical: {format_reaction(self)}")

    def species(self) -> Tuple[str, ...]:
        seen = dict.fromkeys(self.reactant.species())
        seen.update(dict.fromkeys(self.product.species()))
        return tuple(seen)

    def net(self) -> Dict[str, int]:
        """Net stoichiometry per species (product minus reactant), zeros dropped."""
        out: Dict[str, int] = {}
        for name in self.species():
            delta = self.product.coeff(name) - self.reactant.coeff(name)
            if delta:
                out[name] = delta
        return out

    def with_phase(self, phase: Optional[str]) -> "Reaction":
        return Reaction(self.reactant, self.product, self.rate, phase)

    def __str__(self) -> str:
        return format_reaction(self)


class SpeciesRegistry:
    """Ordered set of unique species names with optional semantic role tags."""

    def __init__(self, names: Sequence[str], roles: Optional[Mapping[str, str]] = None):
        names = tuple(names)
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise CrnError(f"duplicate species names: {dupes}")
        for name in names:
            _check_name(name)
        self._names = names
        self._index = {name: i for i, name in enumerate(names)}
        roles = dict(roles or {})
        for name in roles:
            if name not in self._index:
                raise CrnError(f"role assigned to unregistered species {name!r}")
        self._roles = roles

    @property
    def names(self) -> Tuple[str, ...]:
        return self._names

    @property
    def roles(self) -> Dict[str, str]:
        return dict(self._roles)

    def role(self, name: str) -> Optional[str]:
        return self._roles.get(name)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise CrnError(f"unregistered species {name!r}") from None

    def by_role(self, role: str) -> Tuple[str, ...]:
        return tuple(n for n in self._names if self._roles.get(n) == role)

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpeciesRegistry)
            and self._names == other._names
            and self._roles == other._roles
        )

    def __repr__(self) -> str:
        return f"SpeciesRegistry({len(self._names)} species)"


@dataclass
class State:
    """Nonnegative concentration vector indexed by a species registry."""

    registry: SpeciesRegistry
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.registry),):
            raise CrnError(
                f"state has {self.values.shape} entries for {len(self.registry)} species"
            )
        if np.any(self.values < 0):
            worst = self.registry.names[int(np.argmin(self.values))]
            raise CrnError(f"negative concentration for species {worst!r}")

    @classmethod
    def from_dict(
        cls,
        registry: SpeciesRegistry,
        concentrations: Mapping[str, float],
        default: float = 0.0,
    ) -> "State":
        values = np.full(len(registry), default, dtype=float)
        for name, value in concentrations.items():
            values[registry.index(name)] = value
        return cls(registry, values)

    def get(self, name: str) -> float:
        return float(self.values[self.registry.index(name)])

    def set(self, name: str, value: float) -> None:
        self.values[self.registry.index(name)] = value

    def copy(self) -> "State":
        return State(self.registry, self.values.copy())

    def to_dict(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(self.registry.names, self.values)}


class Crn:
    """A species registry together with an ordered list of reactions."""

    def __init__(self, registry: SpeciesRegistry, reactions: Sequence[Reaction]):
        self.registry = registry
        self.reactions = tuple(reactions)
        for j, rxn in enumerate(self.reactions):
            for name in rxn.species():
                if name not in registry:
                    raise CrnError(f"reaction {j} uses unregistered species {name!r}")

    @property
    def n_species(self) -> int:
        return len(self.registry)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    def phases(self) -> Tuple[str, ...]:
        seen = dict.fromkeys(r.phase for r in self.reactions if r.phase is not None)
        return tuple(seen)

    def reactions_in_phase(self, phase: Optional[str]) -> Tuple[int, ...]:
        return tuple(j for j, r in enumerate(self.reactions) if r.phase == phase)

    def __repr__(self) -> str:
        return f"Crn({self.n_species} species, {self.n_reactions} reactions)"


def reaction_rate(crn: Crn, state: State, j: int) -> float:
    """Mass-action rate of reaction ``j``: ``k_j * prod_i x_i**v_ij``."""
    if not 0 <= j < crn.n_reactions:
        raise CrnError(f"reaction index {j} out of range (have {crn.n_reactions})")
    if state.registry is not crn.registry and state.registry != crn.registry:
        raise CrnError("state registry does not match network registry")
    rxn = crn.reactions[j]
    rate = rxn.rate
    for name, coeff in rxn.reactant.items():
        rate *= state.values[crn.registry.index(name)] ** coeff
    return float(rate)


def rhs(crn: Crn, state: State) -> np.ndarray:
    """Time-derivative of every species concentration under mass action.

    Reference implementation: the stoichiometric columns weighted by the
    per-reaction rates.  Catalytic species (equal coefficient on both sides)
    contribute nothing.
    """
    out = np.zeros(crn.n_species)
    for j, rxn in enumerate(crn.reactions):
        rate = reaction_rate(crn, state, j)
        for name, delta in rxn.net().items():
            out[crn.registry.index(name)] += rate * delta
    return out


def stoichiometric_matrix(crn: Crn) -> np.ndarray:
    """Integer matrix (species x reactions); column j is product minus reactant."""
    gamma = np.zeros((crn.n_species, crn.n_reactions), dtype=int)
    for j, rxn in enumerate(crn.reactions):
        for name, delta in rxn.net().items():
            gamma[crn.registry.index(name), j] = delta
    return gamma


def conservation_laws(crn: Crn) -> List[Tuple[Fraction, ...]]:
    """Basis of the left null space of the stoichiometric matrix, over exact rationals.

    Every returned vector ``w`` satisfies ``w @ gamma == 0``, so ``w @ x(t)``
    is constant along any trajectory.  Computed by Gaussian elimination with
    Fraction arithmetic to avoid floating-point null-space ambiguity; intended
    for analysis of small and medium networks.
    """
    gamma = stoichiometric_matrix(crn)
    r, n = crn.n_reactions, crn.n_species
    # Row-reduce gamma^T (r x n); the null space of gamma^T is the left null space of gamma.
    rows = [[Fraction(int(gamma[i, j])) for i in range(n)] for j in range(r)]
    pivot_cols: List[int] = []
    row = 0
    for col in range(n):
        pivot = next((k for k in range(row, len(rows)) if rows[k][col] != 0), None)
        if pivot is None:
            continue
        rows[row], rows[pivot] = rows[pivot], rows[row]
        inv = rows[row][col]
        rows[row] = [v / inv for v in rows[row]]
        for k in range(len(rows)):
            if k != row and rows[k][col] != 0:
                factor = rows[k][col]
                rows[k] = [a - factor * b for a, b in zip(rows[k], rows[row])]
        pivot_cols.append(col)
        row += 1
        if row == len(rows):
            break
    free_cols = [c for c in range(n) if c not in pivot_cols]
    basis: List[Tuple[Fraction, ...]] = []
    for free in free_cols:
        vec = [Fraction(0)] * n
        vec[free] = Fraction(1)
        for prow, pcol in enumerate(pivot_cols):
            vec[pcol] = -rows[prow][free]
        # Clear denominators for readability.
        denom = 1
        for v in vec:
            denom = denom * v.denominator // _gcd(denom, v.denominator)
        basis.append(tuple(v * denom for v in vec))
    return basis


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def add_catalyst(reaction: Reaction, species: str) -> Reaction:
    """Gate a reaction by ``species``: add it once to both sides.

    The net stoichiometry column is unchanged; the rate acquires a
    multiplicative factor equal to the catalyst concentration, so the
    reaction is silent whenever the catalyst is absent.
    """
    _check_name(species)
    return Reaction(
        reaction.reactant.adding(species),
        reaction.product.adding(species),
        reaction.rate,
        reaction.phase,
    )


def _format_complex(cplx: Complex) -> str:
    if not cplx:
        return "0"
    parts = []
    for name, coeff in cplx.items():
        parts.append(name if coeff == 1 else f"{coeff}{name}")
    return " + ".join(parts)


def format_reaction(rxn: Reaction) -> str:
    text = f"{_format_complex(rxn.reactant)} -> {_format_complex(rxn.product)} ; k={rxn.rate!r}"
    if rxn.phase is not None:
        text += f" ; phase={rxn.phase}"
    return text


def _parse_complex(text: str) -> Complex:
    text = text.strip()
    if text == "0":
        return Complex()
    terms: Dict[str, int] = {}
    for chunk in text.split("+"):
        m = _TERM_RE.match(chunk)
        if not m:
            raise CrnError(f"cannot parse complex term {chunk.strip()!r}")
        coeff = int(m.group(1)) if m.group(1) else 1
        name = m.group(2)
        terms[name] = terms.get(name, 0) + coeff
    return Complex(terms)


def parse_reaction(line: str) -> Reaction:
    """Parse one ``reactants -> products ; k=<rate> [; phase=<tag>]`` line."""
    parts = [p.strip() for p in line.split(";")]
    if "->" not in parts[0]:
        raise CrnError(f"missing '->' in reaction line {line!r}")
    lhs, rhs_text = parts[0].split("->", 1)
    rate = 1.0
    phase: Optional[str] = None
    for extra in parts[1:]:
        if not extra:
            continue
        if extra.startswith("k="):
            rate = float(extra[2:])
        elif extra.startswith("phase="):
            phase = extra[6:].strip()
        else:
            raise CrnError(f"unrecognized reaction annotation {extra!r}")
    return Reaction(_parse_complex(lhs), _parse_complex(rhs_text), rate, phase)


def crn_to_text(crn: Crn) -> str:
    """Serialize to the one-reaction-per-line text format (lossless round trip)."""
    return "\n".join(format_reaction(r) for r in crn.reactions) + "\n"


def crn_from_text(text: str, roles: Optional[Mapping[str, str]] = None) -> Crn:
    """Parse a reaction-list text; species are registered in order of first appearance."""
    reactions: List[Reaction] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        reactions.append(parse_reaction(line))
    names: Dict[str, None] = {}
    for rxn in reactions:
        for name in rxn.species():
            names.setdefault(name)
    registry = SpeciesRegistry(tuple(names), roles)
    return Crn(registry, reactions)
