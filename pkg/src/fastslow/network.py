"""Reaction network data model and the line-oriented text format.

A network is a list of species together with reversible mass-action
reactions, each tagged as fast or slow.  Stoichiometric coefficients are
kept as exact integers; rates are floats.  The scale separation parameter
``epsilon`` is a runtime quantity: it is stored on the network only as a
default and every epsilon-dependent computation takes it explicitly.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Timescale",
    "Reaction",
    "Network",
    "NetworkError",
    "NetworkSyntaxError",
    "ValidationIssue",
    "parse_network",
    "serialize_network",
    "reaction_vector",
    "validate",
]


class NetworkError(ValueError):
    """Domain error raised for malformed networks."""


class NetworkSyntaxError(NetworkError):
    """Parse failure; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class Timescale(enum.Enum):
    SLOW = "slow"
    FAST = "fast"


@dataclass(frozen=True)
class Reaction:
    """One reversible reaction: gamma_plus -> gamma_minus with rates (k_plus, k_minus).

    ``gamma_plus`` and ``gamma_minus`` are nonnegative integer molecule
    counts of length I.  Weak reversibility requires that exactly both or
    neither of the rates vanish.
    """

    gamma_plus: tuple[int, ...]
    gamma_minus: tuple[int, ...]
    k_plus: float
    k_minus: float
    timescale: Timescale

    def __post_init__(self):
        if len(self.gamma_plus) != len(self.gamma_minus):
            raise NetworkError("stoichiometry vectors differ in length")
        if any(g < 0 for g in self.gamma_plus + self.gamma_minus):
            raise NetworkError("negative stoichiometric coefficient")
        if self.k_plus < 0 or self.k_minus < 0:
            raise NetworkError("negative rate")
        if (self.k_plus == 0) != (self.k_minus == 0):
            raise NetworkError(
                "weak reversibility violated: k_plus and k_minus must vanish together"
            )

    @property
    def vector(self) -> np.ndarray:
        """Net species change gamma_minus - gamma_plus as an integer array."""
        return np.asarray(self.gamma_minus, dtype=np.int64) - np.asarray(
            self.gamma_plus, dtype=np.int64
        )

    def reversed(self) -> "Reaction":
        return replace(
            self,
            gamma_plus=self.gamma_minus,
            gamma_minus=self.gamma_plus,
            k_plus=self.k_minus,
            k_minus=self.k_plus,
        )


@dataclass(frozen=True)
class Network:
    """Immutable reaction network; safe to share across workers."""

    species: tuple[str, ...]
    reactions: tuple[Reaction, ...]
    epsilon: float = 1.0

    def __post_init__(self):
        for rx in self.reactions:
            if len(rx.gamma_plus) != len(self.species):
                raise NetworkError("reaction vector length does not match species count")
        if self.epsilon <= 0:
            raise NetworkError("epsilon must be positive")

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def fast_indices(self) -> tuple[int, ...]:
        return tuple(
            r for r, rx in enumerate(self.reactions) if rx.timescale is Timescale.FAST
        )

    @property
    def slow_indices(self) -> tuple[int, ...]:
        return tuple(
            r for r, rx in enumerate(self.reactions) if rx.timescale is Timescale.SLOW
        )

    def gamma_matrix(self) -> np.ndarray:
        """Reaction vectors stacked as rows (R x I integer matrix)."""
        return np.array([rx.vector for rx in self.reactions], dtype=np.int64).reshape(
            self.n_reactions, self.n_species
        )

    def to_json_dict(self) -> dict:
        return {
            "species": list(self.species),
            "reactions": [
                {
                    "gp": list(rx.gamma_plus),
                    "gm": list(rx.gamma_minus),
                    "kp": rx.k_plus,
                    "km": rx.k_minus,
                    "scale": rx.timescale.value,
                }
                for rx in self.reactions
            ],
            "epsilon": self.epsilon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


_TERM_RE = re.compile(r"^(\d+)?\s*([A-Za-z_]\w*)$")


def _parse_side(text: str, species_index: dict[str, int], line_no: int) -> list[int]:
    counts = [0] * len(species_index)
    text = text.strip()
    if text == "0":
        return counts
    if not text:
        raise NetworkSyntaxError(line_no, "empty reaction side (write '0')")
    for term in text.split("+"):
        m = _TERM_RE.match(term.strip())
        if m is None:
            raise NetworkSyntaxError(line_no, f"cannot parse term {term.strip()!r}")
        coeff = int(m.group(1)) if m.group(1) else 1
        name = m.group(2)
        if name not in species_index:
            raise NetworkSyntaxError(line_no, f"unknown species {name!r}")
        counts[species_index[name]] += coeff
    return counts


def parse_network(text: str, epsilon: float = 1.0) -> Network:
    """Parse the line-oriented network format.

    Format::

        species A B C          # first non-comment line
        fast: A <-> B ; 1.0 1.0
        slow: B + C <-> 2C ; 2 1

    ``#`` starts a comment, blank lines are ignored, an empty reaction side
    is written ``0`` and a term is ``[<int>]<species>``.
    """
    species: list[str] | None = None
    species_index: dict[str, int] = {}
    reactions: list[Reaction] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if species is None:
            parts = line.split()
            if parts[0] != "species" or len(parts) < 2:
                raise NetworkSyntaxError(line_no, "expected 'species <name> ...' first")
            species = parts[1:]
            species_index = {name: i for i, name in enumerate(species)}
            continue
        m = re.match(r"^(fast|slow)\s*:\s*(.*)$", line)
        if m is None:
            raise NetworkSyntaxError(line_no, "expected 'fast:' or 'slow:' reaction line")
        scale = Timescale.FAST if m.group(1) == "fast" else Timescale.SLOW
        body = m.group(2)
        if ";" not in body:
            raise NetworkSyntaxError(line_no, "missing ';' before rates")
        scheme, rates_text = body.split(";", 1)
        if "<->" not in scheme:
            raise NetworkSyntaxError(line_no, "missing '<->'")
        lhs_text, rhs_text = scheme.split("<->", 1)
        rate_parts = rates_text.split()
        if len(rate_parts) != 2:
            raise NetworkSyntaxError(line_no, "expected two rates after ';'")
        try:
            k_plus, k_minus = float(rate_parts[0]), float(rate_parts[1])
        except ValueError:
            raise NetworkSyntaxError(line_no, f"cannot parse rates {rates_text.strip()!r}")
        if k_plus < 0 or k_minus < 0:
            raise NetworkSyntaxError(line_no, "negative rate")
        gp = _parse_side(lhs_text, species_index, line_no)
        gm = _parse_side(rhs_text, species_index, line_no)
        try:
            reactions.append(
                Reaction(tuple(gp), tuple(gm), k_plus, k_minus, scale)
            )
        except NetworkError as exc:
            raise NetworkSyntaxError(line_no, str(exc))
    if species is None:
        raise NetworkSyntaxError(1, "no species line found")
    return Network(tuple(species), tuple(reactions), epsilon)


def _format_side(counts: Sequence[int], species: Sequence[str]) -> str:
    terms = []
    for count, name in zip(counts, species):
        if count == 0:
            continue
        terms.append(name if count == 1 else f"{count}{name}")
    return " + ".join(terms) if terms else "0"


def serialize_network(net: Network) -> str:
    """Emit the text format; parse(serialize(net)) is structurally equal to net."""
    lines = ["species " + " ".join(net.species)]
    for rx in net.reactions:
        lines.append(
            f"{rx.timescale.value}: {_format_side(rx.gamma_plus, net.species)}"
            f" <-> {_format_side(rx.gamma_minus, net.species)}"
            f" ; {rx.k_plus!r} {rx.k_minus!r}"
        )
    return "\n".join(lines) + "\n"


def reaction_vector(net: Network, r: int) -> np.ndarray:
    """Net change vector gamma_minus - gamma_plus of reaction ``r``."""
    if not 0 <= r < net.n_reactions:
        raise IndexError(f"reaction index {r} out of range")
    return net.reactions[r].vector


@dataclass(frozen=True)
class ValidationIssue:
    level: str  # "error" or "warning"
    message: str


def validate(net: Network) -> list[ValidationIssue]:
    """Collect invariant violations; never raises.

    Errors make the network invalid; warnings flag configurations for which
    fast-slow analyses are degenerate (e.g. no slow reactions).
    """
    issues: list[ValidationIssue] = []
    seen: set[str] = set()
    for name in net.species:
        if name in seen:
            issues.append(ValidationIssue("error", f"duplicate species name {name!r}"))
        seen.add(name)
    for r, rx in enumerate(net.reactions):
        if all(g == 0 for g in rx.gamma_plus) and all(g == 0 for g in rx.gamma_minus):
            issues.append(ValidationIssue("error", f"reaction {r} has empty stoichiometry"))
        if (rx.k_plus == 0) != (rx.k_minus == 0):
            issues.append(
                ValidationIssue("error", f"reaction {r} violates weak reversibility")
            )
    if net.n_reactions > 0:
        if not net.fast_indices:
            issues.append(ValidationIssue("warning", "no fast reactions"))
        if not net.slow_indices:
            issues.append(ValidationIssue("warning", "no slow reactions"))
    return issues


def is_valid(issues: Iterable[ValidationIssue]) -> bool:
    return not any(issue.level == "error" for issue in issues)
