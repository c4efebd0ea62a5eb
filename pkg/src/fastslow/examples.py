"""Shipped example networks used by the CLI, tests and the acceptance suite."""

from __future__ import annotations

from .network import Network, parse_network

__all__ = ["EXAMPLES", "example_names", "load_example"]

# chain: one fast exchange feeding a slow one; m_fast = 2.
CHAIN = """\
species A B C
fast: A <-> B ; 1 1
slow: B <-> C ; 2 1
"""

# binding: bimolecular fast association with a slow conversion; m_fast = 3.
BINDING = """\
species A B C D
fast: A + B <-> C ; 1 1
slow: C <-> D ; 2 1
"""

# twofast: two fast reactions over the same pair with consistent equilibrium
# constants (2 and 2); fast detailed balance holds.
TWOFAST = """\
species A B
fast: A <-> B ; 2 1
fast: A <-> B ; 4 2
slow: 2A <-> A + B ; 1 1
"""

# twofast_bad: same network with clashing equilibrium constants (2 vs 1);
# the fast log-linear system is inconsistent and detailed balance fails.
TWOFAST_BAD = """\
species A B
fast: A <-> B ; 2 1
fast: A <-> B ; 1 1
slow: 2A <-> A + B ; 1 1
"""

# slowonly: two species, no fast reactions; used for grid/action cross checks.
SLOWONLY = """\
species A B
slow: A <-> B ; 2 1
"""

EXAMPLES: dict[str, str] = {
    "chain": CHAIN,
    "binding": BINDING,
    "twofast": TWOFAST,
    "twofast_bad": TWOFAST_BAD,
    "slowonly": SLOWONLY,
}

# Networks that must satisfy fast detailed balance; twofast_bad is shipped
# as the negative example exercising the failure-reporting path.
CANONICAL = ("chain", "binding", "twofast")


def example_names() -> tuple[str, ...]:
    return tuple(EXAMPLES)


def load_example(name: str) -> Network:
    try:
        return parse_network(EXAMPLES[name])
    except KeyError:
        raise KeyError(
            f"unknown example {name!r}; available: {', '.join(EXAMPLES)}"
        ) from None
