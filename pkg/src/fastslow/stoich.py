"""Exact linear structure of a fast-slow network.

All kernels and bases here are computed over the rationals and rescaled to
integers, so conservation identities such as G Q^T = 0 hold to machine
identity rather than to a tolerance.  Floating point enters only in the
orthonormal bases cached for downstream optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import gcd

import numpy as np

from .network import Network

__all__ = [
    "StoichStructure",
    "build_structure",
    "integer_kernel_basis",
    "integer_rowspace_basis",
    "project_onto",
    "span_residual",
    "in_span",
]

SPAN_TOL = 1e-9  # residual <= SPAN_TOL * (1 + |v|) counts as membership


def _rref(rows: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form over exact rationals; returns (rows, pivot columns)."""
    rows = [list(row) for row in rows]
    n_rows = len(rows)
    n_cols = len(rows[0]) if rows else 0
    pivots: list[int] = []
    r = 0
    for c in range(n_cols):
        pivot = next((i for i in range(r, n_rows) if rows[i][c] != 0), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        inv = rows[r][c]
        rows[r] = [x / inv for x in rows[r]]
        for i in range(n_rows):
            if i != r and rows[i][c] != 0:
                factor = rows[i][c]
                rows[i] = [a - factor * b for a, b in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    return rows[:r], pivots


def _integerize(vec: list[Fraction]) -> list[int]:
    """Scale a rational vector to coprime integers with positive leading entry."""
    denom_lcm = 1
    for x in vec:
        if x != 0:
            denom_lcm = denom_lcm * x.denominator // gcd(denom_lcm, x.denominator)
    ints = [int(x * denom_lcm) for x in vec]
    g = 0
    for x in ints:
        g = gcd(g, abs(x))
    if g > 1:
        ints = [x // g for x in ints]
    lead = next((x for x in ints if x != 0), 0)
    if lead < 0:
        ints = [-x for x in ints]
    return ints


def integer_kernel_basis(mat: np.ndarray, n_cols: int | None = None) -> np.ndarray:
    """Canonical integer basis (rows) of {v : mat v = 0}.

    The basis is the reduced-echelon kernel basis ordered by free column,
    rescaled to coprime integers, deterministic across runs.
    """
    mat = np.asarray(mat, dtype=np.int64)
    if mat.size == 0:
        n = n_cols if n_cols is not None else (mat.shape[1] if mat.ndim == 2 else 0)
        return np.eye(n, dtype=np.int64)
    n = mat.shape[1]
    rows = [[Fraction(int(x)) for x in row] for row in mat]
    rref, pivots = _rref(rows)
    free_cols = [c for c in range(n) if c not in pivots]
    basis = []
    for f in free_cols:
        vec = [Fraction(0)] * n
        vec[f] = Fraction(1)
        for i, p in enumerate(pivots):
            vec[p] = -rref[i][f]
        basis.append(_integerize(vec))
    if not basis:
        return np.zeros((0, n), dtype=np.int64)
    return np.array(basis, dtype=np.int64)


def integer_rowspace_basis(mat: np.ndarray) -> np.ndarray:
    """Canonical integer basis (rows) of the row space of ``mat``."""
    mat = np.asarray(mat, dtype=np.int64)
    if mat.size == 0:
        return np.zeros((0, mat.shape[1] if mat.ndim == 2 else 0), dtype=np.int64)
    rows = [[Fraction(int(x)) for x in row] for row in mat]
    rref, _ = _rref(rows)
    basis = [_integerize(row) for row in rref if any(x != 0 for x in row)]
    if not basis:
        return np.zeros((0, mat.shape[1]), dtype=np.int64)
    return np.array(basis, dtype=np.int64)


def _exact_rank(mat: np.ndarray) -> int:
    mat = np.asarray(mat, dtype=np.int64)
    if mat.size == 0:
        return 0
    rows = [[Fraction(int(x)) for x in row] for row in mat]
    _, pivots = _rref(rows)
    return len(pivots)


def _orthonormal_columns(mat: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the column space of ``mat``."""
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0 or min(mat.shape) == 0:
        return np.zeros((mat.shape[0], 0))
    q, r = np.linalg.qr(mat)
    keep = np.abs(np.diag(r)) > 1e-12 * (1 + np.abs(r).max())
    return q[:, : len(keep)][:, keep]


@dataclass(eq=False)
class StoichStructure:
    """Exact conservation structure of a network.

    Rows of ``Q`` span the orthogonal complement of the full stoichiometric
    subspace; rows of ``Q_fast`` extend them to a basis of the fast one.
    ``G_fast = G @ Q_fast.T`` has identically zero rows for fast reactions.
    """

    G: np.ndarray                 # R x I reaction vectors as rows
    fast_rows: tuple[int, ...]    # indices of fast reactions
    slow_rows: tuple[int, ...]    # indices of slow reactions
    Q: np.ndarray                 # m x I
    Q_fast: np.ndarray            # m_fast x I, first m rows equal Q
    G_fast: np.ndarray            # R x m_fast
    gamma_basis: np.ndarray       # basis of the stoichiometric subspace, rows
    gamma_fast_basis: np.ndarray  # basis of the fast stoichiometric subspace, rows

    @property
    def n_species(self) -> int:
        return self.G.shape[1]

    @property
    def n_reactions(self) -> int:
        return self.G.shape[0]

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def m_fast(self) -> int:
        return self.Q_fast.shape[0]

    @cached_property
    def gamma_onb(self) -> np.ndarray:
        """Orthonormal columns spanning the stoichiometric subspace (I x d)."""
        return _orthonormal_columns(self.gamma_basis.T)

    @cached_property
    def gamma_fast_onb(self) -> np.ndarray:
        return _orthonormal_columns(self.gamma_fast_basis.T)

    @cached_property
    def qfast_row_onb(self) -> np.ndarray:
        """Orthonormal columns spanning the fast conserved directions (I x m_fast)."""
        return _orthonormal_columns(self.Q_fast.T.astype(float))

    @cached_property
    def cg_slow_directions(self) -> np.ndarray:
        """Coarse-grained slow reaction vectors Q_fast gamma_r, one row per slow r."""
        return self.G_fast[list(self.slow_rows), :].astype(float)

    @cached_property
    def cg_slow_onb(self) -> np.ndarray:
        """Orthonormal basis (columns) of the span of the coarse slow directions."""
        return _orthonormal_columns(self.cg_slow_directions.T)

    def coarse(self, x: np.ndarray) -> np.ndarray:
        """Fast conserved coordinates q = Q_fast x."""
        return self.Q_fast.astype(float) @ np.asarray(x, dtype=float)


def build_structure(net: Network, fast_extension: str = "canonical") -> StoichStructure:
    """Compute the exact conservation structure of ``net``.

    ``fast_extension`` selects how the conserved basis is extended to the
    fast-conserved one; "canonical" and "variant" both produce valid integer
    bases whose first m rows agree (coordinates differ, invariant quantities
    do not).
    """
    G = net.gamma_matrix()
    I = net.n_species
    fast = net.fast_indices
    slow = net.slow_indices
    Q = integer_kernel_basis(G, n_cols=I)
    G_fast_sub = G[list(fast), :] if fast else np.zeros((0, I), dtype=np.int64)
    kernel_fast = integer_kernel_basis(G_fast_sub, n_cols=I)

    # Extend Q to a basis of the fast kernel by greedily keeping canonical
    # kernel vectors that increase the exact rank.
    rows = [list(map(int, row)) for row in Q]
    extension: list[list[int]] = []
    base_rank = _exact_rank(np.array(rows, dtype=np.int64)) if rows else 0
    for cand in kernel_fast:
        trial = rows + extension + [list(map(int, cand))]
        if _exact_rank(np.array(trial, dtype=np.int64)) > base_rank + len(extension):
            extension.append(list(map(int, cand)))
    if fast_extension == "variant" and extension:
        # Alternative valid extension: reverse the order and mix in the first
        # conserved row; spans and the leading block are unchanged.
        mixed = []
        for row in reversed(extension):
            if rows:
                mixed.append([a + b for a, b in zip(row, rows[0])])
            else:
                mixed.append(list(row))
        extension = mixed
    elif fast_extension != "canonical":
        raise ValueError(f"unknown fast_extension {fast_extension!r}")
    Q_fast = np.array(rows + extension, dtype=np.int64).reshape(-1, I)
    G_fast = G @ Q_fast.T

    assert np.all(G @ Q.T == 0)
    if fast:
        assert np.all(G_fast[list(fast), :] == 0)

    return StoichStructure(
        G=G,
        fast_rows=fast,
        slow_rows=slow,
        Q=Q,
        Q_fast=Q_fast,
        G_fast=G_fast,
        gamma_basis=integer_rowspace_basis(G),
        gamma_fast_basis=integer_rowspace_basis(G_fast_sub),
    )


def project_onto(basis: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean projection of ``v`` onto the row span of ``basis``.

    Returns (projection, residual).  Raises on a rank-deficient basis.
    """
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    v = np.asarray(v, dtype=float)
    if B.shape[0] == 0:
        return np.zeros_like(v), v.copy()
    gram = B @ B.T
    if np.linalg.matrix_rank(gram, tol=1e-12 * (1 + np.abs(gram).max())) < B.shape[0]:
        raise np.linalg.LinAlgError("rank-deficient basis")
    coeffs = np.linalg.solve(gram, B @ v)
    proj = B.T @ coeffs
    return proj, v - proj


def span_residual(basis: np.ndarray, v: np.ndarray) -> float:
    """Norm of the component of ``v`` orthogonal to the row span of ``basis``."""
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    v = np.asarray(v, dtype=float)
    if B.shape[0] == 0 or not np.any(B):
        return float(np.linalg.norm(v))
    # Least squares handles redundant spanning sets, unlike project_onto.
    coeffs, *_ = np.linalg.lstsq(B.T, v, rcond=None)
    return float(np.linalg.norm(v - B.T @ coeffs))


def in_span(basis: np.ndarray, v: np.ndarray, tol: float = SPAN_TOL) -> bool:
    v = np.asarray(v, dtype=float)
    return span_residual(basis, v) <= tol * (1.0 + np.linalg.norm(v))
