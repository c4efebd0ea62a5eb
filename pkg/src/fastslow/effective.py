"""Effective dynamics on the slow manifold in its three equivalent forms.

The limiting evolution keeps only slow reactions plus a constraint force in
the fast stoichiometric subspace.  Equivalently one can project the slow
field onto the manifold tangent space, or evolve the fast-conserved
coordinates and reconstruct.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .equilibria import _chart_at, reconstruct, reconstruct_batch
from .kinetics import fast_defect, intensities, manifold_tolerance
from .network import Network
from .paths import Path
from .stoich import StoichStructure

__all__ = [
    "slow_rhs",
    "effective_rhs_projected",
    "effective_rhs_coarse",
    "lagrange_multiplier",
    "integrate_effective",
]


def slow_rhs(net: Network, x: np.ndarray) -> np.ndarray:
    """Slow part of the reaction-rate field (no 1/eps terms)."""
    psi_p, psi_m = intensities(net, x)
    G = net.gamma_matrix().astype(float)
    slow = list(net.slow_indices)
    if not slow:
        return np.zeros(net.n_species)
    return G[slow].T @ (psi_p[slow] - psi_m[slow])


def effective_rhs_projected(
    net: Network,
    structure: StoichStructure,
    x: np.ndarray,
    check: bool = True,
) -> np.ndarray:
    """(I - P(x)) R_slow(x) for x on the fast-equilibrium manifold."""
    x = np.asarray(x, dtype=float)
    if check and fast_defect(net, x) > manifold_tolerance(x):
        raise ValueError("state is off the fast-equilibrium manifold")
    ch = _chart_at(structure.Q_fast.astype(float), x)
    return (np.eye(len(x)) - ch.P) @ slow_rhs(net, x)


def effective_rhs_coarse(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    q: np.ndarray,
    x: np.ndarray | None = None,
) -> np.ndarray:
    """Coarse velocity Q_fast R_slow(R(q)); the first m components vanish."""
    if x is None:
        x = reconstruct(structure, x_star, q).x
    return structure.Q_fast.astype(float) @ slow_rhs(net, x)


def lagrange_multiplier(
    net: Network, structure: StoichStructure, x: np.ndarray
) -> np.ndarray:
    """Constraint force lam(x) in the fast stoichiometric subspace.

    Solves the tangency condition G_f diag(1/x) (R_slow + lam) = 0 over
    lam = B_f c, an independent route from the projector formula.
    """
    x = np.asarray(x, dtype=float)
    Bf = structure.gamma_fast_basis.astype(float).T  # I x d_f
    if Bf.shape[1] == 0:
        return np.zeros(len(x))
    Gf = structure.G[list(structure.fast_rows), :].astype(float)
    W = Gf / x[None, :]
    A = W @ Bf
    rhs = -W @ slow_rhs(net, x)
    c, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return Bf @ c


def integrate_effective(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    start: np.ndarray,
    T: float,
    mode: str = "projected",
    n_out: int = 201,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> Path:
    """Integrate the effective dynamics in one of three modes.

    ``start`` is a manifold state for "projected"/"lagrange" and a coarse
    vector for "coarse".  Projected and lagrange trajectories are re-projected
    onto the manifold through reconstruction at every output step; coarse
    trajectories are reconstructed on demand.  Lagrange mode records the
    multiplier along the trajectory in ``extras["lambda"]``.
    """
    if mode not in ("projected", "coarse", "lagrange"):
        raise ValueError(f"unknown mode {mode!r}")
    t_eval = np.linspace(0.0, T, n_out)
    Qf = structure.Q_fast.astype(float)

    if mode == "coarse":
        q0 = np.asarray(start, dtype=float)

        def rhs(t, q):
            return effective_rhs_coarse(net, structure, x_star, q)

        sol = solve_ivp(rhs, (0.0, T), q0, t_eval=t_eval, rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"effective integration failed: {sol.message}")
        states, _, conv = reconstruct_batch(structure, x_star, sol.y.T)
        if not np.all(conv):
            raise RuntimeError("reconstruction failed along the coarse trajectory")
        return Path(
            times=sol.t.copy(),
            states=sol.y.T.copy(),
            kind="coarse",
            extras={"full_states": states},
        )

    x0 = np.asarray(start, dtype=float)
    if fast_defect(net, x0) > manifold_tolerance(x0):
        raise ValueError("start is off the fast-equilibrium manifold")

    if mode == "projected":
        def rhs(t, x):
            return effective_rhs_projected(net, structure, np.maximum(x, 1e-300), check=False)
    else:
        def rhs(t, x):
            xx = np.maximum(x, 1e-300)
            return slow_rhs(net, xx) + lagrange_multiplier(net, structure, xx)

    sol = solve_ivp(rhs, (0.0, T), x0, t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"effective integration failed: {sol.message}")
    # Drift control: re-project every output state onto the manifold.
    qs = sol.y.T @ Qf.T
    states, _, conv = reconstruct_batch(structure, x_star, qs)
    if not np.all(conv):
        raise RuntimeError("re-projection failed along the trajectory")
    extras = {}
    if mode == "lagrange":
        extras["lambda"] = np.array(
            [lagrange_multiplier(net, structure, x) for x in states]
        )
    return Path(times=sol.t.copy(), states=states, kind="full", extras=extras)
