"""Scalar and vector rate functions with their Legendre-duality solvers.

The per-reaction building block is the pair

    S*(p | a, b) = a (e^p - 1) + b (e^-p - 1)
    S(J | a, b)  = sup_p (p J - S*(p | a, b))
               = sqrt(ab) C(J / sqrt(ab)) - (J/2) log(a/b) + (sqrt a - sqrt b)^2

with C the Legendre transform of 2(cosh - 1).  Hamiltonians sum S* terms
over reactions (fast terms carrying a 1/eps scale); Lagrangians are always
computed through the dual: a Newton ascent over momenta restricted to the
relevant non-degenerate subspace, with primal fluxes recovered from dual
optimality for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibria import reconstruct
from .kinetics import (
    fast_defect,
    intensities,
    intensities_batch,
    manifold_tolerance,
    scale_vector,
)
from .network import Network
from .stoich import SPAN_TOL, StoichStructure, span_residual

__all__ = [
    "DualEvaluation",
    "cosh_star",
    "cosh_legendre",
    "S_star",
    "S",
    "relative_entropy",
    "hamiltonian_eps",
    "hamiltonian_eps_gradients",
    "lagrangian_eps",
    "lagrangian_eps_flux",
    "hamiltonian_eff",
    "lagrangian_eff",
    "hamiltonian_cg",
    "hamiltonian_cg_grad_sp",
    "lagrangian_cg",
    "legendre_dual_batch",
]

EXP_GUARD = 700.0        # |exponent| beyond this short-circuits to +inf
NEWTON_MAX_ITERS = 60
NEWTON_GTOL = 1e-11      # |grad| <= NEWTON_GTOL * (1 + |value|)
ARMIJO_C1 = 1e-4
ARMIJO_SLACK = 1e-13     # rounding slack so terminal Newton steps are accepted


@dataclass
class DualEvaluation:
    """Value of a Lagrangian together with its dual optimizer.

    ``optimizer`` is the optimal momentum (or flux vector for the flux
    form); ``constraint_residual`` is the distance of the requested velocity
    from the feasible subspace.
    """

    value: float
    optimizer: np.ndarray | None
    converged: bool
    constraint_residual: float


# ---------------------------------------------------------------------------
# scalar functions


def cosh_star(p: float) -> float:
    """C*(p) = 2 (cosh p - 1)."""
    return float(2.0 * (np.cosh(p) - 1.0))


def cosh_legendre(s: float) -> float:
    """Legendre transform of C*: C(s) = s asinh(s/2) - 2 (sqrt(1 + s^2/4) - 1).

    The square-root term is evaluated in a cancellation-free form near s = 0
    and an overflow-free one for large |s|.
    """
    s = float(s)
    h = np.hypot(1.0, 0.5 * s)
    if abs(s) < 1.0e8:
        root_term = (s * s) / (2.0 * (h + 1.0))
    else:
        root_term = 2.0 * (h - 1.0)
    return float(s * np.arcsinh(0.5 * s) - root_term)


def S_star(p: float, alpha: float, beta: float) -> float:
    """S*(p | alpha, beta) = alpha (e^p - 1) + beta (e^-p - 1), overflow guarded."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    p = float(p)
    if p > EXP_GUARD and alpha > 0:
        return np.inf
    if p < -EXP_GUARD and beta > 0:
        return np.inf
    up = alpha * np.expm1(p) if alpha > 0 else 0.0
    dn = beta * np.expm1(-p) if beta > 0 else 0.0
    return float(up + dn)


def relative_entropy(u: float, alpha: float) -> float:
    """H(u | alpha) = u log(u/alpha) - u + alpha with 0 log 0 = 0."""
    if u < 0 or alpha < 0:
        raise ValueError("arguments must be nonnegative")
    if u == 0:
        return float(alpha)
    if alpha == 0:
        return np.inf
    return float(u * np.log(u / alpha) - u + alpha)


def S(J: float, alpha: float, beta: float) -> float:
    """Legendre transform of S*; closed form inside, entropy form on the boundary.

    Boundary conventions follow the inf-convolution
    S(J|a,b) = inf_{J=u-w} H(u|a) + H(w|b) over u, w >= 0.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    J = float(J)
    if alpha == 0 and beta == 0:
        return 0.0 if J == 0 else np.inf
    if alpha == 0:
        return relative_entropy(-J, beta) if J <= 0 else np.inf
    if beta == 0:
        return relative_entropy(J, alpha) if J >= 0 else np.inf
    root = np.sqrt(alpha * beta)
    value = (
        root * cosh_legendre(J / root)
        - 0.5 * J * np.log(alpha / beta)
        + (np.sqrt(alpha) - np.sqrt(beta)) ** 2
    )
    return float(max(value, 0.0))


# ---------------------------------------------------------------------------
# batched Legendre dual solver


def legendre_dual_batch(
    dirs: np.ndarray,
    alpha: np.ndarray,
    beta: np.ndarray,
    targets: np.ndarray,
    max_iters: int = NEWTON_MAX_ITERS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Maximize phi(c) = t.c - sum_r [a_r (e^{s_r}-1) + b_r (e^{-s_r}-1)], s = dirs c.

    ``dirs`` is (R, d) and shared across the batch; ``alpha``/``beta`` are
    (N, R) and ``targets`` (N, d).  Returns (values, optima (N, d),
    converged).  The objective is strictly concave whenever alpha + beta is
    positive on a set of rows whose directions span R^d.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    N, d = targets.shape
    if dirs.size == 0 or d == 0:
        return np.zeros(N), np.zeros((N, d)), np.ones(N, dtype=bool)
    dirs = np.asarray(dirs, dtype=float)

    def phi_terms(c):
        s = c @ dirs.T  # (N, R)
        with np.errstate(over="ignore", invalid="ignore"):
            es = np.where(s > EXP_GUARD, np.inf, np.exp(np.minimum(s, EXP_GUARD)))
            ems = np.where(-s > EXP_GUARD, np.inf, np.exp(np.minimum(-s, EXP_GUARD)))
            up = np.where(alpha > 0, alpha * (es - 1.0), 0.0)
            dn = np.where(beta > 0, beta * (ems - 1.0), 0.0)
            val = np.sum(targets * c, axis=1) - np.sum(up + dn, axis=1)
            fwd = np.where(alpha > 0, alpha * es, 0.0)
            bwd = np.where(beta > 0, beta * ems, 0.0)
        return val, fwd, bwd

    c = np.zeros((N, d))
    value, fwd, bwd = phi_terms(c)
    converged = np.zeros(N, dtype=bool)
    for _ in range(max_iters):
        grad = targets - (fwd - bwd) @ dirs
        gnorm = np.linalg.norm(grad, axis=1)
        converged = gnorm <= NEWTON_GTOL * (1.0 + np.abs(value))
        active = ~converged & np.isfinite(value)
        if not np.any(active):
            break
        weights = fwd[active] + bwd[active]
        H = np.einsum("ra,nr,rb->nab", dirs, weights, dirs)
        try:
            step = np.linalg.solve(H, grad[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.zeros_like(grad[active])
            for k in range(H.shape[0]):
                sol, *_ = np.linalg.lstsq(H[k], grad[active][k], rcond=None)
                step[k] = sol
        slope = np.sum(grad[active] * step, axis=1)
        t = np.ones(step.shape[0])
        base_c = c[active]
        base_val = value[active]
        new_c = base_c.copy()
        done = np.zeros(step.shape[0], dtype=bool)
        slack = ARMIJO_SLACK * (1.0 + np.abs(base_val))
        for _ in range(60):
            trial = base_c + t[:, None] * step
            tval = _phi_value_only(trial, dirs, alpha[active], beta[active], targets[active])
            ok = ~done & np.isfinite(tval) & (tval >= base_val + ARMIJO_C1 * t * slope - slack)
            new_c[ok] = trial[ok]
            done |= ok
            if np.all(done):
                break
            t = np.where(done, t, 0.5 * t)
        c[active] = new_c
        value, fwd, bwd = phi_terms(c)
    grad = targets - (fwd - bwd) @ dirs
    converged = np.linalg.norm(grad, axis=1) <= 100 * NEWTON_GTOL * (1.0 + np.abs(value))
    return value, c, converged


def _phi_value_only(c, dirs, alpha, beta, targets):
    s = c @ dirs.T
    with np.errstate(over="ignore", invalid="ignore"):
        es = np.where(s > EXP_GUARD, np.inf, np.exp(np.minimum(s, EXP_GUARD)))
        ems = np.where(-s > EXP_GUARD, np.inf, np.exp(np.minimum(-s, EXP_GUARD)))
        up = np.where(alpha > 0, alpha * (es - 1.0), 0.0)
        dn = np.where(beta > 0, beta * (ems - 1.0), 0.0)
        return np.sum(targets * c, axis=1) - np.sum(up + dn, axis=1)


# ---------------------------------------------------------------------------
# epsilon-dependent Hamiltonian and Lagrangian


def hamiltonian_eps(net: Network, x: np.ndarray, p: np.ndarray, eps: float) -> float:
    """H_eps(x, p): slow S* terms plus fast ones at scale 1/eps."""
    psi_p, psi_m = intensities(net, x)
    s = scale_vector(net, eps)
    G = net.gamma_matrix().astype(float)
    exps = G @ np.asarray(p, dtype=float)
    total = 0.0
    for r in range(net.n_reactions):
        term = S_star(exps[r], psi_p[r], psi_m[r])
        total += s[r] * term
        if not np.isfinite(total):
            return np.inf
    return float(total)


def hamiltonian_eps_gradients(
    net: Network, x: np.ndarray, p: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray]:
    """(dH/dp, dH/dx) of the fast-slow Hamiltonian; requires x > 0 for dH/dx."""
    from .kinetics import _intensity_gradients

    psi_p, psi_m = intensities(net, x)
    s = scale_vector(net, eps)
    G = net.gamma_matrix().astype(float)
    exps = G @ np.asarray(p, dtype=float)
    ep, em = np.exp(exps), np.exp(-exps)
    dHdp = G.T @ (s * (psi_p * ep - psi_m * em))
    dpsi_p, dpsi_m = _intensity_gradients(net, x)
    dHdx = ((s * (ep - 1.0))[:, None] * dpsi_p + (s * (em - 1.0))[:, None] * dpsi_m).sum(
        axis=0
    )
    return dHdp, dHdx


def lagrangian_eps(
    net: Network,
    structure: StoichStructure,
    x: np.ndarray,
    v: np.ndarray,
    eps: float,
) -> DualEvaluation:
    """L_eps(x, v) = sup_{p in Gamma} (p.v - H_eps(x, p)); +inf off the subspace."""
    v = np.asarray(v, dtype=float)
    resid = span_residual(structure.gamma_basis, v)
    if resid > SPAN_TOL * (1.0 + np.linalg.norm(v)):
        return DualEvaluation(np.inf, None, True, resid)
    B = structure.gamma_onb
    psi_p, psi_m = intensities(net, x)
    s = scale_vector(net, eps)
    dirs = net.gamma_matrix().astype(float) @ B
    values, cs, conv = legendre_dual_batch(
        dirs, (s * psi_p)[None, :], (s * psi_m)[None, :], (B.T @ v)[None, :]
    )
    return DualEvaluation(float(values[0]), B @ cs[0], bool(conv[0]), resid)


def lagrangian_eps_flux(
    net: Network,
    structure: StoichStructure,
    x: np.ndarray,
    v: np.ndarray,
    eps: float,
) -> DualEvaluation:
    """Primal flux form of L_eps: fluxes recovered from the dual optimum and the
    value recomputed as a sum of per-reaction S terms."""
    dual = lagrangian_eps(net, structure, x, v, eps)
    if dual.optimizer is None or not np.isfinite(dual.value):
        return dual
    psi_p, psi_m = intensities(net, x)
    s = scale_vector(net, eps)
    G = net.gamma_matrix().astype(float)
    exps = G @ dual.optimizer
    ap, bm = s * psi_p, s * psi_m
    J = ap * np.exp(exps) - bm * np.exp(-exps)
    value = sum(S(J[r], ap[r], bm[r]) for r in range(net.n_reactions))
    resid = float(np.linalg.norm(G.T @ J - np.asarray(v, dtype=float)))
    return DualEvaluation(float(value), J, dual.converged, resid)


# ---------------------------------------------------------------------------
# effective and coarse-grained pair


def hamiltonian_eff(
    net: Network,
    structure: StoichStructure,
    x: np.ndarray,
    p: np.ndarray,
) -> float:
    """H_eff(x, p): slow S* sum for p in the fast-conserved subspace, else +inf."""
    if fast_defect(net, x) > manifold_tolerance(x):
        raise ValueError("state is off the fast-equilibrium manifold")
    p = np.asarray(p, dtype=float)
    resid = span_residual(structure.Q_fast.astype(float), p)
    if resid > SPAN_TOL * (1.0 + np.linalg.norm(p)):
        return np.inf
    psi_p, psi_m = intensities(net, x)
    G = net.gamma_matrix().astype(float)
    exps = G @ p
    total = 0.0
    for r in structure.slow_rows:
        total += S_star(exps[r], psi_p[r], psi_m[r])
    return float(total)


def hamiltonian_cg(
    net: Network,
    structure: StoichStructure,
    q: np.ndarray,
    sp: np.ndarray,
    x_star: np.ndarray | None = None,
    x: np.ndarray | None = None,
) -> float:
    """Coarse-grained Hamiltonian: slow S* terms with directions Q_fast gamma_r
    and intensities evaluated at the reconstructed state."""
    if x is None:
        if x_star is None:
            raise ValueError("need x_star to reconstruct the state")
        x = reconstruct(structure, x_star, q).x
    psi_p, psi_m = intensities(net, x)
    exps = structure.G_fast.astype(float) @ np.asarray(sp, dtype=float)
    total = 0.0
    for r in structure.slow_rows:
        total += S_star(exps[r], psi_p[r], psi_m[r])
    return float(total)


def hamiltonian_cg_grad_sp(
    net: Network,
    structure: StoichStructure,
    q: np.ndarray,
    sp: np.ndarray,
    x_star: np.ndarray | None = None,
    x: np.ndarray | None = None,
) -> np.ndarray:
    if x is None:
        if x_star is None:
            raise ValueError("need x_star to reconstruct the state")
        x = reconstruct(structure, x_star, q).x
    psi_p, psi_m = intensities(net, x)
    slow = list(structure.slow_rows)
    dirs = structure.G_fast[slow, :].astype(float)
    exps = dirs @ np.asarray(sp, dtype=float)
    flux = psi_p[slow] * np.exp(exps) - psi_m[slow] * np.exp(-exps)
    return dirs.T @ flux


def lagrangian_cg(
    net: Network,
    structure: StoichStructure,
    q: np.ndarray,
    v_cg: np.ndarray,
    x_star: np.ndarray | None = None,
    x: np.ndarray | None = None,
) -> DualEvaluation:
    """L_cg(q, v) = sup_sp (v.sp - H_cg(q, sp)), solved over the span of the
    coarse slow directions; +inf when v leaves that span."""
    v_cg = np.asarray(v_cg, dtype=float)
    if x is None:
        if x_star is None:
            raise ValueError("need x_star to reconstruct the state")
        x = reconstruct(structure, x_star, q).x
    resid = span_residual(structure.cg_slow_directions, v_cg)
    if resid > SPAN_TOL * (1.0 + np.linalg.norm(v_cg)):
        return DualEvaluation(np.inf, None, True, resid)
    slow = list(structure.slow_rows)
    psi_p, psi_m = intensities(net, x)
    B = structure.cg_slow_onb  # (m_fast, d)
    dirs = structure.cg_slow_directions @ B  # (R_slow, d)
    values, cs, conv = legendre_dual_batch(
        dirs, psi_p[slow][None, :], psi_m[slow][None, :], (B.T @ v_cg)[None, :]
    )
    return DualEvaluation(float(values[0]), B @ cs[0], bool(conv[0]), resid)


def lagrangian_eff(
    net: Network,
    structure: StoichStructure,
    x: np.ndarray,
    v: np.ndarray,
) -> DualEvaluation:
    """Effective Lagrangian on the manifold; depends on v only through Q_fast v."""
    x = np.asarray(x, dtype=float)
    if fast_defect(net, x) > manifold_tolerance(x):
        raise ValueError("state is off the fast-equilibrium manifold")
    q = structure.coarse(x)
    v_cg = structure.Q_fast.astype(float) @ np.asarray(v, dtype=float)
    return lagrangian_cg(net, structure, q, v_cg, x=x)
