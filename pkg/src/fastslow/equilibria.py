"""Reconstruction onto the slow manifold and its linearization.

Under fast detailed balance the set of fast equilibria is the level set of
the relative entropy H(.|x_star) along fast reaction directions, so the
point with prescribed fast-conserved coordinates q is the strictly convex
minimizer of H(x|x_star) subject to Q_fast x = q.  We solve the smooth dual
in the multiplier lam:  x(lam) = x_star * exp(Q_fast^T lam), and Newton's
method with an Armijo line search drives Q_fast x(lam) to q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinetics import fast_defect, manifold_tolerance
from .network import Network
from .stoich import StoichStructure

__all__ = [
    "ReconstructionError",
    "ReconstructionResult",
    "ManifoldChart",
    "ManifoldSample",
    "reconstruct",
    "reconstruct_batch",
    "chart",
    "is_fast_equilibrium",
    "sample_manifold",
    "relative_entropy_vec",
]

CONSTRAINT_TOL = 1e-12  # |Q_fast x - q| <= tol * (1 + |q|)
MAX_NEWTON_ITERS = 100
ARMIJO_C1 = 1e-4
# Rounding slack in the sufficient-decrease test: near the optimum the true
# decrease of the merit falls below its ulp and a strict Armijo gate would
# reject the final (quadratically convergent) Newton steps.
ARMIJO_SLACK = 1e-13


class ReconstructionError(RuntimeError):
    pass


@dataclass
class ReconstructionResult:
    x: np.ndarray             # reconstructed positive state
    q: np.ndarray             # requested fast-conserved coordinates
    dual: np.ndarray          # multiplier lam with log(x/x_star) = Q_fast^T lam
    kkt_residual: float       # |Q_fast x - q|
    newton_iters: int
    merits: tuple[float, ...] = ()   # dual objective after each accepted step


@dataclass
class ManifoldChart:
    """Local linearization at a reconstructed point.

    ``DR`` is the Jacobian of the reconstruction map, ``P`` the projection
    with range the fast stoichiometric subspace and kernel the manifold
    tangent space; (I - P) = DR @ Q_fast.
    """

    DR: np.ndarray       # I x m_fast
    P: np.ndarray        # I x I
    H_diag: np.ndarray   # diag of the entropy Hessian, 1/x


def relative_entropy_vec(x: np.ndarray, y: np.ndarray) -> float:
    """Relative entropy H(x|y) = sum x log(x/y) - x + y for vectors x, y >= 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    total = 0.0
    for xi, yi in zip(x, y):
        if xi == 0:
            total += yi
        elif yi == 0:
            return np.inf
        else:
            total += xi * np.log(xi / yi) - xi + yi
    return float(total)


def _dual_merit(Qt: np.ndarray, x_star: np.ndarray, lam: np.ndarray, q: np.ndarray):
    """Dual objective sum(x_star * exp(Qt lam)) - q.lam and the state x(lam)."""
    expo = Qt @ lam
    with np.errstate(over="ignore"):
        x = x_star * np.exp(expo)
    merit = float(np.sum(x) - q @ lam) if np.all(np.isfinite(x)) else np.inf
    return merit, x


def reconstruct(
    structure: StoichStructure,
    x_star: np.ndarray,
    q: np.ndarray,
    lam0: np.ndarray | None = None,
    tol: float = CONSTRAINT_TOL,
    max_iters: int = MAX_NEWTON_ITERS,
) -> ReconstructionResult:
    """Reconstruct the unique fast equilibrium with Q_fast x = q.

    Raises ReconstructionError when q is infeasible or on the boundary of the
    feasible cone (the dual Newton iteration then fails to converge).
    """
    x_star = np.asarray(x_star, dtype=float)
    q = np.asarray(q, dtype=float)
    Qf = structure.Q_fast.astype(float)
    Qt = Qf.T
    m = structure.m_fast
    lam = np.zeros(m) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    q_scale = 1.0 + float(np.linalg.norm(q))

    merit, x = _dual_merit(Qt, x_star, lam, q)
    merits = [merit]
    for it in range(max_iters):
        grad = Qf @ x - q
        res = float(np.linalg.norm(grad))
        if res <= tol * q_scale:
            return ReconstructionResult(
                x=x, q=q, dual=lam, kkt_residual=res, newton_iters=it,
                merits=tuple(merits),
            )
        H = Qf @ (x[:, None] * Qt)
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            raise ReconstructionError(
                f"singular dual Hessian at q={q.tolist()} (boundary reconstruction)"
            )
        t = 1.0
        slope = float(grad @ step)
        slack = ARMIJO_SLACK * (1.0 + abs(merit))
        accepted = False
        for _ in range(60):
            merit_new, x_new = _dual_merit(Qt, x_star, lam + t * step, q)
            if merit_new <= merit + ARMIJO_C1 * t * slope + slack:
                lam = lam + t * step
                merit, x = merit_new, x_new
                merits.append(merit)
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise ReconstructionError(
                f"dual line search stalled at q={q.tolist()} (boundary reconstruction)"
            )
    raise ReconstructionError(
        f"no convergence after {max_iters} Newton iterations at q={q.tolist()}"
    )


def reconstruct_batch(
    structure: StoichStructure,
    x_star: np.ndarray,
    qs: np.ndarray,
    tol: float = CONSTRAINT_TOL,
    max_iters: int = MAX_NEWTON_ITERS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized reconstruction for qs of shape (N, m_fast).

    Returns (states (N, I), duals (N, m_fast), converged (N,)).  Rows that
    fail stay at their last iterate with converged=False; no exception.
    """
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    N = qs.shape[0]
    x_star = np.asarray(x_star, dtype=float)
    I = x_star.shape[0]
    Qf = structure.Q_fast.astype(float)
    m = structure.m_fast
    lam = np.zeros((N, m))
    q_scale = 1.0 + np.linalg.norm(qs, axis=1)

    def states_of(lams):
        with np.errstate(over="ignore"):
            return x_star[None, :] * np.exp(lams @ Qf)

    x = states_of(lam)
    merit = np.sum(x, axis=1) - np.sum(qs * lam, axis=1)
    converged = np.zeros(N, dtype=bool)
    for _ in range(max_iters):
        grad = x @ Qf.T - qs
        res = np.linalg.norm(grad, axis=1)
        converged |= res <= tol * q_scale
        active = ~converged
        if not np.any(active):
            break
        H = np.einsum("ai,ni,bi->nab", Qf, x[active], Qf)
        try:
            step = np.linalg.solve(H, -grad[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            # Per-row fallback; singular rows keep a zero step and fail.
            step = np.zeros_like(grad[active])
            for k in range(H.shape[0]):
                try:
                    step[k] = np.linalg.solve(H[k], -grad[active][k])
                except np.linalg.LinAlgError:
                    pass
        slope = np.sum(grad[active] * step, axis=1)
        t = np.ones(step.shape[0])
        lam_act = lam[active]
        merit_act = merit[active]
        done = np.zeros(step.shape[0], dtype=bool)
        new_lam = lam_act.copy()
        new_merit = merit_act.copy()
        slack = ARMIJO_SLACK * (1.0 + np.abs(merit_act))
        for _ in range(60):
            trial = lam_act + t[:, None] * step
            xt = states_of(trial)
            mt = np.sum(xt, axis=1) - np.sum(qs[active] * trial, axis=1)
            ok = ~done & np.isfinite(mt) & (mt <= merit_act + ARMIJO_C1 * t * slope + slack)
            new_lam[ok] = trial[ok]
            new_merit[ok] = mt[ok]
            done |= ok
            if np.all(done):
                break
            t = np.where(done, t, 0.5 * t)
        lam[active] = new_lam
        merit[active] = new_merit
        x = states_of(lam)
    grad = x @ Qf.T - qs
    converged = np.linalg.norm(grad, axis=1) <= tol * q_scale
    return x, lam, converged


def chart(structure: StoichStructure, recon: ReconstructionResult) -> ManifoldChart:
    """Jacobian DR and projection P at a reconstructed point.

    DR = X Q_fast^T (Q_fast X Q_fast^T)^{-1} with X = diag(x), from implicit
    differentiation of the dual optimality system; P = I - DR Q_fast.
    """
    x = np.asarray(recon.x, dtype=float)
    if np.any(x <= 0):
        raise ReconstructionError("chart requires a strictly positive state")
    return _chart_at(structure.Q_fast.astype(float), x)


def _chart_at(Qf: np.ndarray, x: np.ndarray) -> ManifoldChart:
    XQt = x[:, None] * Qf.T
    M = Qf @ XQt
    try:
        DR = XQt @ np.linalg.inv(M)
    except np.linalg.LinAlgError:
        raise ReconstructionError("singular normal matrix (boundary state)")
    P = np.eye(len(x)) - DR @ Qf
    return ManifoldChart(DR=DR, P=P, H_diag=1.0 / x)


def is_fast_equilibrium(net: Network, x: np.ndarray, tol: float | None = None) -> bool:
    """Fast-equilibrium membership via the intensity defect."""
    if tol is None:
        tol = manifold_tolerance(x)
    return fast_defect(net, x) <= tol


@dataclass
class ManifoldSample:
    results: list[ReconstructionResult]
    failures: list[tuple[np.ndarray, str]]


def sample_manifold(
    structure: StoichStructure,
    x_star: np.ndarray,
    q_box: np.ndarray,
    n: int | tuple[int, ...],
) -> ManifoldSample:
    """Reconstruct a deterministic lattice of points over the coarse box.

    ``q_box`` is an (m_fast, 2) array of per-axis bounds; ``n`` gives points
    per axis (n=1 places the midpoint).  Failures are recorded per point.
    """
    q_box = np.atleast_2d(np.asarray(q_box, dtype=float))
    m = structure.m_fast
    if q_box.shape != (m, 2):
        raise ValueError(f"q_box must have shape ({m}, 2)")
    counts = (n,) * m if isinstance(n, int) else tuple(n)
    axes = []
    for (lo, hi), cnt in zip(q_box, counts):
        axes.append(np.array([0.5 * (lo + hi)]) if cnt == 1 else np.linspace(lo, hi, cnt))
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    qs = (
        np.stack([g.ravel() for g in mesh], axis=1)
        if mesh
        else np.zeros((1, 0))
    )
    states, duals, converged = reconstruct_batch(structure, x_star, qs)
    results: list[ReconstructionResult] = []
    failures: list[tuple[np.ndarray, str]] = []
    Qf = structure.Q_fast.astype(float)
    for k in range(qs.shape[0]):
        if converged[k]:
            res = float(np.linalg.norm(Qf @ states[k] - qs[k]))
            results.append(
                ReconstructionResult(
                    x=states[k], q=qs[k], dual=duals[k], kkt_residual=res,
                    newton_iters=-1,
                )
            )
        else:
            failures.append((qs[k], "reconstruction did not converge"))
    return ManifoldSample(results=results, failures=failures)
