"""Discrete action functionals and least-action value computation.

A trajectory cost is the midpoint-rule sum of Lagrangian evaluations plus an
initial cost; minimizing over interior knots with the final knot pinned
yields the value function of the state-constrained problem.  Knots are
parametrized inside the affine subspace reachable from the endpoint, so step
velocities stay feasible by construction, and gradients use the envelope
theorem (dL/dv = p*, dL/dx = -dH/dx at the dual optimum).  The epsilon sweep
harness compares these values against the effective one and re-prices the
fixed effective minimizer at each epsilon.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .effective import slow_rhs
from .equilibria import ReconstructionError, reconstruct, reconstruct_batch
from .kinetics import _gamma_pm, intensities_batch, rre_rhs, scale_vector
from .network import Network
from .paths import Path
from .rate_functions import S, legendre_dual_batch
from .stoich import SPAN_TOL, StoichStructure, span_residual

__all__ = [
    "CoarseCost",
    "constant_cost",
    "quadratic_cost",
    "ActionResult",
    "MinimizeOptions",
    "default_domain",
    "action_eps",
    "action_eff",
    "minimize_action_eps",
    "minimize_action_eff",
    "mosco_sweep",
    "SweepRow",
    "SweepResult",
]

BIG_VALUE = 1e12  # objective placeholder when a step cannot be priced


# ---------------------------------------------------------------------------
# initial costs (well-prepared by construction: functions of Q_fast x)


@dataclass
class CoarseCost:
    """Initial cost u0(x) = g(Q_fast x); constant along fast directions."""

    structure: StoichStructure
    g: Callable[[np.ndarray], float]
    g_grad: Callable[[np.ndarray], np.ndarray]
    label: str = "coarse"

    def value(self, x: np.ndarray) -> float:
        return float(self.g(self.structure.coarse(x)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        gq = np.asarray(self.g_grad(self.structure.coarse(x)), dtype=float)
        return self.structure.Q_fast.T.astype(float) @ gq

    def value_q(self, q: np.ndarray) -> float:
        return float(self.g(np.asarray(q, dtype=float)))

    def grad_q(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(self.g_grad(np.asarray(q, dtype=float)), dtype=float)


def constant_cost(structure: StoichStructure, c: float = 0.0) -> CoarseCost:
    m = structure.m_fast
    return CoarseCost(structure, lambda q: c, lambda q: np.zeros(m), label=f"const:{c}")


def quadratic_cost(
    structure: StoichStructure, center_q: np.ndarray, weight: float = 1.0
) -> CoarseCost:
    center_q = np.asarray(center_q, dtype=float)
    return CoarseCost(
        structure,
        lambda q: 0.5 * weight * float(np.sum((q - center_q) ** 2)),
        lambda q: weight * (q - center_q),
        label="quadratic",
    )


# ---------------------------------------------------------------------------
# action evaluation


@dataclass
class ActionResult:
    value: float
    path: Path
    per_step_cost: list[float]
    fast_cost_share: float
    converged: bool
    extras: dict = field(default_factory=dict)


def _price_steps_eps(
    net: Network,
    structure: StoichStructure,
    mids: np.ndarray,
    vels: np.ndarray,
    eps: float,
    check_span: bool = True,
):
    """Batched per-step Lagrangian pricing; returns values, momenta, fluxes, ok."""
    N = mids.shape[0]
    B = structure.gamma_onb
    G = net.gamma_matrix().astype(float)
    s = scale_vector(net, eps)
    psi_p, psi_m = intensities_batch(net, mids)
    alpha = psi_p * s[None, :]
    beta = psi_m * s[None, :]
    feasible = np.ones(N, dtype=bool)
    if check_span:
        for k in range(N):
            resid = span_residual(structure.gamma_basis, vels[k])
            feasible[k] = resid <= SPAN_TOL * (1.0 + np.linalg.norm(vels[k]))
    values, cs, conv = legendre_dual_batch(G @ B, alpha, beta, vels @ B)
    ps = cs @ B.T
    exps = ps @ G.T
    with np.errstate(over="ignore", invalid="ignore"):
        J = np.where(alpha > 0, alpha * np.exp(exps), 0.0) - np.where(
            beta > 0, beta * np.exp(-exps), 0.0
        )
    return values, ps, J, alpha, beta, conv, feasible


def action_eps(
    net: Network,
    structure: StoichStructure,
    path: Path,
    eps: float,
    u0: CoarseCost,
) -> ActionResult:
    """Midpoint-rule action of a full-space path under the fast-slow Lagrangian."""
    if path.kind != "full":
        raise ValueError("action_eps prices full-space paths")
    dt = np.diff(path.times)
    mids = path.midpoints()
    vels = path.velocities()
    values, ps, J, alpha, beta, conv, feasible = _price_steps_eps(
        net, structure, mids, vels, eps
    )
    start_cost = u0.value(path.states[0])
    per_step = []
    slow_rows = list(structure.slow_rows)
    fast_rows = list(structure.fast_rows)
    fast_total = 0.0
    cost_total = 0.0
    for k in range(len(dt)):
        if not feasible[k]:
            per_step.append(np.inf)
            continue
        per_step.append(float(dt[k] * values[k]))
        cost_total += dt[k] * values[k]
        if fast_rows:
            fast_total += dt[k] * sum(
                S(J[k, r], alpha[k, r], beta[k, r]) for r in fast_rows
            )
    if not np.all(feasible):
        value = np.inf
    else:
        value = start_cost + cost_total
    share = 0.0
    if np.isfinite(cost_total) and cost_total > 1e-300:
        share = min(max(fast_total / cost_total, 0.0), 1.0)
    return ActionResult(
        value=float(value),
        path=path,
        per_step_cost=per_step,
        fast_cost_share=share,
        converged=bool(np.all(conv[feasible])) if np.any(feasible) else True,
        extras={"momenta": ps, "start_cost": start_cost},
    )


def _price_steps_cg(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    q_mids: np.ndarray,
    v_cgs: np.ndarray,
    x_mids: np.ndarray | None = None,
    check_span: bool = True,
):
    """Coarse-grained per-step pricing; reconstructs midpoint states if needed."""
    N = q_mids.shape[0]
    if x_mids is None:
        x_mids, _, ok = reconstruct_batch(structure, x_star, q_mids)
    else:
        ok = np.ones(N, dtype=bool)
    slow = list(structure.slow_rows)
    Bcg = structure.cg_slow_onb
    dirs = structure.cg_slow_directions @ Bcg
    psi_p, psi_m = intensities_batch(net, np.maximum(x_mids, 1e-300))
    alpha = psi_p[:, slow] if slow else np.zeros((N, 0))
    beta = psi_m[:, slow] if slow else np.zeros((N, 0))
    feasible = ok.copy()
    if check_span:
        for k in range(N):
            resid = span_residual(structure.cg_slow_directions, v_cgs[k])
            feasible[k] &= resid <= SPAN_TOL * (1.0 + np.linalg.norm(v_cgs[k]))
    values, cs, conv = legendre_dual_batch(dirs, alpha, beta, v_cgs @ Bcg)
    sps = cs @ Bcg.T
    return values, sps, alpha, beta, x_mids, conv, feasible, ok


def action_eff(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    path: Path,
    u0: CoarseCost,
) -> ActionResult:
    """Midpoint-rule effective action.

    Full paths must sit on the fast-equilibrium manifold at every knot
    (otherwise the value is +inf); coarse paths are priced through the
    reconstruction of their midpoints.  Corresponding full and coarse paths
    are priced identically.
    """
    from .kinetics import fast_defect, manifold_tolerance

    dt = np.diff(path.times)
    if path.kind == "full":
        for x in path.states:
            if fast_defect(net, x) > manifold_tolerance(x):
                return ActionResult(
                    value=np.inf,
                    path=path,
                    per_step_cost=[np.inf] * len(dt),
                    fast_cost_share=0.0,
                    converged=True,
                    extras={"off_manifold": True},
                )
        q_states = path.states @ structure.Q_fast.T.astype(float)
        start_cost = u0.value(path.states[0])
    else:
        q_states = path.states
        start_cost = u0.value_q(q_states[0])
    q_mids = 0.5 * (q_states[:-1] + q_states[1:])
    v_cgs = np.diff(q_states, axis=0) / dt[:, None]
    values, sps, alpha, beta, x_mids, conv, feasible, ok = _price_steps_cg(
        net, structure, x_star, q_mids, v_cgs
    )
    if not np.all(ok):
        raise ReconstructionError("midpoint reconstruction failed on the coarse path")
    per_step = [
        float(dt[k] * values[k]) if feasible[k] else np.inf for k in range(len(dt))
    ]
    value = start_cost + sum(per_step)
    return ActionResult(
        value=float(value),
        path=path,
        per_step_cost=per_step,
        fast_cost_share=0.0,
        converged=bool(np.all(conv[feasible])) if np.any(feasible) else True,
        extras={"momenta": sps, "start_cost": start_cost},
    )


# ---------------------------------------------------------------------------
# minimization


@dataclass
class MinimizeOptions:
    max_iters: int = 500
    gtol: float = 1e-8          # scaled by (1 + |value at seed|)
    penalty: float = 1e4
    seed: int = 0
    n_random: int = 2
    box: np.ndarray | None = None    # (I, 2) state box, defaults from context
    box_q: np.ndarray | None = None  # (m_fast, 2) coarse box (effective solver)
    starts: tuple[str, ...] = ("constant", "backward", "anchor")


def default_domain(points: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Axis-aligned box around reference points, kept away from the boundary.

    The lower face sits at ``margin`` times the componentwise scale (or below
    the smallest reference value), the upper face comfortably above.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    scale = np.maximum(pts.max(axis=0), 1e-6)
    lo = np.minimum(margin * scale, 0.5 * np.maximum(pts.min(axis=0), 1e-12))
    hi = 2.0 * scale
    return np.stack([lo, hi], axis=1)


def _box_clamp(x: np.ndarray, box: np.ndarray) -> np.ndarray:
    return np.clip(x, box[:, 0][None, :], box[:, 1][None, :])


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FASTSLOW_THREADS", "1")))
    except ValueError:
        return 1


def _lbfgs(objective, z0, max_iters, gtol):
    res = minimize(
        objective,
        z0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iters, "maxcor": 20, "ftol": 1e-16, "gtol": gtol},
    )
    return res


def _dHdx_weights(gp, gm, psi_p, psi_m, scales, exps):
    """Batched dH/dx for reactions with exponents ``exps`` (N, R); states > 0."""
    with np.errstate(over="ignore"):
        wp = scales[None, :] * psi_p * np.expm1(exps)
        wm = scales[None, :] * psi_m * np.expm1(-exps)
    return wp, wm


def minimize_action_eps(
    net: Network,
    structure: StoichStructure,
    x_end: np.ndarray,
    T: float,
    N: int,
    eps: float,
    u0: CoarseCost,
    opts: MinimizeOptions = MinimizeOptions(),
) -> ActionResult:
    """Value u(x_end, T) of the epsilon action by multi-start quasi-Newton descent.

    Knots are x_k = x_end + B xi_k with B an orthonormal basis of the
    stoichiometric subspace, so every step velocity is feasible; the final
    knot is pinned.  Iterates outside the state box are pulled back by a
    quadratic penalty and Lagrangian evaluations clamp midpoints into the box.
    """
    if N < 4:
        raise ValueError("need at least 4 steps")
    x_end = np.asarray(x_end, dtype=float)
    B = structure.gamma_onb
    d = B.shape[1]
    I = structure.n_species
    times = np.linspace(0.0, T, N + 1)
    dt = times[1] - times[0]
    box = opts.box if opts.box is not None else default_domain(x_end[None, :])
    G = net.gamma_matrix().astype(float)
    gp, gm = _gamma_pm(net)
    scales = scale_vector(net, eps)
    dirs = G @ B
    mu = opts.penalty

    def knots_of(z):
        xi = z.reshape(N, d)
        return np.vstack([x_end[None, :] + xi @ B.T, x_end[None, :]])

    def objective(z):
        X = knots_of(z)
        mids = 0.5 * (X[:-1] + X[1:])
        vels = np.diff(X, axis=0) / dt
        mids_c = _box_clamp(mids, box)
        knots_c = _box_clamp(X[:N], box)
        psi_p, psi_m = intensities_batch(net, mids_c)
        alpha = psi_p * scales[None, :]
        beta = psi_m * scales[None, :]
        values, cs, conv = legendre_dual_batch(dirs, alpha, beta, vels @ B)
        grad_x = np.zeros((N + 1, I))
        pen = float(mu * np.sum((X[:N] - knots_c) ** 2) + mu * np.sum((mids - mids_c) ** 2))
        grad_x[:N] += 2.0 * mu * (X[:N] - knots_c)
        dpen_mid = 2.0 * mu * (mids - mids_c)
        grad_x[:-1] += 0.5 * dpen_mid
        grad_x[1:] += 0.5 * dpen_mid
        if not np.all(np.isfinite(values)) or not np.all(conv):
            val = BIG_VALUE + pen
            g = (grad_x[:N] @ B).ravel()
            return val, g
        ps = cs @ B.T
        exps = ps @ G.T
        wp, wm = _dHdx_weights(gp, gm, psi_p, psi_m, scales, exps)
        inside = ((mids > box[:, 0][None, :]) & (mids < box[:, 1][None, :])).astype(float)
        dHdx = ((wp @ gp) + (wm @ gm)) / mids_c * inside
        step_grad_common = dt * 0.5 * (-dHdx)
        grad_x[:-1] += step_grad_common - ps
        grad_x[1:] += step_grad_common + ps
        grad_x[0] += u0.grad(X[0])
        val = float(u0.value(X[0]) + dt * values.sum() + pen)
        return val, (grad_x[:N] @ B).ravel()

    seeds = _seeds_eps(net, structure, x_end, times, eps, u0, B, box, opts)
    rng = np.random.default_rng(opts.seed)
    base = seeds[0][1]
    for j in range(opts.n_random):
        jitter = 0.05 * rng.standard_normal(base.shape) * (1.0 + np.abs(base))
        seeds.append((f"random{j}", base + jitter))

    candidates = []

    def run_start(item):
        name, z0 = item
        f0, _ = objective(z0)
        gtol = opts.gtol * (1.0 + abs(min(f0, BIG_VALUE)))
        res = _lbfgs(objective, z0.ravel(), opts.max_iters, gtol)
        X = knots_of(res.x)
        path = Path(times=times, states=X, kind="full")
        priced = action_eps(net, structure, path, eps, u0)
        priced.extras.update({"start": name, "iters": int(res.nit), "opt_success": bool(res.success)})
        priced.converged = priced.converged and bool(res.success)
        return priced

    n_threads = _threads()
    if n_threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            candidates = list(ex.map(run_start, seeds))
    else:
        candidates = [run_start(s) for s in seeds]

    finite = [c for c in candidates if np.isfinite(c.value)]
    converged = [c for c in finite if c.converged]
    pool = converged if converged else (finite if finite else candidates)
    best = min(pool, key=lambda c: c.value)
    best.extras["n_starts"] = len(candidates)
    if not converged:
        best.converged = False
    return best


def _seeds_eps(net, structure, x_end, times, eps, u0, B, box, opts):
    N = len(times) - 1
    d = B.shape[1]
    seeds = []
    names = opts.starts
    if "constant" in names:
        seeds.append(("constant", np.zeros((N, d))))
    if "backward" in names:
        traj = _backward_states(net, structure, x_end, times, eps)
        if traj is not None:
            xi = (traj[:N] - x_end[None, :]) @ B
            seeds.append(("backward", xi))
    if "anchor" in names:
        xi0 = _anchor_point(u0, x_end, B, box, opts)
        ramp = (1.0 - times[:N] / times[-1])[:, None] * xi0[None, :]
        seeds.append(("anchor", ramp))
    if not seeds:
        seeds.append(("constant", np.zeros((N, d))))
    return seeds


def _backward_states(net, structure, x_end, times, eps):
    """Knots along the time-reversed relaxation ending at x_end (seed only)."""
    T = times[-1]
    try:
        x_star0 = _fdb_reference(net)
        q_end = structure.coarse(x_end)
        rec = reconstruct(structure, x_star0, q_end)

        def rhs(t, q):
            try:
                x = reconstruct(structure, x_star0, q).x
            except ReconstructionError:
                return np.zeros_like(q)
            return -structure.Q_fast.astype(float) @ slow_rhs(net, x)

        sol = solve_ivp(rhs, (0.0, T), q_end, t_eval=T - times[::-1], rtol=1e-8, atol=1e-10)
        if not sol.success:
            return None
        qs = sol.y.T[::-1]  # forward order: q(t_k) = q_back(T - t_k)
        states, _, ok = reconstruct_batch(structure, x_star0, qs)
        if not np.all(ok):
            return None
        # carry the endpoint exactly
        states[-1] = x_end
        return states
    except (ReconstructionError, ValueError):
        return None


def _fdb_reference(net):
    from .kinetics import fdb_solve

    res = fdb_solve(net)
    if res.x_star is None:
        raise ValueError("network has no fast detailed balance reference")
    return res.x_star


def _anchor_point(u0, x_end, B, box, opts):
    """Gamma-coordinates of the (penalized) minimizer of u0 on x_end + span(B)."""
    mu = opts.penalty

    def f(xi):
        x = x_end + B @ xi
        xc = np.clip(x, box[:, 0], box[:, 1])
        val = u0.value(xc) + mu * float(np.sum((x - xc) ** 2))
        g = B.T @ (u0.grad(xc) * ((x > box[:, 0]) & (x < box[:, 1])) + 2 * mu * (x - xc))
        return val, g

    res = minimize(f, np.zeros(B.shape[1]), jac=True, method="L-BFGS-B",
                   options={"maxiter": 200})
    return res.x


def minimize_action_eff(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    x_end: np.ndarray,
    T: float,
    N: int,
    u0: CoarseCost,
    opts: MinimizeOptions = MinimizeOptions(),
) -> ActionResult:
    """Effective value u*(x_end, T) by descent in coarse coordinates.

    Knots are q_k = q_end + B zeta_k over the span of the coarse slow
    directions; the result carries the reconstructed full path.  The state
    box acts on reconstructed states (or directly on q via ``opts.box_q``).
    """
    if N < 4:
        raise ValueError("need at least 4 steps")
    x_end = np.asarray(x_end, dtype=float)
    q_end = structure.coarse(x_end)
    Bcg = structure.cg_slow_onb
    d = Bcg.shape[1]
    m = structure.m_fast
    I = structure.n_species
    slow = list(structure.slow_rows)
    times = np.linspace(0.0, T, N + 1)
    dt = times[1] - times[0]
    Qf = structure.Q_fast.astype(float)
    dirs_full = structure.cg_slow_directions
    dirs = dirs_full @ Bcg
    gp, gm = _gamma_pm(net)
    gp_s, gm_s = gp[slow], gm[slow]
    ones = np.ones(len(slow))
    box = opts.box if opts.box is not None else default_domain(x_end[None, :])
    box_q = opts.box_q
    mu = opts.penalty

    def knots_of(z):
        zeta = z.reshape(N, d)
        return np.vstack([q_end[None, :] + zeta @ Bcg.T, q_end[None, :]])

    def objective(z):
        Qk = knots_of(z)
        q_mids = 0.5 * (Qk[:-1] + Qk[1:])
        v_cgs = np.diff(Qk, axis=0) / dt
        all_q = np.vstack([q_mids, Qk[:N]])
        states, _, ok = reconstruct_batch(structure, x_star, all_q)
        grad_q = np.zeros((N + 1, m))
        if not np.all(ok):
            return BIG_VALUE * (1.0 + float(np.sum(~ok))), np.zeros(N * d)
        x_mids, x_knots = states[:N], states[N:]
        psi_p, psi_m = intensities_batch(net, x_mids)
        alpha, beta = psi_p[:, slow], psi_m[:, slow]
        values, cs, conv = legendre_dual_batch(dirs, alpha, beta, v_cgs @ Bcg)
        pen = 0.0
        if box_q is not None:
            qk_c = np.clip(Qk[:N], box_q[:, 0][None, :], box_q[:, 1][None, :])
            pen += mu * float(np.sum((Qk[:N] - qk_c) ** 2))
            grad_q[:N] += 2.0 * mu * (Qk[:N] - qk_c)
        else:
            xk_c = _box_clamp(x_knots, box)
            pen += mu * float(np.sum((x_knots - xk_c) ** 2))
            DRk = _dr_batch(Qf, x_knots)
            grad_q[:N] += 2.0 * mu * np.einsum("ni,nim->nm", x_knots - xk_c, DRk)
        if not np.all(np.isfinite(values)) or not np.all(conv):
            return BIG_VALUE + pen, (grad_q[:N] @ Bcg).ravel()
        sps = cs @ Bcg.T
        exps = sps @ dirs_full.T
        wp, wm = _dHdx_weights(gp_s, gm_s, alpha, beta, ones, exps)
        dHdx = ((wp @ gp_s) + (wm @ gm_s)) / x_mids
        DRm = _dr_batch(Qf, x_mids)
        dHdq = np.einsum("ni,nim->nm", dHdx, DRm)
        step_grad_common = dt * 0.5 * (-dHdq)
        grad_q[:-1] += step_grad_common - sps
        grad_q[1:] += step_grad_common + sps
        grad_q[0] += u0.grad_q(Qk[0])
        val = float(u0.value_q(Qk[0]) + dt * values.sum() + pen)
        return val, (grad_q[:N] @ Bcg).ravel()

    seeds = [("constant", np.zeros((N, d)))]
    back = _backward_coarse(net, structure, x_star, q_end, times)
    if back is not None and "backward" in opts.starts:
        seeds.append(("backward", (back[:N] - q_end[None, :]) @ Bcg))
    if "anchor" in opts.starts:
        zeta0 = _anchor_coarse(u0, q_end, Bcg, opts)
        seeds.append(("anchor", (1.0 - times[:N] / T)[:, None] * zeta0[None, :]))
    rng = np.random.default_rng(opts.seed)
    for j in range(opts.n_random):
        jitter = 0.05 * rng.standard_normal((N, d)) * (1.0 + np.abs(seeds[0][1]))
        seeds.append((f"random{j}", seeds[0][1] + jitter))

    candidates = []
    for name, z0 in seeds:
        f0, _ = objective(z0.ravel())
        gtol = opts.gtol * (1.0 + abs(min(f0, BIG_VALUE)))
        res = _lbfgs(objective, z0.ravel(), opts.max_iters, gtol)
        Qk = knots_of(res.x)
        states, _, ok = reconstruct_batch(structure, x_star, Qk)
        if not np.all(ok):
            continue
        states[-1] = x_end
        coarse_path = Path(times=times, states=Qk, kind="coarse")
        full_path = Path(times=times, states=states, kind="full")
        priced = action_eff(net, structure, x_star, coarse_path, u0)
        priced.path = full_path
        priced.extras.update(
            {"start": name, "iters": int(res.nit), "opt_success": bool(res.success),
             "coarse_path": coarse_path}
        )
        priced.converged = priced.converged and bool(res.success)
        candidates.append(priced)
    if not candidates:
        raise ReconstructionError("all effective starts failed to reconstruct")
    finite = [c for c in candidates if np.isfinite(c.value)]
    converged = [c for c in finite if c.converged]
    pool = converged if converged else (finite if finite else candidates)
    best = min(pool, key=lambda c: c.value)
    best.extras["n_starts"] = len(candidates)
    if not converged:
        best.converged = False
    return best


def _dr_batch(Qf: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Reconstruction Jacobians DR = X Qf^T (Qf X Qf^T)^{-1} for a state batch."""
    XQt = xs[:, :, None] * Qf.T[None, :, :]          # (N, I, m)
    M = np.einsum("ai,nib->nab", Qf, XQt)            # (N, m, m)
    Z = np.linalg.solve(M, np.transpose(XQt, (0, 2, 1)))  # (N, m, I)
    return np.transpose(Z, (0, 2, 1))                # (N, I, m)


def _backward_coarse(net, structure, x_star, q_end, times):
    T = times[-1]

    def rhs(t, q):
        try:
            x = reconstruct(structure, x_star, q).x
        except ReconstructionError:
            return np.zeros_like(q)
        return -structure.Q_fast.astype(float) @ slow_rhs(net, x)

    sol = solve_ivp(rhs, (0.0, T), q_end, t_eval=T - times[::-1], rtol=1e-8, atol=1e-10)
    if not sol.success:
        return None
    return sol.y.T[::-1]


def _anchor_coarse(u0, q_end, Bcg, opts):
    def f(zeta):
        q = q_end + Bcg @ zeta
        return u0.value_q(q), Bcg.T @ u0.grad_q(q)

    res = minimize(f, np.zeros(Bcg.shape[1]), jac=True, method="L-BFGS-B",
                   options={"maxiter": 200})
    return res.x


# ---------------------------------------------------------------------------
# epsilon sweep


@dataclass
class SweepRow:
    eps: float
    value: float
    gap: float
    fast_cost_share: float
    iters: int
    converged: bool
    recovery_gap: float


@dataclass
class SweepResult:
    u_star: float
    u_star_converged: bool
    rows: list[SweepRow]
    effective: ActionResult

    def to_csv(self) -> str:
        lines = ["eps,value,gap,fast_cost_share,iters,converged,recovery_gap"]
        for row in self.rows:
            lines.append(
                f"{row.eps!r},{row.value!r},{row.gap!r},{row.fast_cost_share!r},"
                f"{row.iters},{int(row.converged)},{row.recovery_gap!r}"
            )
        lines.append(f"# u_star,{self.u_star!r}")
        return "\n".join(lines) + "\n"


def mosco_sweep(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    x_end: np.ndarray,
    T: float,
    u0: CoarseCost,
    eps_list: list[float],
    N: int = 16,
    opts: MinimizeOptions = MinimizeOptions(),
) -> SweepResult:
    """Value-convergence sweep: u^eps(x_end, T) against u*(x_end, T).

    Also re-prices the fixed effective minimizer path at every epsilon (the
    recovery-sequence surrogate); its cost excess over the effective action
    must vanish as the scale separation sharpens.
    """
    eff = minimize_action_eff(net, structure, x_star, x_end, T, N, u0, opts)
    eff_path = eff.path
    eff_on_path = action_eff(net, structure, x_star, eff_path, u0).value

    def run_cell(eps):
        cell = minimize_action_eps(net, structure, x_end, T, N, eps, u0, opts)
        surrogate = action_eps(net, structure, eff_path, eps, u0)
        return SweepRow(
            eps=eps,
            value=cell.value,
            gap=abs(cell.value - eff.value),
            fast_cost_share=cell.fast_cost_share,
            iters=int(cell.extras.get("iters", -1)),
            converged=cell.converged,
            recovery_gap=surrogate.value - eff_on_path,
        )

    n_threads = _threads()
    if n_threads > 1 and len(eps_list) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            rows = list(ex.map(run_cell, eps_list))
    else:
        rows = [run_cell(e) for e in eps_list]
    return SweepResult(
        u_star=eff.value, u_star_converged=eff.converged, rows=rows, effective=eff
    )
