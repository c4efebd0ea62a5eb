"""Mass-action kinetics: intensities, the stiff reaction-rate equation and
fast-detailed-balance detection.

Forward/backward intensities follow the law of mass action
``psi_r^{+-} = k_r^{+-} prod_i x_i^{gamma_i^{+-}}`` with the convention
0^0 = 1.  Fast reactions contribute to the dynamics at scale 1/epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .network import Network, Timescale
from .paths import Path

__all__ = [
    "IntegrationError",
    "FdbError",
    "FdbResult",
    "StepControl",
    "intensity",
    "intensities",
    "rre_rhs",
    "rre_jacobian",
    "scale_vector",
    "fast_defect",
    "manifold_tolerance",
    "fdb_solve",
    "integrate_rre",
]

NEGATIVE_CLAMP = 1e-12  # entries in [-NEGATIVE_CLAMP, 0) are clamped to 0


class IntegrationError(RuntimeError):
    pass


class FdbError(ValueError):
    pass


def _gamma_pm(net: Network) -> tuple[np.ndarray, np.ndarray]:
    gp = np.array([rx.gamma_plus for rx in net.reactions], dtype=np.int64)
    gm = np.array([rx.gamma_minus for rx in net.reactions], dtype=np.int64)
    return gp.reshape(net.n_reactions, net.n_species), gm.reshape(
        net.n_reactions, net.n_species
    )


def intensities(net: Network, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All forward/backward intensities at state ``x`` as (R,) arrays."""
    x = np.asarray(x, dtype=float)
    gp, gm = _gamma_pm(net)
    kp = np.array([rx.k_plus for rx in net.reactions], dtype=float)
    km = np.array([rx.k_minus for rx in net.reactions], dtype=float)
    # 0**0 == 1 in numpy, matching the mass-action convention.
    psi_p = kp * np.prod(np.power(x[None, :], gp), axis=1)
    psi_m = km * np.prod(np.power(x[None, :], gm), axis=1)
    return psi_p, psi_m


def intensities_batch(net: Network, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Intensities for a batch of states: xs (N, I) -> two (N, R) arrays."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    gp, gm = _gamma_pm(net)
    kp = np.array([rx.k_plus for rx in net.reactions], dtype=float)
    km = np.array([rx.k_minus for rx in net.reactions], dtype=float)
    psi_p = kp[None, :] * np.prod(np.power(xs[:, None, :], gp[None, :, :]), axis=2)
    psi_m = km[None, :] * np.prod(np.power(xs[:, None, :], gm[None, :, :]), axis=2)
    return psi_p, psi_m


def intensity(net: Network, x: np.ndarray, r: int) -> tuple[float, float]:
    """Forward/backward intensity of reaction ``r`` at state ``x``."""
    if not 0 <= r < net.n_reactions:
        raise IndexError(f"reaction index {r} out of range")
    psi_p, psi_m = intensities(net, x)
    return float(psi_p[r]), float(psi_m[r])


def scale_vector(net: Network, eps: float) -> np.ndarray:
    """Per-reaction time scale factors: 1 for slow, 1/eps for fast."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return np.array(
        [1.0 / eps if rx.timescale is Timescale.FAST else 1.0 for rx in net.reactions]
    )


def rre_rhs(net: Network, x: np.ndarray, eps: float) -> np.ndarray:
    """Right-hand side of the fast-slow reaction-rate equation."""
    psi_p, psi_m = intensities(net, x)
    s = scale_vector(net, eps)
    G = net.gamma_matrix().astype(float)
    return G.T @ (s * (psi_p - psi_m))


def _intensity_gradients(net: Network, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """d psi^{+-}_r / d x_j as (R, I) arrays, valid on the closed orthant."""
    x = np.asarray(x, dtype=float)
    gp, gm = _gamma_pm(net)
    kp = np.array([rx.k_plus for rx in net.reactions], dtype=float)
    km = np.array([rx.k_minus for rx in net.reactions], dtype=float)
    R, I = gp.shape

    def grad(g: np.ndarray, k: np.ndarray) -> np.ndarray:
        out = np.zeros((R, I))
        for r in range(R):
            for j in range(I):
                gj = g[r, j]
                if gj == 0:
                    continue
                others = np.prod(
                    [x[i] ** g[r, i] for i in range(I) if i != j], dtype=float
                )
                out[r, j] = k[r] * gj * x[j] ** (gj - 1) * others
        return out

    return grad(gp, kp), grad(gm, km)


def rre_jacobian(net: Network, x: np.ndarray, eps: float) -> np.ndarray:
    """Analytic Jacobian of ``rre_rhs`` with respect to the state."""
    dpsi_p, dpsi_m = _intensity_gradients(net, x)
    s = scale_vector(net, eps)
    G = net.gamma_matrix().astype(float)
    return G.T @ (s[:, None] * (dpsi_p - dpsi_m))


def fast_defect(net: Network, x: np.ndarray) -> float:
    """Sum over fast reactions of (sqrt(psi+) - sqrt(psi-))^2; zero exactly on
    the set of fast equilibria."""
    psi_p, psi_m = intensities(net, x)
    fast = list(net.fast_indices)
    if not fast:
        return 0.0
    d = np.sqrt(psi_p[fast]) - np.sqrt(psi_m[fast])
    return float(np.dot(d, d))


def manifold_tolerance(x: np.ndarray) -> float:
    """Shared scale-aware tolerance for fast-equilibrium membership."""
    x = np.asarray(x, dtype=float)
    return 1e-10 * (1.0 + float(np.dot(x, x)))


@dataclass(frozen=True)
class FdbResult:
    """Outcome of the fast-detailed-balance solve.

    ``x_star`` is the positive reference equilibrium when the log-linear
    system is consistent; otherwise None, with the unsatisfied residual in
    ``log_residual`` (sup norm over fast reactions).
    """

    x_star: np.ndarray | None
    log_residual: float

    @property
    def found(self) -> bool:
        return self.x_star is not None


def fdb_solve(net: Network, tol: float = 1e-10) -> FdbResult:
    """Detect fast detailed balance by solving gamma_r . log x = log(k+/k-)
    over the fast reactions in the least-squares sense.

    Returns the minimum-norm log solution exponentiated when the residual is
    below ``tol``; raises FdbError on a fast reaction with zero rates.
    """
    fast = list(net.fast_indices)
    if not fast:
        return FdbResult(np.ones(net.n_species), 0.0)
    for r in fast:
        if net.reactions[r].k_plus == 0 or net.reactions[r].k_minus == 0:
            raise FdbError(f"fast reaction {r} has a zero rate")
    A = net.gamma_matrix()[fast, :].astype(float)
    b = np.array(
        [np.log(net.reactions[r].k_plus / net.reactions[r].k_minus) for r in fast]
    )
    y, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = float(np.max(np.abs(A @ y - b))) if len(fast) else 0.0
    if residual <= tol:
        return FdbResult(np.exp(y), residual)
    return FdbResult(None, residual)


@dataclass(frozen=True)
class StepControl:
    """Adaptive step control for the stiff integrator."""

    rtol: float = 1e-10
    atol: float = 1e-12
    n_out: int = 201
    max_step: float = np.inf
    method: str = "Radau"  # implicit for the 1/eps stiffness; "RK45" for mild eps


def integrate_rre(
    net: Network,
    x0: np.ndarray,
    eps: float,
    T: float,
    ctrl: StepControl = StepControl(),
) -> Path:
    """Integrate the fast-slow reaction-rate equation on [0, T].

    Uses an implicit stiff stepper with the analytic Jacobian by default.
    States are clamped at tiny negative overshoot and the integration aborts
    on larger negativity or step-size failure.
    """
    x0 = np.asarray(x0, dtype=float)
    if T <= 0:
        raise ValueError("T must be positive")
    if np.any(x0 < 0):
        raise ValueError("x0 must be nonnegative")

    def rhs(t, y):
        return rre_rhs(net, np.maximum(y, 0.0), eps)

    def jac(t, y):
        return rre_jacobian(net, np.maximum(y, 0.0), eps)

    t_eval = np.linspace(0.0, T, ctrl.n_out)
    kwargs = dict(rtol=ctrl.rtol, atol=ctrl.atol, max_step=ctrl.max_step, t_eval=t_eval)
    if ctrl.method in ("Radau", "BDF", "LSODA"):
        kwargs["jac"] = jac
    sol = solve_ivp(rhs, (0.0, T), x0, method=ctrl.method, **kwargs)
    if not sol.success:
        t_fail = sol.t[-1] if len(sol.t) else 0.0
        raise IntegrationError(f"step-size failure near t={t_fail:.6g}: {sol.message}")
    states = sol.y.T.copy()
    low = states.min()
    if low < -NEGATIVE_CLAMP:
        k = int(np.argmin(states.min(axis=1)))
        raise IntegrationError(
            f"negative-state overshoot {low:.3e} at t={sol.t[k]:.6g}"
        )
    np.clip(states, 0.0, None, out=states)
    return Path(times=sol.t.copy(), states=states, kind="full")
