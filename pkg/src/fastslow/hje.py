"""State-constrained grid solver for the exponential Hamilton-Jacobi equations.

The spatial discretization is the pre-limit discrete equation of the WKB
expansion: on a lattice with spacing h the update at node x is

    u <- u - dt * sum_r scale_r * [ psi+_r(x) (e^{(u(x)-u(x-gamma_r h))/h} - 1)
                                  + psi-_r(x) (e^{(u(x)-u(x+gamma_r h))/h} - 1) ]

which is monotone under a gradient-aware CFL bound and preserves constants
exactly.  The state constraint is realized by omitting stencil terms that
reference nodes outside the box (no ghost values), the discrete counterpart
of the one-sided sub/supersolution asymmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .equilibria import reconstruct_batch
from .kinetics import intensities_batch, scale_vector
from .network import Network
from .stoich import StoichStructure

__all__ = [
    "Lattice",
    "GridField",
    "WellPreparedData",
    "WellPreparednessError",
    "CoercivityError",
    "CflError",
    "make_lattice",
    "make_well_prepared",
    "solve_hje_eps",
    "solve_hje_cg",
    "lipschitz_report",
    "manifold_adjacent_mask",
    "LipschitzEntry",
    "LipschitzReport",
]

EPS_FLOOR = 1e-3          # explicit scheme refuses smaller scale separation
MAX_GRID_DIM = 3
CFL_SAFETY = 0.45
GRADIENT_BLOWUP = 200.0   # directional gradient beyond this aborts the solve
FAST_GRADIENT_TOL = 1e-10


class WellPreparednessError(ValueError):
    pass


class CoercivityError(RuntimeError):
    pass


class CflError(RuntimeError):
    pass


@dataclass(frozen=True)
class Lattice:
    """Axis-aligned lattice x = origin + h * k with all nodes inside the box."""

    box: np.ndarray        # (dim, 2)
    h: float
    origin: np.ndarray     # (dim,)
    shape: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.shape)

    def index_mesh(self) -> np.ndarray:
        """Integer index grids stacked on the last axis, shape (*shape, dim)."""
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        return np.stack(grids, axis=-1)

    def node_coords(self) -> np.ndarray:
        """Node coordinates, shape (*shape, dim)."""
        return self.origin + self.h * self.index_mesh()

    def flat_coords(self) -> np.ndarray:
        return self.node_coords().reshape(-1, self.dim)


def make_lattice(box: np.ndarray, h: float) -> Lattice:
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be rows of (lo, hi) with hi > lo")
    if h <= 0:
        raise ValueError("spacing must be positive")
    shape = tuple(int(np.floor((hi - lo) / h + 1e-9)) + 1 for lo, hi in box)
    if any(n < 2 for n in shape):
        raise ValueError("box too small for the requested spacing")
    return Lattice(box=box, h=float(h), origin=box[:, 0].copy(), shape=shape)


@dataclass
class GridField:
    lattice: Lattice
    values: np.ndarray
    time: float
    scheme_meta: dict = field(default_factory=dict)


@dataclass
class WellPreparedData:
    """Initial cost samples on a lattice with the fast-direction gradient audit."""

    lattice: Lattice
    u0: np.ndarray
    fast_gradient_max: float
    c1_bound: float
    coords: str  # "coarse" (exact invariance) or "full" (checked numerically)


def _pair_slices(shape: tuple[int, ...], gamma: np.ndarray):
    """Slices (target, source) with source = target - gamma, both in bounds."""
    tgt, src = [], []
    for n, g in zip(shape, gamma):
        g = int(g)
        if abs(g) >= n:
            return None
        tgt.append(slice(max(g, 0), n + min(g, 0)))
        src.append(slice(max(-g, 0), n + min(-g, 0)))
    return tuple(tgt), tuple(src)


def _directional_gradient_max(
    u: np.ndarray, h: float, gamma: np.ndarray, mask: np.ndarray | None = None
) -> float:
    pair = _pair_slices(u.shape, gamma)
    if pair is None:
        return 0.0
    tgt, src = pair
    diff = np.abs(u[tgt] - u[src]) / h
    if mask is not None:
        both = mask[tgt] & mask[src]
        if not np.any(both):
            return 0.0
        diff = diff[both]
    return float(diff.max()) if diff.size else 0.0


def make_well_prepared(
    structure: StoichStructure,
    box: np.ndarray,
    h: float,
    profile: Callable[[np.ndarray], np.ndarray],
    coords: str = "coarse",
) -> WellPreparedData:
    """Sample an initial cost on the lattice and audit its fast gradients.

    ``coords="coarse"``: the profile maps fast-conserved coordinates (batched,
    trailing axis m_fast) to values; fast-direction invariance then holds
    exactly because coarse coordinates are computed from integer lattice
    indices.  ``coords="full"`` samples the profile on states directly and
    rejects it if any fast directional gradient exceeds the tolerance.
    """
    lattice = make_lattice(box, h)
    Qf = structure.Q_fast.astype(float)
    if coords == "coarse":
        idx = lattice.index_mesh()                      # (*shape, dim)
        q_origin = Qf @ lattice.origin
        q_int = idx @ structure.Q_fast.T                # exact integers
        q_nodes = q_origin + lattice.h * q_int
        u0 = np.asarray(profile(q_nodes), dtype=float)
    elif coords == "full":
        u0 = np.asarray(profile(lattice.node_coords()), dtype=float)
    else:
        raise ValueError("coords must be 'coarse' or 'full'")
    if u0.shape != lattice.shape:
        raise ValueError("profile did not return one value per node")
    if not np.all(np.isfinite(u0)):
        raise WellPreparednessError("initial cost has non-finite samples")
    G = structure.G
    fast_max = 0.0
    all_max = 0.0
    for r in range(G.shape[0]):
        g = _directional_gradient_max(u0, lattice.h, G[r])
        all_max = max(all_max, g)
        if r in structure.fast_rows:
            fast_max = max(fast_max, g)
    axis_max = 0.0
    for a in range(lattice.dim):
        e = np.zeros(lattice.dim, dtype=int)
        e[a] = 1
        axis_max = max(axis_max, _directional_gradient_max(u0, lattice.h, e))
    if fast_max > FAST_GRADIENT_TOL:
        raise WellPreparednessError(
            f"initial cost varies along fast reactions (max gradient {fast_max:.3e})"
        )
    return WellPreparedData(
        lattice=lattice,
        u0=u0,
        fast_gradient_max=fast_max,
        c1_bound=max(all_max, axis_max),
        coords=coords,
    )


class _ExponentialScheme:
    """Shared explicit stepping engine for the eps and coarse-grained solvers."""

    def __init__(
        self,
        lattice: Lattice,
        directions: np.ndarray,       # (R, dim) integers
        psi_plus: np.ndarray,         # (R, *shape)
        psi_minus: np.ndarray,
        scales: np.ndarray,           # (R,)
        mask: np.ndarray | None = None,
    ):
        self.lattice = lattice
        self.directions = np.asarray(directions, dtype=int)
        self.psi_plus = psi_plus
        self.psi_minus = psi_minus
        self.scales = np.asarray(scales, dtype=float)
        self.mask = mask if mask is not None else np.ones(lattice.shape, dtype=bool)
        self.intensity_load = self._max_intensity_load()

    def _max_intensity_load(self) -> float:
        load = np.zeros(self.lattice.shape)
        for r in range(len(self.scales)):
            load += self.scales[r] * (self.psi_plus[r] + self.psi_minus[r])
        return float(load[self.mask].max())

    def coercivity_floor(self) -> float:
        vals = []
        for r in range(len(self.scales)):
            vals.append(self.psi_plus[r][self.mask].min())
            vals.append(self.psi_minus[r][self.mask].min())
        return float(min(vals)) if vals else np.inf

    def _pairs(self, gamma):
        pair = _pair_slices(self.lattice.shape, gamma)
        if pair is None:
            return None
        tgt, src = pair
        both = self.mask[tgt] & self.mask[src]
        return tgt, src, both

    def gradient_max(self, u: np.ndarray) -> float:
        g = 0.0
        h = self.lattice.h
        for r in range(len(self.scales)):
            for sign in (1, -1):
                pr = self._pairs(sign * self.directions[r])
                if pr is None:
                    continue
                tgt, src, both = pr
                if not np.any(both):
                    continue
                g = max(g, float((np.abs(u[tgt] - u[src]) / h)[both].max()))
        return g

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        h = self.lattice.h
        incr = np.zeros_like(u)
        for r in range(len(self.scales)):
            gamma = self.directions[r]
            for sign, psi in ((1, self.psi_plus[r]), (-1, self.psi_minus[r])):
                pr = self._pairs(sign * gamma)
                if pr is None:
                    continue
                tgt, src, both = pr
                diff = (u[tgt] - u[src]) / h
                contrib = self.scales[r] * psi[tgt] * np.expm1(diff)
                incr[tgt] += np.where(both, contrib, 0.0)
        out = u - dt * incr
        return out

    def run(self, u0: np.ndarray, T: float) -> tuple[np.ndarray, dict]:
        u = u0.astype(float).copy()
        t = 0.0
        cfl_history: list[float] = []
        time_lip = 0.0
        steps = 0
        while t < T - 1e-14:
            gmax = self.gradient_max(u)
            if gmax > GRADIENT_BLOWUP:
                raise CflError(f"directional gradient blow-up ({gmax:.3g}) at t={t:.6g}")
            dt = CFL_SAFETY * self.lattice.h / (self.intensity_load * np.exp(gmax))
            if dt <= 0 or not np.isfinite(dt):
                raise CflError(f"CFL step collapsed at t={t:.6g}")
            dt = min(dt, T - t)
            u_new = self.step(u, dt)
            time_lip = max(time_lip, float(np.abs(u_new - u)[self.mask].max()) / dt)
            u = u_new
            t += dt
            steps += 1
            cfl_history.append(dt)
            if steps > 2_000_000:
                raise CflError("step budget exhausted")
        meta = {
            "steps": steps,
            "cfl_history": cfl_history,
            "time_lipschitz": time_lip,
            "final_gradient_max": self.gradient_max(u),
        }
        return u, meta


def _scheme_eps(net: Network, data: WellPreparedData, eps: float) -> _ExponentialScheme:
    lattice = data.lattice
    if lattice.dim != net.n_species:
        raise ValueError("lattice dimension must equal the species count")
    if lattice.dim > MAX_GRID_DIM:
        raise ValueError(f"grid solver supports at most {MAX_GRID_DIM} dimensions")
    if eps < EPS_FLOOR:
        raise ValueError(
            f"explicit scheme requires eps >= {EPS_FLOOR}; use the action solver below"
        )
    coords = lattice.flat_coords()
    psi_p, psi_m = intensities_batch(net, coords)
    R = net.n_reactions
    shape = lattice.shape
    psi_p = psi_p.T.reshape((R, *shape))
    psi_m = psi_m.T.reshape((R, *shape))
    scheme = _ExponentialScheme(
        lattice, net.gamma_matrix(), psi_p, psi_m, scale_vector(net, eps)
    )
    c0 = scheme.coercivity_floor()
    if not c0 > 0.0:
        raise CoercivityError(
            f"intensity lower bound fails on the box (c0={c0:.3e}); shrink the box"
        )
    scheme.c0 = c0
    return scheme


def solve_hje_eps(
    net: Network, data: WellPreparedData, eps: float, T: float
) -> GridField:
    """March the eps-scale equation to time T on the state box."""
    scheme = _scheme_eps(net, data, eps)
    u, meta = scheme.run(data.u0, T)
    meta["c0"] = scheme.c0
    meta["eps"] = eps
    return GridField(lattice=data.lattice, values=u, time=T, scheme_meta=meta)


def _scheme_cg(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    data: WellPreparedData,
) -> _ExponentialScheme:
    lattice = data.lattice
    m = structure.m_fast
    if lattice.dim != m:
        raise ValueError("coarse lattice dimension must equal m_fast")
    if m > MAX_GRID_DIM:
        raise ValueError(f"grid solver supports at most {MAX_GRID_DIM} dimensions")
    qs = lattice.flat_coords()
    states, _, ok = reconstruct_batch(structure, x_star, qs)
    mask = ok.reshape(lattice.shape)
    psi_p_flat, psi_m_flat = intensities_batch(net, np.maximum(states, 1e-300))
    slow = list(structure.slow_rows)
    shape = lattice.shape
    psi_p = psi_p_flat[:, slow].T.reshape((len(slow), *shape))
    psi_m = psi_m_flat[:, slow].T.reshape((len(slow), *shape))
    directions = structure.G_fast[slow, :]
    scheme = _ExponentialScheme(
        lattice, directions, psi_p, psi_m, np.ones(len(slow)), mask=mask
    )
    c0 = scheme.coercivity_floor()
    if not c0 > 0.0:
        raise CoercivityError(
            f"slow intensity lower bound fails on the coarse box (c0={c0:.3e})"
        )
    scheme.c0 = c0
    return scheme


def solve_hje_cg(
    net: Network,
    structure: StoichStructure,
    x_star: np.ndarray,
    data: WellPreparedData,
    T: float,
) -> GridField:
    """March the coarse-grained equation on the fast-conserved box.

    Nodes whose reconstruction fails are masked out of the stencil and
    reported in the metadata.
    """
    scheme = _scheme_cg(net, structure, x_star, data)
    u, meta = scheme.run(data.u0, T)
    meta["c0"] = scheme.c0
    meta["masked_nodes"] = int((~scheme.mask).sum())
    out = u.copy()
    out[~scheme.mask] = np.nan
    return GridField(lattice=data.lattice, values=out, time=T, scheme_meta=meta)


def manifold_adjacent_mask(
    structure: StoichStructure,
    x_star: np.ndarray,
    lattice: Lattice,
) -> np.ndarray:
    """Nodes within one cell (sup norm) of the fast-equilibrium manifold."""
    coords = lattice.flat_coords()
    qs = coords @ structure.Q_fast.T.astype(float)
    states, _, ok = reconstruct_batch(structure, x_star, qs)
    near = np.zeros(len(coords), dtype=bool)
    near[ok] = np.max(np.abs(coords[ok] - states[ok]), axis=1) <= lattice.h
    return near.reshape(lattice.shape)


@dataclass
class LipschitzEntry:
    eps: float
    time_lipschitz: float
    slow_gradient_max: float
    fast_gradient_max_manifold: float


@dataclass
class LipschitzReport:
    entries: list[LipschitzEntry]
    slow_band_ratio: float
    fast_ratios: list[tuple[float, float, float, float]]  # (eps_hi, eps_lo, ratio, bound)


def lipschitz_report(
    net: Network,
    structure: StoichStructure,
    fields: dict[float, GridField],
    x_star: np.ndarray | None = None,
) -> LipschitzReport:
    """Directional Lipschitz diagnostics across an epsilon family of solutions.

    Slow-direction constants should sit in a uniform band; fast-direction
    gradients restricted to manifold-adjacent nodes should decay with the
    scale separation.
    """
    eps_sorted = sorted(fields, reverse=True)
    entries = []
    adj_mask = None
    if x_star is not None and structure.fast_rows:
        lattice = fields[eps_sorted[0]].lattice
        adj_mask = manifold_adjacent_mask(structure, x_star, lattice)
    for eps in eps_sorted:
        fld = fields[eps]
        slow_max = 0.0
        for r in structure.slow_rows:
            slow_max = max(
                slow_max,
                _directional_gradient_max(fld.values, fld.lattice.h, structure.G[r]),
            )
        fast_max = 0.0
        for r in structure.fast_rows:
            fast_max = max(
                fast_max,
                _directional_gradient_max(
                    fld.values, fld.lattice.h, structure.G[r], mask=adj_mask
                ),
            )
        entries.append(
            LipschitzEntry(
                eps=eps,
                time_lipschitz=float(fld.scheme_meta.get("time_lipschitz", np.nan)),
                slow_gradient_max=slow_max,
                fast_gradient_max_manifold=fast_max,
            )
        )
    slows = [e.slow_gradient_max for e in entries if e.slow_gradient_max > 0]
    band = float(max(slows) / min(slows)) if slows else 1.0
    fast_ratios = []
    for hi, lo in zip(entries, entries[1:]):
        if hi.fast_gradient_max_manifold > 0:
            ratio = lo.fast_gradient_max_manifold / hi.fast_gradient_max_manifold
        else:
            ratio = 0.0
        bound = 2.0 * np.sqrt(lo.eps / hi.eps)
        fast_ratios.append((hi.eps, lo.eps, float(ratio), float(bound)))
    return LipschitzReport(entries=entries, slow_band_ratio=band, fast_ratios=fast_ratios)
