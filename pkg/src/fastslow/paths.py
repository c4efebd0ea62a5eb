"""Discrete trajectories shared by the integrators and the action solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Path"]


@dataclass
class Path:
    """A trajectory on a strictly increasing time grid.

    ``states`` has one row per knot; full-space paths carry concentration
    vectors, coarse paths carry fast-conserved coordinates.
    """

    times: np.ndarray            # (N+1,)
    states: np.ndarray           # (N+1, dim)
    kind: str = "full"           # "full" or "coarse"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.times.ndim != 1 or self.states.shape[0] != self.times.shape[0]:
            raise ValueError("times and states must have matching leading length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.kind not in ("full", "coarse"):
            raise ValueError(f"unknown path kind {self.kind!r}")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def velocities(self) -> np.ndarray:
        """Forward difference quotients, one row per step."""
        dt = np.diff(self.times)[:, None]
        return np.diff(self.states, axis=0) / dt

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.states[:-1] + self.states[1:])
