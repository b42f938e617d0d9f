"""Explicit finite-difference simulator for u_t = u_xx + lambda(x) u on (0, 1).

Dirichlet boundaries: u(0, t) = 0 and u(1, t) = U(t), the control input.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput, PlantDiverged
from .grid import Grid1D, ScalarField1D


def max_stable_dt(grid: Grid1D, lambda_sup: float) -> float:
    dx2 = grid.dx**2
    return dx2 / (2.0 + lambda_sup * dx2)


@dataclass(frozen=True, eq=False)
class PlantState:
    u: ScalarField1D
    t: float
    lam: ScalarField1D
    dt: float
    # sup|u| above which the state counts as blown up, even if still finite
    blowup_threshold: float = np.inf

    def __post_init__(self):
        if self.u.grid != self.lam.grid:
            raise InvalidInput("u and lambda must live on the same grid")
        if self.dt <= 0:
            raise InvalidInput("dt must be positive")
        limit = max_stable_dt(self.u.grid, self.lam.sup())
        if self.dt > limit * (1.0 + 1e-12):
            raise InvalidInput(
                f"dt={self.dt:.3e} violates the explicit stability limit {limit:.3e} "
                f"for dx={self.u.grid.dx:.4g}, sup|lambda|={self.lam.sup():.4g}"
            )

    @property
    def grid(self) -> Grid1D:
        return self.u.grid


def step(state: PlantState, control_u: float) -> PlantState:
    """One explicit Euler step, then boundary values u(0)=0, u(1)=control_u."""
    u = state.u.values
    h2 = state.grid.dx ** 2
    new = np.empty_like(u)
    # overflow is detected below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        new[1:-1] = u[1:-1] + state.dt * (
            (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h2 + state.lam.values[1:-1] * u[1:-1]
        )
    new[0] = 0.0
    new[-1] = control_u
    t = state.t + state.dt
    if not np.all(np.isfinite(new)):
        raise PlantDiverged(t, "plant state became non-finite")
    if np.max(np.abs(new)) > state.blowup_threshold:
        raise PlantDiverged(t, f"sup|u| exceeded {state.blowup_threshold:.3g}")
    return replace(state, u=ScalarField1D(state.grid, new), t=t)


def chebyshev_lambda(
    grid: Grid1D, gamma_cheb: float, amplitude: float = 25.0, offset: float = 25.0
) -> ScalarField1D:
    """lambda(x) = amplitude * cos(gamma_cheb * arccos x) + offset."""
    x = grid.nodes
    return ScalarField1D(grid, amplitude * np.cos(gamma_cheb * np.arccos(x)) + offset)


def sine_initial_condition(grid: Grid1D, amplitude: float = 1.0) -> ScalarField1D:
    values = amplitude * np.sin(np.pi * grid.nodes)
    values[0] = 0.0
    values[-1] = 0.0
    return ScalarField1D(grid, values)
