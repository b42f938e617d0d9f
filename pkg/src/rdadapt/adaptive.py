"""Adaptive backstepping loop: transforms, update law, controller, diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInput, PlantDiverged
from .grid import (
    Grid1D,
    ScalarField1D,
    TriField,
    TriGrid,
    diff_diagonal,
    trapezoid,
    tri_laplace_diff,
)
from .kernel import (
    BoundsReport,
    solve_kernel_march,
    solve_kernel_picard,
    solve_kernel_time_derivative,
)
from .plant import PlantState, sine_initial_condition, step

log = logging.getLogger(__name__)

PROJECTION_BAND = 1e-12
KERNEL_SOURCES = ("zero", "exact-march", "exact-picard", "neural-operator")


@dataclass(frozen=True, eq=False)
class EstimatorState:
    lambda_hat: ScalarField1D
    gamma: float
    lambda_bar: float

    def __post_init__(self):
        if self.gamma <= 0 or self.lambda_bar <= 0:
            raise InvalidInput("gamma and lambda_bar must be positive")
        if self.lambda_hat.sup() > self.lambda_bar:
            raise InvalidInput("initial estimate violates |lambda_hat| <= lambda_bar")


@lru_cache(maxsize=16)
def _volterra_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid weights for int_0^x (lower) and int_x^1 (upper) on the dense grid."""
    h = 1.0 / (n - 1)
    lower = np.tril(np.full((n, n), h))
    lower[:, 0] *= 0.5
    lower[np.arange(n), np.arange(n)] *= 0.5
    lower[0, :] = 0.0
    upper = np.triu(np.full((n, n), h))
    upper[:, -1] *= 0.5
    upper[np.arange(n), np.arange(n)] *= 0.5
    upper[-1, :] = 0.0
    lower.flags.writeable = False
    upper.flags.writeable = False
    return lower, upper


class _KernelOperators:
    """Dense quadrature matrices for one kernel, reused across loop steps."""

    def __init__(self, k_hat: TriField):
        n = k_hat.tri.n_points
        lower, upper = _volterra_weights(n)
        dense = k_hat.dense()
        self.k_hat = k_hat
        self.forward = dense * lower  # (forward @ u)[i] = int_0^{x_i} k(x_i, y) u(y) dy
        self.adjoint = dense.T * upper  # (adjoint @ w)[i] = int_{x_i}^1 k(y, x_i) w(y) dy


def _check_shapes(f: ScalarField1D, k: TriField):
    if f.grid.n_points != k.tri.n_points:
        raise InvalidInput("field and kernel grids differ")


def backstep_transform(u: ScalarField1D, k_hat: TriField) -> ScalarField1D:
    _check_shapes(u, k_hat)
    ops = _KernelOperators(k_hat)
    return ScalarField1D(u.grid, u.values - ops.forward @ u.values)


def inverse_transform(w_hat: ScalarField1D, l_hat: TriField) -> ScalarField1D:
    _check_shapes(w_hat, l_hat)
    ops = _KernelOperators(l_hat)
    return ScalarField1D(w_hat.grid, w_hat.values + ops.forward @ w_hat.values)


def controller(u: ScalarField1D, k_hat: TriField) -> float:
    """U = int_0^1 k(1, y) u(y) dy."""
    _check_shapes(u, k_hat)
    return trapezoid(k_hat.row(k_hat.tri.n_points - 1) * u.values, u.grid.dx)


def project(a: float, b: float, lambda_bar: float) -> float:
    if abs(b) >= lambda_bar - PROJECTION_BAND and a * b > 0:
        return 0.0
    return a


def _project_array(a: np.ndarray, b: np.ndarray, lambda_bar: float) -> np.ndarray:
    frozen = (np.abs(b) >= lambda_bar - PROJECTION_BAND) & (a * b > 0)
    return np.where(frozen, 0.0, a)


def _phi(u: np.ndarray, w: np.ndarray, adjoint: np.ndarray, gamma: float, dx: float):
    norm_w2 = trapezoid(w * w, dx)
    return gamma * u / (1.0 + norm_w2) * (w - adjoint @ w)


def adaptation_rate(
    u: ScalarField1D, w_hat: ScalarField1D, k_hat: TriField, est: EstimatorState
) -> ScalarField1D:
    """Projected rate Proj(phi, lambda_hat), i.e. lambda_hat_t."""
    _check_shapes(u, k_hat)
    ops = _KernelOperators(k_hat)
    phi = _phi(u.values, w_hat.values, ops.adjoint, est.gamma, u.grid.dx)
    return ScalarField1D(
        u.grid, _project_array(phi, est.lambda_hat.values, est.lambda_bar)
    )


def update_law(
    u: ScalarField1D,
    w_hat: ScalarField1D,
    k_hat: TriField,
    est: EstimatorState,
    dt: float,
) -> EstimatorState:
    """Euler step of lambda_hat_t = Proj(phi, lambda_hat), clamped to [-lambda_bar, lambda_bar]."""
    rate = adaptation_rate(u, w_hat, k_hat, est)
    return replace(est, lambda_hat=_advance(est, rate.values, dt))


def _advance(est: EstimatorState, rate: np.ndarray, dt: float) -> ScalarField1D:
    values = np.clip(est.lambda_hat.values + dt * rate, -est.lambda_bar, est.lambda_bar)
    return ScalarField1D(est.lambda_hat.grid, values)


# --------------------------------------------------------------------------- diagnostics


@dataclass(frozen=True, eq=False)
class LoopDiagnostics:
    t: float
    V: float
    Gamma: float
    norm_u: float
    norm_w_hat: float
    control: float
    delta_k0: ScalarField1D
    delta_k1: TriField
    kappa1: ScalarField1D
    kappa2: TriField
    eps_measured: float
    lipschitz_lambda_hat: float

    @property
    def delta_k0_sup(self) -> float:
        return self.delta_k0.sup()

    @property
    def delta_k1_sup(self) -> float:
        return self.delta_k1.sup()


def kernel_residuals(k: TriField, lambda_hat: ScalarField1D) -> tuple[ScalarField1D, TriField]:
    """kappa1 = 2 d/dx k(x,x) + lambda_hat, kappa2 = k_xx - k_yy - lambda_hat(y) k."""
    kappa1 = 2.0 * diff_diagonal(k).values + lambda_hat.values
    wave = tri_laplace_diff(k).values
    kappa2 = wave - lambda_hat.values[k.tri.cols] * k.values
    return ScalarField1D(lambda_hat.grid, kappa1), TriField(k.tri, kappa2)


def approximation_error(
    k_hat: TriField,
    k_exact: TriField,
    lambda_hat: ScalarField1D,
    k_hat_t: Optional[TriField] = None,
    k_exact_t: Optional[TriField] = None,
) -> float:
    """Sup of the four kernel-error quantities a surrogate must keep below eps."""
    diff = TriField(k_hat.tri, k_exact.values - k_hat.values)
    value_err = 0.0
    if np.any(diff.values):
        diag_err = 2.0 * diff_diagonal(diff).sup()
        wave = tri_laplace_diff(diff).values - lambda_hat.values[diff.tri.cols] * diff.values
        value_err = max(diff.sup(), diag_err, float(np.max(np.abs(wave))))
    t_err = 0.0
    if k_hat_t is not None and k_exact_t is not None:
        t_err = float(np.max(np.abs(k_hat_t.values - k_exact_t.values)))
    return max(value_err, t_err)


def diagnostics(
    state: PlantState,
    est: EstimatorState,
    k_hat: TriField,
    k_exact: Optional[TriField] = None,
    bounds: Optional[BoundsReport] = None,
    k_hat_t: Optional[TriField] = None,
    k_exact_t: Optional[TriField] = None,
) -> LoopDiagnostics:
    """Lyapunov value, Gamma and target-system perturbation terms at one instant.

    delta_k0 and delta_k1 are evaluated through the identities the exact
    kernel satisfies (2 d/dx k(x,x) = -lambda_hat, k_xx - k_yy = lambda_hat k),
    giving delta_k0 = lambda_tilde + kappa1[k_hat] and delta_k1 = -kappa2[k_hat].
    """
    dx = state.grid.dx
    u = state.u
    w_hat = backstep_transform(u, k_hat)
    lam_tilde = state.lam.values - est.lambda_hat.values
    norm_w2 = trapezoid(w_hat.values**2, dx)
    norm_u2 = trapezoid(u.values**2, dx)
    lt2 = trapezoid(lam_tilde**2, dx)
    kappa1, kappa2 = kernel_residuals(k_hat, est.lambda_hat)
    eps = 0.0
    if k_exact is not None:
        eps = approximation_error(k_hat, k_exact, est.lambda_hat, k_hat_t, k_exact_t)
    if bounds is not None and bounds.eps_star and eps > bounds.eps_star:
        log.debug("measured eps %.3g exceeds eps* %.3g", eps, bounds.eps_star)
    return LoopDiagnostics(
        t=state.t,
        V=0.5 * np.log1p(norm_w2) + lt2 / (2.0 * est.gamma),
        Gamma=norm_u2 + lt2,
        norm_u=float(np.sqrt(norm_u2)),
        norm_w_hat=float(np.sqrt(norm_w2)),
        control=controller(u, k_hat),
        delta_k0=ScalarField1D(u.grid, lam_tilde + kappa1.values),
        delta_k1=TriField(k_hat.tri, -kappa2.values),
        kappa1=kappa1,
        kappa2=kappa2,
        eps_measured=eps,
        lipschitz_lambda_hat=float(np.max(np.abs(np.diff(est.lambda_hat.values))) / dx),
    )


# --------------------------------------------------------------------------- closed loop


@dataclass
class LoopConfig:
    n_points: int = 51
    dt: float = 1e-4
    T: float = 1.0
    gamma: float = 100.0
    lambda_bar: float = 50.0
    u0_amplitude: float = 1.0
    kernel_stride: int = 1
    sample_stride: int = 100
    diag_stride: Optional[int] = 100
    # divergence is declared once sup|u| exceeds this multiple of sup|u0|
    blowup_factor: float = 1e4
    record_kernels: bool = False
    tol: float = 1e-10

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.n_points)


@dataclass
class Trajectory:
    grid: Grid1D
    kernel_source: str
    times: list = field(default_factory=list)
    u: list = field(default_factory=list)
    lambda_hat: list = field(default_factory=list)
    w_hat: list = field(default_factory=list)
    control: list = field(default_factory=list)
    kernels: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    kernel_slices: list = field(default_factory=list)  # (t, k_hat(1, .), k_exact(1, .))
    max_lambda_hat_sup: float = 0.0
    steps_run: int = 0
    final_u: Optional[np.ndarray] = None
    final_lambda_hat: Optional[np.ndarray] = None

    def arrays(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name))

    @property
    def final_sup_u(self) -> float:
        return float(np.max(np.abs(self.final_u)))


KernelFn = Callable[[ScalarField1D], TriField]


def make_kernel_source(name: str, model=None, tol: float = 1e-10) -> KernelFn:
    if name == "zero":
        return lambda lam: TriField.zeros(TriGrid(lam.grid.n_points))
    if name == "exact-march":
        return lambda lam: solve_kernel_march(lam).k
    if name == "exact-picard":
        return lambda lam: solve_kernel_picard(lam, tol=tol).k
    if name == "neural-operator":
        if model is None:
            raise InvalidInput("kernel source 'neural-operator' needs a trained model")
        from .noperator import forward

        return lambda lam: forward(model, lam, TriGrid(lam.grid.n_points))
    raise InvalidInput(f"unknown kernel source {name!r}; expected one of {KERNEL_SOURCES}")


def run_closed_loop(
    config: LoopConfig,
    lambda_true: ScalarField1D,
    kernel_source: str = "exact-march",
    model=None,
    u0: Optional[ScalarField1D] = None,
    lambda_hat0: Optional[ScalarField1D] = None,
) -> Trajectory:
    """Simulate plant + update law + boundary controller with the chosen kernel.

    Per step: kernel from the current estimate (every ``kernel_stride``
    steps), w_hat, control, plant step, estimator step. Samples are taken
    every ``sample_stride`` steps and once more at t = T. On divergence the
    raised PlantDiverged carries the partial trajectory in ``.trajectory``.
    """
    grid = config.grid
    if lambda_true.grid != grid:
        raise InvalidInput("lambda_true grid does not match config.n_points")
    source = make_kernel_source(kernel_source, model, config.tol)
    u0 = u0 if u0 is not None else sine_initial_condition(grid, config.u0_amplitude)
    lam0 = lambda_hat0 if lambda_hat0 is not None else ScalarField1D(grid, np.zeros(grid.n_points))
    threshold = config.blowup_factor * max(u0.sup(), np.finfo(float).tiny)
    state = PlantState(u0, 0.0, lambda_true, config.dt, threshold)
    est = EstimatorState(lam0, config.gamma, config.lambda_bar)
    traj = Trajectory(grid=grid, kernel_source=kernel_source)
    traj.max_lambda_hat_sup = est.lambda_hat.sup()
    dx = grid.dx
    steps = config.steps
    ops = None

    def record(state, est, ops, w, control, with_diag):
        traj.times.append(state.t)
        traj.u.append(state.u.values.copy())
        traj.lambda_hat.append(est.lambda_hat.values.copy())
        traj.w_hat.append(w.copy())
        traj.control.append(control)
        if config.record_kernels:
            traj.kernels.append(ops.k_hat.values.copy())
        if with_diag:
            diag, k_exact = _diagnose(state, est, ops, kernel_source, source, config)
            traj.diagnostics.append(diag)
            n = grid.n_points
            traj.kernel_slices.append(
                (state.t, ops.k_hat.row(n - 1).copy(), k_exact.row(n - 1).copy())
            )

    s = 0
    try:
        for s in range(steps):
            if ops is None or s % config.kernel_stride == 0:
                ops = _KernelOperators(source(est.lambda_hat))
            u = state.u.values
            fu = ops.forward @ u
            w = u - fu
            control = float(fu[-1])
            if s % config.sample_stride == 0:
                with_diag = config.diag_stride is not None and s % config.diag_stride == 0
                record(state, est, ops, w, control, with_diag)
            phi = _phi(u, w, ops.adjoint, est.gamma, dx)
            rate = _project_array(phi, est.lambda_hat.values, est.lambda_bar)
            state = step(state, control)
            est = replace(est, lambda_hat=_advance(est, rate, config.dt))
            traj.max_lambda_hat_sup = max(traj.max_lambda_hat_sup, est.lambda_hat.sup())
        traj.steps_run = steps
        if steps % config.sample_stride == 0:
            ops = _KernelOperators(source(est.lambda_hat))
            fu = ops.forward @ state.u.values
            with_diag = config.diag_stride is not None and steps % config.diag_stride == 0
            record(state, est, ops, state.u.values - fu, float(fu[-1]), with_diag)
    except PlantDiverged as err:
        traj.steps_run = s + 1
        traj.final_u = state.u.values.copy()
        traj.final_lambda_hat = est.lambda_hat.values.copy()
        err.trajectory = traj
        raise
    traj.final_u = state.u.values.copy()
    traj.final_lambda_hat = est.lambda_hat.values.copy()
    return traj


def _diagnose(state, est, ops, kernel_source, source, config):
    lam_hat = est.lambda_hat
    k_exact_sol = solve_kernel_picard(lam_hat, tol=config.tol)
    k_hat_t = k_exact_t = None
    if kernel_source == "neural-operator":
        u = state.u.values
        w = u - ops.forward @ u
        rate = ScalarField1D(
            lam_hat.grid,
            _project_array(_phi(u, w, ops.adjoint, est.gamma, state.grid.dx), lam_hat.values, est.lambda_bar),
        )
        k_exact_t = solve_kernel_time_derivative(lam_hat, rate, k_exact_sol, tol=config.tol)
        # directional derivative of the surrogate along lambda_hat_t
        step_size = 1e-6 * max(1.0, lam_hat.sup()) / max(rate.sup(), 1e-300)
        shifted = ScalarField1D(lam_hat.grid, lam_hat.values + step_size * rate.values)
        k_hat_t = TriField(
            ops.k_hat.tri, (source(shifted).values - ops.k_hat.values) / step_size
        ) if rate.sup() > 0 else TriField.zeros(ops.k_hat.tri)
    d = diagnostics(state, est, ops.k_hat, k_exact_sol.k, None, k_hat_t, k_exact_t)
    return d, k_exact_sol.k
