"""Gain-kernel solvers for k_xx - k_yy = lambda(y) k on the triangle.

Both exact solvers work on the characteristic coordinates
xi = x + y, eta = x - y, where the kernel G(xi, eta) = k(x, y) satisfies

    G(xi, eta) = -1/4 int_eta^xi lam(s/2) ds
                 + 1/4 int_eta^xi int_0^eta lam((sigma - s)/2) G(sigma, s) ds dsigma.

The characteristic grid has spacing dx in both xi and eta and covers
0 <= eta <= min(xi, 2 - xi); the triangle nodes are the points with
a + b even (a = i + j, b = i - j). lam at half-grid points comes from
linear interpolation. Integrals use the 2D trapezoid rule, and
``solve_kernel_picard`` and ``solve_kernel_march`` solve the same
discrete system, so they agree to round-off.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from .errors import GammaStarNonpositive, InvalidInput, NonConvergence
from .grid import ScalarField1D, TriField, TriGrid

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class KernelSolution:
    k: TriField
    iterations: int
    residual: float
    solve_time: float
    # G on the full characteristic grid, shape (2N+1, N+1); zero outside the domain
    characteristic: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class _CharGrid:
    n: int
    mask: np.ndarray
    diff: np.ndarray  # a - b, clipped into [0, 2N]
    b_clip: np.ndarray
    tri_a: np.ndarray
    tri_b: np.ndarray


@lru_cache(maxsize=16)
def _char_grid(n: int) -> _CharGrid:
    big_n = n - 1
    a = np.arange(2 * big_n + 1)[:, None]
    b = np.arange(big_n + 1)[None, :]
    mask = b <= np.minimum(a, 2 * big_n - a)
    diff = np.clip(a - b, 0, 2 * big_n)
    rows, cols = np.tril_indices(n)
    return _CharGrid(
        n=n,
        mask=mask,
        diff=np.broadcast_to(diff, mask.shape).copy(),
        b_clip=np.broadcast_to(b, mask.shape).copy(),
        tri_a=rows + cols,
        tri_b=rows - cols,
    )


def _half_grid(values: np.ndarray) -> np.ndarray:
    """Samples lam(m * dx / 2), m = 0..2N, by linear interpolation."""
    mu = np.empty(2 * values.size - 1)
    mu[0::2] = values
    mu[1::2] = 0.5 * (values[:-1] + values[1:])
    return mu


def _half_integral(mu: np.ndarray, h: float) -> np.ndarray:
    """L[a] = int_0^{a h} lam(s/2) ds (trapezoid, spacing h)."""
    out = np.zeros_like(mu)
    out[1:] = np.cumsum(0.5 * h * (mu[1:] + mu[:-1]))
    return out


def _boundary_source(cg: _CharGrid, mu: np.ndarray, h: float) -> np.ndarray:
    lint = _half_integral(mu, h)
    a = np.arange(mu.size)[:, None]
    return np.where(cg.mask, -0.25 * (lint[a] - lint[cg.b_clip]), 0.0)


def _double_integral(cg: _CharGrid, weight: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """1/4 * int_eta^xi int_0^eta weight * g ds dsigma at every grid node."""
    f = weight * g
    inner = h * (np.cumsum(f, axis=1) - 0.5 * f[:, :1] - 0.5 * f)
    outer = np.cumsum(inner, axis=0)
    idx = np.arange(cg.n)
    diag_outer = outer[idx, idx][None, :]
    diag_inner = inner[idx, idx][None, :]
    total = h * (outer - diag_outer + 0.5 * diag_inner - 0.5 * inner)
    return np.where(cg.mask, 0.25 * total, 0.0)


def _picard(cg, source, weight, h, tol, max_iter, what):
    g = source.copy()
    residual = math.inf
    for it in range(1, max_iter + 1):
        g_next = source + _double_integral(cg, weight, g, h)
        residual = float(np.max(np.abs(g_next - g)))
        g = g_next
        if not np.isfinite(residual):
            break
        if residual < tol:
            return g, it, residual
    raise NonConvergence(f"{what} Picard iteration did not converge", residual, max_iter)


def _to_tri(cg: _CharGrid, g: np.ndarray) -> np.ndarray:
    return g[cg.tri_a, cg.tri_b]


def _check_lambda(lambda_hat: ScalarField1D):
    if not np.all(np.isfinite(lambda_hat.values)):
        raise InvalidInput("lambda_hat must be finite")
    if lambda_hat.grid.n_points < 3:
        raise InvalidInput("kernel solvers need at least 3 grid points")


def solve_kernel_picard(
    lambda_hat: ScalarField1D, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> KernelSolution:
    """Successive approximations of the characteristic integral equation."""
    _check_lambda(lambda_hat)
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    start = time.perf_counter()
    n = lambda_hat.grid.n_points
    h = lambda_hat.grid.dx
    cg = _char_grid(n)
    mu = _half_grid(lambda_hat.values)
    weight = np.where(cg.mask, mu[cg.diff], 0.0)
    source = _boundary_source(cg, mu, h)
    g, iters, residual = _picard(cg, source, weight, h, tol, max_iter, "kernel")
    elapsed = time.perf_counter() - start
    tri = TriGrid(n)
    return KernelSolution(TriField(tri, _to_tri(cg, g)), iters, residual, elapsed, g)


def _march(mu: list, lint: list, n: int, h: float) -> list:
    """One sweep in increasing xi; returns G flattened row-major (2N+1, N+1)."""
    big_n = n - 1
    width = big_n + 1
    g = [0.0] * ((2 * big_n + 1) * width)
    # q[b] = sum_{sigma=b}^{a-1} w_sigma J(sigma, b), the outer trapezoid sum so far
    q = [0.0] * width
    half_h = 0.5 * h
    quarter_h = 0.25 * h
    eighth_h = 0.125 * h
    e = h * h / 16.0
    for a in range(2 * big_n + 1):
        top = a if a <= big_n else 2 * big_n - a
        last = a - 1 if a <= big_n else top
        base = a * width
        la = lint[a]
        inner = [0.0] * (top + 1)
        j_run = 0.0
        f_prev = 0.0
        for b in range(last + 1):
            r = -0.25 * (la - lint[b]) + quarter_h * q[b]
            m = mu[a - b]
            if b:
                # J(a,b) = J(a,b-1) + h/2 (F(a,b-1) + m G(a,b)), G(a,b) = r + h/8 J(a,b)
                j_run = (j_run + half_h * (f_prev + m * r)) / (1.0 - e * m)
                val = r + eighth_h * j_run
            else:
                val = r
            g[base + b] = val
            f_prev = m * val
            inner[b] = j_run
        if a <= big_n and a:
            # G(a, a) = 0 lies on y = 0
            inner[a] = j_run + half_h * f_prev
        for b in range(top + 1):
            q[b] += 0.5 * inner[b] if b == a else inner[b]
    return g


def solve_kernel_march(lambda_hat: ScalarField1D) -> KernelSolution:
    """Single-sweep solve of the discrete integral equation.

    Nodes are visited in increasing xi, and in increasing eta within a
    xi-line; the only unknown at a node is its own trapezoid corner
    weight, which is solved for directly.
    """
    _check_lambda(lambda_hat)
    start = time.perf_counter()
    n = lambda_hat.grid.n_points
    h = lambda_hat.grid.dx
    mu = _half_grid(lambda_hat.values)
    lint = _half_integral(mu, h)
    g = np.asarray(_march(mu.tolist(), lint.tolist(), n, h)).reshape(2 * n - 1, n)
    cg = _char_grid(n)
    k = _to_tri(cg, g)
    elapsed = time.perf_counter() - start
    return KernelSolution(TriField(TriGrid(n), k), 1, 0.0, elapsed, g)


def solve_kernel_time_derivative(
    lambda_hat: ScalarField1D,
    lambda_hat_t: ScalarField1D,
    g: KernelSolution,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> TriField:
    """k_t from the t-differentiated integral equation, given the kernel for lambda_hat."""
    _check_lambda(lambda_hat)
    _check_lambda(lambda_hat_t)
    if lambda_hat_t.grid != lambda_hat.grid or g.k.tri.n_points != lambda_hat.grid.n_points:
        raise InvalidInput("lambda_hat, lambda_hat_t and kernel must share a grid")
    n = lambda_hat.grid.n_points
    h = lambda_hat.grid.dx
    cg = _char_grid(n)
    g_full = g.characteristic
    if g_full is None:
        g_full = solve_kernel_picard(lambda_hat, tol, max_iter).characteristic
    mu = _half_grid(lambda_hat.values)
    mu_t = _half_grid(lambda_hat_t.values)
    weight = np.where(cg.mask, mu[cg.diff], 0.0)
    weight_t = np.where(cg.mask, mu_t[cg.diff], 0.0)
    source = _boundary_source(cg, mu_t, h) + _double_integral(cg, weight_t, g_full, h)
    gt, _, _ = _picard(cg, source, weight, h, tol, max_iter, "kernel time-derivative")
    return TriField(TriGrid(n), _to_tri(cg, gt))


def solve_inverse_kernel(
    k_hat: TriField, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> TriField:
    """Inverse kernel l(x,y) = k(x,y) + int_y^x k(x,s) l(s,y) ds by fixed-point iteration."""
    if not np.all(np.isfinite(k_hat.values)):
        raise InvalidInput("k_hat must be finite")
    tri = k_hat.tri
    h = tri.dx
    kd = k_hat.dense()
    kdiag = np.diag(kd)[:, None]
    lower = np.tril(np.ones_like(kd, dtype=bool))
    ld = kd.copy()
    residual = math.inf
    for it in range(1, max_iter + 1):
        # sum_{s=j}^{i} k(i,s) l(s,j) with half weights at s=j and s=i
        conv = kd @ ld - 0.5 * kd * np.diag(ld)[None, :] - 0.5 * kdiag * ld
        nxt = np.where(lower, kd + h * conv, 0.0)
        residual = float(np.max(np.abs(nxt - ld)))
        ld = nxt
        if not np.isfinite(residual):
            break
        if residual < tol:
            return TriField.from_dense(tri, ld)
    raise NonConvergence("inverse kernel iteration did not converge", residual, max_iter)


@dataclass(frozen=True)
class BoundsReport:
    lambda_bar: float
    epsilon: float
    k_bar: float
    l_bar: float
    big_m: float
    eps_star: float
    gamma_star: float
    log_gamma_star: float
    gamma: Optional[float] = None
    rho: Optional[float] = None
    big_r: Optional[float] = None
    saturated: bool = False

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _eps_star_lhs(eps: float, a: float) -> float:
    if eps == 0.0:
        return 0.0
    s = eps + a
    return eps * (1.0 + s * _exp(s))


def epsilon_star(lambda_bar: float) -> float:
    """Root of eps (1 + (eps + a) e^(eps + a)) = 1/12 with a = lam_bar e^(2 lam_bar)."""
    log_a = math.log(lambda_bar) + 2.0 * lambda_bar if lambda_bar > 0 else -math.inf
    a = _exp(log_a)
    if a > 700.0:
        # eps* < e^-a / (12 a): below the smallest double
        return 0.0
    hi = 1.0
    while _eps_star_lhs(hi, a) < 1.0 / 12.0:
        hi *= 2.0
    return bisect(lambda e: _eps_star_lhs(e, a) - 1.0 / 12.0, 0.0, hi, xtol=1e-300, rtol=1e-15,
                  maxiter=2000)


def certificate_constants(
    lambda_bar: float, epsilon: float = 0.0, gamma: Optional[float] = None
) -> BoundsReport:
    """Constants of the closed-loop stability certificate.

    Values that overflow double precision are reported as +inf rather
    than raising; gamma_star then saturates to 0.0 with log_gamma_star
    carrying -inf.
    """
    if lambda_bar < 0 or epsilon < 0:
        raise InvalidInput("lambda_bar and epsilon must be nonnegative")
    if gamma is not None and gamma <= 0:
        raise InvalidInput("gamma must be positive")

    # log(lam_bar e^{2 lam_bar})
    log_a = math.log(lambda_bar) + 2.0 * lambda_bar if lambda_bar > 0 else -math.inf
    log_eps = math.log(epsilon) if epsilon > 0 else -math.inf
    log_k_bar = np.logaddexp(log_a, log_eps)
    k_bar = _exp(log_k_bar)
    log_l_bar = log_k_bar + k_bar if k_bar != 0.0 else -math.inf
    l_bar = _exp(log_l_bar)
    log_m = 2.0 * lambda_bar + math.log1p(_exp(log_a))
    big_m = _exp(log_m)
    saturated = math.isinf(k_bar) or math.isinf(l_bar) or math.isinf(big_m)

    numer = 0.25 - 3.0 * (1.0 + l_bar) * epsilon if epsilon > 0 else 0.25
    if numer <= 0 or math.isnan(numer):
        raise GammaStarNonpositive(
            f"3(1+l_bar)eps = {3.0 * (1.0 + l_bar) * epsilon:.6g} >= 1/4: no admissible gain"
        )
    # 1 + l_bar in log space
    log_1l = np.logaddexp(0.0, log_l_bar)
    log_1k = np.logaddexp(0.0, log_k_bar)
    log_gamma_star = float(math.log(numer) - 2.0 * log_1l - 2.0 * log_1k)
    gamma_star = math.exp(log_gamma_star) if log_gamma_star > -745.0 else 0.0

    rho = big_r = None
    if gamma is not None:
        big_r = max(gamma, _exp(2.0 * log_1l))
        rho = max(1.0 / gamma, _exp(2.0 * log_1k))

    return BoundsReport(
        lambda_bar=float(lambda_bar),
        epsilon=float(epsilon),
        k_bar=k_bar,
        l_bar=l_bar,
        big_m=big_m,
        eps_star=epsilon_star(lambda_bar),
        gamma_star=gamma_star,
        log_gamma_star=log_gamma_star,
        gamma=gamma,
        rho=rho,
        big_r=big_r,
        saturated=saturated,
    )


def kernel_sup_bound(lambda_bar: float, x: np.ndarray) -> np.ndarray:
    """Nodewise kernel bound lam_bar * exp(2 lam_bar x)."""
    return lambda_bar * np.exp(2.0 * lambda_bar * np.asarray(x))


def kt_bound_factor(lambda_bar: float) -> float:
    """M = e^{2 lam_bar} (1 + lam_bar e^{2 lam_bar}), so |k_t| <= M ||lam_t||."""
    return certificate_constants(lambda_bar).big_m
