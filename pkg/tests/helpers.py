"""Shared fixtures: small synthetic datasets and the gradient check."""

import numpy as np

from rdadapt.dataset import Dataset, DatasetManifest
from rdadapt.grid import Grid1D, ScalarField1D
from rdadapt.kernel import solve_kernel_march
from rdadapt.noperator import DeepONetModel, backprop


def synthetic_dataset(n_traj=4, per_traj=5, n=11, seed=0, lambda_bar=5.0):
    rng = np.random.default_rng(seed)
    x = Grid1D(n).nodes
    lams, kers = [], []
    for _ in range(n_traj * per_traj):
        a, b, c = rng.uniform(-1, 1, 3)
        lam = lambda_bar * np.clip(a + b * np.cos(3 * x) + c * x, -1, 1)
        lams.append(lam)
        kers.append(solve_kernel_march(ScalarField1D(Grid1D(n), lam)).k.values)
    manifest = DatasetManifest(
        n_trajectories=n_traj, samples_per_trajectory=per_traj, n_points=n, dx=1 / (n - 1),
        dt=1e-4, T=1.0, lambda_bar=lambda_bar, gamma=1.0, gamma_cheb_range=[8.5, 9.5],
        seed=seed, mode="synthetic", generator_version="test",
    )
    return Dataset(manifest, np.array(lams), np.array(kers))


def small_model(seed=0, m=5, p=4, hidden=(6,)):
    rng = np.random.default_rng(seed + 100)
    model = DeepONetModel.init(m, p=p, branch_hidden=hidden, trunk_hidden=tuple(w + 1 for w in hidden), seed=seed)
    model.input_mean = rng.normal(size=m)
    model.input_std = rng.uniform(0.5, 2.0, m)
    model.output_scale = 1.7
    for arr in model.params():
        arr += 0.1 * rng.normal(size=arr.shape)  # nonzero biases too
    return model


def finite_difference_errors(model, sensors, points, targets, h=1e-6):
    """Per-array max|fd - analytic| / max|analytic| for every parameter."""
    _, grads = backprop(model, sensors, points, targets)
    errors = []
    for arr, g in zip(model.params(), grads):
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            lp, _ = backprop(model, sensors, points, targets)
            arr[idx] = orig - h
            lm, _ = backprop(model, sensors, points, targets)
            arr[idx] = orig
            fd[idx] = (lp - lm) / (2 * h)
        errors.append(np.max(np.abs(fd - g)) / np.max(np.abs(g)))
    return errors
