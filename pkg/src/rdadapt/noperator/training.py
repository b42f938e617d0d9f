"""Adam training loop for the DeepONet surrogate."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidInput, TrainingFailure
from ..grid import TriGrid
from .model import DeepONetModel, backprop

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr: Optional[float] = None):
        self.t += 1
        lr = self.lr if lr is None else lr
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 300
    seed: int = 0
    # query nodes drawn per minibatch; None uses the whole triangle
    points_per_batch: Optional[int] = 256
    # learning rate decays geometrically to lr * final_lr_fraction
    final_lr_fraction: float = 0.05
    test_fraction: float = 0.1


@dataclass
class TrainReport:
    epochs: int
    initial_loss: float
    train_mse: float
    test_mse: float
    test_rel_l2: float
    wall_time: float
    seed: int
    n_train: int
    n_test: int
    test_trajectories: list

    def as_dict(self) -> dict:
        return asdict(self)


def split_by_trajectory(trajectory_ids: np.ndarray, test_fraction: float, seed: int):
    """Whole trajectories go to one side of the split."""
    ids = np.unique(trajectory_ids)
    if ids.size < 2:
        raise InvalidInput("need at least two trajectories for a held-out split")
    rng = np.random.default_rng(seed)
    n_test = min(ids.size - 1, max(1, int(round(test_fraction * ids.size))))
    test_ids = np.sort(rng.permutation(ids)[:n_test])
    test_mask = np.isin(trajectory_ids, test_ids)
    return np.flatnonzero(~test_mask), np.flatnonzero(test_mask), test_ids


def fit_normalization(model: DeepONetModel, sensors: np.ndarray, kernels: np.ndarray):
    mean = sensors.mean(axis=0)
    std = sensors.std(axis=0)
    # constant sensors (e.g. lambda_hat(0) never adapts) keep unit scale
    std = np.where(std > 1e-12, std, 1.0)
    scale = float(np.max(np.abs(kernels)))
    model.input_mean = mean
    model.input_std = std
    model.output_scale = scale if scale > 0 else 1.0
    model.invalidate_cache()


def mse(model: DeepONetModel, sensors, points, kernels, chunk: int = 512) -> float:
    total = 0.0
    for s in range(0, sensors.shape[0], chunk):
        pred = model.predict_normalized(sensors[s:s + chunk], points)
        err = pred - kernels[s:s + chunk] / model.output_scale
        total += float(np.sum(err * err))
    return total / (sensors.shape[0] * points.shape[0])


def relative_l2(model: DeepONetModel, sensors, points, kernels, chunk: int = 512) -> np.ndarray:
    """Per-sample ||k_pred - k|| / ||k|| over the triangle nodes; zero kernels skipped."""
    out = []
    for s in range(0, sensors.shape[0], chunk):
        pred = model.output_scale * model.predict_normalized(sensors[s:s + chunk], points)
        ref = kernels[s:s + chunk]
        num = np.linalg.norm(pred - ref, axis=1)
        den = np.linalg.norm(ref, axis=1)
        keep = den > 0
        out.append(num[keep] / den[keep])
    return np.concatenate(out) if out else np.zeros(0)


def train(model: DeepONetModel, dataset, config: TrainConfig = TrainConfig(),
          fit_stats: bool = True) -> TrainReport:
    """Fit ``model`` in place on ``dataset`` (a dataset.Dataset).

    Deterministic for a given seed. Normalization statistics come from
    the training split only.
    """
    start = time.perf_counter()
    sensors_all = dataset.sensors_for(model.m)
    kernels_all = dataset.kernels
    points = np.asarray(TriGrid(dataset.n_points).points)
    train_idx, test_idx, test_ids = split_by_trajectory(
        dataset.trajectory_ids, config.test_fraction, config.seed
    )
    xs, ys = sensors_all[train_idx], kernels_all[train_idx]
    xt, yt = sensors_all[test_idx], kernels_all[test_idx]
    if fit_stats:
        fit_normalization(model, xs, ys)

    rng = np.random.default_rng(config.seed)
    params = model.params()
    opt = Adam(params, config.lr, config.beta1, config.beta2)
    initial_loss = mse(model, xs, points, ys)
    n_points = points.shape[0]
    n_batches = max(1, int(np.ceil(xs.shape[0] / config.batch_size)))
    total_steps = config.epochs * n_batches
    decay = config.final_lr_fraction ** (1.0 / max(total_steps, 1))

    for epoch in range(config.epochs):
        order = rng.permutation(xs.shape[0])
        for bi in range(n_batches):
            idx = order[bi * config.batch_size:(bi + 1) * config.batch_size]
            if config.points_per_batch and config.points_per_batch < n_points:
                pidx = rng.choice(n_points, config.points_per_batch, replace=False)
            else:
                pidx = slice(None)
            # overflow shows up as a non-finite loss and is reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = backprop(model, xs[idx], points[pidx], ys[idx][:, pidx])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingFailure(epoch)
            opt.step(grads, config.lr * decay**opt.t)
        model.invalidate_cache()
        if (epoch + 1) % max(1, config.epochs // 10) == 0:
            log.info("epoch %d/%d loss %.3e", epoch + 1, config.epochs, loss)

    model.invalidate_cache()
    train_mse = mse(model, xs, points, ys) if config.epochs else initial_loss
    test_mse = mse(model, xt, points, yt)
    rel = relative_l2(model, xt, points, yt)
    return TrainReport(
        epochs=config.epochs,
        initial_loss=initial_loss,
        train_mse=train_mse,
        test_mse=test_mse,
        test_rel_l2=float(np.mean(rel)) if rel.size else float("nan"),
        wall_time=time.perf_counter() - start,
        seed=config.seed,
        n_train=int(train_idx.size),
        n_test=int(test_idx.size),
        test_trajectories=[int(i) for i in test_ids],
    )
