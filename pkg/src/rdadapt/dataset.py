"""Generation, storage and loading of (lambda_hat, k) training pairs.

A dataset is a directory holding ``manifest`` (JSON) and ``data.bin``.
Per sample the payload stores lambda_hat at the n grid nodes, then the
kernel on the n(n+1)/2 triangle nodes in row-major (i >= j) order, all
as little-endian float64.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .adaptive import LoopConfig, run_closed_loop
from .errors import CorruptDataset, InvalidInput, PlantDiverged
from .grid import Grid1D, ScalarField1D, TriGrid
from .kernel import solve_kernel_march
from .plant import chebyshev_lambda

log = logging.getLogger(__name__)

GENERATOR_VERSION = "1"
MANIFEST = "manifest"
PAYLOAD = "data.bin"
MODES = ("closed-loop", "estimator-only")
_DTYPE = np.dtype("<f8")


@dataclass
class GenerateConfig:
    n_trajectories: int = 10
    samples_per_trajectory: int = 500
    n_points: int = 51
    dt: float = 1e-4
    T: float = 1.0
    lambda_bar: float = 50.0
    gamma: float = 100.0
    gamma_cheb_range: tuple = (8.5, 9.5)
    cheb_amplitude: float = 25.0
    cheb_offset: float = 25.0
    u0_amplitude: float = 1.0
    seed: int = 0
    mode: str = "closed-loop"
    max_retries: int = 3
    workers: int = 1

    def validate(self):
        if self.n_trajectories < 1 or self.samples_per_trajectory < 1:
            raise InvalidInput("need at least one trajectory and one sample")
        steps = int(round(self.T / self.dt))
        if steps % self.samples_per_trajectory != 0:
            raise InvalidInput(
                f"T/dt = {steps} steps is not a multiple of samples_per_trajectory="
                f"{self.samples_per_trajectory}"
            )
        lo, hi = self.gamma_cheb_range
        if not lo <= hi:
            raise InvalidInput("gamma_cheb_range must be (low, high) with low <= high")
        if self.mode not in MODES:
            raise InvalidInput(f"mode must be one of {MODES}")

    @property
    def sample_stride(self) -> int:
        return int(round(self.T / self.dt)) // self.samples_per_trajectory


@dataclass
class DatasetManifest:
    n_trajectories: int
    samples_per_trajectory: int
    n_points: int
    dx: float
    dt: float
    T: float
    lambda_bar: float
    gamma: float
    gamma_cheb_range: list
    seed: int
    mode: str
    generator_version: str
    gamma_cheb: list = field(default_factory=list)
    sample_times: list = field(default_factory=list)
    layout: str = "per sample: lambda_hat[n] then k[n(n+1)/2] row-major lower triangle; float64 little-endian"
    payload_bytes: int = 0
    sha256: str = ""

    @property
    def n_samples(self) -> int:
        return self.n_trajectories * self.samples_per_trajectory

    @property
    def sample_width(self) -> int:
        n = self.n_points
        return n + n * (n + 1) // 2


@dataclass
class Dataset:
    manifest: DatasetManifest
    lambdas: np.ndarray  # (samples, n)
    kernels: np.ndarray  # (samples, n(n+1)/2)

    @property
    def n_points(self) -> int:
        return self.manifest.n_points

    @property
    def trajectory_ids(self) -> np.ndarray:
        return np.arange(self.lambdas.shape[0]) // self.manifest.samples_per_trajectory

    def __len__(self) -> int:
        return self.lambdas.shape[0]

    def sensors_for(self, m: int) -> np.ndarray:
        """lambda_hat resampled onto m uniform sensors by linear interpolation."""
        if m == self.n_points:
            return self.lambdas
        src, dst = Grid1D(self.n_points).nodes, Grid1D(m).nodes
        return np.stack([np.interp(dst, src, row) for row in self.lambdas])

    def lambda_field(self, i: int) -> ScalarField1D:
        return ScalarField1D(Grid1D(self.n_points), self.lambdas[i])

    def subset(self, indices) -> "Dataset":
        return Dataset(self.manifest, self.lambdas[indices], self.kernels[indices])


def _trajectory(config: GenerateConfig, index: int):
    """Samples for one trajectory; retried with fresh draws on divergence."""
    rng = np.random.default_rng([config.seed, index])
    grid = Grid1D(config.n_points)
    loop = LoopConfig(
        n_points=config.n_points,
        dt=config.dt,
        T=config.T,
        gamma=config.gamma,
        lambda_bar=config.lambda_bar,
        u0_amplitude=config.u0_amplitude,
        sample_stride=config.sample_stride,
        diag_stride=None,
        record_kernels=config.mode == "closed-loop",
        # open-loop estimation grows by design; only non-finite states abort
        blowup_factor=1e4 if config.mode == "closed-loop" else np.inf,
    )
    source = "exact-march" if config.mode == "closed-loop" else "zero"
    for attempt in range(config.max_retries + 1):
        g = float(rng.uniform(*config.gamma_cheb_range))
        lam = chebyshev_lambda(grid, g, config.cheb_amplitude, config.cheb_offset)
        try:
            traj = run_closed_loop(loop, lam, kernel_source=source)
        except PlantDiverged as err:
            log.warning("trajectory %d attempt %d (gamma_cheb=%.4f) diverged: %s",
                        index, attempt, g, err)
            continue
        # the t = 0 sample has lambda_hat = 0 and k = 0; keep the later ones
        lambdas = np.asarray(traj.lambda_hat[1:])
        if config.mode == "closed-loop":
            kernels = np.asarray(traj.kernels[1:])
        else:
            kernels = np.stack([
                solve_kernel_march(ScalarField1D(grid, row)).k.values for row in lambdas
            ])
        return g, traj.times[1:], lambdas, kernels
    raise PlantDiverged(config.T, f"trajectory {index} diverged after {config.max_retries} retries")


def generate(config: GenerateConfig, path) -> Dataset:
    """Run the trajectories, write ``manifest`` and ``data.bin`` under ``path``."""
    config.validate()
    indices = range(config.n_trajectories)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_trajectory, [config] * len(indices), indices))
    else:
        results = [_trajectory(config, i) for i in indices]

    lambdas = np.concatenate([r[2] for r in results])
    kernels = np.concatenate([r[3] for r in results])
    manifest = DatasetManifest(
        n_trajectories=config.n_trajectories,
        samples_per_trajectory=config.samples_per_trajectory,
        n_points=config.n_points,
        dx=Grid1D(config.n_points).dx,
        dt=config.dt,
        T=config.T,
        lambda_bar=config.lambda_bar,
        gamma=config.gamma,
        gamma_cheb_range=list(config.gamma_cheb_range),
        seed=config.seed,
        mode=config.mode,
        generator_version=GENERATOR_VERSION,
        gamma_cheb=[r[0] for r in results],
        sample_times=[float(t) for t in results[0][1]],
    )
    dataset = Dataset(manifest, lambdas, kernels)
    save(dataset, path)
    return dataset


def _payload(lambdas: np.ndarray, kernels: np.ndarray) -> bytes:
    return np.ascontiguousarray(np.hstack([lambdas, kernels]), dtype=_DTYPE).tobytes()


def save(dataset: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = _payload(dataset.lambdas, dataset.kernels)
    dataset.manifest.payload_bytes = len(payload)
    dataset.manifest.sha256 = hashlib.sha256(payload).hexdigest()
    (path / PAYLOAD).write_bytes(payload)
    (path / MANIFEST).write_text(json.dumps(asdict(dataset.manifest), indent=1) + "\n")


def load(path) -> Dataset:
    path = Path(path)
    try:
        raw = json.loads((path / MANIFEST).read_text())
        manifest = DatasetManifest(**raw)
    except FileNotFoundError as exc:
        raise CorruptDataset(f"missing file {exc.filename}") from None
    except (json.JSONDecodeError, TypeError) as exc:
        raise CorruptDataset(f"manifest unreadable: {exc}") from None
    try:
        payload = (path / PAYLOAD).read_bytes()
    except FileNotFoundError:
        raise CorruptDataset(f"missing file {path / PAYLOAD}") from None

    width = manifest.sample_width
    expected = manifest.n_samples * width * _DTYPE.itemsize
    if len(payload) != expected:
        raise CorruptDataset(f"payload has {len(payload)} bytes, manifest implies {expected}")
    table = np.frombuffer(payload, dtype=_DTYPE).reshape(manifest.n_samples, width)
    bad = np.flatnonzero(~np.all(np.isfinite(table), axis=1))
    if bad.size:
        raise CorruptDataset("non-finite value in payload", int(bad[0]))
    if hashlib.sha256(payload).hexdigest() != manifest.sha256:
        raise CorruptDataset("payload checksum does not match manifest")
    n = manifest.n_points
    table = table.astype(np.float64)
    return Dataset(manifest, table[:, :n].copy(), table[:, n:].copy())


def triangle_size(n_points: int) -> int:
    return TriGrid(n_points).size
