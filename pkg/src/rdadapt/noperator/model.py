"""DeepONet surrogate for the map lambda_hat -> k on the triangle.

prediction(lambda)(x, y) = output_scale * sum_k branch_k(lambda) * trunk_k(x, y)

Both networks are dense with logistic-sigmoid hidden layers and linear
outputs. The trunk sees (2x - 1, 2y - 1). Weights are stored (in, out) so a layer is ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput, ModelCorrupt
from ..grid import Grid1D, ScalarField1D, TriField, TriGrid

ACTIVATION = "sigmoid"
# Glorot limit multiplier for layers feeding a sigmoid; larger than the
# textbook 4 because the product of two sigmoid nets trains slowly otherwise
HIDDEN_INIT_GAIN = 12.0


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MLP:
    weights: list
    biases: list

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, output_gain: float = 1.0) -> "MLP":
        """Glorot-uniform init, scaled by HIDDEN_INIT_GAIN on layers feeding a sigmoid."""
        weights, biases = [], []
        last = len(sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = output_gain if i == last else HIDDEN_INIT_GAIN
            limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = sigmoid(h)
        return h

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping every layer input for backprop."""
        inputs = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w + b
            if i < last:
                h = sigmoid(h)
        return h, inputs

    def backward(self, inputs, grad_out: np.ndarray) -> list:
        """Gradients in params() order, given dLoss/dOutput."""
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            x = inputs[i]
            grads[2 * i] = x.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                # x is sigmoid output of the previous layer: s' = s (1 - s)
                g = g * x * (1.0 - x)
        return grads


@dataclass
class DeepONetModel:
    branch: MLP
    trunk: MLP
    input_mean: np.ndarray
    input_std: np.ndarray
    output_scale: float = 1.0
    activation: str = ACTIVATION
    _trunk_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.branch.sizes[-1] != self.trunk.sizes[-1]:
            raise InvalidInput("branch and trunk must share the latent dimension p")
        if self.trunk.sizes[0] != 2:
            raise InvalidInput("trunk input must be a point (x, y)")
        if self.activation != ACTIVATION:
            raise InvalidInput(f"unsupported activation {self.activation!r}")
        self.input_mean = np.asarray(self.input_mean, dtype=np.float64)
        self.input_std = np.asarray(self.input_std, dtype=np.float64)
        if self.input_mean.shape != (self.m,) or self.input_std.shape != (self.m,):
            raise InvalidInput("normalization statistics must have one entry per sensor")

    @classmethod
    def init(
        cls,
        m: int,
        p: int = 64,
        branch_hidden=(128, 128),
        trunk_hidden=(128, 128),
        seed: int = 0,
    ) -> "DeepONetModel":
        rng = np.random.default_rng(seed)
        # 1/sqrt(p) on both output layers keeps the initial inner product O(1)
        branch = MLP.init([m, *branch_hidden, p], rng, output_gain=p**-0.5)
        trunk = MLP.init([2, *trunk_hidden, p], rng, output_gain=p**-0.5)
        return cls(branch, trunk, np.zeros(m), np.ones(m), 1.0)

    @property
    def p(self) -> int:
        return self.branch.sizes[-1]

    @property
    def m(self) -> int:
        return self.branch.sizes[0]

    def params(self) -> list:
        """Branch layers then trunk layers, weights before bias per layer."""
        return self.branch.params() + self.trunk.params()

    def invalidate_cache(self):
        self._trunk_cache.clear()

    def check_finite(self):
        for i, arr in enumerate(self.params()):
            if not np.all(np.isfinite(arr)):
                raise ModelCorrupt(f"parameter array {i} contains non-finite values")
        if not (np.all(np.isfinite(self.input_mean)) and np.all(np.isfinite(self.input_std))
                and np.isfinite(self.output_scale)):
            raise ModelCorrupt("normalization constants are non-finite")

    def normalize(self, sensors: np.ndarray) -> np.ndarray:
        return (sensors - self.input_mean) / self.input_std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.input_std + self.input_mean

    def branch_coefficients(self, sensors: np.ndarray) -> np.ndarray:
        return self.branch(self.normalize(sensors))

    def trunk_inputs(self, points: np.ndarray) -> np.ndarray:
        """Query points mapped from [0, 1]^2 to [-1, 1]^2."""
        return 2.0 * np.asarray(points) - 1.0

    def trunk_basis(self, tri: TriGrid) -> np.ndarray:
        """Trunk outputs on every triangle node; independent of lambda, so cached per grid."""
        basis = self._trunk_cache.get(tri.n_points)
        if basis is None:
            basis = self.trunk(self.trunk_inputs(tri.points))
            self._trunk_cache[tri.n_points] = basis
        return basis

    def predict_normalized(self, sensors: np.ndarray, points: np.ndarray) -> np.ndarray:
        """(batch, m) sensors x (P, 2) points -> (batch, P), before output scaling."""
        return self.branch_coefficients(sensors) @ self.trunk(self.trunk_inputs(points)).T


def sensor_values(model: DeepONetModel, lambda_hat: ScalarField1D) -> np.ndarray:
    """lambda_hat at the model's m uniformly spaced sensors."""
    if lambda_hat.grid.n_points == model.m:
        return lambda_hat.values
    return np.interp(Grid1D(model.m).nodes, lambda_hat.grid.nodes, lambda_hat.values)


def forward(model: DeepONetModel, lambda_hat: ScalarField1D, tri: TriGrid) -> TriField:
    """Kernel prediction on every node of ``tri``."""
    coeffs = model.branch_coefficients(sensor_values(model, lambda_hat))
    values = model.output_scale * (model.trunk_basis(tri) @ coeffs)
    if not np.all(np.isfinite(values)):
        model.check_finite()
        raise ModelCorrupt("prediction is non-finite")
    return TriField(tri, values)


def backprop(model: DeepONetModel, sensors: np.ndarray, points: np.ndarray, targets: np.ndarray):
    """MSE loss on normalized targets and its exact gradient in params() order.

    sensors: (B, m) raw lambda values; points: (P, 2); targets: (B, P) raw k values.
    """
    sensors = np.atleast_2d(sensors)
    targets = np.atleast_2d(targets)
    if sensors.shape[0] == 0 or points.shape[0] == 0:
        raise InvalidInput("batch must be nonempty")
    b_out, b_inputs = model.branch.forward_cache(model.normalize(sensors))
    t_out, t_inputs = model.trunk.forward_cache(model.trunk_inputs(points))
    err = b_out @ t_out.T - targets / model.output_scale
    loss = float(np.mean(err * err))
    d_pred = (2.0 / err.size) * err
    grads = model.branch.backward(b_inputs, d_pred @ t_out)
    grads += model.trunk.backward(t_inputs, d_pred.T @ b_out)
    return loss, grads
