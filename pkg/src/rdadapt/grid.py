"""Uniform grids on [0, 1] and on the triangle {0 <= y <= x <= 1}.

Triangle fields are stored flattened row-major over (i, j <= i), so node
(x_i, y_j) lives at linear index ``i*(i+1)//2 + j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import InvalidInput


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Grid1D:
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise InvalidInput(f"n_points must be an integer >= 2, got {self.n_points!r}")

    @classmethod
    def from_dx(cls, dx: float) -> "Grid1D":
        n_intervals = round(1.0 / dx)
        if n_intervals < 1 or abs(n_intervals * dx - 1.0) > 1e-9:
            raise InvalidInput(f"dx={dx} does not divide [0, 1] evenly")
        return cls(n_intervals + 1)

    @property
    def dx(self) -> float:
        return 1.0 / (self.n_points - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return _frozen(np.linspace(0.0, 1.0, self.n_points))


@dataclass(frozen=True, eq=False)
class ScalarField1D:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.n_points,):
            raise InvalidInput(
                f"field has shape {values.shape}, grid expects ({self.grid.n_points},)"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid1D, fn) -> "ScalarField1D":
        return cls(grid, fn(grid.nodes))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2(self) -> float:
        return float(np.sqrt(trapezoid(self.values**2, self.grid.dx)))


@lru_cache(maxsize=32)
def _tri_indices(n: int):
    rows, cols = np.tril_indices(n)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


@dataclass(frozen=True)
class TriGrid:
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise InvalidInput(f"n_points must be an integer >= 2, got {self.n_points!r}")

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.n_points)

    @property
    def dx(self) -> float:
        return 1.0 / (self.n_points - 1)

    @property
    def size(self) -> int:
        return self.n_points * (self.n_points + 1) // 2

    @property
    def rows(self) -> np.ndarray:
        return _tri_indices(self.n_points)[0]

    @property
    def cols(self) -> np.ndarray:
        return _tri_indices(self.n_points)[1]

    @cached_property
    def points(self) -> np.ndarray:
        """(size, 2) array of (x, y) coordinates in storage order."""
        x = self.grid.nodes
        return _frozen(np.column_stack([x[self.rows], x[self.cols]]))

    def index_of(self, i: int, j: int) -> int:
        if not (0 <= j <= i < self.n_points):
            raise InvalidInput(f"({i}, {j}) is not a triangle node")
        return i * (i + 1) // 2 + j

    def coords_of(self, index: int) -> tuple[int, int]:
        if not (0 <= index < self.size):
            raise InvalidInput(f"index {index} out of range")
        i = int((np.sqrt(8.0 * index + 1.0) - 1.0) // 2)
        # float sqrt can be off by one near perfect squares
        while i * (i + 1) // 2 > index:
            i -= 1
        while (i + 1) * (i + 2) // 2 <= index:
            i += 1
        return i, index - i * (i + 1) // 2

    def row_slice(self, i: int) -> slice:
        start = i * (i + 1) // 2
        return slice(start, start + i + 1)

    def to_dense(self, values: np.ndarray) -> np.ndarray:
        dense = np.zeros((self.n_points, self.n_points))
        dense[self.rows, self.cols] = values
        return dense

    def from_dense(self, dense: np.ndarray) -> np.ndarray:
        return dense[self.rows, self.cols]


@dataclass(frozen=True, eq=False)
class TriField:
    tri: TriGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.tri.size,):
            raise InvalidInput(f"tri field has shape {values.shape}, expected ({self.tri.size},)")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, tri: TriGrid, fn) -> "TriField":
        pts = tri.points
        return cls(tri, np.broadcast_to(fn(pts[:, 0], pts[:, 1]), (tri.size,)))

    @classmethod
    def from_dense(cls, tri: TriGrid, dense: np.ndarray) -> "TriField":
        return cls(tri, tri.from_dense(dense))

    @classmethod
    def zeros(cls, tri: TriGrid) -> "TriField":
        return cls(tri, np.zeros(tri.size))

    def dense(self) -> np.ndarray:
        return self.tri.to_dense(self.values)

    def at(self, i: int, j: int) -> float:
        return float(self.values[self.tri.index_of(i, j)])

    def row(self, i: int) -> np.ndarray:
        return self.values[self.tri.row_slice(i)]

    def diagonal(self) -> np.ndarray:
        idx = np.arange(self.tri.n_points)
        return self.values[idx * (idx + 1) // 2 + idx]

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def trapezoid(values, dx: float) -> float:
    """Composite trapezoid rule on uniformly spaced samples."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise InvalidInput("trapezoid needs at least 2 samples")
    return float(dx * (values.sum() - 0.5 * (values[0] + values[-1])))


def cumulative_trapezoid(values: np.ndarray, dx: float) -> np.ndarray:
    """Running trapezoid integral, starting at 0."""
    out = np.zeros_like(values, dtype=np.float64)
    out[1:] = np.cumsum(0.5 * dx * (values[1:] + values[:-1]))
    return out


def resample(field: ScalarField1D, grid: Grid1D) -> ScalarField1D:
    if field.grid == grid:
        return field
    return ScalarField1D(grid, np.interp(grid.nodes, field.grid.nodes, field.values))


def first_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    """Second-order central differences with one-sided second-order ends."""
    f = np.asarray(values, dtype=np.float64)
    if f.size < 3:
        raise InvalidInput("need at least 3 samples for a second-order derivative")
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2.0 * dx)
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
    d[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * dx)
    return d


def second_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    """Second-order accurate f'' on a segment of at least 4 samples."""
    f = np.asarray(values, dtype=np.float64)
    if f.size < 4:
        raise InvalidInput("need at least 4 samples for a second-order f''")
    d = np.empty_like(f)
    h2 = dx * dx
    d[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h2
    d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2
    d[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h2
    return d


def diff_diagonal(k: TriField) -> ScalarField1D:
    """d/dx of the diagonal trace x -> k(x, x)."""
    if k.tri.n_points < 3:
        raise InvalidInput("diff_diagonal needs n_points >= 3")
    return ScalarField1D(k.tri.grid, first_derivative(k.diagonal(), k.tri.dx))


def _extrapolation_weights(d: int, count: int) -> np.ndarray:
    """Lagrange weights taking samples at offsets 0, 1, .., count-1 to offset -d."""
    nodes = np.arange(count, dtype=np.float64)
    w = np.ones(count)
    for a in range(count):
        for b in range(count):
            if a != b:
                w[a] *= (-d - nodes[b]) / (nodes[a] - nodes[b])
    return w


def tri_laplace_diff(k: TriField) -> TriField:
    """Wave operator k_xx - k_yy evaluated at every triangle node.

    Each directional second derivative is taken along the segment of the
    triangle through the node (column for x, row for y). Segments shorter
    than four nodes (within three nodes of the corners (0,0) and (1,1))
    get the derivative by quadratic extrapolation from the three nearest
    long segments, which keeps the stencil second order.
    """
    n = k.tri.n_points
    if n < 5:
        raise InvalidInput("tri_laplace_diff needs n_points >= 5")
    h = k.tri.dx
    dense = k.dense()
    kxx = np.zeros_like(dense)
    kyy = np.zeros_like(dense)
    # column j holds rows j..n-1
    for j in range(n - 3):
        kxx[j:, j] = second_derivative(dense[j:, j], h)
    donors = list(range(n - 4, max(n - 7, -1), -1))
    for j in range(n - 3, n):
        w = _extrapolation_weights(j - (n - 4), len(donors))
        kxx[j:, j] = sum(wa * kxx[j:, c] for wa, c in zip(w, donors))
    # row i holds columns 0..i
    for i in range(3, n):
        kyy[i, : i + 1] = second_derivative(dense[i, : i + 1], h)
    donors = list(range(3, min(6, n)))
    for i in range(3):
        w = _extrapolation_weights(3 - i, len(donors))
        kyy[i, : i + 1] = sum(wa * kyy[r, : i + 1] for wa, r in zip(w, donors))
    return TriField.from_dense(k.tri, kxx - kyy)
