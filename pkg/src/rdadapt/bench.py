"""Timing harness: exact march solver against neural-operator inference."""

from __future__ import annotations

import csv
import io
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InvalidInput
from .grid import Grid1D, ScalarField1D, TriGrid, resample
from .kernel import solve_kernel_march

DEFAULT_DX = (0.05, 0.01, 0.005)
METHODS = ("exact-march", "neural-operator")
CSV_COLUMNS = ("dx", "method", "mean_ms", "median_ms", "std_ms", "speedup")


@dataclass
class BenchCell:
    dx: float
    method: str
    times_ms: list

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.times_ms)

    @property
    def median_ms(self) -> float:
        return statistics.median(self.times_ms)

    @property
    def std_ms(self) -> float:
        return statistics.pstdev(self.times_ms)


@dataclass
class BenchReport:
    cells: list
    repetitions: int
    warmup: int
    threads: int = 1
    cpu: str = ""
    python: str = field(default_factory=platform.python_version)

    def cell(self, dx: float, method: str) -> BenchCell:
        for c in self.cells:
            if c.method == method and np.isclose(c.dx, dx):
                return c
        raise KeyError((dx, method))

    def speedup(self, dx: float) -> float:
        """mean(exact) / mean(NO), the column written to the CSV."""
        return self.cell(dx, METHODS[0]).mean_ms / self.cell(dx, METHODS[1]).mean_ms

    def median_speedup(self, dx: float) -> float:
        return self.cell(dx, METHODS[0]).median_ms / self.cell(dx, METHODS[1]).median_ms

    def rows(self) -> list:
        out = []
        for c in self.cells:
            sp = self.speedup(c.dx) if c.method == METHODS[1] else 1.0
            out.append((c.dx, c.method, c.mean_ms, c.median_ms, c.std_ms, sp))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for dx, method, mean, median, std, sp in self.rows():
            writer.writerow([f"{dx:g}", method, f"{mean:.6f}", f"{median:.6f}", f"{std:.6f}", f"{sp:.3f}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def table(self) -> str:
        lines = [
            f"cpu: {self.cpu or 'unknown'}  threads: {self.threads}  "
            f"repetitions: {self.repetitions}  warmup: {self.warmup}",
            f"{'dx':>7} {'method':<16} {'mean ms':>10} {'median ms':>10} {'std ms':>9} {'speedup':>8}",
        ]
        for dx, method, mean, median, std, sp in self.rows():
            lines.append(f"{dx:>7g} {method:<16} {mean:>10.4f} {median:>10.4f} {std:>9.4f} {sp:>7.1f}x")
        return "\n".join(lines)


def cpu_model() -> str:
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.startswith("model name"):
                return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def _time_calls(fn, inputs: Sequence, repetitions: int, warmup: int) -> list:
    for i in range(warmup):
        fn(inputs[i % len(inputs)])
    times = []
    for r in range(repetitions):
        arg = inputs[r % len(inputs)]
        t0 = time.perf_counter()
        fn(arg)
        times.append((time.perf_counter() - t0) * 1e3)
    return times


def run_bench(
    model,
    lambda_samples: Sequence[ScalarField1D],
    dx_list: Sequence[float] = DEFAULT_DX,
    repetitions: int = 100,
    warmup: int = 5,
) -> BenchReport:
    """Time one kernel production per call for each dx and method.

    The exact method solves on the target grid. The neural-operator time
    covers resampling lambda_hat to the model's sensors plus the forward
    pass over every triangle node. Samples are cycled in a fixed order.
    """
    from .noperator import forward

    if repetitions < 100:
        raise InvalidInput("repetitions must be at least 100")
    if not lambda_samples:
        raise InvalidInput("need at least one lambda_hat sample")
    cells = []
    with threadpool_limits(limits=1):
        for dx in dx_list:
            grid = Grid1D.from_dx(dx)
            tri = TriGrid(grid.n_points)
            inputs = [resample(lam, grid) for lam in lambda_samples]
            exact = _time_calls(solve_kernel_march, inputs, repetitions, warmup)
            surrogate = _time_calls(lambda lam: forward(model, lam, tri), inputs, repetitions, warmup)
            cells.append(BenchCell(dx, METHODS[0], exact))
            cells.append(BenchCell(dx, METHODS[1], surrogate))
    return BenchReport(cells, repetitions, warmup, threads=1, cpu=cpu_model())
