"""Command-line frontend: gen-data, train, simulate, bench, certify.

Every command writes into one fresh directory under the output root
(``$RDADAPT_OUTPUT_ROOT``, default ``./runs``) unless ``--out-dir`` is
given, and echoes its parsed configuration there as ``config``.
Failures print a single ``error kind=<kind> message="..."`` line.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInput, PlantDiverged, RdAdaptError

OUTPUT_ROOT_ENV = "RDADAPT_OUTPUT_ROOT"
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(RdAdaptError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _n_points(dx: float) -> int:
    from .grid import Grid1D

    return Grid1D.from_dx(dx).n_points


def _out_dir(args) -> Path:
    if args.out_dir:
        path = Path(args.out_dir)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
        path = root / f"{args.command}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    config["version"] = __version__
    (path / "config").write_text(json.dumps(config, indent=1, default=str) + "\n")
    return path


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


# --------------------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    from .dataset import GenerateConfig, generate

    out = _out_dir(args)
    config = GenerateConfig(
        n_trajectories=args.trajectories,
        samples_per_trajectory=args.samples,
        n_points=_n_points(args.dx),
        dt=args.dt,
        T=args.T,
        lambda_bar=args.lambda_bar,
        gamma=args.gamma,
        gamma_cheb_range=(args.cheb_low, args.cheb_high),
        seed=args.seed,
        mode=args.mode,
        workers=args.workers,
    )
    ds = generate(config, out / "dataset")
    print(f"wrote {len(ds)} samples to {out / 'dataset'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .dataset import load
    from .noperator import DeepONetModel, TrainConfig, save_model, train

    ds = load(args.dataset)
    out = _out_dir(args)
    m = args.sensors or ds.n_points
    model = DeepONetModel.init(m, p=args.p, seed=args.seed)
    config = TrainConfig(
        lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        points_per_batch=args.points_per_batch or None,
    )
    report = train(model, ds, config)
    save_model(model, out / "model.bin")
    (out / "train_report.json").write_text(json.dumps(_json_safe(report.as_dict()), indent=1) + "\n")
    print(f"test relative L2 error {report.test_rel_l2:.4f}; model at {out / 'model.bin'}")
    return EXIT_OK


def _write_trajectory(out: Path, traj) -> None:
    x = traj.grid.nodes
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u", "lambda_hat", "w_hat"])
        for t, u, lam, wh in zip(traj.times, traj.u, traj.lambda_hat, traj.w_hat):
            for row in zip(x, u, lam, wh):
                w.writerow([repr(t), *(repr(float(v)) for v in row)])
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "V", "Gamma", "norm_u", "norm_w", "control_U", "eps_measured",
                    "delta_k0_sup", "delta_k1_sup"])
        for d in traj.diagnostics:
            w.writerow([repr(float(v)) for v in (
                d.t, d.V, d.Gamma, d.norm_u, d.norm_w_hat, d.control, d.eps_measured,
                d.delta_k0_sup, d.delta_k1_sup)])
    with open(out / "kernel_slice.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y", "k_hat_1y", "k_exact_1y"])
        for t, k_hat, k_exact in traj.kernel_slices:
            for y, a, b in zip(x, k_hat, k_exact):
                w.writerow([repr(t), repr(float(y)), repr(float(a)), repr(float(b))])


def cmd_simulate(args) -> int:
    from .adaptive import LoopConfig, run_closed_loop
    from .grid import Grid1D
    from .plant import chebyshev_lambda

    if args.kernel == "neural-operator" and not args.model:
        raise UsageError("--kernel neural-operator requires --model")
    model = None
    if args.model:
        from .noperator import load_model

        model = load_model(args.model)
    gamma_cheb = args.cheb_gamma
    if gamma_cheb is None:
        gamma_cheb = float(np.random.default_rng(args.seed).uniform(args.cheb_low, args.cheb_high))
    n = _n_points(args.dx)
    config = LoopConfig(
        n_points=n, dt=args.dt, T=args.T, gamma=args.gamma, lambda_bar=args.lambda_bar,
        u0_amplitude=args.u0, kernel_stride=args.kernel_stride,
        sample_stride=args.sample_stride, diag_stride=args.diag_stride or None,
        blowup_factor=args.blowup_factor,
    )
    lam = chebyshev_lambda(Grid1D(n), gamma_cheb)
    out = _out_dir(args)
    try:
        traj = run_closed_loop(config, lam, kernel_source=args.kernel, model=model)
    except PlantDiverged as err:
        partial = getattr(err, "trajectory", None)
        if partial is not None:
            _write_trajectory(out, partial)
        raise
    _write_trajectory(out, traj)
    summary = {
        "gamma_cheb": gamma_cheb,
        "final_sup_u": traj.final_sup_u,
        "initial_sup_u": float(np.max(np.abs(traj.u[0]))),
        "max_lambda_hat_sup": traj.max_lambda_hat_sup,
        "steps": traj.steps_run,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"final sup|u| = {traj.final_sup_u:.3e}; outputs in {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_bench
    from .dataset import load
    from .noperator import load_model

    if not args.model or not args.dataset:
        raise UsageError("bench requires --model and --dataset")
    model = load_model(args.model)
    ds = load(args.dataset)
    rng = np.random.default_rng(args.seed)
    picks = rng.choice(len(ds), size=min(args.samples, len(ds)), replace=False)
    samples = [ds.lambda_field(int(i)) for i in picks]
    report = run_bench(model, samples, args.dx, args.repetitions, args.warmup)
    out = _out_dir(args)
    report.write_csv(out / "bench.csv")
    table = report.table()
    (out / "bench.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_certify(args) -> int:
    from .kernel import certificate_constants

    report = certificate_constants(args.lambda_bar, args.epsilon, args.gamma)
    out = _out_dir(args)
    data = _json_safe(report.as_dict())
    (out / "bounds.json").write_text(json.dumps(data, indent=1) + "\n")
    for key in ("eps_star", "gamma_star", "log_gamma_star", "k_bar", "l_bar", "big_m", "big_r", "rho"):
        value = data[key]
        print(f"{key} = {value if value is not None else 'n/a'}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    from .adaptive import KERNEL_SOURCES
    from .dataset import MODES

    parser = _Parser(prog="rdadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, dx=0.02):
        p.add_argument("--out-dir", help="output directory (default: timestamped under $%s)" % OUTPUT_ROOT_ENV)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dx", type=float, default=dx)

    def plant_flags(p):
        p.add_argument("--dt", type=float, default=1e-4)
        p.add_argument("--T", type=float, default=1.0, help="horizon in seconds")
        p.add_argument("--lambda-bar", type=float, default=50.0)
        p.add_argument("--gamma", type=float, default=100.0, help="adaptation gain")
        p.add_argument("--cheb-low", type=float, default=8.5)
        p.add_argument("--cheb-high", type=float, default=9.5)

    p = sub.add_parser("gen-data", help="generate (lambda_hat, k) pairs")
    common(p)
    plant_flags(p)
    p.add_argument("--trajectories", type=int, default=10)
    p.add_argument("--samples", type=int, default=500, help="samples per trajectory")
    p.add_argument("--mode", choices=MODES, default="closed-loop")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the DeepONet surrogate")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--points-per-batch", type=int, default=256, help="0 uses every triangle node")
    p.add_argument("--p", type=int, default=64, help="latent dimension")
    p.add_argument("--sensors", type=int, default=0, help="branch sensor count (default: dataset n)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run the adaptive closed loop")
    common(p)
    plant_flags(p)
    p.add_argument("--cheb-gamma", type=float, help="Chebyshev order; drawn from the range when omitted")
    p.add_argument("--u0", type=float, default=1.0, help="initial amplitude of sin(pi x)")
    p.add_argument("--kernel", choices=KERNEL_SOURCES, default="exact-march")
    p.add_argument("--kernel-stride", type=int, default=1)
    p.add_argument("--sample-stride", type=int, default=100)
    p.add_argument("--diag-stride", type=int, default=100, help="0 disables diagnostics")
    p.add_argument("--blowup-factor", type=float, default=1e4,
                   help="declare divergence when sup|u| exceeds this multiple of sup|u0|")
    p.add_argument("--model")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="time exact vs neural-operator kernels")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--dx", type=float, nargs="+", default=[0.05, 0.01, 0.005])
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--samples", type=int, default=20, help="distinct lambda_hat inputs cycled")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("certify", help="stability certificate constants")
    p.add_argument("--out-dir")
    p.add_argument("--lambda-bar", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_certify)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    message = " ".join(str(message).split()).replace('"', "'")
    print(f'error kind={kind} message="{message}"', file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        return _fail(err.kind, err, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        return _fail(err.kind, err, EXIT_USAGE)
    except PlantDiverged as err:
        return _fail(err.kind, err, EXIT_DIVERGED)
    except (RdAdaptError, InvalidInput) as err:
        return _fail(err.kind, err, EXIT_ERROR)
    except OSError as err:
        return _fail("io", err, EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
