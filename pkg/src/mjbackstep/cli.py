"""Command-line entry point: ``mjbackstep <command> [options]``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ConvergenceError, DivergenceError, DomainError, RateBoundError, SchemaError
from .kernel_solver import save_grid, solve_kernels
from .metrics import fit_decay, lyapunov_value, lyapunov_weights, write_decay_csv, write_fit_json
from .neural_operator import (
    ParamSpec,
    TrainConfig,
    generate_dataset,
    infer,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    train,
)
from .params import bundled_config_path, load_config_file
from .simulator import KernelController, ZeroController, run_ensemble, write_state_csvs, write_trajectory_csv

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_GRIDS = (0.1, 0.01, 0.005, 0.001)


class UsageError(Exception):
    """Invalid command-line input detected after parsing."""


def _load_cfg(path):
    p = Path(path)
    if not p.exists():
        bundled = bundled_config_path(p.name)
        if p.parent == Path(".") and bundled.exists():
            p = bundled
        else:
            raise ConfigError(f"config file not found: {path}")
    return load_config_file(p)


def _check_n(n):
    if n < 4:
        raise UsageError("n ≥ 4 required")
    return n


def _parse_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--range expects lo:hi, got {text!r}") from None
    if lo > hi:
        raise UsageError("--range lower bound exceeds upper bound")
    return lo, hi


def _parse_floats(text, flag):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers") from None
    if not vals:
        raise UsageError(f"{flag} is empty")
    return vals


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text)
    print(text)


def cmd_solve(args):
    cfg = _load_cfg(args.config)
    n = _check_n(args.n)
    grid = solve_kernels(cfg.nominal, cfg.ode, n, tol=args.tol, max_sweeps=args.max_sweeps)
    report = grid.residuals
    if args.out:
        save_grid(grid, args.out)
    doc = {"n": n, "sweeps": grid.info["sweeps"], "seconds": grid.info["seconds"], "residuals": report.to_dict(),
           "passed": report.passes()}
    _emit(doc)
    return EXIT_OK if report.passes() else EXIT_RUNTIME


def cmd_dataset(args):
    cfg = _load_cfg(args.config)
    n = _check_n(args.n)
    lo, hi = _parse_range(args.range)
    spec = ParamSpec([args.param], [lo], [hi])
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    ds = generate_dataset(cfg.ode, cfg.nominal, spec, args.count, n, args.seed, n_jobs=args.jobs)
    save_dataset(ds, args.out)
    _emit({"samples": len(ds), "n": n, "param_spec": spec.to_dict(), "out": str(args.out)})
    return EXIT_OK


def cmd_train(args):
    ds = load_dataset(args.dataset)
    hyper = TrainConfig(p=args.p, hidden=tuple(args.hidden), lr=args.lr, lr_final=args.lr_final,
                        epochs=args.epochs, batch_size=args.batch, seed=args.seed)
    if hyper.epochs < 1 or hyper.batch_size < 1:
        raise UsageError("--epochs and --batch must be positive")
    model, hist = train(ds, hyper, verbose=args.verbose)
    save_model(model, args.out)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "train_mse", "val_mse"])
            for k, (a, b) in enumerate(zip(hist["train"], hist["val"])):
                wr.writerow([k, repr(a), repr(b)])
    _emit({"final_train_mse": hist["train"][-1], "final_val_mse": hist["val"][-1], "epochs": hyper.epochs,
           "seconds": hist["seconds"], "out": str(args.out)})
    return EXIT_OK


def _kernel_errors(a, b):
    mask = np.tril(np.ones((a.n + 1, a.n + 1), dtype=bool))
    diffs = np.concatenate([(a.K - b.K)[:, mask].ravel(), (a.N - b.N)[mask], (a.gamma - b.gamma).ravel()])
    return float(np.abs(diffs).max()), float(np.sqrt(np.mean(diffs**2)))


def cmd_eval(args):
    model = load_model(args.model)
    cfg = _load_cfg(args.config)
    n = _check_n(args.n)
    spec = model.param_spec
    if spec.dim != 1:
        raise UsageError("--holdout takes scalar values; the model varies more than one parameter")
    rows = []
    for v in _parse_floats(args.holdout, "--holdout"):
        nominal = cfg.nominal.with_values(spec.names, [v])
        ref = solve_kernels(nominal, cfg.ode, n)
        pred = infer(model, [v], n, check=False)
        sup, l2 = _kernel_errors(pred, ref)
        rows.append({"value": v, "sup_error": sup, "l2_error": l2})
    _emit({"parameter": spec.names[0], "n": n, "rows": rows}, args.out)
    return EXIT_OK


def _controller(args, cfg):
    n = args.n or cfg.grid.nx
    if args.controller == "none":
        return ZeroController(), None
    if args.controller == "solver-kernels":
        grid = solve_kernels(cfg.nominal, cfg.ode, _check_n(n))
    else:
        if not args.model:
            raise UsageError("--controller no-model requires --model")
        grid = infer(load_model(args.model), cfg.nominal, _check_n(n), check=False)
    return KernelController(grid, cfg.reflection_point), grid


def cmd_ensemble(args):
    cfg = _load_cfg(args.config)
    if args.paths < 1:
        raise UsageError("--paths must be at least 1")
    controller, grid = _controller(args, cfg)
    res = run_ensemble(cfg, controller, args.paths, args.seed, keep_states=grid is not None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    v_mean = None
    if grid is not None:
        wts = lyapunov_weights(cfg.ode)
        modes = cfg.markov.modes
        vals = np.full((len(res.trajectories), res.times.size), np.nan)
        for i, tr in enumerate(res.trajectories):
            for k, s in enumerate(tr.snapshots):
                vals[i, k] = lyapunov_value(s, grid, modes[s.mode], wts)
        v_mean = vals.mean(axis=0)
    write_decay_csv(out / "decay.csv", res.times, res.mean_p, v_mean)
    for i, tr in enumerate(res.trajectories):
        write_trajectory_csv(tr, out / f"traj_{i}.csv")
        if args.states and tr.snapshots:
            write_state_csvs(tr, out / f"states_{i}", every=args.states)
    window = tuple(_parse_floats(args.window, "--window"))
    extra = {"controller": args.controller, "paths": args.paths, "blown_up": res.n_blown_up,
             "Ep0": float(res.mean_p[0]), "EpT": float(res.mean_p[-1])}
    try:
        fit = fit_decay(res.times, res.mean_p, window)
    except ValueError as exc:
        fit = None
        extra["fit_error"] = str(exc)
    write_fit_json(out / "fit.json", fit, extra)
    doc = {**(fit.to_dict() if fit else {"zeta": None}), **extra}
    _emit(doc)
    return EXIT_OK


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run_bench(cfg, model, grids, repeats=5):
    """Median wall times of ``solve_kernels`` and ``infer`` per mesh step ``h``."""
    spec = model.param_spec
    values = cfg.nominal.values_of(spec.names)
    rows = []
    for h in grids:
        n = int(round(1.0 / h))
        _check_n(n)
        solve_kernels(cfg.nominal, cfg.ode, n)  # warm-up
        t_solver = _median_time(lambda: solve_kernels(cfg.nominal, cfg.ode, n), repeats)
        model._invalidate()
        t0 = time.perf_counter()
        infer(model, values, n, check=False)
        t_cold = time.perf_counter() - t0
        t_no = _median_time(lambda: infer(model, values, n, check=False), repeats)
        rows.append({"h": h, "n": n, "solver_seconds": t_solver, "no_seconds": t_no,
                     "no_cold_seconds": t_cold, "speedup": t_solver / t_no})
    note = f"{platform.platform()}; {platform.processor() or 'cpu'}; {os.cpu_count()} cpu(s); python {platform.python_version()}"
    return {"rows": rows, "machine": note, "repeats": repeats}


def cmd_bench(args):
    cfg = _load_cfg(args.config)
    if not args.model:
        raise UsageError("bench requires --model")
    model = load_model(args.model)
    grids = _parse_floats(args.grids, "--grids") if args.grids else list(DEFAULT_GRIDS)
    if any(not 0 < h <= 0.25 for h in grids):
        raise UsageError("grid steps must lie in (0, 0.25]")
    report = run_bench(cfg, model, grids, args.repeats)
    out = Path(args.out) if args.out else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out.with_suffix(".csv"), "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(report["rows"][0]))
            wr.writeheader()
            wr.writerows(report["rows"])
    _emit(report, out.with_suffix(".json") if out else None)
    return EXIT_OK


def build_parser():
    default_cfg = str(bundled_config_path())
    ap = argparse.ArgumentParser(prog="mjbackstep", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the kernel equations and report residuals")
    p.add_argument("--config", default=default_cfg)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--out")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("dataset", help="sample parameters and solve their kernels")
    p.add_argument("--config", default=default_cfg)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--range", default="0.8:1.8")
    p.add_argument("--param", default="lambda_minus")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the operator network on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--batch", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--lr-final", type=float, default=TrainConfig.lr_final)
    p.add_argument("--p", type=int, default=32)
    p.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare operator kernels with fresh solver solves")
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=default_cfg)
    p.add_argument("--holdout", default="1.05")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="Monte Carlo closed-loop runs and decay fit")
    p.add_argument("--config", default=default_cfg)
    p.add_argument("--controller", choices=["none", "solver-kernels", "no-model"], default="solver-kernels")
    p.add_argument("--model")
    p.add_argument("--paths", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="kernel mesh (default: simulation grid)")
    p.add_argument("--window", default="10,70")
    p.add_argument("--states", type=int, default=0, help="dump every k-th state snapshot (0: none)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("bench", help="time kernel solves against operator inference")
    p.add_argument("--config", default=default_cfg)
    p.add_argument("--model")
    p.add_argument("--grids")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, SchemaError, RateBoundError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, (FileNotFoundError, ValueError)) else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
