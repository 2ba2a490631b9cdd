"""Command-line front end.

Subcommands::

    resnet-landscape oracle          --config PATH [--seed N] [--out DIR]
    resnet-landscape train-verify    --config PATH [--seed N] [--out DIR] [--restarts N] [--grad-tol R] [--jobs N]
    resnet-landscape counterexample  --config PATH [--seed N] [--out DIR]
    resnet-landscape sweep           --config PATH [--seed N] [--out DIR] [--jobs N]
    resnet-landscape check           [--only 1,5,...] [--out DIR]

Every command is a pure function of the config, the seed and any input
files: result CSVs are byte-identical across runs.  Wall-clock times go to
separate ``timing.csv`` files, which are the only outputs that vary.

Exit status: 0 success, 1 infrastructure failure (I/O, unexpected
errors, or failed checks for ``check``), 2 invalid configuration or input.
"""

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import expand_sweep, load_config
from .data import gaussian_dataset, load_csv_dataset, replicated_dataset, teacher_dataset
from .errors import (
    ConfigurationError,
    ConstructionInfeasibleError,
    ConvergenceError,
    DataFormatError,
    InvalidInputError,
    ResNetLandscapeError,
)
from .kernels import backend_name
from .lab import (
    CertificationConfig,
    build_dead_relu_counterexample,
    certify_point,
    make_rng,
    plain_net_objective,
    train,
)
from .losses import LossKind
from .model import check_output_dim_assumption, init_params, residual_batch
from .oracle import (
    convex_oracle_xz,
    improvement_alt_form,
    is_non_negligible,
    sq_oracle_xz,
)
__all__ = [
    "main",
    "build_dataset",
    "restart_seed",
    "cmd_oracle",
    "cmd_train_verify",
    "cmd_counterexample",
    "cmd_sweep",
    "cmd_check",
    "ORACLE_COLUMNS",
    "RUN_COLUMNS",
    "TRACE_COLUMNS",
    "COUNTEREXAMPLE_COLUMNS",
    "SWEEP_COLUMNS",
    "SCHEMA_VERSION",
]

# Bumped whenever a column set below changes; golden tests pin both.
SCHEMA_VERSION = 1

ORACLE_COLUMNS = (
    "schema", "config_hash", "seed", "loss", "m", "d_x", "d_y", "d_z",
    "l_star_x", "l_star_xz", "improvement", "improvement_alt", "non_negligible", "status", "error",
)
RUN_COLUMNS = (
    "schema", "config_hash", "seed", "restart", "restart_seed", "backend", "loss", "status",
    "descent_status", "certification", "converged", "monotone", "iterations", "final_loss",
    "grad_norm", "l_star_x", "l_star_xz", "oracle_gap", "improvement", "lemma2_z_residual",
    "lemma2_x_residual", "max_decrease", "min_hessian_eig", "error",
)
TRACE_COLUMNS = ("iteration", "loss", "grad_norm")
COUNTEREXAMPLE_COLUMNS = (
    "schema", "config_hash", "seed", "m", "d_x", "d_y", "c", "hidden", "local_value",
    "oracle_value", "separation", "safe_radius", "certification", "status", "error",
)
SWEEP_COLUMNS = (
    "schema", "cell", "label", "config_hash", "runs", "ok_runs", "certified", "certified_fraction",
    "max_abs_gap", "mean_improvement", "status", "error",
)
TIMING_COLUMNS = ("item", "wall_time_s")

# named PCG64 streams (see lab.make_rng); 1-4 are used inside lab
_DATA_STREAM = 5
_THETA_STREAM = 6


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _write_csv(path, columns, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _error_text(exc):
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


# ---------------------------------------------------------------------------
# datasets and seeds
# ---------------------------------------------------------------------------

def build_dataset(config):
    """Dataset described by ``config`` (synthetic ones drawn from the config seed)."""
    if config.source == "csv":
        data = load_csv_dataset(config.x_path, config.y_path, bias=config.bias, header=config.header)
        check_output_dim_assumption(data.d_x, data.d_y, config.d_z)
        return data
    rng = make_rng(config.seed, _DATA_STREAM)
    if config.source == "teacher":
        return teacher_dataset(config.m, config.d_x, config.d_y, config.teacher, config.loss, rng, config.noise, config.bias)
    if config.source == "replicated":
        return replicated_dataset(
            config.groups, config.replicas, config.d_x, config.d_y, config.teacher, config.loss, rng,
            config.noise, config.bias,
        )
    return gaussian_dataset(config.m, config.d_x, config.d_y, config.loss, rng, config.bias)


def restart_seed(seed, restart):
    """64-bit seed of restart ``restart``; distinct restarts get independent streams."""
    return int(np.random.SeedSequence((int(seed), int(restart))).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def _oracle_row(config, data):
    row = {
        "schema": SCHEMA_VERSION, "config_hash": config.config_hash, "seed": config.seed,
        "loss": config.loss.value, "m": data.m, "d_x": data.d_x, "d_y": data.d_y, "d_z": config.d_z,
    }
    theta = init_params(data.d_x, data.d_y, config.stack, make_rng(config.seed, _THETA_STREAM)).theta
    Z = residual_batch(data.X, theta, config.stack)
    try:
        if config.loss is LossKind.SQUARED:
            res = sq_oracle_xz(data.X, Z, data.Y)
            row.update(
                l_star_x=res.l_star_x, l_star_xz=res.l_star_xz, improvement=res.improvement,
                improvement_alt=improvement_alt_form(data.X, Z, data.Y), non_negligible=is_non_negligible(res),
            )
        else:
            l_x = convex_oracle_xz(data, None, config.loss).objective
            l_xz = convex_oracle_xz(data, Z, config.loss).objective
            row.update(
                l_star_x=l_x, l_star_xz=l_xz, improvement=l_x - l_xz, improvement_alt=float("nan"),
                non_negligible=(l_x - l_xz) > 1e-8 * max(1.0, l_x),
            )
        row["status"] = "ok"
    except ConvergenceError as exc:
        row.update(status="oracle_not_converged", error=_error_text(exc))
    return row


def cmd_oracle(config, out_dir):
    """Oracle values at a seeded random theta; writes ``oracle.csv``.  Returns the row."""
    data = build_dataset(config)
    t0 = time.perf_counter()
    row = _oracle_row(config, data)
    _write_csv(os.path.join(out_dir, "oracle.csv"), ORACLE_COLUMNS, [row])
    _write_csv(os.path.join(out_dir, "timing.csv"), TIMING_COLUMNS, [{"item": "oracle", "wall_time_s": time.perf_counter() - t0}])
    return row


# ---------------------------------------------------------------------------
# train-verify
# ---------------------------------------------------------------------------

def _run_restart(config, data, restart):
    """One training restart; never raises for numerical trouble (recorded in the row)."""
    t0 = time.perf_counter()
    rseed = restart_seed(config.seed, restart)
    row = {
        "schema": SCHEMA_VERSION, "config_hash": config.config_hash, "seed": config.seed,
        "restart": restart, "restart_seed": rseed, "backend": backend_name(), "loss": config.loss.value,
    }
    trace = []
    try:
        _, rep = train(
            data, config.stack, config.loss, rseed, grad_tol=config.grad_tol, max_iter=config.max_iter,
            method=config.method, cert=config.cert, trace_stride=config.trace_stride,
        )
        trace = rep.trace
        row.update(
            status="ok", descent_status=rep.status, certification=rep.certification.value,
            converged=rep.converged, monotone=rep.monotone, iterations=rep.iterations,
            final_loss=rep.final_loss, grad_norm=rep.grad_norm, l_star_x=rep.l_star_x,
            l_star_xz=rep.l_star_xz, oracle_gap=rep.oracle_gap, improvement=rep.l_star_x - rep.l_star_xz,
            lemma2_z_residual=rep.lemma2_z_residual, lemma2_x_residual=rep.lemma2_x_residual,
            max_decrease=rep.max_decrease, min_hessian_eig=rep.min_hessian_eig,
        )
    except ConfigurationError:
        raise
    except (ResNetLandscapeError, ArithmeticError, ValueError) as exc:
        row.update(status="error", error=_error_text(exc))
    return row, trace, time.perf_counter() - t0


def _restart_task(args):
    return _run_restart(*args)


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def cmd_train_verify(config, out_dir, jobs=1):
    """Train ``config.restarts`` times; writes ``runs.csv``, ``traces/`` and ``timing.csv``.

    Returns the list of run rows (dicts keyed by :data:`RUN_COLUMNS`).
    """
    data = build_dataset(config)
    results = _map(_restart_task, [(config, data, r) for r in range(config.restarts)], jobs)
    rows = [r for r, _, _ in results]
    _write_csv(os.path.join(out_dir, "runs.csv"), RUN_COLUMNS, rows)
    for r, (_, trace, _) in enumerate(results):
        series = [dict(zip(TRACE_COLUMNS, (it, f, g))) for it, f, g in trace]
        _write_csv(os.path.join(out_dir, "traces", f"restart_{r:03d}.csv"), TRACE_COLUMNS, series)
    timing = [{"item": f"restart_{r:03d}", "wall_time_s": t} for r, (_, _, t) in enumerate(results)]
    _write_csv(os.path.join(out_dir, "timing.csv"), TIMING_COLUMNS, timing)
    return rows


# ---------------------------------------------------------------------------
# counterexample
# ---------------------------------------------------------------------------

def cmd_counterexample(config, out_dir):
    """Dead-ReLU plain-network point for the config's dataset; writes ``counterexample.csv``."""
    if config.loss is not LossKind.SQUARED:
        raise ConfigurationError("counterexample requires loss = squared")
    data = build_dataset(config)
    t0 = time.perf_counter()
    row = {
        "schema": SCHEMA_VERSION, "config_hash": config.config_hash, "seed": config.seed,
        "m": data.m, "d_x": data.d_x, "d_y": data.d_y, "c": config.ce_c, "hidden": config.ce_hidden,
    }
    try:
        pt = build_dead_relu_counterexample(data, config.ce_c, config.seed, d_hidden=config.ce_hidden)
        flat = np.concatenate([pt.W1.reshape(-1, order="F"), pt.W2.reshape(-1, order="F")])
        cert = CertificationConfig(
            n_directions=config.cert.n_directions,
            radii=(0.1 * pt.safe_radius,),
            hessian_check=config.cert.hessian_check,
            hessian_dim_cap=config.cert.hessian_dim_cap,
        )
        res = certify_point(plain_net_objective(data, config.ce_hidden), flat, cert, make_rng(config.seed, 2))
        row.update(
            local_value=pt.local_value, oracle_value=pt.oracle_value, separation=pt.separation,
            safe_radius=pt.safe_radius, certification=res.verdict.value, status="ok",
        )
    except ConstructionInfeasibleError as exc:
        row.update(status="construction_infeasible", error=_error_text(exc))
    _write_csv(os.path.join(out_dir, "counterexample.csv"), COUNTEREXAMPLE_COLUMNS, [row])
    _write_csv(os.path.join(out_dir, "timing.csv"), TIMING_COLUMNS, [{"item": "counterexample", "wall_time_s": time.perf_counter() - t0}])
    return row


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _aggregate(cell, label, config, rows):
    ok = [r for r in rows if r.get("status") == "ok"]
    cert = [r for r in ok if r["certification"] == "certified_local_min"]
    return {
        "schema": SCHEMA_VERSION, "cell": cell, "label": label, "config_hash": config.config_hash,
        "runs": len(rows), "ok_runs": len(ok), "certified": len(cert),
        "certified_fraction": len(cert) / len(rows) if rows else float("nan"),
        "max_abs_gap": max((abs(r["oracle_gap"]) for r in cert), default=float("nan")),
        "mean_improvement": float(np.mean([r["improvement"] for r in ok])) if ok else float("nan"),
        "status": "ok" if ok else "error",
    }


def _sweep_cell(args):
    cell, label, config, out_dir = args
    t0 = time.perf_counter()
    try:
        rows = cmd_train_verify(config, os.path.join(out_dir, f"cell_{cell:03d}"))
        agg = _aggregate(cell, label, config, rows)
    except (ResNetLandscapeError, ValueError, ArithmeticError) as exc:
        agg = {
            "schema": SCHEMA_VERSION, "cell": cell, "label": label, "config_hash": config.config_hash,
            "runs": 0, "ok_runs": 0, "certified": 0, "status": "error", "error": _error_text(exc),
        }
    return agg, time.perf_counter() - t0


def cmd_sweep(config, out_dir, jobs=1):
    """Run train-verify for every grid cell (``cell_NNN/``) and aggregate into ``sweep.csv``."""
    cells = expand_sweep(config)
    results = _map(_sweep_cell, [(i, label, cfg, out_dir) for i, label, cfg in cells], jobs)
    rows = [agg for agg, _ in results]
    _write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS, rows)
    _write_csv(
        os.path.join(out_dir, "timing.csv"), TIMING_COLUMNS,
        [{"item": f"cell_{i:03d}", "wall_time_s": t} for i, (_, t) in enumerate(results)],
    )
    return rows


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def cmd_check(only=None, out_dir=None, stream="stdout"):
    """Run the property suite; prints one PASS/FAIL line per criterion.  Returns the results."""
    from .checks import CHECK_COLUMNS, run_checks

    results = run_checks(only=only, stream=stream)
    if out_dir:
        _write_csv(os.path.join(out_dir, "check.csv"), CHECK_COLUMNS, [r.as_row() for r in results])
    return results


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="resnet-landscape", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, restarts=False, jobs=False):
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output directory (default: the config's 'out')")
        sp.add_argument("--format", choices=["csv"], default="csv", help="output format")
        if restarts:
            sp.add_argument("--restarts", type=int, help="override train.restarts")
            sp.add_argument("--grad-tol", type=float, help="override train.grad_tol")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")

    common(sub.add_parser("oracle", help="oracle values at a seeded theta"))
    common(sub.add_parser("train-verify", help="train restarts, certify, compare with the oracle"), restarts=True, jobs=True)
    common(sub.add_parser("counterexample", help="dead-ReLU plain-network local minimum"))
    common(sub.add_parser("sweep", help="train-verify over a config grid"), restarts=True, jobs=True)
    ck = sub.add_parser("check", help="run the acceptance property suite")
    ck.add_argument("--only", help="comma-separated criterion numbers, e.g. 1,5,10")
    ck.add_argument("--out", help="also write check.csv here")
    ck.add_argument("--format", choices=["csv"], default="csv")
    return p


def _load(args):
    overrides = {"seed": args.seed}
    if getattr(args, "restarts", None) is not None:
        overrides["train.restarts"] = args.restarts
    if getattr(args, "grad_tol", None) is not None:
        overrides["train.grad_tol"] = repr(args.grad_tol)
    config = load_config(args.config, overrides)
    return config, args.out or config.out


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "check":
            only = None
            if args.only:
                try:
                    only = [int(s) for s in args.only.split(",") if s.strip()]
                except ValueError:
                    raise ConfigurationError(f"--only expects comma-separated integers, got {args.only!r}") from None
            results = cmd_check(only=only, out_dir=args.out)
            return 0 if all(r.passed for r in results) else 1
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        config, out = _load(args)
        if args.command == "oracle":
            cmd_oracle(config, out)
        elif args.command == "train-verify":
            cmd_train_verify(config, out, jobs=args.jobs)
        elif args.command == "counterexample":
            cmd_counterexample(config, out)
        else:
            cmd_sweep(config, out, jobs=args.jobs)
        print(f"wrote results to {out}")
        return 0
    except (ConfigurationError, InvalidInputError, DataFormatError) as exc:
        print(f"error: invalid configuration or input: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort infrastructure failure
        print(f"error: unexpected failure: {_error_text(exc)}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
