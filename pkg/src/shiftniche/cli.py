"""Configuration-driven experiment runner.

Configs are flat ``key = value`` files with dotted keys, e.g.::

    kernel.preset = uniform
    kernel.radius = 1.0
    growth.a.inner = 1.0
    task.c = 0.0, 0.25, 0.5

Lists are comma separated. Every default resolved during a run is echoed
in ``manifest.txt``. Exit status: 0 success, 2 invalid input, 3 numerical
non-convergence (artifacts still written and flagged).
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import time

import numpy as np

from . import __version__
from ._parallel import ordered_map
from .critical_speed import closed_form_bounds, fat_tail_speed_bound, find_speeds, save_lambda_curve_csv
from .discrete_operator import Grid, assemble
from .environment import make_growth
from .errors import ConvergenceError, MonotonicityViolation, ShiftNicheError, ValidationError
from .evolution import bump_initial, integrate, long_time_classify, save_snapshot_csv, save_trace_csv
from .kernel import load_tabulated_csv, make_kernel
from .spectral import (
    default_R_schedule,
    duality_residual,
    lambda_p_limit,
    principal_eigenvalue,
    reflection_identity_check,
)
from .steady_state import domain_continuation, fat_tail_solve, solve_bounded, vanishing_viscosity

TASKS = ("eig", "steady", "evolve", "speeds", "bounds", "verify")

KERNEL_DEFAULTS = {
    "uniform": {"radius": 1.0},
    "tent": {"radius": 1.0},
    "truncated_cosine": {"radius": 1.0},
    "gaussian": {"sigma": 1.0, "sampling_radius": 10.0},
    "fat_quartic": {"scale": 1.0, "sampling_radius": 200.0},
}

DEFAULTS = {
    "kernel.preset": "uniform",
    "growth.form": "logistic",
    "growth.b": 1.0,
    "growth.a.kind": "niche",
    "numerics.h": 0.05,
    "numerics.R_tol": 1e-4,
    "numerics.eig_tol": 1e-10,
    "numerics.tol": 1e-8,
    "numerics.dt": "auto",
    "task.c": [0.0],
    "task.epsilon": 0.0,
}

NICHE_DEFAULTS = {"inner": 1.0, "outer": -1.0, "half_width": 2.0, "ramp": 1.0}


def fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, int, np.floating, np.integer)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return ", ".join(fmt(e) for e in v)
    return "none" if v is None else str(v)


def _parse_value(text):
    text = text.strip()
    if "," in text:
        return [_parse_value(t) for t in text.split(",") if t.strip()]
    try:
        return float(text)
    except ValueError:
        return text


def read_config(path):
    """Parse a flat dotted-key file into a dict."""
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[config]\n" + fh.read())
    except (OSError, configparser.Error) as exc:
        raise ValidationError("cli.run", f"cannot read config {path}: {exc}") from None
    return {k: _parse_value(v) for k, v in parser["config"].items()}


class ExperimentConfig:
    """Resolved configuration; ``resolved`` records every value used."""

    def __init__(self, raw, task):
        self.raw = dict(raw)
        self.task = task
        self.resolved = {}
        declared = self.raw.pop("task", None)
        if declared is not None and declared != task:
            raise ValidationError("cli.run", f"config declares task {declared!r} but {task!r} was requested")

    def get(self, key, default=None, kind=float):
        value = self.raw.get(key, DEFAULTS.get(key, default))
        if value is None:
            self.resolved[key] = None
            return None
        try:
            if kind is float:
                value = float(value)
            elif kind is list:
                value = [float(v) for v in (value if isinstance(value, list) else [value])]
            elif kind is int:
                value = int(float(value))
            elif kind is str:
                value = str(value)
        except (TypeError, ValueError):
            raise ValidationError("cli.run", f"field {key!r}: cannot interpret {value!r}") from None
        self.resolved[key] = value
        return value

    def schedule(self, key, decreasing=False, default=None):
        vals = self.get(key, default, list)
        if vals is None:
            return None
        pairs = list(zip(vals, vals[1:]))
        if decreasing and any(b >= a for a, b in pairs):
            raise ValidationError("cli.run", f"field {key!r} must be strictly decreasing, got {vals}")
        if not decreasing and any(b <= a for a, b in pairs):
            raise ValidationError("cli.run", f"field {key!r} must be strictly increasing, got {vals}")
        return vals

    # -- model objects ----------------------------------------------------

    def kernel(self):
        preset = self.get("kernel.preset", kind=str)
        if preset == "tabulated":
            return load_tabulated_csv(self.get("kernel.path", kind=str))
        if preset not in KERNEL_DEFAULTS:
            raise ValidationError("cli.run", f"field 'kernel.preset': unknown preset {preset!r}")
        params = {k: self.get(f"kernel.{k}", v) for k, v in KERNEL_DEFAULTS[preset].items()}
        tail_tol = self.get("kernel.tail_tol", 1e-6)
        return make_kernel(preset, tail_tol=tail_tol, **params)

    def growth(self):
        form = self.get("growth.form", kind=str)
        if form == "logistic":
            kind = self.get("growth.a.kind", kind=str)
            if kind == "niche":
                a = {"kind": "niche", **{k: self.get(f"growth.a.{k}", v) for k, v in NICHE_DEFAULTS.items()}}
            elif kind == "constant":
                a = {"kind": "constant", "value": self.get("growth.a.value", 0.5)}
            elif kind == "csv":
                a = {
                    "kind": "csv",
                    "path": self.get("growth.a.path", kind=str),
                    "tail_left": self.get("growth.a.tail_left"),
                    "tail_right": self.get("growth.a.tail_right"),
                }
            else:
                raise ValidationError("cli.run", f"field 'growth.a.kind': unknown kind {kind!r}")
            spec = {"form": "logistic", "a": a, "b": self.get("growth.b")}
            lethal = kind != "constant"
        elif form == "plateau":
            spec = {"form": "plateau", **{k: self.get(f"growth.{k}") for k in ("a", "q", "L", "L0")}}
            lethal = True
        else:
            raise ValidationError("cli.run", f"field 'growth.form': unknown form {form!r}")
        return make_growth(spec, require_lethal_tail=lethal)


# -- CSV output -----------------------------------------------------------


def write_csv(path, header, rows):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_trace(path, trace):
    write_csv(
        path,
        ("level", "param", "sup_increment", "residual", "l1_mass"),
        [(d["level"], d["param"], d["sup_increment"], d["residual"], d["l1_mass"]) for d in trace],
    )


# -- tasks ----------------------------------------------------------------


def _eig(cfg, out, workers, seed):
    kernel, growth = cfg.kernel(), cfg.growth()
    h = cfg.get("numerics.h")
    cs = cfg.get("task.c", kind=list)
    eps = cfg.get("task.epsilon")
    R = cfg.get("numerics.R")
    eig_tol = cfg.get("numerics.eig_tol")

    if R is not None:
        grid = Grid.from_spacing(R, h)

        def one(c):
            return principal_eigenvalue(assemble(grid, kernel, c, eps, growth), tol=eig_tol)

    else:
        sched = cfg.schedule("numerics.R_schedule", default=default_R_schedule(kernel, growth, h))
        R_tol = cfg.get("numerics.R_tol")

        def one(c):
            return lambda_p_limit(kernel, growth, c, eps, sched, R_tol, h, eig_tol)

    results = ordered_map(one, cs, workers)
    write_csv(
        os.path.join(out, "lambda_curve.csv"),
        ("c", "lambda_p", "residual", "R", "n", "iterations"),
        [(c, r.lambda_p, r.residual, r.domain_R, r.n, r.iterations) for c, r in zip(cs, results)],
    )
    flags = sorted({f for r in results for f in r.flags})
    return ["lambda_curve.csv"], flags


def _steady(cfg, out, workers, seed):
    kernel, growth = cfg.kernel(), cfg.growth()
    h = cfg.get("numerics.h")
    c = cfg.get("task.c", kind=list)[0]
    eps = cfg.get("task.epsilon")
    tol = cfg.get("numerics.tol")
    route = cfg.get("task.route", "bounded", str)
    files = ["steady.csv"]
    if route == "bounded":
        grid = Grid.from_spacing(cfg.get("numerics.R", 20.0), h)
        max_iter = cfg.get("numerics.max_iter", 2_000_000, int)
        res = solve_bounded(grid, kernel, growth, c, eps, tol=tol, max_iter=max_iter)
    elif route == "viscosity":
        grid = Grid.from_spacing(cfg.get("numerics.R", 20.0), h)
        sched = cfg.schedule("numerics.eps_schedule", decreasing=True, default=[0.1, 0.03, 0.01, 0.003, 0.001, 0.0])
        res = vanishing_viscosity(grid, kernel, growth, c, sched, tol=tol)
    elif route == "domain":
        sched = cfg.schedule("numerics.R_schedule", default=default_R_schedule(kernel, growth, h))
        res = domain_continuation(kernel, growth, c, eps, sched, tol=cfg.get("numerics.R_tol"), h=h)
    elif route == "fat_tail":
        grid = Grid.from_spacing(cfg.get("numerics.R", 20.0), h)
        sched = cfg.schedule("task.N_schedule", default=[5.0, 10.0, 20.0, 40.0])
        res = fat_tail_solve(kernel, growth, c, sched, grid, tol=tol)
    else:
        raise ValidationError("cli.run", f"field 'task.route': unknown route {route!r}")
    write_csv(os.path.join(out, "steady.csv"), ("x", "u"), zip(res.x, res.u))
    if res.trace:
        write_trace(os.path.join(out, "trace.csv"), res.trace)
        files.append("trace.csv")
    write_csv(
        os.path.join(out, "steady_summary.csv"),
        ("classification", "lambda_p", "residual", "l1_mass", "grad_sup", "h1_norm", "iterations"),
        [(res.classification, res.lambda_p, res.residual, res.l1_mass, res.grad_sup, res.h1_norm, res.iterations)],
    )
    files.append("steady_summary.csv")
    return files, list(res.flags)


def _evolve(cfg, out, workers, seed):
    kernel, growth = cfg.kernel(), cfg.growth()
    h = cfg.get("numerics.h")
    grid = Grid.from_spacing(cfg.get("numerics.R", 20.0), h)
    c = cfg.get("task.c", kind=list)[0]
    T = cfg.get("task.T", 200.0)
    frame = cfg.get("task.frame", "moving", str)
    dt = cfg.get("numerics.dt", kind=str)
    dt = dt if dt == "auto" else float(dt)
    initial = cfg.get("task.initial", "bump", str)
    if initial == "bump":
        u0 = bump_initial(grid, growth)
    elif initial == "saturation":
        u0 = np.full(grid.n, growth.saturation)
    else:
        raise ValidationError("cli.run", f"field 'task.initial': unknown initial condition {initial!r}")
    snaps = cfg.get("task.snapshots", [], list) or []
    trace = integrate(u0, frame, kernel, growth, c, grid, T, dt=dt, snapshot_times=snaps)
    save_trace_csv(trace, os.path.join(out, "evolution.csv"))
    files = ["evolution.csv"]
    for t, u in sorted(trace.snapshots.items()):
        name = f"snapshot_t{fmt(t)}.csv"
        save_snapshot_csv(grid.x, u, os.path.join(out, name))
        files.append(name)
    label = long_time_classify(trace)
    write_csv(os.path.join(out, "classification.csv"), ("label", "dt", "final_sup_norm"),
              [(label, trace.dt, trace.sup_norms[-1])])
    return files + ["classification.csv"], []


def _speeds(cfg, out, workers, seed):
    kernel, growth = cfg.kernel(), cfg.growth()
    policy = {
        "h": cfg.get("numerics.h"),
        "R_schedule": cfg.schedule("numerics.R_schedule"),
        "tol": cfg.get("numerics.R_tol"),
        "eig_tol": cfg.get("numerics.eig_tol"),
    }
    c_range = cfg.get("task.c_range", None, list)
    if c_range is not None and len(c_range) != 2:
        raise ValidationError("cli.run", "field 'task.c_range' needs exactly two values")
    report = find_speeds(
        kernel, growth, policy, c_range=c_range, bracket_tol=cfg.get("task.bracket_tol", 1e-3), workers=workers
    )
    with open(os.path.join(out, "report.txt"), "w", newline="\n", encoding="utf-8") as fh:
        fh.write(report.to_text())
    save_lambda_curve_csv(report.lambda_curve, os.path.join(out, "lambda_curve.csv"))
    return ["report.txt", "lambda_curve.csv"], list(report.flags)


def _bounds(cfg, out, workers, seed):
    kernel, growth = cfg.kernel(), cfg.growth()
    bounds = closed_form_bounds(kernel, growth)
    if not kernel.bounded and kernel.symmetric:
        delta = cfg.get("task.delta", None)
        fat = fat_tail_speed_bound(kernel, growth, delta)
        bounds.update({f"fat.{k}": v for k, v in fat.items()})
    write_csv(os.path.join(out, "bounds.csv"), ("name", "value"), sorted(bounds.items()))
    return ["bounds.csv"], []


def _verify(cfg, out, workers, seed):
    """Numerical property checks on the configured instance."""
    kernel, growth = cfg.kernel(), cfg.growth()
    h = cfg.get("numerics.h")
    R = cfg.get("numerics.R", 10.0)
    trials = cfg.get("task.trials", 20, int)
    grid = Grid.from_spacing(R, h)
    rng = np.random.default_rng(seed)
    a_vals = np.asarray(growth.a(grid.x), dtype=float)
    rows = []

    for c in (-0.5, 0.0, 0.5):
        op = assemble(grid, kernel, c, 0.0, a_vals)
        rows.append((f"duality c={fmt(c)}", duality_residual(op), 1e-10))
        rows.append((f"reflection c={fmt(c)}", reflection_identity_check(kernel, growth, c, grid), 1e-10))

    base = principal_eigenvalue(assemble(grid, kernel, 0.0, 0.0, a_vals), tol=1e-12).lambda_p
    worst_lip = worst_mono = -math.inf
    for _ in range(trials):
        da = rng.uniform(-0.1, 0.1, grid.n)
        lam = principal_eigenvalue(assemble(grid, kernel, 0.0, 0.0, a_vals + da), tol=1e-12).lambda_p
        worst_lip = max(worst_lip, abs(lam - base) - float(np.max(np.abs(da))))
        up = principal_eigenvalue(assemble(grid, kernel, 0.0, 0.0, a_vals + np.abs(da)), tol=1e-12).lambda_p
        worst_mono = max(worst_mono, up - base)
    rows.append(("lipschitz excess", worst_lip, 1e-8))
    rows.append(("monotone in a excess", worst_mono, 1e-12))
    write_csv(os.path.join(out, "verify.csv"), ("check", "value", "tolerance", "pass"),
              [(n, v, t, "true" if v <= t else "false") for n, v, t in rows])
    failed = [n for n, v, t in rows if not v <= t]
    if failed:
        raise ConvergenceError("cli.verify", f"failed checks: {', '.join(failed)}")
    return ["verify.csv"], []


RUNNERS = {"eig": _eig, "steady": _steady, "evolve": _evolve, "speeds": _speeds, "bounds": _bounds, "verify": _verify}


def write_manifest(out, task, cfg, status, message, files, flags, workers, seed, wall):
    lines = [
        "[run]",
        f"task = {task}",
        f"tool = shiftniche {__version__}",
        f"status = {status}",
        f"message = {message}",
        f"workers = {workers}",
        f"seed = {seed}",
        f"wall_clock_seconds = {wall:.3f}",
        "",
        "[config]",
    ]
    if cfg is not None:
        keys = dict(cfg.raw)
        keys.update(cfg.resolved)
        lines += [f"{k} = {fmt(keys[k])}" for k in sorted(keys)]
    lines += ["", "[artifacts]"] + [f"file = {f}" for f in files]
    lines += ["", "[flags]", f"flags = {fmt(list(flags))}"]
    with open(os.path.join(out, "manifest.txt"), "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run(task, config_path=None, out=".", workers=1, seed=0):
    """Execute ``task``; returns the exit status."""
    start = time.perf_counter()
    cfg = None
    files, flags = [], []
    try:
        if task not in TASKS:
            raise ValidationError("cli.run", f"unknown task {task!r}")
        if workers < 1:
            raise ValidationError("cli.run", "--workers must be >= 1")
        if seed < 0 or seed >= 2**64:
            raise ValidationError("cli.run", "--seed must be an unsigned 64-bit integer")
        raw = read_config(config_path) if config_path else {}
        cfg = ExperimentConfig(raw, task)
        os.makedirs(out, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ValidationError("cli.run", f"output directory {out} is not writable")
        files, flags = RUNNERS[task](cfg, out, workers, seed)
        status, code, message = "ok", 0, ""
    except ValidationError as exc:
        status, code, message = "invalid", 2, str(exc)
    except (ConvergenceError, MonotonicityViolation) as exc:
        status, code, message = "non-convergence", 3, str(exc)
    except ShiftNicheError as exc:
        status, code, message = "invalid", 2, str(exc)
    if code:
        print(message, file=sys.stderr)
    if os.path.isdir(out):
        write_manifest(out, task, cfg, status, message, files, flags, workers, seed, time.perf_counter() - start)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="shiftniche", description=__doc__.split("\n")[0])
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", default=None, help="flat dotted-key config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    return run(args.task, args.config, args.out, args.workers, args.seed)
