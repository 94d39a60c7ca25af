"""Command line experiment runner.

    mimnet <command> [--config cfg.json] [--out DIR] [--seed S] [--jobs J]

Every command reads one JSON config (all keys optional; the section named
after the command, with dashes replaced by underscores, holds its settings),
writes CSV tables plus ``report.json`` into ``--out``, and exits nonzero with
a single JSON line on stderr when the config is invalid or a check fails.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    coercivity_study,
    empirical_rademacher,
    generalization_gap_study,
    linear_class,
    linear_class_bound,
    linear_class_sup,
    loglog_slope,
    random_feasible_network,
    young_check,
)
from .barron import CosProfile, approximate_barron, approximation_rate_study
from .fields import network_bundle
from .network import ShallowNetwork
from .problem import ProblemSpec, SpectralFunction
from .train import ACTIVATION, OptimizerConfig, TrainingDiverged, output_width, train

COMMANDS = (
    "train",
    "study-convergence",
    "verify-derivatives",
    "verify-coercivity",
    "verify-approximation",
    "estimate-rademacher",
    "check-inequalities",
)

DEFAULTS = {
    "seed": 0,
    "system": "first",
    "problem": {"n": 1, "d": 1, "kind": "D", "lambda": 1.0, "mu": 1.0, "modes": [{"k": [1], "coeff": 1.0}]},
    "optimizer": {"method": "adam", "step_size": 1e-3, "steps": 20000, "resample": False, "log_interval": 100},
    "train": {"m": 64, "N": 4096, "N_hat": None},
    "study_convergence": {
        "mode": "train",
        "m": [8, 16, 32],
        "N": [256, 1024],
        "steps": 2000,
        "seeds": 8,
        "u": {"d": 2, "modes": [{"k": [1, 0], "coeff": 0.5}, {"k": [0, 2], "coeff": -0.3}, {"k": [1, 1], "coeff": 0.2}]},
    },
    "verify_derivatives": {"k": [1, 2, 3], "d": [1, 2, 3], "p": 2, "width": 8, "points": 100, "step": 1e-5, "tol": 1e-5},
    "verify_coercivity": {
        "systems": ["first", "second"],
        "n": [1, 2],
        "d": [1, 2],
        "kinds": ["D", "N", "R"],
        "trials": 200,
        "delta": 0.1,
        "width": 4,
        "sampler": "span",
        "seeds": 2,
        "stability": 0.2,
    },
    "verify_approximation": {"m": [16, 32, 64, 128, 256], "k1": [1, 2], "b_phase": [0, 1], "gamma": 1.0, "B": 1.0},
    "estimate_rademacher": {
        "d": [2, 3, 4, 5],
        "N": [64, 128, 256, 512, 1024, 2048, 4096],
        "sign_draws": 200,
        "candidates": 256,
        "gap": {"n": 1, "d": 2, "kind": "D", "system": "first", "width": 16, "resamples": 64},
    },
    "check_inequalities": {"delta": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], "n": 3, "grid_stop": 10.0, "grid_step": 0.1},
}


class ConfigError(ValueError):
    pass


class CheckFailed(RuntimeError):
    pass


# -- config -------------------------------------------------------------------


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key not in ("u",):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path, seed=None) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, user)
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _problem(doc: dict) -> ProblemSpec:
    try:
        return ProblemSpec.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem: {exc}") from exc


def _optimizer(doc: dict, seed: int, **over) -> OptimizerConfig:
    try:
        return OptimizerConfig(**{**doc, **over, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimizer: {exc}") from exc


def _nonempty(section: dict, *keys):
    for key in keys:
        val = section[key]
        if not isinstance(val, list) or not val:
            raise ConfigError(f"{key!r} must be a nonempty list")


def _cell_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


# -- output -------------------------------------------------------------------


class Outputs:
    """Collects tables in memory and writes them all at once on commit."""

    def __init__(self, out_dir: Path, chash: str):
        self.out_dir = Path(out_dir)
        self.chash = chash
        self.files: dict[str, str] = {}

    def table(self, name: str, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_hash={self.chash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])
        self.files[name] = buf.getvalue()

    def json(self, name: str, doc):
        self.files[name] = json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def commit(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=self.out_dir))
        try:
            for name, text in self.files.items():
                (stage / name).write_text(text)
            for name in self.files:
                os.replace(stage / name, self.out_dir / name)
        finally:
            shutil.rmtree(stage, ignore_errors=True)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return v


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _build_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- commands -----------------------------------------------------------------


def cmd_train(cfg, out: Outputs, jobs: int) -> dict:
    spec = _problem(cfg["problem"])
    sec = cfg["train"]
    system = cfg["system"]
    opt = _optimizer(cfg["optimizer"], cfg["seed"])
    try:
        bundle, rep = train(spec, system, int(sec["m"]), int(sec["N"]), sec["N_hat"], opt)
    except TrainingDiverged as exc:
        out.table("train_log.csv", ["step", "interior", "boundary", "mean_penalty", "total"], [])
        return {"status": "diverged", "message": str(exc), "seed": cfg["seed"]}
    out.table("train_log.csv", ["step", "interior", "boundary", "mean_penalty", "total"], rep.trajectory)
    out.json("network.json", bundle.network.to_dict())
    summary = rep.summary()
    summary["status"] = "ok"
    summary["loss_decrease"] = rep.initial.total / max(rep.final.total, 1e-300)
    return summary


def _convergence_cell(args):
    spec_doc, system, m, N, steps, opt_doc, seed = args
    spec = ProblemSpec.from_dict(spec_doc)
    opt = OptimizerConfig(**{**opt_doc, "steps": steps, "seed": seed})
    try:
        _, rep = train(spec, system, m, N, None, opt)
    except TrainingDiverged:
        return {"m": m, "N": N, "seed": seed, "sq_error": math.nan, "final_loss": math.nan, "status": "diverged"}
    return {"m": m, "N": N, "seed": seed, "sq_error": rep.errors.total, "final_loss": rep.final.total, "status": "ok"}


def _approx_cell(args):
    u_doc, m, seed = args
    u = SpectralFunction.from_terms([(tuple(t["k"]), float(t["coeff"])) for t in u_doc["modes"]], int(u_doc["d"]))
    res = approximate_barron(u, m, seed)
    return {"m": m, "seed": seed, "h1_sq": res.h1_error**2, "feasible": res.network.is_feasible()}


def _axis_slope(rows, key, value):
    groups = {}
    for r in rows:
        if np.isfinite(r[value]) and r[value] > 0:
            groups.setdefault(r[key], []).append(r[value])
    xs = sorted(groups)
    if len(xs) < 2:
        return None
    return loglog_slope(xs, [float(np.median(groups[x])) for x in xs])


def cmd_study_convergence(cfg, out: Outputs, jobs: int) -> dict:
    sec = cfg["study_convergence"]
    _nonempty(sec, "m")
    ms = [int(m) for m in sec["m"]]
    if ms != sorted(ms):
        raise ConfigError("m list must be sorted ascending")
    if sec["mode"] == "approximation":
        cells = [(sec["u"], m, s) for m in ms for s in _cell_seeds(cfg["seed"], int(sec["seeds"]))]
        rows = _pool_map(_approx_cell, cells, jobs)
        out.table("convergence.csv", ["m", "seed", "h1_sq", "feasible"], rows)
        slope = _axis_slope(rows, "m", "h1_sq")
        medians = {m: float(np.median([r["h1_sq"] for r in rows if r["m"] == m])) for m in ms}
        return {"mode": "approximation", "slope_m": slope, "median_h1_sq": medians, "pass": slope is None or slope <= -0.45}
    if sec["mode"] != "train":
        raise ConfigError("mode must be 'train' or 'approximation'")
    _nonempty(sec, "N")
    Ns = [int(n) for n in sec["N"]]
    if Ns != sorted(Ns):
        raise ConfigError("N list must be sorted ascending")
    spec = _problem(cfg["problem"])
    _optimizer(cfg["optimizer"], cfg["seed"])
    pairs = [(m, N) for m in ms for N in Ns]
    seeds = _cell_seeds(cfg["seed"], len(pairs))
    cells = [
        (spec.to_dict(), cfg["system"], m, N, int(sec["steps"]), cfg["optimizer"], s) for (m, N), s in zip(pairs, seeds)
    ]
    rows = _pool_map(_convergence_cell, cells, jobs)
    out.table("convergence.csv", ["m", "N", "seed", "sq_error", "final_loss", "status"], rows)
    return {"mode": "train", "slope_m": _axis_slope(rows, "m", "sq_error"), "slope_N": _axis_slope(rows, "N", "sq_error")}


def _kink_free_points(net: ShallowNetwork, count: int, rng, margin: float) -> np.ndarray:
    pts = []
    while sum(len(p) for p in pts) < count:
        x = rng.random((4 * count, net.d))
        z = net.preactivation(x)
        ok = np.all(np.abs(z) > margin, axis=1) if net.m else np.ones(len(x), bool)
        pts.append(x[ok])
    return np.concatenate(pts)[:count]


def _rel(fd, an) -> float:
    return float(np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-12))


def derivative_check(k: int, d: int, p: int, width: int, points: int, step: float, seed) -> dict:
    """Largest per-point relative error of analytic input/parameter
    derivatives against central differences."""
    rng = np.random.default_rng(seed)
    net = random_feasible_network(d, p, k, width, rng)
    x = _kink_free_points(net, points, rng, margin=100 * step)
    theta = net.get_params()
    errs = {"jacobian": 0.0, "laplacian": 0.0, "param_y": 0.0, "param_jac": 0.0, "param_lap": 0.0}
    jac = net.input_jacobian(x)
    for l in range(d):
        e = np.zeros(d)
        e[l] = step
        fd = (net.forward(x + e) - net.forward(x - e)) / (2 * step)
        errs["jacobian"] = max(errs["jacobian"], max(_rel(fd[i], jac[i, :, l]) for i in range(points)))
    if k >= 2:
        lap = net.input_laplacian(x)
        fd = np.zeros_like(lap)
        for l in range(d):
            e = np.zeros(d)
            e[l] = step
            fd += (net.input_jacobian(x + e)[:, :, l] - net.input_jacobian(x - e)[:, :, l]) / (2 * step)
        errs["laplacian"] = max(_rel(fd[i], lap[i]) for i in range(points))
    cot_y = rng.normal(size=(points, p))
    cot_j = rng.normal(size=(points, p, d))
    cot_l = rng.normal(size=(points, p))
    # per-point scalars <cot_i, q(x_i)>; one parameter perturbation covers all points
    quantities = [("param_y", lambda n: np.sum(cot_y * n.forward(x), axis=1), (cot_y, None, None))]
    quantities.append(("param_jac", lambda n: np.sum(cot_j * n.input_jacobian(x), axis=(1, 2)), (None, cot_j, None)))
    if k >= 2:
        quantities.append(("param_lap", lambda n: np.sum(cot_l * n.input_laplacian(x), axis=1), (None, None, cot_l)))
    for name, scalars, cots in quantities:
        fd = np.empty((points, theta.size))
        for j in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += step
            tm[j] -= step
            fd[:, j] = (scalars(net.with_params(tp)) - scalars(net.with_params(tm))) / (2 * step)
        worst = 0.0
        for i in range(points):
            an = net.parameter_backprop(x[i : i + 1], *(None if c is None else c[i : i + 1] for c in cots))
            worst = max(worst, _rel(fd[i], an))
        errs[name] = worst
    return errs


def cmd_verify_derivatives(cfg, out: Outputs, jobs: int) -> dict:
    sec = cfg["verify_derivatives"]
    _nonempty(sec, "k", "d")
    configs = [(int(k), int(d)) for k in sec["k"] for d in sec["d"]]
    seeds = _cell_seeds(cfg["seed"], len(configs))
    rows = []
    for (k, d), s in zip(configs, seeds):
        errs = derivative_check(k, d, int(sec["p"]), int(sec["width"]), int(sec["points"]), float(sec["step"]), s)
        for q, e in errs.items():
            if q in ("laplacian", "param_lap") and k < 2:
                continue
            rows.append({"k": k, "d": d, "quantity": q, "points": int(sec["points"]), "max_rel_error": e, "pass": e <= sec["tol"]})
    out.table("derivatives.csv", ["k", "d", "quantity", "points", "max_rel_error", "pass"], rows)
    failures = sum(not r["pass"] for r in rows)
    if failures:
        raise CheckFailed(f"{failures} derivative checks exceed tolerance {sec['tol']}")
    return {"checks": len(rows), "failures": 0}


def _coercivity_cell(args):
    kind, system, n, d, trials, delta, seed, width, sampler = args
    return coercivity_study(kind, system, n, d, trials, delta, seed, width=width, sampler=sampler)


def cmd_verify_coercivity(cfg, out: Outputs, jobs: int) -> dict:
    sec = cfg["verify_coercivity"]
    _nonempty(sec, "systems", "n", "d", "kinds")
    seeds = [cfg["seed"] + i for i in range(int(sec["seeds"]))]
    cells = [
        (kind, system, int(n), int(d), int(sec["trials"]), float(sec["delta"]), s, int(sec["width"]), str(sec["sampler"]))
        for system in sec["systems"]
        for n in sec["n"]
        for d in sec["d"]
        for kind in sec["kinds"]
        for s in seeds
    ]
    try:
        reports = _pool_map(_coercivity_cell, cells, jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows, summaries = [], []
    for rep in reports:
        for t in rep.trials:
            rows.append({"system": rep.system, "n": rep.n, "d": rep.d, "kind": rep.kind, "seed": rep.seed, **t.as_row()})
    header = ["system", "n", "d", "kind", "seed", "trial", "B_value", "norm_sum", "ratio"]
    out.table("coercivity.csv", header, rows)
    ok = True
    per_seed = len(seeds)
    for i in range(0, len(reports), per_seed):
        group = reports[i : i + per_seed]
        mins = [r.min_ratio for r in group]
        spread = (max(mins) - min(mins)) / max(mins) if max(mins) > 0 else math.inf
        entry = {
            **{k: group[0].summary()[k] for k in ("system", "n", "d", "kind")},
            "min_ratio": mins,
            "all_positive": all(r.all_positive for r in group),
            "max_scale_drift": max(r.max_scale_drift for r in group),
            "seed_spread": spread,
        }
        entry["pass"] = entry["all_positive"] and entry["max_scale_drift"] <= 1e-10 and spread <= sec["stability"]
        ok &= entry["pass"]
        summaries.append(entry)
    out.json("coercivity_summary.json", summaries)
    if not ok:
        raise CheckFailed("coercivity checks failed; see coercivity_summary.json")
    return {"configs": len(summaries), "pass": True}


def cmd_verify_approximation(cfg, out: Outputs, jobs: int) -> dict:
    sec = cfg["verify_approximation"]
    _nonempty(sec, "m", "k1", "b_phase")
    rows, slopes, ok = [], {}, True
    for k1 in sec["k1"]:
        for b in sec["b_phase"]:
            g = CosProfile(float(sec["gamma"]), int(k1), int(b), float(sec["B"]))
            study = approximation_rate_study(g, [int(m) for m in sec["m"]])
            for r in study:
                row = {**r.as_dict(), "k1": int(k1), "b_phase": int(b)}
                row["pass"] = r.requ_error <= r.bound_5 and r.recu_error <= r.bound_6 and r.coef_sum <= 8 * g.B
                ok &= row["pass"]
                rows.append(row)
            slope = loglog_slope([r.m for r in study], [r.recu_error for r in study])
            slopes[f"k1={k1},b={b}"] = slope
            ok &= slope <= -0.45
    header = ["m", "h1_error", "bound_6B_sqrt_m", "k1", "b_phase", "requ_error", "bound_5B_sqrt_m", "coef_sum", "pass"]
    out.table("approx_rates.csv", header, rows)
    if not ok:
        raise CheckFailed("approximation bounds or rate not met")
    return {"slopes": slopes, "pass": True}


def cmd_estimate_rademacher(cfg, out: Outputs, jobs: int) -> dict:
    sec = cfg["estimate_rademacher"]
    _nonempty(sec, "d", "N")
    rows, ok = [], True
    seeds = iter(_cell_seeds(cfg["seed"], len(sec["d"]) * len(sec["N"]) + 2))
    for d in sec["d"]:
        for N in sec["N"]:
            s = next(seeds)
            est = empirical_rademacher(linear_class(int(d)), int(N), int(d), int(sec["sign_draws"]), int(sec["candidates"]), s)
            exact = linear_class_sup(int(N), int(d), int(sec["sign_draws"]), s)
            bound = linear_class_bound(int(N), int(d))
            rows.append({"N": int(N), "estimate": est, "bound": bound, "d": int(d), "exact_sup": exact, "pass": exact <= bound})
            ok &= exact <= bound
    out.table("rademacher.csv", ["N", "estimate", "bound", "d", "exact_sup", "pass"], rows)

    gap = sec["gap"]
    spec = ProblemSpec(int(gap["n"]), int(gap["d"]), gap["kind"], SpectralFunction.from_terms([((1,) * int(gap["d"]), 1.0)], int(gap["d"])))
    rng = np.random.default_rng(next(seeds))
    net = random_feasible_network(spec.d, output_width(spec, gap["system"]), ACTIVATION[gap["system"]], int(gap["width"]), rng)
    gap_rows, slope = generalization_gap_study(
        network_bundle(net, spec.n, gap["system"]), spec, [int(n) for n in sec["N"]], int(gap["resamples"]), next(seeds)
    )
    out.table("gap.csv", ["N", "rms_gap", "median_gap"], [r.as_row() for r in gap_rows])
    slope_ok = abs(slope + 0.5) <= 0.15
    if not (ok and slope_ok):
        raise CheckFailed(f"Rademacher bound ok={ok}, gap slope {slope:.3f}")
    return {"gap_slope": slope, "pass": True}


def cmd_check_inequalities(cfg, out: Outputs, jobs: int) -> dict:
    sec = cfg["check_inequalities"]
    _nonempty(sec, "delta")
    count = int(round(sec["grid_stop"] / sec["grid_step"]))
    grid = np.arange(count + 1) * sec["grid_step"]
    rows = []
    for delta in sec["delta"]:
        v = young_check(float(delta), int(sec["n"]), grid, grid)
        rows.append({"delta": float(delta), "n": int(sec["n"]), "k_max": 2 * int(sec["n"]), "grid_points": grid.size**2, "violations": v})
    out.table("young.csv", ["delta", "n", "k_max", "grid_points", "violations"], rows)
    total = sum(r["violations"] for r in rows)
    if total:
        raise CheckFailed(f"{total} Young inequality violations")
    return {"violations": 0}


HANDLERS = {
    "train": cmd_train,
    "study-convergence": cmd_study_convergence,
    "verify-derivatives": cmd_verify_derivatives,
    "verify-coercivity": cmd_verify_coercivity,
    "verify-approximation": cmd_verify_approximation,
    "estimate-rademacher": cmd_estimate_rademacher,
    "check-inequalities": cmd_check_inequalities,
}


def _error_line(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mimnet", description="Mixed residual network experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for study cells")
    return ap


def run(command: str, cfg: dict, out_dir, jobs: int = 1) -> dict:
    """Run one command; tables are only written if it completes."""
    out = Outputs(out_dir, config_hash(cfg))
    start = time.perf_counter()
    failure = None
    try:
        result = HANDLERS[command](cfg, out, jobs)
    except CheckFailed as exc:
        failure = exc
        result = {"pass": False, "message": str(exc)}
    report = {
        "command": command,
        "config": cfg,
        "config_hash": out.chash,
        "seed": cfg["seed"],
        "build": _build_id(),
        "wall_time": time.perf_counter() - start,
        "result": result,
    }
    out.json("report.json", report)
    out.commit()
    if failure is not None:
        raise failure
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        _error_line("usage", "--jobs must be >= 1")
        return 2
    try:
        cfg = load_config(args.config, args.seed)
        run(args.command, cfg, args.out, args.jobs)
    except ConfigError as exc:
        _error_line("config", str(exc))
        return 2
    except CheckFailed as exc:
        _error_line("check_failed", str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
