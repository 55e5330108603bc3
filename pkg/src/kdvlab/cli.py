"""``kdvlab`` command line: one subcommand per experiment, TOML configs, CSV/JSON outputs.

Every run writes its data files plus ``manifest.json`` (config hash, library
version, wall time) into the output directory.  Exit status is 0 when all
checks of the experiment pass, 2 when a check fails and 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
MANIFEST_SCHEMA = "kdvlab-manifest/1"
TABLE_SCHEMA = "kdvlab-table/1"
SUMMARY_SCHEMA = "kdvlab-summary/1"


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# experiment-specific parameters: name -> (type, default)
PARAMS = {
    "roots": {"z": (str, "0.5,1+1j,-2.5"), "tilde_p": (float, None)},
    "spectrum": {"z_min": (float, 0.0), "z_max": (float, 10.0), "n_points": (int, 101), "zeros": (bool, False)},
    "critical": {"smax": (int, 100)},
    "simulate": {
        "center": (float, None),
        "width": (float, None),
        "amplitude": (float, 1.0),
        "control_csv": (str, None),
        "nonlinear": (bool, False),
        "store_every": (int, 10),
    },
    "response": {"z": (str, "1.0"), "x": (float, None), "empirical": (bool, False)},
    "hum": {"target": (str, "sin"), "rtol": (float, 1e-3), "expect_stall": (bool, False)},
    "nullctl": {"tol": (float, 1e-5)},
    "obstruction": {"gamma": (float, 0.0)},
    "monotone": {"gamma": (float, 0.0)},
    "steer": {"rho": (float, 1e-3), "T_factor": (float, 1.2), "angle": (float, 0.0), "n_iter": (int, 3)},
    "toy": {"check": (bool, False), "c": (float, 1.0)},
    "sweep": {"base": (str, "toy")},
}
EXPERIMENTS = tuple(PARAMS)
SECTION_KEYS = {
    "pair": {"k", "l", "L"},
    "grid": {"N", "dt", "T"},
    "sampling": {"n_samples", "seed"},
}
TOP_KEYS = {"experiment", "output", "format", "jobs", "params"} | set(SECTION_KEYS)
GRID_DEFAULTS = {"N": 256, "n_samples": 10}
EXPERIMENT_DEFAULTS = {
    "obstruction": {"N": 512, "n_samples": 50},
    "monotone": {"N": 512, "n_samples": 20},
    "nullctl": {"N": 512},
    "toy": {"n_samples": 200},
    "sweep": {"N": 512, "n_samples": 200},
}

HUM_TARGETS = {
    "sin": lambda x, L: np.sin(2.0 * np.pi * x / L),
    "sin2": lambda x, L: np.sin(4.0 * np.pi * x / L),
    "sin3": lambda x, L: np.sin(6.0 * np.pi * x / L),
    "poly_sin": lambda x, L: x * (L - x) * np.sin(2.0 * np.pi * x / L) / 10.0,
    "cos_diff": lambda x, L: np.cos(2.0 * np.pi * x / L) - np.cos(4.0 * np.pi * x / L),
    "one_minus_cos": lambda x, L: 1.0 - np.cos(2.0 * np.pi * x / L),
}


@dataclass
class ExperimentConfig:
    experiment: str
    k: int | None = None
    l: int | None = None
    L: float | None = None
    N: int | None = None
    dt: float | None = None
    T: tuple = (1.0,)
    n_samples: int | None = None
    seed: int = 0
    output: str = "kdvlab-out"
    format: str = "csv"
    jobs: int = 1
    params: dict = field(default_factory=dict)

    def canonical(self):
        d = asdict(self)
        d["T"] = list(self.T)
        d.pop("output")
        d.pop("jobs")
        return d

    def digest(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def length(self):
        if self.L is not None:
            return float(self.L)
        if self.k is not None and self.l is not None:
            from .critical_lengths import critical_length

            return float(critical_length(self.k, self.l))
        raise ConfigError("pair", "give either k and l or L")

    def pair(self):
        from .critical_lengths import make_pair

        if self.k is None or self.l is None:
            raise ConfigError("pair", "this experiment needs k and l")
        return make_pair(self.k, self.l)


def _as(kind, value, name):
    if value is None:
        return None
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(name, f"expected a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected an integer, got {value!r}") from None
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(name, f"expected a number, got {value!r}")
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected a number, got {value!r}") from None
        if not math.isfinite(out):
            raise ConfigError(name, "must be finite")
        return out
    if not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    return value


def _t_list(value, name="grid.T"):
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        value = [value]
    out = tuple(_as(float, v, name) for v in value)
    if not out or any(t <= 0 for t in out):
        raise ConfigError(name, "horizons must be positive")
    return out


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Validate a parsed TOML mapping; unknown keys are rejected by name."""
    for key in data:
        if key not in TOP_KEYS:
            raise ConfigError(key, "unknown key")
    exp = data.get("experiment")
    if exp not in PARAMS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    flat = {"experiment": exp}
    for section, keys in SECTION_KEYS.items():
        block = data.get(section, {})
        if not isinstance(block, dict):
            raise ConfigError(section, "must be a table")
        for key, value in block.items():
            if key not in keys:
                raise ConfigError(f"{section}.{key}", "unknown key")
            flat[key] = value
    for key in ("output", "format", "jobs"):
        if key in data:
            flat[key] = data[key]
    params = data.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params", "must be a table")
    flat["params"] = dict(params)
    return build_config(flat)


def build_config(flat: dict) -> ExperimentConfig:
    exp = flat["experiment"]
    schema = PARAMS[exp]
    params = {}
    for key, value in flat.get("params", {}).items():
        if key not in schema:
            raise ConfigError(f"params.{key}", f"unknown parameter for '{exp}'")
        params[key] = _as(schema[key][0], value, f"params.{key}")
    for key, (kind, default) in schema.items():
        params.setdefault(key, default)
    cfg = ExperimentConfig(experiment=exp, params=params)
    if flat.get("k") is not None:
        cfg.k = _as(int, flat["k"], "pair.k")
    if flat.get("l") is not None:
        cfg.l = _as(int, flat["l"], "pair.l")
    if flat.get("L") is not None:
        cfg.L = _as(float, flat["L"], "pair.L")
        if cfg.L <= 0:
            raise ConfigError("pair.L", "must be positive")
    for name in ("k", "l"):
        v = getattr(cfg, name)
        if v is not None and v < 1:
            raise ConfigError(f"pair.{name}", "must be a positive integer")
    if flat.get("N") is not None:
        cfg.N = _as(int, flat["N"], "grid.N")
        if cfg.N < 8:
            raise ConfigError("grid.N", "must be at least 8")
    if flat.get("dt") is not None:
        cfg.dt = _as(float, flat["dt"], "grid.dt")
        if cfg.dt <= 0:
            raise ConfigError("grid.dt", "must be positive")
    if flat.get("T") is not None:
        cfg.T = _t_list(flat["T"])
    if flat.get("n_samples") is not None:
        cfg.n_samples = _as(int, flat["n_samples"], "sampling.n_samples")
        if cfg.n_samples < 1:
            raise ConfigError("sampling.n_samples", "must be at least 1")
    if flat.get("seed") is not None:
        cfg.seed = _as(int, flat["seed"], "sampling.seed")
    if flat.get("output") is not None:
        cfg.output = _as(str, flat["output"], "output")
    if flat.get("format") is not None:
        cfg.format = _as(str, flat["format"], "format")
        if cfg.format not in ("csv", "json"):
            raise ConfigError("format", "must be 'csv' or 'json'")
    if flat.get("jobs") is not None:
        cfg.jobs = _as(int, flat["jobs"], "jobs")
        if cfg.jobs < 1:
            raise ConfigError("jobs", "must be at least 1")
    for key, value in {**GRID_DEFAULTS, **EXPERIMENT_DEFAULTS.get(exp, {})}.items():
        if getattr(cfg, key) is None:
            setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# outputs


class RunOutput:
    """Collects data files and check outcomes of one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dir = Path(cfg.output)
        self.files = {}
        self.checks = {}
        self.summary = {}

    def _path(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def table(self, stem, rows, columns=None):
        columns = columns or (list(rows[0].keys()) if rows else [])
        if self.cfg.format == "json":
            payload = {"schema": TABLE_SCHEMA, "columns": columns, "rows": [[_plain(r.get(c)) for c in columns] for r in rows]}
            self.text(f"{stem}.json", json.dumps(payload, sort_keys=True, indent=1) + "\n")
        else:
            path = self._path(f"{stem}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(columns)
                for r in rows:
                    w.writerow([_cell(r.get(c)) for c in columns])
            self.files[path.name] = path

    def control(self, name, u):
        from .control_tools import write_control_csv

        path = self._path(name)
        write_control_csv(path, u)
        self.files[path.name] = path

    def text(self, name, content):
        path = self._path(name)
        path.write_text(content)
        self.files[path.name] = path

    def check(self, name, ok):
        self.checks[name] = bool(ok)

    def finish(self, started, wall):
        self.text("summary.json", json.dumps({"schema": SUMMARY_SCHEMA, "checks": self.checks, "summary": _plain(self.summary)}, sort_keys=True, indent=1) + "\n")
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "experiment": self.cfg.experiment,
            "config": self.cfg.canonical(),
            "config_hash": self.cfg.digest(),
            "version": __version__,
            "started_utc": started,
            "wall_time_s": wall,
            "files": {n: hashlib.sha256(p.read_bytes()).hexdigest() for n, p in sorted(self.files.items())},
            "checks": self.checks,
        }
        path = self._path("manifest.json")
        path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
        return EXIT_PASS if all(self.checks.values()) else EXIT_FAIL


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, bool):
        return str(v).lower()
    return v


def _complex_list(text, name):
    try:
        return [complex(s.strip().replace(" ", "")) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(name, f"cannot parse complex list {text!r}") from None


def _time_step(cfg, T, default=1e-3):
    dt = cfg.dt if cfg.dt is not None else default
    n = max(1, int(round(T / dt)))
    return T / n


# ---------------------------------------------------------------------------
# experiments


def run_roots(cfg, out):
    from .complex_cubic import solve_cubic, tilde_roots

    rows = []
    for z in _complex_list(cfg.params["z"], "params.z"):
        rt = solve_cubic(z) if cfg.params["tilde_p"] is None else tilde_roots(z, cfg.params["tilde_p"])
        row = {"z_re": z.real, "z_im": z.imag}
        for j, lam in enumerate(rt.roots, start=1):
            row[f"lambda{j}_re"] = lam.real
            row[f"lambda{j}_im"] = lam.imag
        row["vieta_residual"] = float(np.max(rt.vieta_residuals()))
        rows.append(row)
    out.table("roots", rows)
    out.check("vieta", all(r["vieta_residual"] <= 1e-12 * (1 + math.hypot(r["z_re"], r["z_im"])) for r in rows))


def run_spectrum(cfg, out):
    from .spectral import find_real_zeros_H, gh_values

    L = cfg.length()
    p = cfg.params
    z = np.linspace(p["z_min"], p["z_max"], p["n_points"])
    g, h = gh_values(z.astype(complex), L)
    rows = [{"z": float(zi), "G_re": gi.real, "G_im": gi.imag, "H_re": hi.real, "H_im": hi.imag, "H_abs": abs(hi)} for zi, gi, hi in zip(z, g, h)]
    out.table("spectrum", rows)
    if p["zeros"]:
        zeros = find_real_zeros_H(L, (p["z_min"], p["z_max"]))
        zrows = [{"z": e.z, "multiplicity": e.multiplicity, "h_abs": e.h_abs, "h_prime_abs": e.h_prime_abs, "resolved": e.resolved} for e in zeros]
        out.table("zeros", zrows, ["z", "multiplicity", "h_abs", "h_prime_abs", "resolved"])
        out.check("zeros_resolved", all(e.resolved for e in zeros))
    out.summary["L"] = L


def run_critical(cfg, out):
    from .critical_lengths import PAIR_COLUMNS, enumerate_pairs, pair_rows

    pairs = enumerate_pairs(cfg.params["smax"])
    rows = [dict(zip(PAIR_COLUMNS, r)) for r in pair_rows(pairs)]
    out.table("critical_pairs", rows, PAIR_COLUMNS)
    out.summary["n_pairs"] = len(pairs)


def _initial_control(cfg, T, dt):
    from .control_tools import ControlSignal, bump_control, read_control_csv

    p = cfg.params
    if p["control_csv"]:
        return read_control_csv(p["control_csv"])
    center = p["center"] if p["center"] is not None else 0.5 * T
    width = p["width"] if p["width"] is not None else 0.25 * T
    u = bump_control(T, center, width, p["amplitude"], dt=dt)
    return ControlSignal(u.samples, u.dt)


def run_simulate(cfg, out):
    from .kdv_solver import Grid, solve_linear, solve_nonlinear, write_trajectory_csv

    T = cfg.T[0]
    dt = _time_step(cfg, T)
    grid = Grid(cfg.length(), cfg.N, dt, T)
    u = _initial_control(cfg, T, grid.dt)
    every = cfg.params["store_every"]
    solver = solve_nonlinear if cfg.params["nonlinear"] else solve_linear
    traj = solver(grid, u=u.padded(grid.n_steps + 1).samples[: grid.n_steps + 1], store_every=every)
    norms = traj.norms()
    rows = [{"t": float(t), "l2": float(n)} for t, n in zip(traj.t, norms)]
    out.table("norms", rows)
    path = out._path("trajectory.csv")
    write_trajectory_csv(path, traj)
    out.files[path.name] = path
    out.summary.update({"final_l2": float(norms[-1]), "n_steps": grid.n_steps})
    out.check("finite", bool(np.all(np.isfinite(norms))))


def run_response(cfg, out):
    from .kdv_solver import Grid, boundary_response, empirical_frequency_response, frequency_response

    L = cfg.length()
    x = cfg.params["x"] if cfg.params["x"] is not None else 0.5 * L
    rows = []
    for z in _complex_list(cfg.params["z"], "params.z"):
        z = z.real
        m = frequency_response(z, L, x)
        b = boundary_response(z, L)
        row = {"z": z, "x": x, "M_re": m.real, "M_im": m.imag, "trace_re": b.real, "trace_im": b.imag}
        if cfg.params["empirical"]:
            grid = Grid(L, cfg.N, _time_step(cfg, 1.0, 2e-3), 1.0)
            me, be = empirical_frequency_response(grid, z, x)
            row.update({"empirical_M_re": me.real, "empirical_M_im": me.imag, "empirical_trace_re": be.real, "empirical_trace_im": be.imag})
        rows.append(row)
    out.table("response", rows)


def run_hum(cfg, out):
    from .control_tools import hum_control
    from .kdv_solver import Grid

    name = cfg.params["target"]
    if name not in HUM_TARGETS:
        raise ConfigError("params.target", f"must be one of {', '.join(HUM_TARGETS)}")
    L = cfg.length()
    T = cfg.T[0]
    grid = Grid(L, cfg.N, _time_step(cfg, T), T)
    target = HUM_TARGETS[name](grid.x_interior, L)
    stall = cfg.params["expect_stall"]
    res = hum_control(grid, target, project=not stall, rtol=cfg.params["rtol"])
    rows = [{"iteration": i, "relative_residual": r} for i, r in enumerate(res.cg_history)]
    out.table("cg_history", rows, ["iteration", "relative_residual"])
    out.control("control.csv", res.control)
    out.summary.update({"residual": res.residual, "iterations": res.iterations, "projection_norm": res.projection_norm})
    if stall:
        out.check("stall", res.residual > 10 * cfg.params["rtol"])
    else:
        out.check("residual", res.residual <= cfg.params["rtol"])


def run_nullctl(cfg, out):
    from .control_tools import NullController, experiment_grid
    from .obstruction_experiments import random_bump_superposition

    L = cfg.length()
    rows = []
    for T in cfg.T:
        grid = experiment_grid(L, T, cfg.N)
        ctl = NullController(grid, tol=cfg.params["tol"])
        rng = np.random.default_rng([cfg.seed, int(round(T * 1e6))])
        res = ctl.close(random_bump_superposition(rng, 0.5 * T, grid.dt))
        out.control(f"control_T{T:g}.csv", res.control)
        rows.append({"T": T, "residual": res.residual, "ok": res.ok, "m_projection": res.m_projection, "closure_norm": res.closure_norm, "alpha": res.alpha})
    out.table("null_controls", rows)
    out.check("null", all(r["ok"] for r in rows))


def run_obstruction(cfg, out):
    from .obstruction_experiments import sign_definiteness_sweep

    rep = sign_definiteness_sweep(cfg.pair(), cfg.T, cfg.n_samples, seed=cfg.seed, N=cfg.N, jobs=cfg.jobs, gamma=cfg.params["gamma"])
    if cfg.format == "json":
        out.text("obstruction_report.json", rep.to_json() + "\n")
    else:
        out.table("obstruction_records", rep.records)
    out.summary["verdicts"] = rep.verdicts
    out.check("all_positive", rep.verdicts["first_mixed_T"] is None)


def _monotone_one(args):
    from .control_tools import NullController, experiment_grid
    from .critical_lengths import compute_E, make_pair
    from .obstruction_experiments import _sample_seed, monotone_ratio, random_bump_superposition

    k, l, t_index, T, n, seed, N, gamma = args
    pair = make_pair(k, l)
    e_asym = compute_E(pair, "asymptotic")
    grid = experiment_grid(pair.L, T, N)
    ctl = NullController(grid)
    rows = []
    for i in range(n):
        rng = np.random.default_rng(_sample_seed(seed, t_index, i))
        res = ctl.close(random_bump_superposition(rng, 0.5 * T, grid.dt))
        if not res.ok:
            continue
        r = monotone_ratio(res.control, pair, gamma=gamma, grid=grid)
        rows.append({"T": T, "sample": i, "ratio_re": r.real, "ratio_im": r.imag, "gap_E": abs(r - pair.E) / abs(pair.E), "gap_E_asymptotic": abs(r - e_asym) / abs(e_asym)})
    return t_index, rows


def _is_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def run_monotone(cfg, out):
    pair = cfg.pair()
    N = cfg.N
    tasks = [(pair.k, pair.l, i, T, cfg.n_samples, cfg.seed, N, cfg.params["gamma"]) for i, T in enumerate(cfg.T)]
    results = _pool_map(_monotone_one, tasks, cfg.jobs)
    rows = [r for _, rs in sorted(results, key=lambda x: x[0]) for r in rs]
    out.table("ratios", rows)
    Ts = sorted(cfg.T, reverse=True)
    med = {T: float(np.median([r["gap_E"] for r in rows if r["T"] == T])) for T in Ts}
    med_a = {T: float(np.median([r["gap_E_asymptotic"] for r in rows if r["T"] == T])) for T in Ts}
    out.summary.update({"median_gap_E": {repr(T): med[T] for T in Ts}, "median_gap_E_asymptotic": {repr(T): med_a[T] for T in Ts}})
    out.check("monotone_gap_E", _is_decreasing([med[T] for T in Ts]))


def run_steer(cfg, out):
    from .kdv_solver import Grid
    from .obstruction_experiments import MPlane, nonlinear_steer

    pair = cfg.pair()
    p = cfg.params
    T = p["T_factor"] * np.pi / pair.p
    N = cfg.N
    dt = cfg.dt if cfg.dt is not None else 2e-3
    n = int(round(T / dt))
    plane = MPlane(pair, Grid(pair.L, N, T / n, T))
    direction = np.cos(p["angle"]) * plane.basis[0] + np.sin(p["angle"]) * plane.basis[1]
    yT = p["rho"] * direction
    res = nonlinear_steer(pair, None, yT, T, p["rho"], N=N, dt=dt, n_iter=p["n_iter"], seed=cfg.seed)
    out.table("picard", [{"iteration": i, "residual": r} for i, r in enumerate(res.residuals)], ["iteration", "residual"])
    out.summary.update({"T": T, "residuals": res.residuals, "converged": res.converged})
    out.check("converged", res.converged)


def run_toy(cfg, out):
    from .control_tools import ControlSignal
    from .toy_ode import toy_exact, toy_obstruction_check, toy_simulate

    if not cfg.params["check"]:
        rows = []
        for T in cfg.T:
            dt = T / 2000.0
            u = ControlSignal(np.full(2001, cfg.params["c"]), dt)
            s = toy_simulate(u, T, dt)
            y2, y3 = toy_exact(u, T)
            rows.append({"T": T, "rk4_y1": s.y1, "rk4_y2": s.y2, "rk4_y3": s.y3, "exact_y2": y2, "exact_y3": y3})
        out.table("toy", rows)
        out.check("rk4_vs_exact", all(abs(r["rk4_y2"] - r["exact_y2"]) <= 1e-7 and abs(r["rk4_y3"] - r["exact_y3"]) <= 1e-7 for r in rows))
        return
    rows = _pool_map(_toy_one, [(T, cfg.n_samples, cfg.seed) for T in cfg.T], cfg.jobs)
    out.table("toy_verdicts", [r for r, _ in rows])
    for (r, records), T in zip(rows, cfg.T):
        out.table(f"toy_samples_T{T:g}", records, ["family", "index", "y2", "y3", "h_minus_1", "h_minus_2"])
        if r["y2_violations"] is not None:
            out.check(f"y2_nonnegative_T{T:g}", r["y2_violations"] == 0)
        if r["y3_violations"] is not None:
            out.check(f"y3_nonpositive_T{T:g}", r["y3_violations"] == 0)


def _toy_one(args):
    from .toy_ode import toy_obstruction_check

    T, n, seed = args
    rep = toy_obstruction_check(T, n_samples=n, seed=seed, dt=T / 1000.0)
    row = {
        "T": T,
        "n_samples": n,
        "y2_violations": rep.y2_violations,
        "y3_violations": rep.y3_violations,
        "delta_y2": rep.delta_y2,
        "delta_y3": rep.delta_y3,
        "y2_verdict": _verdict_text(rep.y2_violations, "y2>=0"),
        "y3_verdict": _verdict_text(rep.y3_violations, "y3<=0"),
        "search_found_positive_y3": None if rep.search is None else rep.search["found_positive"],
        "search_best_y3": None if rep.search is None else rep.search["best_y3"],
    }
    return row, rep.records


def _verdict_text(violations, what):
    if violations is None:
        return "not-asserted"
    return f"{what} holds" if violations == 0 else f"{what} violated ({violations})"


def _sweep_point(args):
    base, L, T, N, seed, n = args
    if base == "toy":
        row, _ = _toy_one((T, n, seed))
        return row
    from .control_tools import NullController, experiment_grid
    from .obstruction_experiments import random_bump_superposition

    grid = experiment_grid(L, T, N)
    rng = np.random.default_rng([seed, int(round(T * 1e6))])
    res = NullController(grid).close(random_bump_superposition(rng, 0.5 * T, grid.dt))
    return {"T": T, "residual": res.residual, "ok": res.ok, "closure_norm": res.closure_norm}


def run_sweep(cfg, out):
    base = cfg.params["base"]
    if base not in ("toy", "nullctl"):
        raise ConfigError("params.base", "must be 'toy' or 'nullctl'")
    L = cfg.length() if base == "nullctl" else 0.0
    tasks = [(base, L, T, cfg.N, cfg.seed, cfg.n_samples) for T in cfg.T]
    rows = _pool_map(_sweep_point, tasks, cfg.jobs)
    rows.sort(key=lambda r: r["T"])
    out.table(f"sweep_{base}", rows)


def _pool_map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


RUNNERS = {
    "roots": run_roots,
    "spectrum": run_spectrum,
    "critical": run_critical,
    "simulate": run_simulate,
    "response": run_response,
    "hum": run_hum,
    "nullctl": run_nullctl,
    "obstruction": run_obstruction,
    "monotone": run_monotone,
    "steer": run_steer,
    "toy": run_toy,
    "sweep": run_sweep,
}


def run(cfg: ExperimentConfig) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    t0 = time.perf_counter()
    out = RunOutput(cfg)
    RUNNERS[cfg.experiment](cfg, out)
    return out.finish(started, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# argument parsing


def _parser():
    ap = argparse.ArgumentParser(prog="kdvlab", description="KdV boundary-control experiments")
    ap.add_argument("--version", action="version", version=f"kdvlab {__version__}")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name, schema in PARAMS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML file; command-line flags override it")
        sp.add_argument("--k", type=int)
        sp.add_argument("--l", type=int)
        sp.add_argument("--L", type=float)
        sp.add_argument("--N", type=int)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--T", help="horizon or comma-separated horizons")
        sp.add_argument("--samples", type=int, dest="n_samples")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", dest="output")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--jobs", type=int)
        for key, (kind, _default) in schema.items():
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                sp.add_argument(flag, dest=f"param_{key}", action="store_true", default=None)
            else:
                sp.add_argument(flag, dest=f"param_{key}", type=kind)
    return ap


def config_from_args(argv, environ=None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    args = _parser().parse_args(argv)
    data = {}
    if args.config:
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
        if data.get("experiment", args.experiment) != args.experiment:
            raise ConfigError("experiment", f"config is for '{data['experiment']}', command is '{args.experiment}'")
        data["experiment"] = args.experiment
        cfg = config_from_mapping(data)
        flat = {**{k: getattr(cfg, k) for k in ("k", "l", "L", "N", "dt", "T", "n_samples", "seed", "output", "format", "jobs")}, "params": {}}
        flat["params"] = {k: v for k, v in cfg.params.items() if k in data.get("params", {})}
    else:
        flat = {"params": {}}
    flat["experiment"] = args.experiment
    if "KDVLAB_SEED" in environ:
        flat["seed"] = _as(int, environ["KDVLAB_SEED"], "KDVLAB_SEED")
    for key in ("k", "l", "L", "N", "dt", "T", "n_samples", "seed", "output", "format", "jobs"):
        v = getattr(args, key)
        if v is not None:
            flat[key] = v
    for key in PARAMS[args.experiment]:
        v = getattr(args, f"param_{key}")
        if v is not None:
            flat["params"][key] = v
    return build_config(flat)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = config_from_args(argv)
    except ConfigError as exc:
        print(f"kdvlab: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"kdvlab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        code = run(cfg)
    except ConfigError as exc:
        print(f"kdvlab: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - any failure of the experiment maps to exit 1
        print(f"kdvlab: {cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"kdvlab {cfg.experiment}: {'pass' if code == EXIT_PASS else 'FAIL'} -> {cfg.output}")
    return code


if __name__ == "__main__":
    sys.exit(main())
