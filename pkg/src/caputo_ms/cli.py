"""Command-line entry point: flat-file configuration, experiment
orchestration, CSV/JSON/figure emission, deterministic seeding.

Subcommands: sample (noise paths), verify (kernel and covariance-density
identities), solve (moment estimation), check (named diagnostics), all.
Exit status: 0 all satisfied, 1 invalid configuration, 2 numeric failure,
3 one or more checks unsatisfied.
"""

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .core import TimeGrid
from .driving import BasePoint, DrivingSystem
from .errors import CaputoMsError, ConfigError, DomainError, GridError, NumericsError, ParameterError
from .frac_kernel import FracParams, build_weights, kernel_eval, kernel_mass, series_bound, series_ratio
from .solver import (
    VectorField,
    constant_field,
    exp_decay_state,
    linear_decay_field,
    rotation_forced_field,
    zero_field,
)
from .tfbm import NoiseParams, increment_cov_cached, m_rho_alpha_h, phi_eval, phi_upper_bound, sample_paths
from . import diagnostics as diag
from . import report

_KNOWN_CHECKS = (
    "moment_bound",
    "absorbing",
    "modulus",
    "shift_bound",
    "equilipschitz",
    "cocycle",
    "omega",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (flat key = value file)."""

    alpha: float = 0.75
    varrho: float = 4.0
    hurst: float = 0.7
    lam: float = 1.0
    field_name: str = "linear"
    kappa: float = 0.5
    level: float = 1.0
    amp: float = 1.0
    omega: float = 1.0
    horizon: float = 8.0
    dt: float = 1.0 / 256.0
    reps: int = 10000
    seed: int = 42
    x0: tuple = (1.0,)
    p0: float = 0.0
    checks: tuple = ("moment_bound",)
    output: str = "caputo-ms-out"
    sample_count: int = 8
    absorb_factor: float = 100.0
    absorb_basepoints: int = 8
    modulus_t0: float = None
    shift_bound_t: float = None
    eqlip_t: float = 2.0
    eqlip_theta: float = 1.0
    cocycle_tau: float = 0.5
    cocycle_sigma: float = 0.5
    omega_snapshots: tuple = None

    def frac_params(self):
        return FracParams(alpha=self.alpha, varrho=self.varrho)

    def noise_params(self):
        return NoiseParams(hurst=self.hurst, lam=self.lam)

    def vector_field(self) -> VectorField:
        d = len(self.x0)
        if self.field_name == "zero":
            return zero_field(d)
        if self.field_name == "constant":
            return constant_field(self.level, d)
        if self.field_name == "linear":
            return linear_decay_field(self.kappa, d)
        if self.field_name == "rotation":
            return rotation_forced_field(self.amp, d)
        raise ConfigError(f"unknown field '{self.field_name}'")

    def driving(self):
        return DrivingSystem(omega=self.omega)

    def grid(self):
        return TimeGrid(horizon=self.horizon, dt=self.dt)

    def base_point(self):
        return BasePoint(self.p0)

    def semantic_fields(self) -> dict:
        """Everything that affects results (output location excluded)."""
        return {
            "alpha": self.alpha,
            "varrho": self.varrho,
            "hurst": self.hurst,
            "lambda": self.lam,
            "field": self.field_name,
            "kappa": self.kappa,
            "level": self.level,
            "amp": self.amp,
            "omega": self.omega,
            "T": self.horizon,
            "dt": self.dt,
            "reps": self.reps,
            "seed": self.seed,
            "x0": list(self.x0),
            "p0": self.p0,
            "checks": list(self.checks),
            "sample_count": self.sample_count,
            "absorb_factor": self.absorb_factor,
            "absorb_basepoints": self.absorb_basepoints,
            "modulus_t0": self.modulus_t0,
            "shift_bound_t": self.shift_bound_t,
            "eqlip_t": self.eqlip_t,
            "eqlip_theta": self.eqlip_theta,
            "cocycle_tau": self.cocycle_tau,
            "cocycle_sigma": self.cocycle_sigma,
            "omega_snapshots": None
            if self.omega_snapshots is None
            else list(self.omega_snapshots),
        }

    def validate(self):
        self.frac_params()
        self.noise_params()
        self.vector_field()
        self.grid()
        if self.reps < 2:
            raise ConfigError("reps must be at least 2")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        for name in self.checks:
            if name not in _KNOWN_CHECKS:
                raise ConfigError(
                    f"unknown check '{name}' (known: {', '.join(_KNOWN_CHECKS)})"
                )
        return self


_FLOAT_KEYS = {
    "alpha",
    "varrho",
    "hurst",
    "lambda",
    "kappa",
    "level",
    "amp",
    "omega",
    "T",
    "dt",
    "p0",
    "absorb_factor",
    "modulus_t0",
    "shift_bound_t",
    "eqlip_t",
    "eqlip_theta",
    "cocycle_tau",
    "cocycle_sigma",
}
_INT_KEYS = {"reps", "seed", "sample_count", "absorb_basepoints"}
_LIST_FLOAT_KEYS = {"x0", "omega_snapshots"}
_ATTR_FOR_KEY = {
    "lambda": "lam",
    "T": "horizon",
    "field": "field_name",
}


def parse_config(path) -> ExperimentConfig:
    """Parse a flat key = value file ('#' comments, no nesting)."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            attr = _ATTR_FOR_KEY.get(key, key)
            try:
                if key in _FLOAT_KEYS:
                    values[attr] = float(val)
                elif key in _INT_KEYS:
                    values[attr] = int(val)
                elif key in _LIST_FLOAT_KEYS:
                    values[attr] = tuple(float(v) for v in val.split(",") if v.strip())
                elif key == "checks":
                    values["checks"] = tuple(
                        v.strip() for v in val.split(",") if v.strip()
                    )
                elif key == "field":
                    values["field_name"] = val
                elif key == "output":
                    values["output"] = val
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            except ValueError as err:
                raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {err}")
    try:
        return ExperimentConfig(**values).validate()
    except (ParameterError, GridError) as err:
        raise ConfigError(str(err))


def _snap(grid: TimeGrid, t):
    """Nearest grid node to t (for derived default times)."""
    return round(t / grid.dt) * grid.dt


def _default_thetas(dt, levels=6):
    return tuple(dt * 2.0**j for j in range(levels))


def run_verify(cfg: ExperimentConfig):
    """Kernel and covariance-density identity checks (quadrature vs closed
    forms, dominance, and the two-route memory-integral comparison)."""
    rows = []  # (label, x, lhs, rhs, ok)
    p = cfg.frac_params()
    # translation identity: same lag through two index conventions
    tau, sig, th, r = 1.0, 0.3, 0.2, 1.4
    v1 = kernel_eval(p, (tau + sig + th) - r)
    v2 = kernel_eval(p, (sig + th) - (r - tau))
    rows.append(("kernel_translation", r, v1, v2, abs(v1 - v2) <= 1e-12 * abs(v2)))
    # exponential degeneration at alpha = 1
    p1 = FracParams(alpha=1.0, varrho=cfg.varrho)
    lag = 0.5
    v1 = kernel_eval(p1, lag)
    v2 = math.exp(-cfg.varrho * lag)
    rows.append(("kernel_alpha1", lag, v1, v2, abs(v1 - v2) <= 1e-12 * abs(v2)))
    # mass saturation at rho t = 50
    t_sat = 50.0 / p.varrho
    v1 = kernel_mass(p, t_sat)
    v2 = p.varrho ** (-p.alpha)
    rows.append(("kernel_mass_sat", t_sat, v1, v2, abs(v1 - v2) <= 1e-8 * v2))
    # weight row sums vs mass on a small grid
    grid = TimeGrid(horizon=1.0, dt=1.0 / 64.0)
    w = build_weights(p, grid)
    sums = w.row_sums()
    mass = kernel_mass(p, grid.times)
    err = float(np.max(np.abs(sums - mass)[1:] / mass[1:]))
    rows.append(("weight_row_sums", grid.horizon, err, 1e-10, err <= 1e-10))

    gaps = (0.1, 0.5, 1.0, 5.0)
    for hurst in (0.6, 0.75, 0.9):
        n0 = NoiseParams(hurst=hurst, lam=0.0)
        for g in gaps:
            lhs = phi_eval(n0, g)
            rhs = phi_upper_bound(n0, g)
            ok = abs(lhs - rhs) <= 1e-6 * rhs
            rows.append((f"phi_lambda0[H={hurst:g}]", g, lhs, rhs, ok))
    for lam in (0.5, 1.0, 2.0):
        nl = NoiseParams(hurst=cfg.hurst, lam=lam)
        for g in gaps:
            lhs = phi_eval(nl, g)
            rhs = phi_upper_bound(nl, g)
            rows.append((f"phi_dominance[lam={lam:g}]", g, lhs, rhs, lhs < rhs))
    for rho in (1.0, cfg.varrho):
        pr = FracParams(alpha=cfg.alpha, varrho=rho)
        mem = m_rho_alpha_h(pr, cfg.noise_params())
        ok = abs(mem.time_domain - mem.spectral) <= 1e-4 * abs(mem.spectral)
        rows.append((f"parseval[rho={rho:g}]", rho, mem.time_domain, mem.spectral, ok))

    labels = np.array([r[0] for r in rows], dtype=object)
    return diag.BoundReport(
        name="verify",
        x=np.array([r[1] for r in rows]),
        lhs=np.array([r[2] for r in rows]),
        rhs=np.array([r[3] for r in rows]),
        se=np.zeros(len(rows)),
        satisfied=np.array([r[4] for r in rows], dtype=bool),
        overall=all(r[4] for r in rows),
        labels=labels,
    )


def run_check(name, cfg: ExperimentConfig, workers):
    p, n = cfg.frac_params(), cfg.noise_params()
    field = cfg.vector_field()
    sys_ = cfg.driving()
    grid = cfg.grid()
    p0 = cfg.base_point()
    if name == "moment_bound":
        return diag.check_moment_bound(
            p, n, field, cfg.x0, p0, sys_, grid, cfg.reps, cfg.seed, workers=workers
        )
    if name == "absorbing":
        cons = diag.bound_constants(p, n, field, sys_, float(np.sum(np.square(cfg.x0))))
        radius = math.sqrt(cfg.absorb_factor * cons["R_star_sq"])
        p0set = [
            BasePoint(2.0 * math.pi * i / cfg.absorb_basepoints)
            for i in range(cfg.absorb_basepoints)
        ]
        return diag.absorbing_scan(
            p, n, field, sys_, [radius], p0set, grid, cfg.reps, cfg.seed, workers=workers
        )
    if name == "modulus":
        t0 = cfg.modulus_t0 if cfg.modulus_t0 is not None else _snap(grid, grid.horizon / 2)
        return diag.time_modulus(
            p,
            n,
            field,
            cfg.x0,
            p0,
            sys_,
            grid,
            t0,
            _default_thetas(grid.dt),
            cfg.reps,
            cfg.seed,
            workers=workers,
        )
    if name == "shift_bound":
        t = cfg.shift_bound_t if cfg.shift_bound_t is not None else _snap(grid, grid.horizon / 2)
        thetas = [v for v in (0.25, 0.5, 1.0, 2.0) if t + v <= grid.horizon]
        return diag.check_shift_bound(
            p,
            n,
            field,
            [cfg.x0],
            [p0],
            sys_,
            grid,
            t,
            thetas,
            cfg.reps,
            cfg.seed,
            workers=workers,
        )
    if name == "equilipschitz":
        return diag.theta_equilipschitz(
            p,
            n,
            field,
            [cfg.x0],
            [p0],
            sys_,
            grid,
            cfg.eqlip_t,
            cfg.eqlip_theta,
            _default_thetas(grid.dt),
            cfg.reps,
            cfg.seed,
            workers=workers,
        )
    if name == "cocycle":
        horizon = cfg.cocycle_tau + cfg.cocycle_sigma + 1.0
        cgrid = TimeGrid(horizon=_snap(grid, horizon), dt=grid.dt)
        state = exp_decay_state(p, cfg.x0, cgrid, base=p0)
        return diag.cocycle_test(
            p,
            n,
            field,
            sys_,
            state,
            cfg.cocycle_tau,
            cfg.cocycle_sigma,
            (0.0, 0.5, 1.0),
            2 * cfg.reps,
            cfg.seed,
            workers=workers,
        )
    if name == "omega":
        snaps = cfg.omega_snapshots
        if snaps is None:
            T = grid.horizon
            snaps = tuple(
                t
                for t in (_snap(grid, T * f) for f in (0.5, 0.625, 0.75, 0.875))
                if t <= T - 1.0 + 1e-9
            )
            if not snaps:
                raise ConfigError(
                    "horizon too short for default snapshots; set omega_snapshots"
                )
        return diag.omega_limit_proxy(
            p, n, field, sys_, [cfg.x0], [p0], grid, snaps, cfg.reps, cfg.seed, workers=workers
        )
    raise ConfigError(f"unknown check '{name}'")


_SLOPE_CHECKS = {"modulus", "equilipschitz"}


def run(cfg: ExperimentConfig, command, workers, out_dir):
    """Execute one subcommand; returns the exit code and writes artifacts."""
    started = time.time()
    os.makedirs(out_dir, exist_ok=True)
    p = cfg.frac_params()
    q = series_ratio(p, cfg.vector_field().lip)
    print(f"caputo-ms {command}: q = {report.fmt9(q)} "
          f"({'bound series converges' if q < 1 else 'bound series inapplicable'})")

    summary = {"command": command, "q": q, "checks": {}}
    unsatisfied = []
    try:
        if command in ("sample", "all"):
            cov = increment_cov_cached(cfg.noise_params(), cfg.grid())
            paths = sample_paths(cov, cfg.sample_count, cfg.seed)
            report.write_paths_csv(os.path.join(out_dir, "paths.csv"), paths)
            report.render_paths_figure(os.path.join(out_dir, "paths.png"), paths)
        if command in ("verify", "all"):
            rep = run_verify(cfg)
            report.write_bound_report_csv(os.path.join(out_dir, "verify.csv"), rep)
            report.render_bound_figure(os.path.join(out_dir, "verify.png"), rep)
            summary["checks"]["verify"] = {"satisfied": rep.overall}
            if not rep.overall:
                unsatisfied.append("verify")
        if command in ("solve", "all"):
            series = diag.estimate_moments(
                p,
                cfg.noise_params(),
                cfg.vector_field(),
                cfg.x0,
                cfg.base_point(),
                cfg.driving(),
                cfg.grid(),
                cfg.reps,
                cfg.seed,
                workers=workers,
            )
            rhs = None
            if q < 1:
                cons = diag.bound_constants(
                    p,
                    cfg.noise_params(),
                    cfg.vector_field(),
                    cfg.driving(),
                    float(np.sum(np.square(cfg.x0))),
                    d=len(cfg.x0),
                )
                rhs = series_bound(
                    p, cons["L"], cons["M2"], cons["Ex0_sq"], cfg.grid().times
                )
            report.write_moments_csv(os.path.join(out_dir, "moments.csv"), series)
            report.render_moments_figure(
                os.path.join(out_dir, "moments.png"), series, rhs=rhs
            )
        if command in ("check", "all"):
            for name in cfg.checks:
                rep = run_check(name, cfg, workers)
                report.write_bound_report_csv(
                    os.path.join(out_dir, f"check_{name}.csv"), rep
                )
                if name in _SLOPE_CHECKS:
                    report.render_slope_figure(
                        os.path.join(out_dir, f"check_{name}.png"), rep
                    )
                else:
                    report.render_bound_figure(
                        os.path.join(out_dir, f"check_{name}.png"), rep
                    )
                summary["checks"][name] = {
                    "satisfied": bool(rep.overall),
                    "inapplicable": bool(rep.inapplicable),
                    "constants": rep.constants,
                    "details": rep.details,
                }
                status = (
                    "inapplicable"
                    if rep.inapplicable
                    else ("pass" if rep.overall else "FAIL")
                )
                print(f"  check {name}: {status}")
                if not rep.overall and not rep.inapplicable:
                    unsatisfied.append(name)
    except NumericsError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        _write_meta(cfg, command, workers, out_dir, started, status="numeric-failure")
        return 2

    summary["satisfied"] = not unsatisfied
    if summary["checks"] or command in ("solve", "sample", "all"):
        report.write_json(os.path.join(out_dir, "summary.json"), summary)
    _write_meta(cfg, command, workers, out_dir, started, status="ok")
    if unsatisfied:
        print(f"unsatisfied checks: {', '.join(unsatisfied)}", file=sys.stderr)
        return 3
    return 0


def _write_meta(cfg, command, workers, out_dir, started, status):
    meta = {
        "version": __version__,
        "command": command,
        "config_hash": report.config_hash(cfg.semantic_fields()),
        "seed": cfg.seed,
        "workers": workers,
        "alpha_degenerate": cfg.alpha == 1.0,
        "lambda_zero": cfg.lam == 0.0,
        "status": status,
        "wall_seconds": round(time.time() - started, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    report.write_json(os.path.join(out_dir, "meta.json"), meta)


def _resolve_workers(args_workers):
    if args_workers is not None:
        return max(1, int(args_workers))
    env = os.environ.get("CAPUTO_MS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CAPUTO_MS_WORKERS must be an integer, got '{env}'")
    return os.cpu_count() or 1


def build_parser():
    ap = argparse.ArgumentParser(
        prog="caputo-ms",
        description="Simulate tempered-fractional stochastic Volterra dynamics "
        "and verify their mean-square bounds.",
    )
    ap.add_argument("command", choices=["sample", "verify", "solve", "check", "all"])
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--seed", type=int, help="seed override")
    ap.add_argument("--workers", type=int, help="worker threads (default: machine)")
    ap.add_argument("--dt", type=float, help="grid step override")
    ap.add_argument("--reps", type=int, help="replicate count override")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else ExperimentConfig().validate()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.dt is not None:
            overrides["dt"] = args.dt
        if args.reps is not None:
            overrides["reps"] = args.reps
        if overrides:
            cfg = replace(cfg, **overrides).validate()
        workers = _resolve_workers(args.workers)
        out_dir = args.out if args.out else cfg.output
    except (ConfigError, ParameterError, GridError, DomainError, OSError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return 1
    try:
        return run(cfg, args.command, workers, out_dir)
    except (ConfigError, ParameterError, GridError, DomainError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return 1
    except CaputoMsError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
