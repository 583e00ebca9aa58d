"""Command-line driver: ``ising-rg-spde --command NAME [--config FILE] [flags]``.

Config files hold one ``key = value`` per line (``#`` starts a comment).  Flags
override the file; ``--set key=value`` overrides any key.  A JSON manifest
written by a previous run is accepted as a config file as well.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as _rng
from .drift import DriftParams
from .functional import (
    FAIL,
    CylindricalObservable,
    judge,
    linear_observable,
    lsi_check,
    moment_report,
    partition_function,
    poincare_check,
)
from .ising import (
    IsingChain,
    decimation_log_identity,
    dynamics_stationary_two_point,
    empirical_two_point,
    enumerate_partition,
    log_partition,
    two_point,
)
from .kernel import point_constants
from .malliavin import verify_ibp
from .reports import (
    ISING_COLUMNS,
    RG_COLUMNS,
    TRAJECTORY_COLUMNS,
    VERDICT_COLUMNS,
    trajectory_rows,
    write_manifest,
    write_table,
)
from .rg import RGSchedule, correlation_flow, covariance_bound, lsi_constant_C, params_at
from .solver import BlowUpError, ModelParams, n_steps_for, project_initial, simulate_ensemble
from .suites import drift_suite, kernel_suite

COMMANDS = (
    "kernel-check",
    "drift-check",
    "simulate",
    "moments",
    "lsi",
    "poincare",
    "ibp-check",
    "rg-flow",
    "partition",
    "ising",
    "correlations",
)
OBSERVABLES = ("linear", "sin", "expsin")


class ConfigError(ValueError):
    pass


def _floats(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(v) for v in s)
    return tuple(float(v) for v in str(s).replace(",", " ").split())


@dataclass
class RunConfig:
    command: str = "kernel-check"
    K: float = 0.05
    gamma: float = 3.0
    epsilon: float = 0.1
    delta: float = 0.1
    rho: float = 0.2
    M: float = 1.0
    T: float = 1.0
    kappa: float = 1.0
    gamma_star: float = 2.0
    n: int = 1
    schedule: str = "ronrel"
    T_grid: tuple = (2.0, 4.0, 8.0)
    replicas: int = 1000
    n_modes: int = 16
    dt: float = 1e-3
    n_records: int = 4
    u0_amplitude: float = 0.1
    points: tuple = (0.5,)
    observable: str = "sin"
    ibp_mode: int = 1
    site_l: int = -1
    site_k: int = 1
    ising_N: int = 6
    ising_K: float = 0.0
    ising_gamma: float = 1.5
    chains: int = 200
    sweeps: int = 2000
    master_seed: int = 0
    out_path: str = "out/report"
    out_format: str = "csv"
    threads: int = 0

    def model_params(self) -> ModelParams:
        return ModelParams(self.K, self.gamma, self.epsilon, self.delta, self.rho, self.M, self.T)

    def schedule_obj(self) -> RGSchedule:
        return RGSchedule(self.kappa, self.gamma_star, self.n, self.schedule, self.M)

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_POS = "must be positive"

# key -> (parser, check, message)
_RULES = {
    "command": (str, lambda v: v in COMMANDS, f"must be one of {', '.join(COMMANDS)}"),
    "K": (float, lambda v: math.isfinite(v) and v >= 0, "must be nonnegative"),
    "gamma": (float, lambda v: v > 1, "must exceed 1"),
    "epsilon": (float, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "delta": (float, lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "rho": (float, lambda v: 0 < v < math.inf, _POS),
    "M": (float, lambda v: 0 < v < math.inf, _POS),
    "T": (float, lambda v: 0 < v < math.inf, _POS),
    "kappa": (float, lambda v: 0 < v < math.inf, _POS),
    "gamma_star": (float, lambda v: v > 1, "must exceed 1"),
    "n": (int, lambda v: v >= 1, "must be >= 1"),
    "schedule": (str, lambda v: v in ("ronrel", "renrela"), "must be ronrel or renrela"),
    "T_grid": (_floats, lambda v: len(v) > 0 and all(t >= 1 for t in v), "must be a list of values >= 1"),
    "replicas": (int, lambda v: v >= 2, "must be >= 2"),
    "n_modes": (int, lambda v: v >= 1, "must be >= 1"),
    "dt": (float, lambda v: 0 < v < math.inf, _POS),
    "n_records": (int, lambda v: v >= 1, "must be >= 1"),
    "u0_amplitude": (float, math.isfinite, "must be finite"),
    "points": (_floats, lambda v: len(v) > 0 and all(0 < p < 1 for p in v) and list(v) == sorted(set(v)), "must be increasing values in (0, 1)"),
    "observable": (str, lambda v: v in OBSERVABLES, f"must be one of {', '.join(OBSERVABLES)}"),
    "ibp_mode": (int, lambda v: v >= 1, "must be >= 1"),
    "site_l": (int, lambda v: True, ""),
    "site_k": (int, lambda v: True, ""),
    "ising_N": (int, lambda v: 2 <= v <= 20, "must lie in [2, 20]"),
    "ising_K": (float, math.isfinite, "must be finite"),
    "ising_gamma": (float, math.isfinite, "must be finite"),
    "chains": (int, lambda v: v >= 2, "must be >= 2"),
    "sweeps": (int, lambda v: v >= 1, "must be >= 1"),
    "master_seed": (int, lambda v: 0 <= v < 2**64, "must lie in [0, 2^64)"),
    "out_path": (str, lambda v: len(v) > 0, "must be nonempty"),
    "out_format": (str, lambda v: v in ("csv", "json"), "must be csv or json"),
    "threads": (int, lambda v: v >= 0, "must be >= 0 (0 = environment or 1)"),
}
_ALIASES = {"seed": "master_seed", "modes": "n_modes", "out": "out_path", "format": "out_format"}


def _coerce(key: str, raw) -> object:
    key = _ALIASES.get(key, key)
    if key not in _RULES:
        raise ConfigError(f"unknown key '{key}'")
    parse, ok, msg = _RULES[key]
    try:
        if parse is int and isinstance(raw, str):
            f = float(raw)
            if f != int(f):
                raise ValueError
            val = int(f)
        elif parse is int:
            if isinstance(raw, float) and raw != int(raw):
                raise ValueError
            val = int(raw)
        else:
            val = parse(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(parse, '__name__', 'list')}") from None
    if isinstance(val, float) and math.isnan(val):
        raise ConfigError(f"{key} {msg}")
    if not ok(val):
        raise ConfigError(f"{key} {msg}")
    return val


def read_config_file(path) -> dict:
    """``key = value`` pairs from a text file, or the ``config`` echo of a manifest."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        data = json.loads(text)
        return dict(data.get("config", data))
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ising-rg-spde", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key = value config file (or a prior JSON manifest)")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--seed", help="64-bit master seed")
    p.add_argument("--replicas")
    p.add_argument("--modes")
    p.add_argument("--dt")
    p.add_argument("--T")
    p.add_argument("--schedule", choices=("ronrel", "renrela"))
    p.add_argument("--out", help="output path stem")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--threads")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    return p


def parse_config(argv=None) -> RunConfig:
    """Merge defaults, config file and flags (in that order) into a validated config."""
    ns = build_parser().parse_args(argv)
    values = {}
    if ns.config:
        values.update(read_config_file(ns.config))
    for flag in ("command", "seed", "replicas", "modes", "dt", "T", "schedule", "out", "format", "threads"):
        v = getattr(ns, flag)
        if v is not None:
            values[flag] = v
    for item in ns.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    cfg = RunConfig()
    for k, v in values.items():
        key = _ALIASES.get(k, k)
        setattr(cfg, key, _coerce(key, v))
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: RunConfig):
    if cfg.command in ("simulate", "moments", "lsi", "poincare", "ibp-check"):
        try:
            cfg.model_params()
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if cfg.command in ("rg-flow", "partition", "correlations"):
        try:
            cfg.schedule_obj()
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if cfg.command == "correlations" and not cfg.site_l < cfg.site_k:
        raise ConfigError("site_l must be smaller than site_k")


# observables ----------------------------------------------------------------


def make_observable(name: str, points) -> CylindricalObservable:
    p = np.asarray(points, dtype=float)
    if name == "linear":
        return linear_observable(p, offset=1.0)
    if name == "sin":
        return CylindricalObservable(p, lambda z: np.sin(np.sum(z, axis=-1)), lambda z: np.repeat(np.cos(np.sum(z, axis=-1))[..., None], p.size, axis=-1), "sin")
    if name == "expsin":
        def f(z):
            return np.exp(0.5 * np.sin(np.sum(z, axis=-1)))

        def gf(z):
            s = np.sum(z, axis=-1)
            return np.repeat((0.5 * np.cos(s) * np.exp(0.5 * np.sin(s)))[..., None], p.size, axis=-1)

        return CylindricalObservable(p, f, gf, "expsin")
    raise ValueError(f"unknown observable {name}")


# commands --------------------------------------------------------------------


@dataclass
class Outcome:
    columns: tuple
    rows: list
    verdicts: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _threads(cfg):
    return cfg.threads or None


def _u0(cfg):
    amp = cfg.u0_amplitude
    return lambda x: amp * np.sin(np.pi * x)


def _verdict_outcome(verdicts, extra=None) -> Outcome:
    return Outcome(VERDICT_COLUMNS, [v.row() for v in verdicts], verdicts, extra or {})


def _ensemble(cfg, mp, record_times=None, with_gradient=False):
    return simulate_ensemble(
        mp, _u0(cfg), cfg.n_modes, cfg.dt, cfg.master_seed, cfg.replicas,
        record_times=record_times, with_gradient=with_gradient, threads=_threads(cfg),
    )


def cmd_kernel_check(cfg):
    return _verdict_outcome(kernel_suite(seed=cfg.master_seed % 2**32))


def cmd_drift_check(cfg):
    dp = DriftParams(cfg.epsilon, cfg.delta, cfg.gamma)
    return _verdict_outcome(drift_suite(dp, seed=cfg.master_seed % 2**32))


def _record_times(cfg, mp):
    """``n_records`` snapshot times on the step grid, the last one at the final step."""
    total = n_steps_for(mp.T, cfg.dt)
    steps = np.unique(np.round(np.linspace(0, total, cfg.n_records + 1)[1:]).astype(int))
    return [int(s) * cfg.dt for s in steps if s > 0]


def cmd_simulate(cfg):
    mp = cfg.model_params()
    ens = _ensemble(cfg, mp, _record_times(cfg, mp))
    return Outcome(TRAJECTORY_COLUMNS, list(trajectory_rows(ens)), [], {"record_steps": ens.steps})


def cmd_moments(cfg):
    mp = cfg.model_params()
    ens = _ensemble(cfg, mp, _record_times(cfg, mp))
    return _verdict_outcome(moment_report(ens, mp, project_initial(_u0(cfg), cfg.n_modes)))


def _inequality(cfg, check):
    mp = cfg.model_params()
    ens = _ensemble(cfg, mp)
    obs = make_observable(cfg.observable, cfg.points)
    return _verdict_outcome([check(mp, obs, ens.at(mp.T))])


def cmd_lsi(cfg):
    return _inequality(cfg, lsi_check)


def cmd_poincare(cfg):
    return _inequality(cfg, poincare_check)


def cmd_ibp_check(cfg):
    mp = cfg.model_params()
    obs = make_observable(cfg.observable, cfg.points[:1])
    res = verify_ibp(mp, obs, cfg.ibp_mode, lambda t: t, cfg.replicas, cfg.master_seed, n_modes=cfg.n_modes, dt=cfg.dt, u0=_u0(cfg), threads=_threads(cfg))
    v = judge("ibp_identity", mp.T, abs(res.lhs - res.rhs), 0.0, res.stderr_diff, 0.0, {"lhs": res.lhs, "rhs": res.rhs, "z": res.z})
    return _verdict_outcome([v], {"ibp": {"lhs": res.lhs, "rhs": res.rhs, "stderr_lhs": res.stderr_lhs, "stderr_rhs": res.stderr_rhs, "z": res.z}})


def cmd_rg_flow(cfg):
    """Parameters, deterministic covariance bound and C(T) along the schedule (no sampling)."""
    sch = cfg.schedule_obj()
    pts = cfg.points
    _, chat = point_constants(pts)
    rows = []
    for T in cfg.T_grid:
        mp = params_at(sch, T, strict=T > 1)
        M = mp.M
        bound = covariance_bound(mp, pts[0], pts[-1]) if len(pts) > 1 else covariance_bound(mp, pts[0], pts[0])
        try:
            C_T = lsi_constant_C(sch, T, float(chat.max())).C_display
        except ValueError:
            C_T = math.nan
        rows.append({"T": T, "K": mp.K, "gamma": mp.gamma, "epsilon": mp.epsilon, "delta": mp.delta, "rho": mp.rho, "M": M, "cov": math.nan, "cov_stderr": math.nan, "bound": bound, "C_T": C_T})
    return Outcome(RG_COLUMNS, rows)


def cmd_correlations(cfg):
    sch = RGSchedule(cfg.kappa, cfg.gamma_star, cfg.n, "renrela")
    flow = correlation_flow(sch, cfg.site_l, cfg.site_k, cfg.T_grid, cfg.replicas, cfg.master_seed, threads=_threads(cfg))
    verdicts = [judge("lattice_covariance", r.T, abs(r.cov), r.bound, r.cov_stderr, 0.0) for r in flow if r.verdict != "SKIPPED"]
    return Outcome(RG_COLUMNS, [r.row() for r in flow], verdicts)


def cmd_partition(cfg):
    sch = cfg.schedule_obj()
    verdicts = []
    for j, T in enumerate(cfg.T_grid):
        mp = params_at(sch, T, strict=T > 1)
        ens = simulate_ensemble(mp, _u0(cfg), cfg.n_modes, cfg.dt, cfg.master_seed + j, cfg.replicas, threads=_threads(cfg))
        rep = partition_function(mp, ens)
        verdicts.append(judge("partition_upper", T, rep.g, 1.0, rep.g_stderr, 0.0, {"G": rep.G, "Z": rep.Z}))
        verdicts.append(judge("partition_jensen", T, rep.jensen_floor, rep.g, rep.floor_stderr, rep.g_stderr))
        verdicts.append(judge("partition_unit", T, abs(rep.Z - 1.0), 1e-12, 0.0, 0.0))
    return _verdict_outcome(verdicts)


def cmd_ising(cfg):
    N, K, gam = cfg.ising_N, cfg.ising_K, cfg.ising_gamma
    chain = IsingChain(N, K, gam)
    verdicts = []
    tm = log_partition(chain)
    en = math.log(enumerate_partition(chain))
    verdicts.append(judge("transfer_vs_enumeration", math.nan, abs(math.expm1(tm - en)), 1e-12, 0.0, 0.0))
    if N % 3 == 0 and N >= 6:
        a, b = decimation_log_identity(chain)
        verdicts.append(judge("decimation_invariance", math.nan, abs(math.expm1(a - b)), 1e-12, 0.0, 0.0))
    rows = []
    for r in range(1, N):
        ex = two_point(chain, r)
        emp = empirical_two_point(N, K, gam, r, cfg.chains, cfg.sweeps, cfg.master_seed)
        rows.append({"N": N, "K": K, "r": r, "exact": ex, "empirical": emp.value, "stderr": emp.stderr})
        if K == 0:
            verdicts.append(judge(f"sign_dynamics_two_point[r={r}]", math.nan, abs(emp.value - ex), 0.0, emp.stderr, 0.0))
        elif N <= 12:
            st = dynamics_stationary_two_point(N, K, gam, r)
            verdicts.append(judge(f"sign_dynamics_vs_chain_law[r={r}]", math.nan, abs(emp.value - st), 0.0, emp.stderr, 0.0, {"ising_exact": ex}))
    return Outcome(ISING_COLUMNS, rows, verdicts)


DISPATCH = {
    "kernel-check": cmd_kernel_check,
    "drift-check": cmd_drift_check,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "lsi": cmd_lsi,
    "poincare": cmd_poincare,
    "ibp-check": cmd_ibp_check,
    "rg-flow": cmd_rg_flow,
    "partition": cmd_partition,
    "ising": cmd_ising,
    "correlations": cmd_correlations,
}


def _suffix(cfg):
    return ".csv" if cfg.out_format == "csv" else ".json"


def run(cfg: RunConfig) -> int:
    """Execute ``cfg.command``; write the table and the manifest; return the exit status."""
    t0 = time.perf_counter()
    stem = Path(cfg.out_path)
    manifest = {
        "version": __version__,
        "command": cfg.command,
        "config": cfg.echo(),
        "seed": cfg.master_seed,
        "mixing": _rng.mixing_manifest(),
        "threads": _rng.resolve_threads(_threads(cfg)),
    }
    status = 0
    try:
        out = DISPATCH[cfg.command](cfg)
        table = write_table(stem.with_name(stem.name + _suffix(cfg)), out.columns, out.rows, cfg.out_format)
        manifest["table"] = str(table)
        manifest["verdicts"] = [dict(v.row(), info=v.info) for v in out.verdicts]
        manifest.update(out.extra)
        if any(not v.passed for v in out.verdicts):
            status = 1
    except BlowUpError as e:
        manifest["error"] = str(e)
        manifest["blow_up"] = {"step": e.step, "time": e.time, "replica": e.replica}
        print(f"error: {e}", file=sys.stderr)
        status = 2
    except (ValueError, RuntimeError, FloatingPointError) as e:
        manifest["error"] = str(e)
        print(f"error: {e}", file=sys.stderr)
        status = 2
    manifest["wall_time"] = time.perf_counter() - t0
    manifest["exit_status"] = status
    manifest["failed"] = [v["check"] for v in manifest.get("verdicts", []) if v["verdict"] == FAIL]
    write_manifest(stem.with_name(stem.name + ".manifest.json"), manifest)
    return status


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
