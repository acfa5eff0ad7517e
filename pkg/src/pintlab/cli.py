"""Command-line benchmark runner for the time-parallel integrators.

Configs are flat ``key = value`` files: blank lines and ``#`` comments are
ignored, keys are dotted paths, list values are comma-separated. Example::

    system.name      = fhn
    pint.n_intervals = 40
    pint.epsilon     = 5e-7
    coarse.order     = 2
    coarse.steps     = 4
    fine.order       = 4
    fine.steps       = 4000
    corrector.kind   = parareal, nngparareal
    corrector.m      = 15

Commands:

* ``run CONFIG``: one run per corrector kind; writes report.json,
  solution.csv, convergence.csv and speedup.csv per corrector.
* ``sweep-m CONFIG``: grid over ``sweep.m`` x ``sweep.seeds`` with the
  nngparareal corrector; writes sweep_m.csv.
* ``sweep-coarse CONFIG``: grid over ``sweep.coarse_steps`` x corrector
  kinds; writes sweep_coarse.csv.
* ``report DIR``: summarize previously written report.json files.

Exit codes: 0 all runs converged, 1 bad config or usage, 2 at least one
run stopped on its iteration cap or wallclock budget.

Thread count resolution: ``--jobs`` beats the ``PINT_LAB_THREADS``
environment variable, which beats ``run.jobs`` in the config. Identical
configs and seeds give byte-identical solution CSVs at any thread count.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import SUBSET_STRATEGIES
from .engine import CORRECTORS, GpSettings, PintConfig, RunReport, normalized_setup, run, run_serial
from .integrators import SUPPORTED_ORDERS, SolverSpec
from .perf import empirical_speedup
from .systems import SYSTEM_BUILDERS, NormalizationMap, make_system

__all__ = ["main"]


class ConfigError(Exception):
    """Raised for malformed or inconsistent config input."""


# key -> (parser tag, default); required keys have a _REQUIRED default.
_REQUIRED = object()
_SCHEMA = {
    "system.name": ("str", _REQUIRED),
    "pint.n_intervals": ("int", _REQUIRED),
    "pint.epsilon": ("float", 5e-7),
    "pint.max_iterations": ("int", None),
    "pint.wallclock_budget": ("float", None),
    "coarse.order": ("int", _REQUIRED),
    "coarse.steps": ("int", _REQUIRED),
    "fine.order": ("int", _REQUIRED),
    "fine.steps": ("int", _REQUIRED),
    "corrector.kind": ("str_list", ["parareal"]),
    "corrector.m": ("int", 15),
    "corrector.strategy": ("str", "nearest"),
    "corrector.probes": ("str_list", []),
    "gp.n_start": ("int", 10),
    "gp.n_start_warm": ("int", 2),
    "gp.maxiter": ("int", 200),
    "gp.ftol": ("float", 1e-6),
    "gp.warm_start": ("bool", True),
    "gp.full_restart_max_n": ("int", 200),
    "gp.nugget_grid": ("float_list", None),
    "normalize.enabled": ("bool", True),
    "normalize.margin": ("float", 0.1),
    "run.seed": ("int", 0),
    "run.jobs": ("int", 1),
    "run.serial_baseline": ("bool", False),
    "output.dir": ("str", "pint-lab-out"),
    "sweep.m": ("int_list", None),
    "sweep.seeds": ("int_list", None),
    "sweep.coarse_steps": ("int_list", None),
}

_BOOL_WORDS = {"true": True, "yes": True, "on": True, "false": False, "no": False, "off": False}


def _parse_scalar(tag: str, raw: str, key: str, line_no: int):
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            word = raw.lower()
            if word not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[word]
        if tag == "str":
            return raw
        items = [part.strip() for part in raw.split(",") if part.strip()]
        if tag == "str_list":
            return items
        if tag == "int_list":
            return [int(part) for part in items]
        if tag == "float_list":
            return [float(part) for part in items]
    except ValueError:
        raise ConfigError(f"line {line_no}: cannot parse {key} value {raw!r} as {tag}") from None
    raise ConfigError(f"line {line_no}: unhandled type {tag} for {key}")


def load_config(path) -> dict:
    """Parse and type-check a config file; unknown keys are errors."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = dict()
    system_params = dict()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not raw:
            raise ConfigError(f"line {line_no}: empty value for {key}")
        if key in values or key in system_params:
            raise ConfigError(f"line {line_no}: duplicate key {key}")
        if key in _SCHEMA:
            values[key] = _parse_scalar(_SCHEMA[key][0], raw, key, line_no)
        elif key.startswith("system."):
            # Free-form system parameter: integer literals stay integers
            # (grid sizes, seeds), everything else becomes a float.
            name = key[len("system.") :]
            try:
                system_params[name] = int(raw)
            except ValueError:
                try:
                    system_params[name] = float(raw)
                except ValueError:
                    raise ConfigError(
                        f"line {line_no}: system parameter {key} must be numeric, got {raw!r}"
                    ) from None
        else:
            raise ConfigError(f"line {line_no}: unknown key {key}")
    for key, (_, default) in _SCHEMA.items():
        if key not in values:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key}")
            values[key] = default if not isinstance(default, list) else list(default)
    values["system.params"] = system_params
    _validate_config(values)
    return values


def _validate_config(cfg: dict) -> None:
    if cfg["system.name"] not in SYSTEM_BUILDERS:
        known = ", ".join(sorted(SYSTEM_BUILDERS))
        raise ConfigError(f"unknown system {cfg['system.name']!r}; known systems: {known}")
    for side in ("coarse", "fine"):
        if cfg[f"{side}.order"] not in SUPPORTED_ORDERS:
            raise ConfigError(
                f"{side}.order must be one of {sorted(SUPPORTED_ORDERS)}, got {cfg[f'{side}.order']}"
            )
        if cfg[f"{side}.steps"] < 1:
            raise ConfigError(f"{side}.steps must be positive")
    for kind in cfg["corrector.kind"]:
        if kind not in CORRECTORS:
            raise ConfigError(f"unknown corrector {kind!r}; choose from {CORRECTORS}")
    for kind in cfg["corrector.probes"]:
        if kind not in CORRECTORS:
            raise ConfigError(f"unknown probe corrector {kind!r}")
    if cfg["corrector.strategy"] not in SUBSET_STRATEGIES:
        raise ConfigError(
            f"unknown corrector.strategy {cfg['corrector.strategy']!r}; "
            f"choose from {SUBSET_STRATEGIES}"
        )
    if cfg["pint.n_intervals"] < 2:
        raise ConfigError("pint.n_intervals must be at least 2")
    if not cfg["pint.epsilon"] > 0:
        raise ConfigError("pint.epsilon must be positive")
    if cfg["run.seed"] < 0:
        raise ConfigError("run.seed must be nonnegative")


@dataclasses.dataclass
class _Setup:
    """A config resolved into runnable pieces."""

    cfg: dict
    system: object
    nmap: NormalizationMap | None
    coarse: SolverSpec
    fine: SolverSpec
    seed: int
    jobs: int
    out_dir: Path


def _resolve_jobs(args, cfg: dict) -> int:
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.jobs
    env = os.environ.get("PINT_LAB_THREADS")
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigError(f"PINT_LAB_THREADS must be an integer, got {env!r}") from None
        if jobs < 1:
            raise ConfigError("PINT_LAB_THREADS must be at least 1")
        return jobs
    return cfg["run.jobs"]


def _prepare(args) -> _Setup:
    cfg = load_config(args.config)
    params = dict(cfg["system.params"])
    t0 = params.pop("t0", None)
    t1 = params.pop("t1", None)
    if (t0 is None) != (t1 is None):
        raise ConfigError("system.t0 and system.t1 must be given together")
    if t0 is not None:
        params["t_span"] = (float(t0), float(t1))
    try:
        system = make_system(cfg["system.name"], **params)
    except TypeError as exc:
        raise ConfigError(f"bad system parameters: {exc}") from None
    coarse = SolverSpec(cfg["coarse.order"], cfg["coarse.steps"])
    fine = SolverSpec(cfg["fine.order"], cfg["fine.steps"])
    nmap = None
    if cfg["normalize.enabled"]:
        system, nmap = normalized_setup(
            system, cfg["pint.n_intervals"], coarse, margin=cfg["normalize.margin"]
        )
    seed = args.seed if args.seed is not None else cfg["run.seed"]
    out_dir = Path(args.out) if args.out else Path(cfg["output.dir"])
    return _Setup(cfg, system, nmap, coarse, fine, seed, _resolve_jobs(args, cfg), out_dir)


def _gp_settings(cfg: dict) -> GpSettings:
    kwargs = dict(
        n_start=cfg["gp.n_start"],
        n_start_warm=cfg["gp.n_start_warm"],
        maxiter=cfg["gp.maxiter"],
        ftol=cfg["gp.ftol"],
        warm_start=cfg["gp.warm_start"],
        full_restart_max_n=cfg["gp.full_restart_max_n"],
    )
    if cfg["gp.nugget_grid"]:
        kwargs["nugget_grid"] = tuple(cfg["gp.nugget_grid"])
    return GpSettings(**kwargs)


def _pint_config(setup: _Setup, corrector: str, *, seed=None, m=None, coarse=None) -> PintConfig:
    cfg = setup.cfg
    return PintConfig(
        system=setup.system,
        n_intervals=cfg["pint.n_intervals"],
        coarse=coarse or setup.coarse,
        fine=setup.fine,
        epsilon=cfg["pint.epsilon"],
        corrector=corrector,
        m=m if m is not None else cfg["corrector.m"],
        subset_strategy=cfg["corrector.strategy"],
        gp=_gp_settings(cfg),
        seed=seed if seed is not None else setup.seed,
        max_iterations=cfg["pint.max_iterations"],
        wallclock_budget=cfg["pint.wallclock_budget"],
        jobs=setup.jobs,
        probe_correctors=tuple(cfg["corrector.probes"]),
    )


def _denormalize(setup: _Setup, states: np.ndarray) -> np.ndarray:
    return setup.nmap.from_unit(states) if setup.nmap is not None else states


def _write_solution(path: Path, times: np.ndarray, states: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"u_{j}" for j in range(states.shape[1])])
        for t, row in zip(times, states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _write_convergence(path: Path, report: RunReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "iteration",
                "frontier",
                "new_records",
                "t_fine_single",
                "t_fine_sweep",
                "t_coarse_single",
                "t_model",
            ]
        )
        for idx in range(report.k_iterations):
            writer.writerow(
                [
                    idx + 1,
                    report.frontier[idx],
                    report.new_records[idx],
                    repr(float(report.t_fine_single[idx])),
                    repr(float(report.t_fine_sweep[idx])),
                    repr(float(report.t_coarse_single[idx])),
                    repr(float(report.t_model[idx])),
                ]
            )


def _write_speedup(path: Path, estimate) -> None:
    fields = dataclasses.asdict(estimate)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields.keys())
        writer.writerow(["" if v is None else repr(float(v)) if isinstance(v, float) else v for v in fields.values()])


def _write_probe_errors(path: Path, report: RunReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe", "iteration", "interval", "error"])
        for probe, per_iteration in report.prediction_errors.items():
            for idx, errs in enumerate(per_iteration):
                start = report.frontier[idx - 1] + 1 if idx else 1
                for offset, err in enumerate(errs):
                    writer.writerow([probe, idx + 1, start + offset, repr(float(err))])


def _report_payload(setup: _Setup, report: RunReport, estimate) -> dict:
    payload = dataclasses.asdict(report)
    payload["times"] = [float(v) for v in report.times]
    payload["states"] = [[float(v) for v in row] for row in _denormalize(setup, report.states)]
    payload.pop("history")
    payload.pop("prediction_errors")
    for key in ("t_fine_single", "t_fine_sweep", "t_coarse_single", "t_model"):
        payload[key] = [None if not np.isfinite(v) else float(v) for v in payload[key]]
    payload["speedup"] = {
        key: val for key, val in dataclasses.asdict(estimate).items() if not key.startswith("_")
    }
    payload["config"] = {k: v for k, v in setup.cfg.items() if k != "system.params"}
    payload["config"]["system.params"] = dict(setup.cfg["system.params"])
    payload["normalized"] = setup.nmap is not None
    return payload


def _execute_one(setup: _Setup, corrector: str, out_sub: Path, t_serial=None, **overrides):
    report = run(_pint_config(setup, corrector, **overrides))
    estimate = empirical_speedup(report, t_serial=t_serial)
    out_sub.mkdir(parents=True, exist_ok=True)
    _write_solution(out_sub / "solution.csv", report.times, _denormalize(setup, report.states))
    _write_convergence(out_sub / "convergence.csv", report)
    _write_speedup(out_sub / "speedup.csv", estimate)
    if report.prediction_errors:
        _write_probe_errors(out_sub / "probe_errors.csv", report)
    with open(out_sub / "report.json", "w") as fh:
        json.dump(_report_payload(setup, report, estimate), fh, indent=2)
    return report, estimate


def _summary_line(tag: str, report: RunReport, estimate) -> str:
    status = "converged" if report.converged else (
        "budget exceeded" if report.budget_exceeded else "iteration cap"
    )
    return (
        f"{tag}: K={report.k_iterations} ({status}), store={report.store_size}, "
        f"wallclock={report.wallclock:.2f}s, S_est={estimate.s_estimate:.2f} "
        f"(bound {estimate.s_upper_bound:.2f})"
    )


def cmd_run(args) -> int:
    setup = _prepare(args)
    t_serial = None
    if setup.cfg["run.serial_baseline"]:
        _, _, t_serial = run_serial(setup.system, setup.cfg["pint.n_intervals"], setup.fine)
        print(f"serial fine baseline: {t_serial:.2f}s")
    worst = 0
    for corrector in setup.cfg["corrector.kind"]:
        report, estimate = _execute_one(
            setup, corrector, setup.out_dir / corrector, t_serial=t_serial
        )
        print(_summary_line(corrector, report, estimate))
        if not report.converged:
            worst = 2
    print(f"outputs in {setup.out_dir}")
    return worst


def cmd_sweep_m(args) -> int:
    setup = _prepare(args)
    m_values = setup.cfg["sweep.m"]
    if not m_values:
        raise ConfigError("sweep-m needs sweep.m in the config")
    seeds = setup.cfg["sweep.seeds"] or [setup.seed]
    corrector = "nngparareal"
    rows = []
    worst = 0
    for m in m_values:
        for seed in seeds:
            report = run(_pint_config(setup, corrector, seed=seed, m=m))
            estimate = empirical_speedup(report)
            rows.append(
                [m, seed, report.k_iterations, report.converged, repr(float(report.wallclock)), repr(float(estimate.s_estimate))]
            )
            print(f"m={m} seed={seed}: K={report.k_iterations} converged={report.converged}")
            if not report.converged:
                worst = 2
    setup.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = setup.out_dir / "sweep_m.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "seed", "k_iterations", "converged", "wallclock", "s_estimate"])
        writer.writerows(rows)
    print(f"wrote {out_path}")
    return worst


def cmd_sweep_coarse(args) -> int:
    setup = _prepare(args)
    step_values = setup.cfg["sweep.coarse_steps"]
    if not step_values:
        raise ConfigError("sweep-coarse needs sweep.coarse_steps in the config")
    rows = []
    worst = 0
    for steps in step_values:
        coarse = SolverSpec(setup.cfg["coarse.order"], steps)
        # Re-derive the coordinate scaling: the coarse sketch that defines
        # it changes with the coarse solver itself.
        sub = dataclasses.replace(setup)
        if setup.cfg["normalize.enabled"]:
            raw = make_system(setup.cfg["system.name"], **_raw_params(setup.cfg))
            sub_system, sub_nmap = normalized_setup(
                raw, setup.cfg["pint.n_intervals"], coarse, margin=setup.cfg["normalize.margin"]
            )
            sub = dataclasses.replace(setup, system=sub_system, nmap=sub_nmap)
        for corrector in setup.cfg["corrector.kind"]:
            report = run(_pint_config(sub, corrector, coarse=coarse))
            estimate = empirical_speedup(report)
            # A run that hit its cap has no meaningful K or speed-up; those
            # cells are left empty rather than reporting the cap value.
            rows.append(
                [
                    steps,
                    corrector,
                    report.k_iterations if report.converged else "",
                    report.converged,
                    repr(float(report.wallclock)),
                    repr(float(estimate.s_estimate)) if report.converged else "",
                ]
            )
            print(
                f"coarse.steps={steps} {corrector}: K={report.k_iterations} "
                f"converged={report.converged}"
            )
            if not report.converged:
                worst = 2
    setup.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = setup.out_dir / "sweep_coarse.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["coarse_steps", "corrector", "k_iterations", "converged", "wallclock", "s_estimate"]
        )
        writer.writerows(rows)
    print(f"wrote {out_path}")
    return worst


def _raw_params(cfg: dict) -> dict:
    params = dict(cfg["system.params"])
    t0 = params.pop("t0", None)
    t1 = params.pop("t1", None)
    if t0 is not None and t1 is not None:
        params["t_span"] = (float(t0), float(t1))
    return params


def cmd_report(args) -> int:
    root = Path(args.dir)
    found = sorted(root.glob("**/report.json"))
    if not found:
        print(f"no report.json files under {root}", file=sys.stderr)
        return 1
    print(f"{'run':<24} {'corrector':<14} {'K':>4} {'converged':>10} {'S_est':>8} {'S_max':>8}")
    for path in found:
        with open(path) as fh:
            payload = json.load(fh)
        speed = payload.get("speedup", {})
        print(
            f"{path.parent.name:<24} {payload['corrector']:<14} {payload['k_iterations']:>4} "
            f"{str(payload['converged']):>10} {speed.get('s_estimate', float('nan')):>8.2f} "
            f"{speed.get('s_upper_bound', float('nan')):>8.2f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pint-lab", description="Benchmark runner for time-parallel ODE/PDE integration."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="path to a key = value config file")
        p.add_argument("--jobs", type=int, default=None, help="worker threads for fine sweeps")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=None, help="override output.dir")

    add_common(sub.add_parser("run", help="run each configured corrector once"))
    add_common(sub.add_parser("sweep-m", help="grid over sweep.m and sweep.seeds"))
    add_common(sub.add_parser("sweep-coarse", help="grid over sweep.coarse_steps"))
    report_p = sub.add_parser("report", help="summarize written report.json files")
    report_p.add_argument("dir", help="output directory to scan")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "sweep-m": cmd_sweep_m,
        "sweep-coarse": cmd_sweep_coarse,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
