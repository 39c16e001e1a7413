"""Command-line front end: simulate, optimize, compare, tasks."""
from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack
from pathlib import Path

import numpy as np

from . import records
from .config import RunConfig, example_config, load_config
from .control import ControlTask, OptimizationResult, optimize, run_hash, running_cost, simulate, standard_tasks
from .model import ConfigurationError, DriveSignal

log = logging.getLogger("drivenqubit")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
# NEGF optimisations beyond this control time run for hours
LONG_CONTROL_TIME = 20.0


class MissingArtifactError(RuntimeError):
    pass


def run_engine(cfg: RunConfig, task: ControlTask, engine: str, coeffs, shared: dict | None = None):
    """One trajectory with its thermodynamic ledger filled in."""
    params = cfg.params
    signal = DriveSignal(coeffs, task.control_time, cfg.get("control", "bound"))
    kwargs = dict(cfg.engine_kwargs(engine))
    kwargs.update(shared or {})
    traj = simulate(task, engine, params, signal, **kwargs)
    if engine == "negf":
        from .thermo import attach_ledger

        traj = attach_ledger(traj, params)
    return traj


def _stem(task: ControlTask) -> str:
    return task.name


def _check_long(cfg: RunConfig, task: ControlTask, engines) -> None:
    if "negf" in engines and task.control_time > LONG_CONTROL_TIME and not cfg.long:
        raise ConfigurationError(
            f"NEGF optimisation with t_c = {task.control_time:g} takes hours; pass --long to run it")


def _executor(cfg: RunConfig, stack: ExitStack):
    workers = cfg.get("control", "workers")
    return stack.enter_context(ProcessPoolExecutor(workers)) if workers > 1 else None


# -- subcommands --------------------------------------------------------

def cmd_tasks(cfg: RunConfig) -> int:
    for task in standard_tasks():
        target = "-" if task.rho_target is None else "(%g, %g, %g)" % tuple(task.rho_target.bloch)
        print(f"{task.name:8s} kind={task.kind:8s} t_c={task.control_time:<6g} "
              f"initial=({', '.join(f'{v:g}' for v in task.rho_initial.bloch)}) target={target}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    task, out = cfg.task, cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    config = cfg.resolved()
    summary = {}
    panels, paths = {}, {}
    for engine in cfg.engines:
        t0 = time.perf_counter()
        traj = run_engine(cfg, task, engine, cfg.coeffs)
        elapsed = time.perf_counter() - t0
        name = f"{_stem(task)}_{engine}_trajectory.csv"
        if "csv" in cfg.formats:
            records.write_trajectory(out / name, traj, config)
        if engine == "negf" and cfg.get("negf", "dump_gf"):
            traj.extra["gf"].dump(out / f"{_stem(task)}_negf_gf.npz", cfg.params)
        r = running_cost(task, traj.rho)
        summary[engine] = {"final_cost": float(r[-1]), "final_bloch": [float(v) for v in traj.bloch[-1]],
                           "diagnostics": list(traj.diagnostics)}
        panels[engine] = _panel_columns(traj, r)
        paths[engine] = traj.bloch
        log.info("%s %s: final cost %.6g (%.2f s)", task.name, engine, r[-1], elapsed)
        print(f"{engine}: final cost {r[-1]:.6g} -> {out / name}")
    if "json" in cfg.formats:
        records.write_json(out / f"{_stem(task)}_simulate.json",
                           {"task": task.name, "coeffs": [float(c) for c in cfg.coeffs], "summary": summary},
                           config)
    if "png" in cfg.formats:
        _figures(out, f"{_stem(task)}_simulate", panels, paths, task.name)
    return EXIT_OK


def _optimize_one(cfg: RunConfig, task: ControlTask, engine: str, executor) -> OptimizationResult:
    opt = cfg.optimizer

    def progress(gen, best):
        log.info("%s %s: generation %d/%d best %.6g", task.name, engine, gen, opt.max_iterations, best)

    return optimize(task, engine, opt, cfg.params, engine_kwargs=cfg.engine_kwargs(engine),
                    executor=executor, progress=progress)


def _result_path(out: Path, task: ControlTask, engine: str) -> Path:
    return out / f"{_stem(task)}_{engine}_result.json"


def _save_result(cfg: RunConfig, task: ControlTask, result: OptimizationResult, elapsed: float) -> None:
    out = cfg.out_dir
    records.write_json(_result_path(out, task, result.engine), result.to_json(), cfg.resolved(),
                       volatile={"runtime_s": round(elapsed, 3)})
    traj = run_engine(cfg, task, result.engine, result.best_coeffs)
    records.write_trajectory(out / f"{_stem(task)}_{result.engine}_best.csv", traj, cfg.resolved())


def cmd_optimize(cfg: RunConfig) -> int:
    task, out = cfg.task, cfg.out_dir
    _check_long(cfg, task, cfg.engines)
    out.mkdir(parents=True, exist_ok=True)
    with ExitStack() as stack:
        executor = _executor(cfg, stack)
        for engine in cfg.engines:
            t0 = time.perf_counter()
            result = _optimize_one(cfg, task, engine, executor)
            _save_result(cfg, task, result, time.perf_counter() - t0)
            print(f"{engine}: best cost {result.best_cost:.6g} coeffs {np.array2string(result.best_coeffs, precision=6)}")
    return EXIT_OK


def _load_result(cfg: RunConfig, task: ControlTask, engine: str) -> OptimizationResult | None:
    path = _result_path(cfg.out_dir, task, engine)
    if not path.exists():
        return None
    doc = records.read_json(path)
    result = OptimizationResult.from_json(doc)
    if result.param_hash != run_hash(cfg.params, cfg.optimizer, task):
        log.info("%s was produced by a different configuration; ignoring it", path)
        return None
    return result


def cmd_compare(cfg: RunConfig, reuse_only: bool = False) -> int:
    task, out = cfg.task, cfg.out_dir
    engines = ("qme", "negf")
    out.mkdir(parents=True, exist_ok=True)
    results, runtimes = {}, {}
    for engine in engines:
        results[engine] = _load_result(cfg, task, engine)
    missing = [str(_result_path(out, task, e)) for e, r in results.items() if r is None]
    if missing and reuse_only:
        raise MissingArtifactError("missing optimisation results: " + ", ".join(missing))
    if missing:
        _check_long(cfg, task, [e for e, r in results.items() if r is None])
    with ExitStack() as stack:
        executor = _executor(cfg, stack)
        for engine in engines:
            if results[engine] is None:
                t0 = time.perf_counter()
                results[engine] = _optimize_one(cfg, task, engine, executor)
                runtimes[engine] = time.perf_counter() - t0
                _save_result(cfg, task, results[engine], runtimes[engine])

    trajs = {e: run_engine(cfg, task, e, results[e].best_coeffs) for e in engines}
    grid = trajs["negf"].times
    config = cfg.resolved()
    stem = _stem(task)
    panels, paths, panel_files, bloch_files, summary = {}, {}, {}, {}, {}
    for engine, traj in trajs.items():
        cols = _resample(_panel_columns(traj, running_cost(task, traj.rho)), grid)
        xyz = np.column_stack([np.interp(grid, traj.times, traj.bloch[:, k]) for k in range(3)])
        panels[engine], paths[engine] = cols, xyz
        panel_files[engine] = f"{stem}_{engine}_panels.csv"
        bloch_files[engine] = f"{stem}_{engine}_bloch.csv"
        records.write_table(out / panel_files[engine], records.PANEL_COLUMNS,
                            np.column_stack([cols[c] for c in records.PANEL_COLUMNS]), config, {"engine": engine})
        records.write_table(out / bloch_files[engine], records.BLOCH_COLUMNS,
                            np.column_stack([grid, xyz]), config, {"engine": engine})
        summary[engine] = {"best_cost": results[engine].best_cost,
                           "final_cost": float(cols["R"][-1]),
                           "best_coeffs": [float(c) for c in results[engine].best_coeffs],
                           "min_radius": float(np.linalg.norm(traj.bloch, axis=1).min())}
    report = {"task": task.name, "control_time": task.control_time, "summary": summary,
              "panels": panel_files, "bloch": bloch_files}
    records.write_json(out / f"{stem}_compare.json", report, config,
                       volatile={"runtime_s": {e: round(t, 3) for e, t in runtimes.items()}})
    if "py" in cfg.formats:
        from .plotting import write_plot_scripts

        write_plot_scripts(out, stem, panel_files, bloch_files)
    if "png" in cfg.formats:
        _figures(out, stem, panels, paths, task.name)
    for engine in engines:
        print(f"{engine}: best cost {summary[engine]['best_cost']:.6g}")
    return EXIT_OK


def _panel_columns(traj, r) -> dict[str, np.ndarray]:
    return {"t": traj.times, "eps": np.asarray(traj.eps), "dSi": traj.entropy_production,
            "S": traj.entropy, "R": r}


def _resample(cols: dict, grid: np.ndarray) -> dict:
    if len(cols["t"]) == len(grid) and np.allclose(cols["t"], grid):
        return dict(cols)
    out = {"t": grid}
    for key, values in cols.items():
        if key != "t":
            out[key] = np.interp(grid, cols["t"], values)
    return out


def _figures(out: Path, stem: str, panels, paths, title: str) -> None:
    from .plotting import bloch_figure, panel_figure

    panel_figure(panels, out / f"{stem}_panels.png", title)
    bloch_figure(paths, out / f"{stem}_bloch.png", title)


# -- entry point --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--engine", choices=("qme", "negf", "both"), help="override control.engines")
    common.add_argument("--task", help="override control.task")
    common.add_argument("--seed", type=int, help="override control.seed")
    common.add_argument("--out", type=Path, help="override output.directory")
    common.add_argument("--long", action="store_true", help="allow multi-hour NEGF optimisations")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="drivenqubit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run fixed pulses and write trajectories")
    sub.add_parser("optimize", parents=[common], help="optimise pulses with differential evolution")
    compare = sub.add_parser("compare", parents=[common], help="overlay optimised QME and NEGF runs")
    compare.add_argument("--from-results", action="store_true",
                         help="only use existing optimisation results in the output directory")
    sub.add_parser("tasks", parents=[common], help="list built-in control tasks")
    sub.add_parser("example-config", parents=[common], help="print an INI file with every default")
    return parser


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    from .config import validate

    if args.engine:
        cfg = cfg.with_overrides("control", "engines", ("qme", "negf") if args.engine == "both" else (args.engine,))
    if args.task:
        cfg = cfg.with_overrides("control", "task", args.task)
    if args.seed is not None:
        cfg = cfg.with_overrides("control", "seed", args.seed)
    if args.out:
        cfg = cfg.with_overrides("output", "directory", str(args.out))
    cfg.long = args.long
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    if args.long:
        level = min(level, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    warnings.simplefilter("default")
    try:
        cfg = _apply_flags(load_config(args.config), args)
        if args.command == "tasks":
            return cmd_tasks(cfg)
        if args.command == "example-config":
            print(example_config())
            return EXIT_OK
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "optimize":
            return cmd_optimize(cfg)
        return cmd_compare(cfg, reuse_only=args.from_results)
    except ConfigurationError as exc:
        print(f"drivenqubit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map every runtime failure to exit 1
        log.debug("traceback", exc_info=True)
        print(f"drivenqubit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
