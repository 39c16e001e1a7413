"""Control tasks, Bloch-space costs and the differential-evolution pulse optimizer."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from .model import ConfigurationError, DriveSignal, QubitState, SystemParams, bloch_vector
from .negf import params_hash

log = logging.getLogger(__name__)

ENGINES = ("qme", "negf")
TASK_KINDS = ("reset", "heating", "cooling")


@dataclass(frozen=True)
class ControlTask:
    kind: str
    rho_initial: QubitState
    rho_target: QubitState | None
    control_time: float
    name: str = ""

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}")
        self.rho_initial.validate()
        if self.kind == "cooling":
            if self.rho_target is not None:
                raise ConfigurationError("cooling takes no target state")
        elif self.rho_target is None:
            raise ConfigurationError(f"{self.kind} task needs a target state")
        else:
            self.rho_target.validate()
        if not self.control_time > 0:
            raise ConfigurationError("control_time must be > 0")
        if not self.name:
            object.__setattr__(self, "name", self.kind)


def standard_tasks() -> list[ControlTask]:
    up = QubitState.from_bloch(0, 0, 1)
    return [
        ControlTask("reset", up, QubitState.from_bloch(-1, 0, 0), 2.0),
        ControlTask("heating", up, QubitState.from_bloch(0, 0, 0), 6.0),
        ControlTask("cooling", QubitState.from_bloch(0, 0, 0), None, 100.0),
    ]


def get_task(name: str) -> ControlTask:
    for task in standard_tasks():
        if task.name == name:
            return task
    raise ConfigurationError(f"unknown task {name!r}; choose from {[t.name for t in standard_tasks()]}")


def bloch(rho: QubitState) -> tuple[float, float, float]:
    x, y, z = bloch_vector(rho.rho)
    return float(x), float(y), float(z)


def cost(task: ControlTask, rho_final: QubitState) -> float:
    return float(running_cost(task, rho_final.rho[None])[0])


def running_cost(task: ControlTask, rho: np.ndarray) -> np.ndarray:
    """Task cost evaluated on every state of a stack ``(n, 2, 2)``."""
    r = bloch_vector(rho)
    if task.kind == "cooling":
        return -np.sum(r**2, axis=-1)
    return np.linalg.norm(r - task.rho_target.bloch, axis=-1)


@dataclass(frozen=True)
class OptimizerConfig:
    population_size: int = 15
    max_iterations: int = 10
    bound: float = 10.0
    mutation_factor: float = 0.8
    crossover_rate: float = 0.9
    rng_seed: int = 1
    num_modes: int = 4

    def __post_init__(self):
        if self.population_size < 4:
            raise ConfigurationError("population_size must be >= 4")
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")
        if not 0 < self.mutation_factor < 2:
            raise ConfigurationError("mutation_factor must lie in (0, 2)")
        if not 0 <= self.crossover_rate <= 1:
            raise ConfigurationError("crossover_rate must lie in [0, 1]")
        if not self.bound > 0:
            raise ConfigurationError("bound must be > 0")
        if self.num_modes < 1:
            raise ConfigurationError("num_modes must be >= 1")


@dataclass
class OptimizationResult:
    best_coeffs: np.ndarray
    best_cost: float
    cost_history: list[float]
    engine: str
    seed: int
    param_hash: str = ""
    task: str = ""
    evaluations: int = 0
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "engine": self.engine,
            "seed": self.seed,
            "param_hash": self.param_hash,
            "best_coeffs": [float(c) for c in self.best_coeffs],
            "best_cost": _json_float(self.best_cost),
            "cost_history": [_json_float(c) for c in self.cost_history],
            "evaluations": self.evaluations,
        }

    @classmethod
    def from_json(cls, doc: dict) -> OptimizationResult:
        return cls(
            np.array(doc["best_coeffs"], dtype=float),
            float(doc["best_cost"]),
            [float(c) for c in doc["cost_history"]],
            doc["engine"],
            int(doc["seed"]),
            doc.get("param_hash", ""),
            doc.get("task", ""),
            int(doc.get("evaluations", 0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> OptimizationResult:
        return cls.from_json(json.loads(Path(path).read_text()))


def _json_float(x: float):
    return float(x) if math.isfinite(x) else str(x)


def _safe(fun: Callable[[np.ndarray], float], x: np.ndarray) -> float:
    try:
        value = float(fun(x))
    except Exception as exc:  # noqa: BLE001 - any failed evaluation is scored, not fatal
        log.warning("candidate %s failed: %s", np.array2string(x, precision=4), exc)
        return math.inf
    return value if not math.isnan(value) else math.inf


def differential_evolution(
    fun: Callable[[np.ndarray], float],
    config: OptimizerConfig,
    executor: Executor | None = None,
    progress: Callable[[int, float], None] | None = None,
):
    """DE/rand/1/bin on ``[-bound, bound]^M``.

    Member 0 of the initial population is the origin.  Random numbers are
    drawn only between evaluation batches, so ``executor`` never changes the
    outcome.  Returns ``(best_x, best_cost, history, evaluations)``.
    """
    rng = np.random.default_rng(config.rng_seed)
    n, dim, b = config.population_size, config.num_modes, config.bound
    pop = rng.uniform(-b, b, size=(n, dim))
    pop[0] = 0.0
    evaluate = partial(_evaluate_batch, fun, executor)
    scores = evaluate(pop)
    history = [float(scores.min())]
    for gen in range(config.max_iterations):
        trials = np.empty_like(pop)
        for i in range(n):
            others = [j for j in range(n) if j != i]
            a, bb, c = pop[rng.choice(others, size=3, replace=False)]
            mutant = a + config.mutation_factor * (bb - c)
            cross = rng.random(dim) < config.crossover_rate
            cross[rng.integers(dim)] = True
            trials[i] = np.clip(np.where(cross, mutant, pop[i]), -b, b)
        trial_scores = evaluate(trials)
        better = trial_scores <= scores
        pop[better] = trials[better]
        scores[better] = trial_scores[better]
        history.append(float(scores.min()))
        if progress is not None:
            progress(gen + 1, history[-1])
    best = int(np.argmin(scores))
    return pop[best].copy(), float(scores[best]), history, n * (config.max_iterations + 1)


def _evaluate_batch(fun, executor, xs: np.ndarray) -> np.ndarray:
    if executor is None:
        return np.array([_safe(fun, x) for x in xs])
    return np.array(list(executor.map(partial(_safe, fun), list(xs))))


def simulate(task: ControlTask, engine: str, params: SystemParams, signal: DriveSignal, **kwargs):
    """Run one engine over ``[0, t_c]`` from the task's initial state."""
    if engine == "qme":
        from .qme import qme_trajectory

        return qme_trajectory(params, signal, task.rho_initial, task.control_time, **kwargs)
    if engine == "negf":
        from .negf import negf_trajectory

        return negf_trajectory(params, signal, task.rho_initial, task.control_time, **kwargs)
    raise ConfigurationError(f"unknown engine {engine!r}")


@dataclass
class TaskObjective:
    """Picklable cost-of-coefficients for one task and engine."""

    task: ControlTask
    engine: str
    params: SystemParams
    bound: float
    engine_kwargs: dict = field(default_factory=dict)

    def __call__(self, coeffs: np.ndarray) -> float:
        signal = DriveSignal(coeffs, self.task.control_time, self.bound)
        traj = simulate(self.task, self.engine, self.params, signal, **self.engine_kwargs)
        return cost(self.task, traj.final_state)


def shared_engine_kwargs(task: ControlTask, engine: str, params: SystemParams) -> dict:
    """Precompute what every candidate of a run can share."""
    if engine == "qme":
        from .qme import TransitionRates

        return {"rates": TransitionRates(params)}
    if engine == "negf":
        from .model import build_bath_correlation

        return {"bath": build_bath_correlation(params, task.control_time)}
    raise ConfigurationError(f"unknown engine {engine!r}")


def optimize(
    task: ControlTask,
    engine: str,
    config: OptimizerConfig,
    params: SystemParams | None = None,
    *,
    engine_kwargs: dict | None = None,
    executor: Executor | None = None,
    progress=None,
) -> OptimizationResult:
    """Differential-evolution search for the pulse minimising the task cost."""
    params = params or SystemParams()
    if engine not in ENGINES:
        raise ConfigurationError(f"unknown engine {engine!r}")
    kwargs = {**(engine_kwargs or {}), **shared_engine_kwargs(task, engine, params)}
    objective = TaskObjective(task, engine, params, config.bound, kwargs)
    x, best, history, evals = differential_evolution(objective, config, executor, progress)
    return OptimizationResult(x, best, history, engine, config.rng_seed,
                              param_hash=run_hash(params, config, task), task=task.name, evaluations=evals)


def run_hash(params: SystemParams, config: OptimizerConfig, task: ControlTask) -> str:
    doc = {"params": params_hash(params), "optimizer": asdict(config), "task": task.name,
           "t_c": task.control_time}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]
