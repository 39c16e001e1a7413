import math
import pickle
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivenqubit.control import (ControlTask, OptimizationResult, OptimizerConfig, TaskObjective, bloch, cost,
                                 differential_evolution, get_task, optimize, run_hash, shared_engine_kwargs,
                                 standard_tasks)
from drivenqubit.model import ConfigurationError, QubitState, SystemParams

# coefficients found by longer searches; they show the reset target is reachable
RESET_QME = [1.145, -0.456, 2.407, -0.169]
RESET_NEGF = [1.269, 0.033, 2.125, -0.528]


def sphere(x):
    return float(np.sum((np.asarray(x) - 1.5) ** 2))


def test_bloch_examples():
    assert bloch(QubitState.from_bloch(0, 0, 1)) == pytest.approx((0, 0, 1))
    assert bloch(QubitState(np.eye(2) / 2)) == pytest.approx((0, 0, 0))
    plus_y = np.array([1, 1j]) / np.sqrt(2)
    assert bloch(QubitState(np.outer(plus_y, plus_y.conj()))) == pytest.approx((0, 1, 0))


def test_cost_examples():
    reset, heating, cooling = standard_tasks()
    assert cost(reset, reset.rho_target) == pytest.approx(0, abs=1e-15)
    assert cost(reset, reset.rho_initial) == pytest.approx(np.sqrt(2))
    assert cost(heating, QubitState(np.eye(2) / 2)) == pytest.approx(0, abs=1e-15)
    assert cost(cooling, QubitState(np.eye(2) / 2)) == pytest.approx(0, abs=1e-15)
    assert cost(cooling, QubitState.from_bloch(0.6, 0, 0.8)) == pytest.approx(-1)


def test_standard_tasks():
    tasks = {t.name: t for t in standard_tasks()}
    assert tasks["reset"].control_time == 2 and tasks["heating"].control_time == 6
    assert tasks["cooling"].control_time == 100 and tasks["cooling"].rho_target is None
    np.testing.assert_allclose(tasks["reset"].rho_target.bloch, [-1, 0, 0])
    np.testing.assert_allclose(tasks["heating"].rho_initial.bloch, [0, 0, 1])
    with pytest.raises(ConfigurationError, match="unknown task"):
        get_task("warming")


@pytest.mark.parametrize("kwargs", [
    dict(kind="bogus"), dict(kind="cooling", rho_target=QubitState.from_bloch(1, 0, 0)),
    dict(kind="reset", rho_target=None), dict(control_time=0.0),
])
def test_task_validation(kwargs):
    base = dict(kind="reset", rho_initial=QubitState.from_bloch(0, 0, 1),
                rho_target=QubitState.from_bloch(-1, 0, 0), control_time=2.0)
    with pytest.raises(ConfigurationError):
        ControlTask(**{**base, **kwargs})


@pytest.mark.parametrize("kwargs", [dict(population_size=3), dict(max_iterations=-1), dict(mutation_factor=0),
                                    dict(crossover_rate=1.5), dict(bound=0), dict(num_modes=0)])
def test_optimizer_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        OptimizerConfig(**kwargs)


def test_de_solves_sphere():
    cfg = OptimizerConfig(population_size=15, max_iterations=50, num_modes=4, rng_seed=3)
    x, best, history, evals = differential_evolution(sphere, cfg)
    assert best < 1e-2
    assert len(history) == 51 and evals == 15 * 51
    assert history[0] <= sphere(np.zeros(4))


def test_de_is_deterministic_and_executor_independent():
    cfg = OptimizerConfig(population_size=8, max_iterations=6, rng_seed=11)
    runs = [differential_evolution(sphere, cfg) for _ in range(2)]
    with ThreadPoolExecutor(3) as pool:
        runs.append(differential_evolution(sphere, cfg, executor=pool))
    for x, best, history, _ in runs[1:]:
        assert np.array_equal(x, runs[0][0]) and best == runs[0][1] and history == runs[0][2]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 20))
def test_de_history_monotone_and_box(seed, bound):
    seen = []

    def fun(x):
        seen.append(np.array(x))
        return float(np.sum(np.sin(3 * x) + 0.1 * x**2))

    cfg = OptimizerConfig(population_size=6, max_iterations=5, bound=bound, rng_seed=seed, num_modes=3)
    x, best, history, _ = differential_evolution(fun, cfg)
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert np.all(np.abs(np.array(seen)) <= bound)
    assert np.array_equal(seen[0], np.zeros(3))  # the undriven pulse is always a candidate
    assert best == history[-1] == fun(x)


def test_failed_evaluations_score_infinity(caplog):
    def fragile(x):
        if x[0] > 0:
            raise FloatingPointError("diverged")
        return float(np.sum(x**2))

    cfg = OptimizerConfig(population_size=6, max_iterations=3, rng_seed=2)
    x, best, history, _ = differential_evolution(fragile, cfg)
    assert x[0] <= 0 and math.isfinite(best)
    assert "diverged" in caplog.text


def test_result_json_roundtrip(tmp_path):
    res = OptimizationResult(np.array([0.1, -2.0]), float("inf"), [3.0, float("inf")], "qme", 4, "abc", "reset", 30)
    path = tmp_path / "r.json"
    res.save(path)
    back = OptimizationResult.load(path)
    assert back.to_json() == res.to_json()
    assert math.isinf(back.best_cost)


def test_objective_pickles():
    task = get_task("reset")
    obj = TaskObjective(task, "qme", SystemParams(qme_dt=0.01), 10.0)
    clone = pickle.loads(pickle.dumps(obj))
    assert clone(np.zeros(4)) == obj(np.zeros(4))


def test_run_hash_tracks_inputs():
    task = get_task("reset")
    base = run_hash(SystemParams(), OptimizerConfig(), task)
    assert base == run_hash(SystemParams(), OptimizerConfig(), task)
    assert base != run_hash(SystemParams(beta=2.0), OptimizerConfig(), task)
    assert base != run_hash(SystemParams(), OptimizerConfig(rng_seed=2), task)


def test_engines_agree_without_bath():
    params = SystemParams(gamma0=0.0, qme_dt=1e-3, negf_dt=0.005)
    cfg = OptimizerConfig(population_size=5, max_iterations=2, rng_seed=7)
    task = get_task("reset")
    qme = optimize(task, "qme", cfg, params)
    negf = optimize(task, "negf", cfg, params)
    assert abs(qme.best_cost - negf.best_cost) < 1e-4
    np.testing.assert_allclose(qme.best_coeffs, negf.best_coeffs)
    assert len(qme.cost_history) == cfg.max_iterations + 1


@pytest.mark.parametrize("engine, coeffs", [("qme", RESET_QME), ("negf", RESET_NEGF)])
def test_reset_target_is_reachable(engine, coeffs):
    task = get_task("reset")
    params = SystemParams()
    obj = TaskObjective(task, engine, params, 10.0, shared_engine_kwargs(task, engine, params))
    assert obj(np.array(coeffs)) < 0.05
