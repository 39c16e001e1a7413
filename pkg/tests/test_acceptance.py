"""Top-level acceptance criteria; each records one PASS/FAIL line in the session summary.

Criteria that the model cannot meet are kept at full strength and marked strict xfail.
"""
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from drivenqubit.control import (OptimizerConfig, differential_evolution, get_task, optimize, running_cost,
                                 shared_engine_kwargs, simulate)
from drivenqubit.model import (DriveSignal, QubitState, SystemParams, bloch_vector, build_bath_correlation,
                               hamiltonian)
from drivenqubit.negf import negf_trajectory
from drivenqubit.qme import qme_trajectory
from drivenqubit.thermo import PopulationWarning, attach_ledger, bubble, particle_flux_direct

BUDGET = OptimizerConfig(population_size=15, max_iterations=10, bound=10.0, num_modes=4, rng_seed=1)


def exact_bloch(params, signal, rho0, times, substeps=200):
    """Midpoint-exponential propagation with closed-form 2x2 exponentials."""
    U = np.eye(2, dtype=complex)
    out = [bloch_vector(rho0.rho)]
    for t0, t1 in zip(times[:-1], times[1:]):
        h = (t1 - t0) / substeps
        for k in range(substeps):
            H = hamiltonian(params, signal(t0 + (k + 0.5) * h))
            w, v = np.linalg.eigh(H)
            U = (v * np.exp(-1j * w * h)) @ v.conj().T @ U
        out.append(bloch_vector(U @ rho0.rho @ U.conj().T))
    return np.array(out)


_unitary_worst = [0.0, 0.0]


@settings(max_examples=6, deadline=None, derandomize=True,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4),
       st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(lambda r: 0 < np.linalg.norm(r) <= 1))
def _unitary_case(coeffs, r):
    params = SystemParams(gamma0=0.0)
    signal = DriveSignal(coeffs, 2.0)
    rho0 = QubitState.from_bloch(*r)
    qme = qme_trajectory(params, signal, rho0)
    negf = negf_trajectory(params, signal, rho0, t_end=2.0)
    ref = exact_bloch(params, signal, rho0, negf.times[::20], substeps=400)
    q = np.linalg.norm(qme.bloch[::200] - ref, axis=1).max()
    n = np.linalg.norm(negf.bloch[::20] - ref, axis=1).max()
    _unitary_worst[0] = max(_unitary_worst[0], q)
    _unitary_worst[1] = max(_unitary_worst[1], n)
    assert q < 1e-4 and n < 1e-4


def test_unitary_limit_equivalence(acceptance):
    _unitary_worst[:] = [0.0, 0.0]
    try:
        _unitary_case()
        ok = True
    finally:
        acceptance("unitary", locals().get("ok", False),
                   f"max Bloch distance to exact: QME {_unitary_worst[0]:.2e}, NEGF {_unitary_worst[1]:.2e} (< 1e-4)")


def test_detailed_balance(acceptance):
    params = SystemParams()
    worst = 0.0
    for window in (2.0, 6.0, 100.0):
        bath = build_bath_correlation(params, window)
        on = bath.gamma > 0
        ratio = bath.sigma_lesser_w[on] / bath.sigma_greater_w[on]
        worst = max(worst, float(np.max(np.abs(ratio / np.exp(-params.beta * bath.omega[on]) - 1))))
    acceptance("detailed_balance", worst < 1e-12, f"max relative deviation {worst:.1e}")
    assert worst < 1e-12


def _eigen_populations(params, rho):
    w, v = np.linalg.eigh(hamiltonian(params, 0.0))
    return np.real(np.einsum("ik,...ij,jk->...k", v.conj(), rho, v)), w


@pytest.mark.xfail(strict=True, reason="relaxation rate gamma(Delta)(2N+1)/4 = 0.054 leaves e^-2.1 of the "
                                       "initial deviation at t = 40")
def test_qme_thermalization(acceptance):
    params = SystemParams()
    traj = qme_trajectory(params, None, QubitState.from_bloch(0, 0, 1), t_end=20 / params.gamma0)
    pops, w = _eigen_populations(params, traj.rho[-1])
    ratio = pops[1] / pops[0]
    gibbs = np.exp(-params.beta * (w[1] - w[0]))
    min_rate = float(traj.entropy_production.min())
    ok = abs(ratio - gibbs) < 1e-4 and min_rate >= -1e-9
    acceptance("qme_thermalization", ok, f"population ratio {ratio:.5f} vs Gibbs {gibbs:.5f} at t = 40; "
                                         f"min dSi/dt {min_rate:.2e}")
    assert min_rate >= -1e-9
    assert abs(ratio - gibbs) < 1e-4


def test_qme_thermalization_given_time():
    """Not a criterion line: the same relaxation converges when run long enough."""
    params = SystemParams(qme_dt=0.01)
    traj = qme_trajectory(params, None, QubitState.from_bloch(0, 0, 1), t_end=300.0)
    pops, w = _eigen_populations(params, traj.rho[-1])
    assert pops[1] / pops[0] == pytest.approx(np.exp(-params.beta * (w[1] - w[0])), abs=1e-4)
    assert traj.entropy_production.min() >= -1e-9


@pytest.fixture(scope="module")
def heating_runs():
    params = SystemParams()
    signal = DriveSignal([1.0, -0.5, 0.5, 0.2], 6.0)
    rho0 = QubitState.from_bloch(0, 0, 1)
    coarse = negf_trajectory(params, signal, rho0, t_end=6.0, dt=0.01)
    fine = negf_trajectory(params, signal, rho0, t_end=6.0, dt=0.005)
    return params, coarse, fine


def test_negf_structural_suite(heating_runs, acceptance):
    params, coarse, fine = heating_runs
    G = coarse.extra["gf"]
    sym = G.symmetry_defect()
    anti = float(G.anticommutator_defect().max())
    trace = float(np.max(np.abs(np.trace(coarse.rho, axis1=1, axis2=2) - 1)))
    herm = float(np.max(np.abs(coarse.rho - np.conj(np.swapaxes(coarse.rho, 1, 2)))))
    eig = float(np.linalg.eigvalsh(coarse.rho).min())
    halving = float(np.linalg.norm(coarse.bloch - fine.bloch[::2], axis=1).max())
    ok = sym < 1e-12 and anti < 1e-6 and trace < 1e-6 and herm < 1e-6 and eig > -1e-6 and halving < 1e-4
    acceptance("negf_structure", ok, f"symmetry {sym:.1e}, anticommutator {anti:.1e}, trace {trace:.1e}, "
                                     f"min eigenvalue {eig:.3f}, step-halving {halving:.1e}")
    assert ok


def test_flux_consistency_and_equilibrium(heating_runs, acceptance):
    params, coarse, _ = heating_runs
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PopulationWarning)
        rec = attach_ledger(coarse, params).extra["flux"]
    direct = particle_flux_direct(bubble(coarse.extra["gf"]), coarse.extra["bath"])
    consistency = float(np.max(np.abs(rec.particle_flux - direct)))
    # the undriven NEGF steady state has blocked populations p-/p+ = exp(-beta Delta / 2)
    w, v = np.linalg.eigh(hamiltonian(params, 0.0))
    p_high = 1 / (1 + np.exp(params.beta * (w[1] - w[0]) / 2))
    rho_ss = QubitState(v @ np.diag([1 - p_high, p_high]) @ v.conj().T)
    # correlations from the uncorrelated start decay as ~exp(-0.033 t); dt = 0.1 tracks dt = 0.05 here
    relaxed = negf_trajectory(params, None, rho_ss, t_end=180.0, dt=0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PopulationWarning)
        equil = attach_ledger(relaxed, params)
    late = relaxed.times >= 170.0
    q = float(np.abs(equil.heat_flux[late]).max())
    si = float(np.abs(equil.entropy_production[late]).max())
    ok = consistency < 1e-6 and q < 1e-4 and si < 1e-4
    acceptance("flux", ok, f"|int i_B - I_B| {consistency:.1e}; undriven t in [170, 180]: "
                           f"|Q_B| {q:.1e}, |dSi/dt| {si:.1e}")
    assert ok


@pytest.fixture(scope="module")
def reset_results():
    task = get_task("reset")
    params = SystemParams()
    out = {}
    for engine in ("qme", "negf"):
        result = optimize(task, engine, BUDGET, params)
        signal = DriveSignal(result.best_coeffs, task.control_time, BUDGET.bound)
        traj = simulate(task, engine, params, signal, **shared_engine_kwargs(task, engine, params))
        out[engine] = (result, traj)
    return out


@pytest.mark.xfail(strict=True, reason="15 x 10 evaluations do not locate the reset basin (best of 40 seeds 0.05+)")
def test_reset_task(reset_results, acceptance):
    costs = {e: r.best_cost for e, (r, _) in reset_results.items()}
    surface = {e: float(np.max(1 - np.linalg.norm(t.bloch, axis=1))) for e, (_, t) in reset_results.items()}
    ok = all(c < 0.05 for c in costs.values()) and all(s < 0.02 for s in surface.values())
    acceptance("reset", ok, f"best cost QME {costs['qme']:.3f}, NEGF {costs['negf']:.3f} (< 0.05); "
                            f"max distance from sphere QME {surface['qme']:.3f}, NEGF {surface['negf']:.3f} (< 0.02)")
    assert ok


def test_reset_budget_is_deterministic(reset_results):
    again = optimize(get_task("reset"), "qme", BUDGET, SystemParams())
    first = reset_results["qme"][0]
    assert np.array_equal(again.best_coeffs, first.best_coeffs) and again.cost_history == first.cost_history


def _first_below(times, r, level=0.05):
    hit = np.nonzero(r < level)[0]
    return times[hit[0]] if hit.size else np.inf


@pytest.mark.long
@pytest.mark.xfail(strict=True, reason="relaxation is capped at gamma(omega_c)(2N+1)/4 = 0.13; the radius "
                                       "cannot shrink to 0.05 within t_c = 6 in either engine")
def test_heating_qualitative(acceptance):
    task = get_task("heating")
    params = SystemParams()
    trajs, best = {}, {}
    for engine in ("qme", "negf"):
        result = optimize(task, engine, BUDGET, params)
        best[engine] = result.best_cost
        signal = DriveSignal(result.best_coeffs, task.control_time, BUDGET.bound)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PopulationWarning)
            traj = simulate(task, engine, params, signal, **shared_engine_kwargs(task, engine, params))
            trajs[engine] = attach_ledger(traj, params) if engine == "negf" else traj
    S = trajs["negf"].entropy
    nonmonotone = bool(np.any(np.diff(S) < 0) and np.any(np.diff(S) > 0))
    negative = float(S.min())
    r = {e: running_cost(task, t.rho) for e, t in trajs.items()}
    reach = {e: _first_below(trajs[e].times, r[e]) for e in trajs}
    ok = nonmonotone and negative < 0 and reach["negf"] < reach["qme"]
    acceptance("heating", ok, f"NEGF min S {negative:.3f}, non-monotonic {nonmonotone}; cost < 0.05 first at "
                              f"t = {reach['negf']:.2f} (NEGF) vs {reach['qme']:.2f} (QME); best cost "
                              f"NEGF {best['negf']:.3f}, QME {best['qme']:.3f}; min running cost "
                              f"NEGF {r['negf'].min():.3f}, QME {r['qme'].min():.3f}")
    assert ok


@pytest.mark.long
@pytest.mark.xfail(strict=True, reason="QME reaches -0.84 with this budget; the blocked NEGF steady state "
                                       "caps the NEGF radius below sqrt(0.8)")
def test_cooling_ordering(acceptance):
    task = get_task("cooling")
    params = SystemParams()
    best = {e: optimize(task, e, BUDGET, params).best_cost for e in ("qme", "negf")}
    ok = best["negf"] < best["qme"] and best["negf"] <= -0.8 and best["qme"] >= -0.75
    acceptance("cooling", ok, f"best cost NEGF {best['negf']:.3f} (<= -0.8), QME {best['qme']:.3f} (>= -0.75)")
    assert ok


def test_optimizer_determinism_and_sphere(acceptance):
    def sphere(x):
        return float(np.sum((x - np.array([1.0, -2.0, 0.5, 3.0])) ** 2))

    cfg = OptimizerConfig(population_size=15, max_iterations=50, num_modes=4, rng_seed=1)
    a = differential_evolution(sphere, cfg)
    b = differential_evolution(sphere, cfg)
    identical = a[0].tobytes() == b[0].tobytes() and a[2] == b[2]
    ok = identical and a[1] < 1e-2
    acceptance("optimizer", ok, f"bit-identical {identical}; sphere minimum {a[1]:.1e} after 50 generations")
    assert ok
