"""Bath heat flux and entropy ledger computed from the two-time Green's function."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .model import BathCorrelation, coupling_operator, von_neumann_entropy
from .negf import TwoTimeGF
from .qme import Trajectory

CLAMP_TOL = 1e-6


class PopulationWarning(RuntimeWarning):
    """Outgoing bath population is negative beyond quadrature noise."""


@dataclass(frozen=True)
class BubbleGF:
    """``G_SS(t_a, t_b)`` for the coupling operator; arrays indexed ``[a, b]``."""

    times: np.ndarray
    lesser: np.ndarray
    greater: np.ndarray


def bubble(G: TwoTimeGF) -> BubbleGF:
    """Connected particle-hole bubble of the coupling operator.

    ``G_SS<(t, t') = -i Tr[v G<(t, t') v G>(t', t)]`` and the same with the
    projections swapped for ``G_SS>``.
    """
    v = coupling_operator()
    gl = G.blocks("lesser")
    gg = G.blocks("greater")
    vgl = v @ gl @ v
    vgg = v @ gg @ v
    # Tr[A(a, b) B(b, a)] = sum_jk A[a, b, j, k] B[b, a, k, j]
    lesser = -1j * np.einsum("abjk,bakj->ab", vgl, gg)
    greater = -1j * np.einsum("abjk,bakj->ab", vgg, gl)
    return BubbleGF(G.times, lesser, greater)


def _trapezoid_weights(n: int, dt: float) -> np.ndarray:
    """``W[b, a]``: trapezoid weight of node b in the integral over [0, t_a]."""
    W = np.triu(np.full((n, n), dt))
    W[0, :] = dt / 2
    W[np.arange(n), np.arange(n)] = dt / 2
    W[0, 0] = 0.0
    return W


def flux_grid(bath: BathCorrelation) -> np.ndarray:
    """Positive-frequency points of the bath grid that carry weight."""
    return bath.omega[bath._active]


def energy_resolved_flux(bub: BubbleGF, bath: BathCorrelation, omega: np.ndarray | None = None,
                         params=None) -> np.ndarray:
    """``i_B(t_a, w)`` for every grid time, shape ``(n_times, n_omega)``.

    ``omega`` defaults to the populated part of the bath grid; other grids
    need ``params`` to evaluate the bath spectrum there.
    """
    if omega is None:
        idx = bath._active
        omega = bath.omega[idx]
        s_l, s_g = bath.sigma_lesser_w[idx], bath.sigma_greater_w[idx]
    else:
        s_l, s_g = _sigma_w(params, omega)
    t = bub.times
    n = len(t)
    dt = t[1] - t[0] if n > 1 else 0.0
    W = _trapezoid_weights(n, dt)
    # F[a, w] = exp(-i w t_a) sum_b W[b, a] exp(i w t_b) G_SS(t_b, t_a)
    E = np.exp(1j * np.multiply.outer(t, omega))
    back = np.conj(E)
    f_g = back * ((W * bub.greater).T @ E)
    f_l = back * ((W * bub.lesser).T @ E)
    return -2 * np.real(s_l * f_g - s_g * f_l)


def _sigma_w(params, omega):
    from .model import bath_spectral

    g, n = bath_spectral(params, omega)
    return -1j * g * n, -1j * g * (n + 1)


def particle_flux_direct(bub: BubbleGF, bath: BathCorrelation) -> np.ndarray:
    """``I_B(t)`` from the time-domain double integral with ``sigma(t - t')``."""
    t = bub.times
    n = len(t)
    dt = t[1] - t[0] if n > 1 else 0.0
    W = _trapezoid_weights(n, dt)
    lag = np.subtract.outer(t, t)  # lag[a, b] = t_a - t_b
    s_l, s_g = bath.sigma_at(lag)
    integrand = s_l * bub.greater.T - s_g * bub.lesser.T  # [a, b] uses G_SS(t_b, t_a)
    return -2 * np.real(np.sum(W.T * integrand, axis=1))


@dataclass(frozen=True)
class FluxRecord:
    times: np.ndarray
    omega: np.ndarray
    i_b: np.ndarray
    particle_flux: np.ndarray
    heat_flux: np.ndarray
    phi_in: np.ndarray
    phi_out: np.ndarray
    entropy_production: np.ndarray
    entropy: np.ndarray
    entropy_rate_alt: np.ndarray


def _xlogy_safe(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0, 0.0, x * np.log(np.where(y > 0, y, 1.0)))


def entropy_production_density(phi_out: np.ndarray, phi_in: np.ndarray) -> np.ndarray:
    """Integrand of the bosonic entropy-production formula (per d omega / 2 pi)."""
    return (_xlogy_safe(phi_out, phi_out) - _xlogy_safe(phi_out, phi_in)
            - _xlogy_safe(1 + phi_out, 1 + phi_out) + _xlogy_safe(1 + phi_out, 1 + phi_in))


def _fermionic_entropy(phi):
    ok = (phi > 0) & (phi < 1)
    p = np.where(ok, phi, 0.5)
    return np.where(ok, -p * np.log(p) - (1 - p) * np.log(1 - p), np.nan)


def ledger(times, i_b: np.ndarray, omega: np.ndarray, occupation: np.ndarray, beta: float,
           entropy0: float, d_omega: float) -> FluxRecord:
    """Per-time heat flux and entropy production, plus the integrated entropy."""
    measure = d_omega / (2 * np.pi)
    particle = i_b.sum(axis=1) * measure
    heat = (i_b * omega).sum(axis=1) * measure
    phi_in = occupation
    phi_out = phi_in[None, :] - i_b
    worst = phi_out.min() if phi_out.size else 0.0
    if worst < -CLAMP_TOL:
        a, w = np.unravel_index(np.argmin(phi_out), phi_out.shape)
        warnings.warn(f"outgoing population {worst:.3g} < 0 at t={times[a]:.4g}, omega={omega[w]:.4g}; "
                      "clamped to 0 inside logarithms", PopulationWarning, stacklevel=2)
    phi_log = np.clip(phi_out, 0.0, None)
    production = entropy_production_density(phi_log, phi_in[None, :]).sum(axis=1) * measure
    rate = beta * heat + production
    entropy = entropy0 + cumulative_trapezoid(rate, times, initial=0.0)
    alt_terms = _fermionic_entropy(phi_in)[None, :] - _fermionic_entropy(phi_out)
    alt = np.nansum(alt_terms, axis=1) * measure
    return FluxRecord(np.asarray(times), omega, i_b, particle, heat, phi_in, phi_out, production,
                      entropy, alt)


def negf_ledger(traj: Trajectory, params, omega: np.ndarray | None = None, refine: int = 1) -> FluxRecord:
    """Full ledger for a finished NEGF trajectory.

    ``refine > 1`` evaluates the energy integrals on a grid ``refine`` times finer than
    the bath grid; the default keeps the bath grid, on which the energy-resolved flux
    integrates exactly to the direct particle flux.
    """
    G = traj.extra["gf"]
    bath = traj.extra["bath"]
    bub = bubble(G)
    if omega is None and refine == 1:
        omega = flux_grid(bath)
        i_b = energy_resolved_flux(bub, bath)
        d_omega = bath.d_omega
    else:
        if omega is None:
            base = flux_grid(bath)
            omega = np.arange(1, refine * len(base) + 1) * bath.d_omega / refine
        i_b = energy_resolved_flux(bub, bath, omega, params=params)
        d_omega = float(omega[1] - omega[0]) if len(omega) > 1 else bath.d_omega
    occupation = 1.0 / np.expm1(params.beta * omega)
    s0 = float(von_neumann_entropy(traj.rho[0]))
    return ledger(traj.times, i_b, omega, occupation, params.beta, s0, d_omega)


def attach_ledger(traj: Trajectory, params) -> Trajectory:
    """Return the trajectory with its thermodynamic columns filled in."""
    rec = negf_ledger(traj, params)
    extra = dict(traj.extra)
    extra["flux"] = rec
    return replace(traj, heat_flux=rec.heat_flux, entropy_production=rec.entropy_production,
                   entropy=rec.entropy, extra=extra)
