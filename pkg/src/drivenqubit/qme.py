"""Driven Redfield/Lindblad master equation with time-dependent jump operators.

The free propagator ``U(t, 0)`` of the qubit is written as
``exp(-i phi) [cos(alpha) - i sin(alpha) n.sigma]``.  Its eigenvectors are
the eigenvectors of ``n.sigma`` and its eigenphases ``u_pm = phi +- alpha``.
Tracking ``phi``, ``alpha`` and the axis ``n`` continuously fixes the
labelling and the branch of the eigenphases across the time grid.

Transitions are labelled ``m = (S1, S2)`` with ``S = 0`` for the ``+`` and
``S = 1`` for the ``-`` eigenvector; ``F_m = |S1><S2|``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.signal import fftconvolve

from .model import (
    IDENTITY,
    PAULIS,
    DriveSignal,
    QubitState,
    SystemParams,
    bloch_vector,
    coupling_operator,
    emission_weight,
    hamiltonian,
    von_neumann_entropy,
)

log = logging.getLogger(__name__)

TRANSITIONS = ((0, 0), (0, 1), (1, 0), (1, 1))


class PhaseTrackingError(RuntimeError):
    """Eigenphases of the free propagator jump too far between grid points."""


class PositivityWarning(RuntimeWarning):
    pass


def drive_on_grid(signal: DriveSignal | None, t) -> np.ndarray:
    """Drive amplitude with the pulse switched off outside ``[0, t_c]``."""
    t = np.asarray(t, dtype=float)
    if signal is None:
        return np.zeros_like(t)
    inside = (t >= 0) & (t <= signal.control_time * (1 + 1e-12))
    return np.where(inside, signal(t), 0.0)


def time_grid(t_end: float, dt: float) -> np.ndarray:
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a multiple of dt={dt}")
    return dt * np.arange(n + 1)


def cumulative_matmul(steps: np.ndarray) -> np.ndarray:
    """Prefix products ``out[n] = steps[n-1] @ ... @ steps[0]``, ``out[0] = I``.

    Log-depth scan over batched matrix products.
    """
    acc = steps.copy()
    shift = 1
    while shift < len(acc):
        nxt = acc.copy()
        nxt[shift:] = acc[shift:] @ acc[:-shift]
        acc = nxt
        shift *= 2
    eye = np.broadcast_to(np.eye(steps.shape[-1], dtype=steps.dtype), (1,) + steps.shape[1:])
    return np.concatenate([eye, acc])


def rk4_linear_steps(k0: np.ndarray, kh: np.ndarray, k1: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step of ``y' = K(t) y`` written as a matrix.

    ``k0, kh, k1`` are the generator at the start, midpoint and end of the
    step (batched over leading axes).
    """
    eye = np.eye(k0.shape[-1], dtype=complex)
    a2 = kh @ (eye + 0.5 * h * k0)
    a3 = kh @ (eye + 0.5 * h * a2)
    a4 = k1 @ (eye + h * a3)
    return eye + (h / 6) * (k0 + 2 * a2 + 2 * a3 + a4)


@dataclass(frozen=True)
class FreeEvolution:
    times: np.ndarray
    U: np.ndarray
    eps: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def unitarity_defect(self) -> np.ndarray:
        prod = np.conj(np.swapaxes(self.U, -1, -2)) @ self.U
        return np.max(np.abs(prod - IDENTITY), axis=(-2, -1))

    def step(self, n: int) -> np.ndarray:
        """Propagator from ``times[n]`` to ``times[n+1]``."""
        return self.U[n + 1] @ self.U[n].conj().T


def propagate_free(params: SystemParams, signal: DriveSignal | None, times: np.ndarray) -> FreeEvolution:
    """Integrate ``dU/dt = -i H_S(t) U`` with RK4 on the uniform grid ``times``."""
    times = np.asarray(times, dtype=float)
    h = times[1] - times[0]
    if not np.allclose(np.diff(times), h, rtol=1e-9, atol=1e-12):
        raise ValueError("time grid must be uniform")
    t0 = times[:-1]
    gen = [-1j * hamiltonian(params, drive_on_grid(signal, t0 + c * h)) for c in (0.0, 0.5, 1.0)]
    steps = rk4_linear_steps(*gen, h)
    U = cumulative_matmul(steps)
    return FreeEvolution(times, U, drive_on_grid(signal, times))


class TransitionRates:
    """Half-sided Fourier transform of the bath autocorrelation.

    ``Gamma(w) = 1/2 g(w) + i/(2 pi) PV int g(w')/(w - w') dw'`` with ``g`` the
    emission weight.  The principal value is tabulated once on a fine
    uniform grid (skip-the-pole rule, evaluated as an FFT convolution).
    """

    def __init__(self, params: SystemParams, step: float | None = None, extent: float | None = None):
        self.params = params
        scale = params.omega_c
        self.step = step if step is not None else scale / 1000
        self.extent = extent if extent is not None else 30 * scale + 40 / params.beta
        n = int(np.ceil(self.extent / self.step))
        self.grid = self.step * np.arange(-n, n + 1)
        self.table = self._principal_value(params, self.grid) / (2 * np.pi)
        self.total_weight = np.trapezoid(emission_weight(params, self.grid), self.grid)

    @staticmethod
    def _principal_value(params: SystemParams, grid: np.ndarray) -> np.ndarray:
        """``PV int g(w')/(w - w') dw'`` on a symmetric uniform grid.

        Punctured trapezoid rule plus the omitted on-pole term ``-h g'(w)``.
        """
        n = (len(grid) - 1) // 2
        h = grid[1] - grid[0]
        g = emission_weight(params, grid)
        offsets = np.arange(-2 * n, 2 * n + 1)
        kernel = np.zeros(offsets.size)
        nz = offsets != 0
        kernel[nz] = 1.0 / offsets[nz]
        return fftconvolve(g, kernel, mode="same") - h * np.gradient(g, h)

    def real(self, omega) -> np.ndarray:
        return 0.5 * emission_weight(self.params, omega)

    def imag(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        inside = np.abs(omega) <= self.grid[-1]
        tail = self.total_weight / (2 * np.pi * np.where(inside, 1.0, omega))
        return np.where(inside, np.interp(omega, self.grid, self.table), tail)

    def __call__(self, omega) -> np.ndarray:
        return self.real(omega) + 1j * self.imag(omega)


@dataclass(frozen=True)
class JumpFrame:
    """Instantaneous jump operators of the free propagator on a time grid.

    Arrays are indexed ``[time, m]`` with ``m`` running over
    :data:`TRANSITIONS`.
    """

    times: np.ndarray
    phases: np.ndarray  # u_S(t), shape (N, 2)
    vectors: np.ndarray  # eigenvectors as columns, shape (N, 2, 2)
    jump: np.ndarray  # F_m, shape (N, 4, 2, 2)
    xi: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    rates: np.ndarray
    U: np.ndarray = field(repr=False)

    def reconstruct_coupling(self) -> np.ndarray:
        """Sum_m xi_m exp(-i theta_m) F_m, to compare with U^+ s_y U."""
        w = self.xi * np.exp(-1j * self.theta)
        return np.einsum("nm,nmij->nij", w, self.jump)

    @cached_property
    def generators(self) -> np.ndarray:
        """Interaction-picture dissipator as 4x4 superoperators, shape (N, 4, 4)."""
        return dissipator_superop(self.jump, self.rates)


def _track_axis(U: np.ndarray, h0: np.ndarray):
    """Continuous ``phi, alpha, n`` for a stack of 2x2 unitaries."""
    det = np.linalg.det(U)
    phi = -0.5 * np.unwrap(np.angle(det))
    V = U * np.exp(1j * phi)[:, None, None]
    a0 = 0.5 * np.real(np.trace(V, axis1=-2, axis2=-1))
    avec = np.real(0.5j * np.einsum("nij,kji->nk", V, PAULIS))
    norm = np.linalg.norm(avec, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = avec / norm[:, None]
    # at U = I the axis is the direction of the traceless part of H_S(0)
    h0_axis = np.real(np.einsum("ij,kji->k", h0, PAULIS)) / 2
    unit[0] = h0_axis / np.linalg.norm(h0_axis)
    bad = ~np.isfinite(unit).all(axis=1) | (norm < 1e-300)
    for i in np.flatnonzero(bad):
        unit[i] = unit[i - 1]
    dots = np.einsum("nk,nk->n", unit[1:], unit[:-1])
    signs = np.concatenate([[1.0], np.cumprod(np.where(dots < 0, -1.0, 1.0))])
    axis = unit * signs[:, None]
    alpha = np.unwrap(np.arctan2(signs * norm, a0))
    return phi, alpha, axis


def _eigenvectors(axis: np.ndarray) -> np.ndarray:
    """Columns are the +1 and -1 eigenvectors of n.sigma."""
    nsig = np.einsum("nk,kij->nij", axis, PAULIS)
    vecs = np.empty(axis.shape[:1] + (2, 2), dtype=complex)
    for col, sign in enumerate((1.0, -1.0)):
        proj = 0.5 * (IDENTITY + sign * nsig)
        pick = np.where(np.abs(proj[:, 0, 0]) >= np.abs(proj[:, 1, 1]), 0, 1)
        v = proj[np.arange(len(pick)), :, pick]
        vecs[:, :, col] = v / np.linalg.norm(v, axis=1)[:, None]
    return vecs


def build_jump_frame(
    free: FreeEvolution,
    params: SystemParams,
    rates: TransitionRates | None = None,
    lamb_shift: bool = True,
    keep_diagonal: bool = True,
    max_phase_step: float = np.pi / 4,
) -> JumpFrame:
    """Diagonalise ``U(t, 0)`` along the grid and assemble jump operators and rates."""
    if rates is None:
        rates = TransitionRates(params)
    U = free.U
    phi, alpha, axis = _track_axis(U, hamiltonian(params, free.eps[0]))
    jump_sizes = np.maximum(np.abs(np.diff(phi)), np.abs(np.diff(alpha)))
    if jump_sizes.size and jump_sizes.max() > max_phase_step:
        i = int(np.argmax(jump_sizes))
        raise PhaseTrackingError(
            f"eigenphase of U(t,0) moved by {jump_sizes[i]:.3g} rad between t={free.times[i]:.6g} "
            f"and t={free.times[i + 1]:.6g}; use a smaller qme_dt"
        )
    phases = np.stack([phi + alpha, phi - alpha], axis=1)
    vecs = _eigenvectors(axis)

    s = coupling_operator()
    coupling_eig = np.conj(np.swapaxes(vecs, 1, 2)) @ s @ vecs  # <S1|s|S2>
    n = len(free.times)
    jump = np.empty((n, 4, 2, 2), dtype=complex)
    xi = np.empty((n, 4), dtype=complex)
    theta = np.empty((n, 4))
    for m, (s1, s2) in enumerate(TRANSITIONS):
        jump[:, m] = np.einsum("ni,nj->nij", vecs[:, :, s1], np.conj(vecs[:, :, s2]))
        xi[:, m] = coupling_eig[:, s1, s2]
        theta[:, m] = phases[:, s2] - phases[:, s1]
    omega = np.gradient(theta, free.times, axis=0)
    omega[:, 0] = omega[:, 3] = 0.0
    weight = np.abs(xi) ** 2
    gam = weight * rates.real(omega)
    if lamb_shift:
        gam = gam + 1j * weight * rates.imag(omega)
    if not keep_diagonal:
        gam[:, [0, 3]] = 0.0
    return JumpFrame(free.times, phases, vecs, jump, xi, theta, omega, gam, U)


def _kron(a, b):
    return np.einsum("...ij,...kl->...ikjl", a, b).reshape(a.shape[:-2] + (4, 4))


def dissipator_superop(jump: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Row-major vectorised generator of the master equation, summed over m."""
    fdag_f = np.conj(np.swapaxes(jump, -1, -2)) @ jump
    eye = np.broadcast_to(IDENTITY, jump.shape)
    left = _kron(fdag_f, eye)
    right = _kron(eye, np.swapaxes(fdag_f, -1, -2))
    sandwich = _kron(jump, np.conj(jump))
    shift = (-1j * rates.imag)[..., None, None] * (left - right)
    decay = (2 * rates.real)[..., None, None] * (sandwich - 0.5 * (left + right))
    return (shift + decay).sum(axis=-3)


def apply_dissipator(jump_t: np.ndarray, rates_t: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Dissipator on a single density matrix (operator form, for reference)."""
    out = np.zeros((2, 2), dtype=complex)
    for F, g in zip(jump_t, rates_t):
        Fd = F.conj().T
        FdF = Fd @ F
        out += -1j * g.imag * (FdF @ rho - rho @ FdF)
        out += 2 * g.real * (F @ rho @ Fd - 0.5 * (FdF @ rho + rho @ FdF))
    return out


def qme_step(rho_tilde: QubitState, frame: JumpFrame, n: int) -> QubitState:
    """One RK4 step of the interaction-picture equation.

    ``frame`` lives on a grid of half the QME step; step ``n`` uses frame
    points ``2n, 2n+1, 2n+2``.
    """
    dt = 2 * (frame.times[1] - frame.times[0])
    gens = frame.generators[2 * n:2 * n + 3]
    step = rk4_linear_steps(gens[0], gens[1], gens[2], dt)
    return QubitState((step @ rho_tilde.rho.reshape(4)).reshape(2, 2))


@dataclass(frozen=True)
class MarkovLedger:
    times: np.ndarray
    heat_flux: np.ndarray
    entropy_production: np.ndarray
    entropy: np.ndarray
    entropy_rate: np.ndarray
    frame_heat_flux: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Schrodinger-picture states plus thermodynamic ledger of one run."""

    engine: str
    times: np.ndarray
    eps: np.ndarray
    rho: np.ndarray
    heat_flux: np.ndarray
    entropy_production: np.ndarray
    entropy: np.ndarray
    diagnostics: tuple = ()
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def bloch(self) -> np.ndarray:
        return bloch_vector(self.rho)

    @property
    def final_state(self) -> QubitState:
        return QubitState(self.rho[-1])

    def states(self) -> list[QubitState]:
        return [QubitState(r) for r in self.rho]


def quasi_energy(frame: JumpFrame) -> np.ndarray:
    """``K(t) = sum_S du_S/dt |S><S|``; transition m exchanges ``omega_m`` with the bath."""
    udot = np.gradient(frame.phases, frame.times, axis=0)
    v = frame.vectors
    return np.einsum("nis,ns,njs->nij", v, udot, np.conj(v))


def markov_ledger(params: SystemParams, times, eps, rho_s, d_rho_s, quasi) -> MarkovLedger:
    """Thermodynamic ledger from the dissipative part of the motion.

    ``d_rho_s`` is the dissipator applied to the Schrodinger-picture state and
    ``quasi`` the frame quasi-energy operator (commutes with ``U(t, 0)``).

    heat_flux            Tr{(L_D rho) H_S(t)}
    entropy_rate         -Tr{(L_D rho) ln rho}
    frame_heat_flux      Tr{(L_D rho) K(t)}
    entropy_production   entropy_rate - beta * frame_heat_flux  (>= 0)
    """
    H = hamiltonian(params, eps)
    heat = np.real(np.einsum("nij,nji->n", d_rho_s, H))
    frame_heat = np.real(np.einsum("nij,nji->n", d_rho_s, quasi))
    p, v = np.linalg.eigh(rho_s)
    d_eig = np.real(np.einsum("nji,njk,nki->ni", np.conj(v), d_rho_s, v))
    logp = np.log(np.clip(p, 1e-300, None))
    # 0 * log 0 terms vanish exactly when the dissipator is absent
    entropy_rate = -np.sum(np.where(d_eig == 0, 0.0, d_eig * logp), axis=1)
    production = entropy_rate - params.beta * frame_heat
    entropy = von_neumann_entropy(rho_s)
    return MarkovLedger(np.asarray(times), heat, production, entropy, entropy_rate, frame_heat)


def qme_trajectory(
    params: SystemParams,
    signal: DriveSignal | None,
    rho0: QubitState,
    t_end: float | None = None,
    *,
    lamb_shift: bool = True,
    keep_diagonal: bool = True,
    rates: TransitionRates | None = None,
    positivity_tol: float = 1e-6,
) -> Trajectory:
    """Propagate the master equation from ``rho0`` to ``t_end`` (default ``t_c``)."""
    if t_end is None:
        if signal is None:
            raise ValueError("t_end is required without a drive signal")
        t_end = signal.control_time
    dt = params.qme_dt
    times = time_grid(t_end, dt)
    fine = time_grid(t_end, dt / 2)
    free = propagate_free(params, signal, fine)
    frame = build_jump_frame(free, params, rates, lamb_shift=lamb_shift, keep_diagonal=keep_diagonal)
    gens = frame.generators
    steps = rk4_linear_steps(gens[0:-1:2], gens[1::2], gens[2::2], dt)
    props = cumulative_matmul(steps)
    rho_t = (props @ rho0.rho.reshape(4)).reshape(-1, 2, 2)

    U = free.U[::2]
    Ud = np.conj(np.swapaxes(U, -1, -2))
    rho_s = U @ rho_t @ Ud
    d_tilde = (gens[::2] @ rho_t.reshape(-1, 4, 1)).reshape(-1, 2, 2)
    d_s = U @ d_tilde @ Ud
    ledger = markov_ledger(params, times, free.eps[::2], rho_s, d_s, quasi_energy(frame)[::2])

    diagnostics = []
    min_eig = np.linalg.eigvalsh(0.5 * (rho_s + np.conj(np.swapaxes(rho_s, -1, -2)))).min(axis=1)
    if min_eig.min() < -positivity_tol:
        i = int(np.argmin(min_eig))
        msg = f"density matrix eigenvalue {min_eig[i]:.3g} at t={times[i]:.6g}"
        warnings.warn(msg, PositivityWarning, stacklevel=2)
        diagnostics.append(msg)
    return Trajectory(
        "qme", times, free.eps[::2], rho_s, ledger.heat_flux, ledger.entropy_production, ledger.entropy,
        tuple(diagnostics), extra={"frame": frame, "rho_tilde": rho_t, "ledger": ledger},
    )
