"""Driven qubit Hamiltonian and the spectral data of its bath.

All 2x2 matrices use the one-particle basis ordered ``{|1>, |2>}``; index 0
is level 1.  Units: hbar = k_B = 1, energies in units of the level
separation, time in its inverse.
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)
PAULIS = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])


class DomainError(ValueError):
    """Argument outside the domain where a quantity is defined."""


class ConfigurationError(ValueError):
    """Inconsistent or unresolvable numerical configuration."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants and numerical grids.

    ``fft_energy_step=None`` ties the bath frequency step to the propagation
    window, ``pi / (fft_oversample * window)``; see :meth:`fft_step`.
    """

    delta: float = 1.0
    gamma0: float = 0.5
    omega_c: float = 5.0
    beta: float = 1.0
    fft_size: int = 80000
    fft_energy_step: float | None = None
    fft_oversample: int = 2
    qme_dt: float = 1e-3
    negf_dt: float | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError(f"delta must be > 0, got {self.delta}")
        if not self.gamma0 >= 0:
            raise ConfigurationError(f"gamma0 must be >= 0, got {self.gamma0}")
        if not self.omega_c > 0:
            raise ConfigurationError(f"omega_c must be > 0, got {self.omega_c}")
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be > 0, got {self.beta}")
        if not self.fft_size > 0:
            raise ConfigurationError(f"fft_size must be > 0, got {self.fft_size}")
        for name in ("fft_energy_step", "negf_dt"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigurationError(f"{name} must be > 0, got {value}")
        if not self.qme_dt > 0:
            raise ConfigurationError(f"qme_dt must be > 0, got {self.qme_dt}")
        if not (isinstance(self.fft_oversample, (int, np.integer)) and self.fft_oversample >= 1):
            raise ConfigurationError(f"fft_oversample must be an integer >= 1, got {self.fft_oversample}")

    def with_(self, **changes) -> SystemParams:
        return replace(self, **changes)

    def fft_step(self, window: float) -> float:
        """Bath frequency step for a propagation window of length ``window``.

        The automatic step is ``pi / (fft_oversample * window)``.  With
        ``fft_oversample = 1`` (the aliasing bound) the energy-resolved entropy
        integrand is visibly under-resolved, hence the default of 2.
        """
        if self.fft_energy_step is not None:
            return self.fft_energy_step
        return np.pi / (self.fft_oversample * window)

    def negf_step(self, window: float) -> float:
        if self.negf_dt is not None:
            return self.negf_dt
        return 0.01 if window <= 10 else 0.05


@dataclass(frozen=True)
class DriveSignal:
    """Gaussian-windowed sine series on ``[0, t_c]``.

    The mode frequencies ``k pi / t_c`` are derived from ``control_time``.
    """

    coeffs: np.ndarray
    control_time: float
    bound: float = 10.0

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        if not self.control_time > 0:
            raise ConfigurationError("control_time must be > 0")
        if np.any(np.abs(coeffs) > self.bound * (1 + 1e-12)):
            raise DomainError(f"|c_k| exceeds bound {self.bound}: {coeffs}")

    @classmethod
    def zero(cls, num_modes: int, control_time: float, bound: float = 10.0) -> DriveSignal:
        return cls(np.zeros(num_modes), control_time, bound)

    @property
    def num_modes(self) -> int:
        return self.coeffs.size

    @property
    def frequencies(self) -> np.ndarray:
        k = np.arange(1, self.num_modes + 1)
        return k * np.pi / self.control_time

    def __call__(self, t):
        """Vectorised drive value; no domain check (see :func:`drive_value`)."""
        t = np.asarray(t, dtype=float)
        tc = self.control_time
        envelope = np.exp(-(((t - tc / 2) / tc) ** 2))
        modes = np.sin(np.multiply.outer(t, self.frequencies))
        return envelope * (modes @ self.coeffs)


def drive_value(signal: DriveSignal, t):
    """Drive amplitude ``eps(t)``; raises :class:`DomainError` outside ``[0, t_c]``."""
    t_arr = np.asarray(t, dtype=float)
    tol = 1e-12 * signal.control_time
    if np.any(t_arr < -tol) or np.any(t_arr > signal.control_time + tol):
        raise DomainError(f"t outside [0, {signal.control_time}]")
    return signal(t_arr)


def hamiltonian(params: SystemParams, eps) -> np.ndarray:
    """System Hamiltonian in the one-particle subspace.

    ``eps`` may be an array; the result then has shape ``eps.shape + (2, 2)``.
    """
    eps = np.asarray(eps, dtype=float)
    d = params.delta
    h = np.empty(eps.shape + (2, 2), dtype=complex)
    h[..., 0, 0] = d - eps / 2
    h[..., 1, 1] = d + eps / 2
    h[..., 0, 1] = d / 2
    h[..., 1, 0] = d / 2
    return h


def coupling_operator() -> np.ndarray:
    """System part of the bath coupling, ``(i/2)(|2><1| - |1><2|)`` (= s_y)."""
    s = np.zeros((2, 2), dtype=complex)
    s[1, 0] = 0.5j
    s[0, 1] = -0.5j
    return s


def spectral_density(params: SystemParams, omega):
    """Dissipation rate gamma(omega); zero for omega <= 0."""
    omega = np.asarray(omega, dtype=float)
    x = np.where(omega > 0, omega, 0.0) / params.omega_c
    return np.where(omega > 0, params.gamma0 * x**2 * np.exp(2 * (1 - x)), 0.0)


def bose_einstein(beta: float, omega):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise DomainError("Bose-Einstein occupation requires omega > 0")
    return 1.0 / np.expm1(beta * omega)


def bath_spectral(params: SystemParams, omega):
    """Return ``(gamma(omega), N(omega))`` for ``omega > 0``."""
    return spectral_density(params, omega), bose_einstein(params.beta, omega)


def emission_weight(params: SystemParams, omega):
    """Full Fourier transform of the bath autocorrelation <B(s)B(0)>.

    gamma(w)(N(w)+1) for w > 0, gamma(|w|)N(|w|) for w < 0 and 0 at w = 0.
    """
    omega = np.asarray(omega, dtype=float)
    a = np.abs(omega)
    safe = np.where(a > 0, a, 1.0)
    g = spectral_density(params, safe)
    n = 1.0 / np.expm1(params.beta * safe)
    out = np.where(omega > 0, g * (n + 1), g * n)
    return np.where(a > 0, out, 0.0)


@dataclass(frozen=True)
class BathCorrelation:
    """Lesser/greater bath correlation on a uniform positive-frequency grid.

    ``sigma_*_w`` hold the frequency-domain values on ``omega`` (first point
    one step above zero); ``sigma_*_t`` their transforms on ``times``, one
    full period ``2 pi / d_omega`` of the discrete transform.  Use
    :meth:`sigma_at` for arbitrary lags: it evaluates the same discrete sum.
    """

    omega: np.ndarray
    gamma: np.ndarray
    occupation: np.ndarray
    sigma_lesser_w: np.ndarray
    sigma_greater_w: np.ndarray
    times: np.ndarray
    sigma_lesser_t: np.ndarray
    sigma_greater_t: np.ndarray
    beta: float
    key: str = ""
    _active: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._active is None:
            scale = np.max(np.abs(self.sigma_greater_w), initial=0.0)
            active = np.abs(self.sigma_greater_w) > 1e-18 * scale if scale > 0 else np.zeros(self.omega.size, bool)
            object.__setattr__(self, "_active", np.flatnonzero(active))

    @property
    def d_omega(self) -> float:
        return float(self.omega[1] - self.omega[0]) if self.omega.size > 1 else float(self.omega[0])

    @property
    def period(self) -> float:
        return 2 * np.pi / self.d_omega

    @property
    def gamma_of_omega(self) -> np.ndarray:
        return self.gamma

    def sigma_at(self, lags, chunk: int = 512):
        """``(sigma_lesser(tau), sigma_greater(tau))`` at arbitrary lags."""
        lags = np.asarray(lags, dtype=float)
        flat = lags.reshape(-1)
        idx = self._active
        w = self.omega[idx]
        weight = self.d_omega / (2 * np.pi)
        sl = self.sigma_lesser_w[idx] * weight
        sg = self.sigma_greater_w[idx] * weight
        out_l = np.zeros(flat.size, dtype=complex)
        out_g = np.zeros(flat.size, dtype=complex)
        for start in range(0, flat.size, chunk):
            phase = np.exp(-1j * np.multiply.outer(flat[start:start + chunk], w))
            out_l[start:start + chunk] = phase @ sl
            out_g[start:start + chunk] = phase @ sg
        return out_l.reshape(lags.shape), out_g.reshape(lags.shape)


def _bath_key(params: SystemParams, d_omega: float) -> str:
    text = repr((params.gamma0, params.omega_c, params.beta, params.fft_size, float(d_omega)))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def check_bath_grid(params: SystemParams, d_omega: float, window: float) -> None:
    """Raise :class:`ConfigurationError` if the grid cannot resolve the bath."""
    omega_max = params.fft_size * d_omega
    scale = max(params.omega_c, 1.0 / params.beta)
    problems = []
    if omega_max < 20 * scale:
        problems.append(f"grid extent {omega_max:.4g} < 20 x max(omega_c, 1/beta) = {20 * scale:.4g}; raise fft_size")
    if d_omega > params.omega_c:
        problems.append(f"energy step {d_omega:.4g} exceeds omega_c = {params.omega_c:.4g}; lower fft_energy_step")
    period = 2 * np.pi / d_omega
    if window > period / 2 * (1 + 1e-12):
        problems.append(
            f"time period {period:.4g} of the discrete transform cannot hold lags up to {window:.4g}; "
            "lower fft_energy_step"
        )
    if problems:
        raise ConfigurationError("bath grid: " + "; ".join(problems))


def build_bath_correlation(
    params: SystemParams, window: float, cache_dir: str | os.PathLike | None = None
) -> BathCorrelation:
    """Tabulate sigma^<,> in frequency and transform to time by FFT.

    ``window`` is the propagation length (the control time for control runs).
    The frequency-to-time convention is ``exp(-i w t)``.
    """
    d_omega = params.fft_step(window)
    check_bath_grid(params, d_omega, window)
    key = _bath_key(params, d_omega)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"bath-{key}.npz"
        if path.exists():
            with np.load(path) as data:
                return BathCorrelation(**{k: data[k] for k in data.files if k not in ("beta", "key")},
                                       beta=float(data["beta"]), key=key)

    n = params.fft_size
    omega = d_omega * np.arange(1, n + 1)
    gamma = spectral_density(params, omega)
    with np.errstate(over="ignore", under="ignore"):
        occupation = 1.0 / np.expm1(params.beta * omega)
        # drop the tail where gamma * N is no longer a normal float
        gamma = np.where(gamma * occupation >= np.finfo(float).tiny, gamma, 0.0)
    sigma_l = -1j * gamma * occupation
    sigma_g = -1j * gamma * (occupation + 1)
    dt = 2 * np.pi / (n * d_omega)
    times = dt * np.arange(n)
    # the grid starts one step above zero: shift by exp(-i d_omega t_n)
    shift = np.exp(-2j * np.pi * np.arange(n) / n) * d_omega / (2 * np.pi)
    sigma_l_t = shift * np.fft.fft(sigma_l)
    sigma_g_t = shift * np.fft.fft(sigma_g)
    bath = BathCorrelation(omega, gamma, occupation, sigma_l, sigma_g, times, sigma_l_t, sigma_g_t,
                           beta=params.beta, key=key)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, omega=omega, gamma=gamma, occupation=occupation, sigma_lesser_w=sigma_l,
                 sigma_greater_w=sigma_g, times=times, sigma_lesser_t=sigma_l_t,
                 sigma_greater_t=sigma_g_t, beta=params.beta, key=key)
        log.debug("cached bath correlation at %s", path)
    return bath


@dataclass(frozen=True)
class QubitState:
    """Density matrix of the qubit in the one-particle subspace."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex).reshape(2, 2)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    def validate(self, tol: float = 1e-10, eig_tol: float = 1e-8) -> QubitState:
        rho = self.rho
        if abs(np.trace(rho) - 1) > tol:
            raise DomainError(f"trace {np.trace(rho)} != 1")
        if np.max(np.abs(rho - rho.conj().T)) > tol:
            raise DomainError("density matrix is not Hermitian")
        if np.min(np.linalg.eigvalsh(rho)) < -eig_tol:
            raise DomainError("density matrix has negative eigenvalues")
        return self

    @classmethod
    def from_bloch(cls, x: float, y: float, z: float) -> QubitState:
        return cls(0.5 * (IDENTITY + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z))

    @property
    def bloch(self) -> np.ndarray:
        return bloch_vector(self.rho)

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.bloch))


def bloch_vector(rho) -> np.ndarray:
    """``(Tr rho sx, Tr rho sy, Tr rho sz)``; broadcasts over leading axes."""
    rho = np.asarray(rho)
    return np.real(np.einsum("...ij,kji->...k", rho, PAULIS))


def von_neumann_entropy(rho) -> np.ndarray:
    p = np.clip(np.linalg.eigvalsh(np.asarray(rho)), 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def gibbs_state(params: SystemParams, eps: float = 0.0) -> QubitState:
    energies, vecs = np.linalg.eigh(hamiltonian(params, eps))
    w = np.exp(-params.beta * (energies - energies.min()))
    w /= w.sum()
    return QubitState((vecs * w) @ vecs.conj().T)
