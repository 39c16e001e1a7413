"""Two-time Kadanoff-Baym propagation with the Fock self-energy.

The lesser and greater Green's functions live in dense ``(2N, 2N)`` buffers
where block ``(i, j)`` is ``G(t_i, t_j)``.  Only the lower triangle is
propagated; the upper triangle is written as ``G(t_j, t_i) = -G(t_i, t_j)^+``
when a slice is stored, so the conjugation symmetry is exact and collision
integrals reduce to row-times-matrix products.

Stepping follows the free-propagator form: with ``U_n`` the exact free
evolution over one step,

    G(t_{n+1}, t_j) = U_n [G(t_n, t_j) - i dt/2 I(t_n, t_j)] - i dt/2 I(t_{n+1}, t_j)

and the equal-time slice is evolved with ``U_n ... U_n^+`` and the hermitian
part of the collision term.  ``I`` is iterated to self-consistency on the new
slice.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    BathCorrelation,
    DriveSignal,
    QubitState,
    SystemParams,
    bloch_vector,
    build_bath_correlation,
    coupling_operator,
    spectral_density,
    von_neumann_entropy,
)
from .qme import Trajectory, drive_on_grid, propagate_free, time_grid

log = logging.getLogger(__name__)

GF_DUMP_VERSION = 1


class CorrectorError(RuntimeError):
    """Self-consistency on a new time slice did not converge."""


def hartree_sigma(params: SystemParams) -> np.ndarray:
    """Hartree self-energy; vanishes because the bath has no zero-frequency weight."""
    if spectral_density(params, 0.0) != 0.0:
        raise NotImplementedError("Hartree term needs a bath with zero-frequency weight")
    return np.zeros((2, 2), dtype=complex)


def bath_kernels(bath: BathCorrelation, dt: float, n: int):
    """Lesser/greater projections of ``sigma(t', t) + sigma(t, t')`` at lags ``0..n``.

    ``b<(tau) = sigma>(-tau) + sigma<(tau)`` and ``b>(tau) = sigma<(-tau) + sigma>(tau)``.
    """
    lags = dt * np.arange(n + 1)
    sl_pos, sg_pos = bath.sigma_at(lags)
    sl_neg, sg_neg = bath.sigma_at(-lags)
    return sg_neg + sl_pos, sl_neg + sg_pos


@dataclass
class TwoTimeGF:
    """Lesser and greater Green's functions on a growing two-time grid."""

    dt: float
    lesser_buf: np.ndarray = field(repr=False)
    greater_buf: np.ndarray = field(repr=False)
    extent: int = 0  # number of filled time slices

    @classmethod
    def allocate(cls, dt: float, capacity: int) -> TwoTimeGF:
        shape = (2 * capacity, 2 * capacity)
        return cls(dt, np.zeros(shape, complex), np.zeros(shape, complex), 0)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.extent)

    def _block(self, buf, i, j):
        return buf[2 * i:2 * i + 2, 2 * j:2 * j + 2]

    def lesser(self, i: int, j: int) -> np.ndarray:
        return self._block(self.lesser_buf, i, j).copy()

    def greater(self, i: int, j: int) -> np.ndarray:
        return self._block(self.greater_buf, i, j).copy()

    def blocks(self, which: str = "lesser") -> np.ndarray:
        """View as ``(n, n, 2, 2)`` for the filled extent."""
        buf = self.lesser_buf if which == "lesser" else self.greater_buf
        n = self.extent
        return buf[:2 * n, :2 * n].reshape(n, 2, n, 2).transpose(0, 2, 1, 3)

    def density(self) -> np.ndarray:
        """``rho(t) = -i G<(t, t)`` for every filled slice."""
        n = self.extent
        diag = self.lesser_buf[:2 * n, :2 * n].reshape(n, 2, n, 2)[np.arange(n), :, np.arange(n), :]
        return -1j * diag

    def anticommutator_defect(self) -> np.ndarray:
        n = self.extent
        idx = np.arange(n)
        gl = self.lesser_buf[:2 * n, :2 * n].reshape(n, 2, n, 2)[idx, :, idx, :]
        gg = self.greater_buf[:2 * n, :2 * n].reshape(n, 2, n, 2)[idx, :, idx, :]
        return np.max(np.abs(1j * (gg - gl) - np.eye(2)), axis=(1, 2))

    def symmetry_defect(self) -> float:
        n = 2 * self.extent
        worst = 0.0
        for buf in (self.lesser_buf, self.greater_buf):
            a = buf[:n, :n]
            worst = max(worst, float(np.max(np.abs(a + a.conj().T))))
        return worst

    def dump(self, path, params: SystemParams | None = None) -> None:
        """Binary dump with a versioned header (step, extent, parameter hash)."""
        n = self.extent
        header = {
            "version": GF_DUMP_VERSION,
            "dt": self.dt,
            "extent": n,
            "param_hash": params_hash(params) if params is not None else "",
        }
        tril = np.tril_indices(n)
        np.savez_compressed(
            path,
            header=json.dumps(header),
            lesser=self.blocks("lesser")[tril],
            greater=self.blocks("greater")[tril],
        )

    @classmethod
    def load(cls, path) -> tuple[TwoTimeGF, dict]:
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            if header["version"] != GF_DUMP_VERSION:
                raise ValueError(f"unsupported Green's function dump version {header['version']}")
            n = header["extent"]
            gf = cls.allocate(header["dt"], n)
            tril = np.tril_indices(n)
            for name, buf in (("lesser", gf.lesser_buf), ("greater", gf.greater_buf)):
                blocks = np.zeros((n, n, 2, 2), complex)
                blocks[tril] = data[name]
                upper = np.triu_indices(n, 1)
                blocks[upper] = -np.conj(np.swapaxes(blocks[upper[1], upper[0]], -1, -2))
                buf[:] = blocks.transpose(0, 2, 1, 3).reshape(2 * n, 2 * n)
            gf.extent = n
        return gf, header


def params_hash(params: SystemParams) -> str:
    return hashlib.sha256(json.dumps(asdict(params), sort_keys=True).encode()).hexdigest()[:16]


def fock_sigma(G: TwoTimeGF, bath: BathCorrelation, i: int, j: int):
    """Fock self-energy ``(Sigma<, Sigma>)`` at ``(t_i, t_j)``."""
    v = coupling_operator()
    tau = (i - j) * G.dt
    (sl_p, sl_m), (sg_p, sg_m) = bath.sigma_at(np.array([tau, -tau]))
    b_lesser = sg_m + sl_p
    b_greater = sl_m + sg_p
    return (1j * b_lesser * (v @ G.lesser(i, j) @ v), 1j * b_greater * (v @ G.greater(i, j) @ v))


def _row_to_slab(row: np.ndarray) -> np.ndarray:
    """``(m, 2, 2)`` blocks -> ``(2, 2m)`` block row."""
    return row.transpose(1, 0, 2).reshape(2, -1)


def _slab_to_row(slab: np.ndarray) -> np.ndarray:
    return slab.reshape(2, -1, 2).transpose(1, 0, 2)


class KBPropagator:
    """Incremental Kadanoff-Baym stepper for one trajectory.

    ``free_steps[n]`` is the free propagator from ``t_n`` to ``t_{n+1}``.
    """

    def __init__(
        self,
        rho0: QubitState,
        free_steps: np.ndarray,
        kernels: tuple[np.ndarray, np.ndarray],
        dt: float,
        corrector_tol: float = 1e-9,
        max_iterations: int = 20,
    ):
        n_slices = len(free_steps) + 1
        self.dt = dt
        self.G = TwoTimeGF.allocate(dt, n_slices)
        self.free_steps = free_steps
        self.b_lesser, self.b_greater = kernels
        self.tol = corrector_tol
        self.max_iterations = max_iterations
        self.gaw = np.zeros_like(self.G.lesser_buf)
        self.v = coupling_operator()
        self.iterations: list[int] = []

        rho = rho0.rho
        self._store_row(0, np.array([1j * rho]), np.array([-1j * (np.eye(2) - rho)]))
        self.G.extent = 1
        self.coll_l, self.coll_g = self._collision(0)

    # -- bookkeeping -------------------------------------------------------
    def _store_row(self, i: int, row_l: np.ndarray, row_g: np.ndarray) -> None:
        m = i + 1
        r = slice(2 * i, 2 * i + 2)
        for buf, row in ((self.G.lesser_buf, row_l), (self.G.greater_buf, row_g)):
            slab = _row_to_slab(row)
            buf[r, :2 * m] = slab
            buf[:2 * m, r] = -slab.conj().T
        # weighted advanced function, column i: w_k^(i) * G^A(t_k, t_i) for k <= i
        w = np.full(m, self.dt)
        w[0] = w[-1] = self.dt / 2
        if i == 0:
            w[:] = 0.0
        col = -(self.G.greater_buf[:2 * m, r] - self.G.lesser_buf[:2 * m, r])
        self.gaw[:2 * m, r] = np.repeat(w, 2)[:, None] * col

    def _sigma_row(self, i: int):
        m = i + 1
        lags = i - np.arange(m)
        r = slice(2 * i, 2 * i + 2)
        row_l = _slab_to_row(self.G.lesser_buf[r, :2 * m])
        row_g = _slab_to_row(self.G.greater_buf[r, :2 * m])
        v = self.v
        sig_l = 1j * self.b_lesser[lags][:, None, None] * (v @ row_l @ v)
        sig_g = 1j * self.b_greater[lags][:, None, None] * (v @ row_g @ v)
        return sig_l, sig_g

    def _collision(self, i: int):
        """Collision integrals ``I<, I>`` (t_i, t_j) for j <= i as ``(i+1, 2, 2)``."""
        m = i + 1
        sig_l, sig_g = self._sigma_row(i)
        w = np.full(m, self.dt)
        w[0] = w[-1] = self.dt / 2
        if i == 0:
            w[:] = 0.0
        ret = _row_to_slab(w[:, None, None] * (sig_g - sig_l))
        gl = self.G.lesser_buf[:2 * m, :2 * m]
        gg = self.G.greater_buf[:2 * m, :2 * m]
        t1_l = ret @ gl
        t1_g = ret @ gg
        t2 = np.vstack([_row_to_slab(sig_l), _row_to_slab(sig_g)]) @ self.gaw[:2 * m, :2 * m]
        return _slab_to_row(t1_l + t2[:2]), _slab_to_row(t1_g + t2[2:])

    # -- stepping ----------------------------------------------------------
    def _advance(self, i: int, coll_l_new, coll_g_new):
        """Row ``i+1`` from row ``i`` and collision integrals on both rows."""
        U = self.free_steps[i]
        Ud = U.conj().T
        h = 0.5 * self.dt
        rows = []
        for buf, coll_old, coll_new in (
            (self.G.lesser_buf, self.coll_l, coll_l_new),
            (self.G.greater_buf, self.coll_g, coll_g_new),
        ):
            old = _slab_to_row(buf[2 * i:2 * i + 2, :2 * (i + 1)])
            new = np.empty((i + 2, 2, 2), complex)
            new[:-1] = U @ (old - 1j * h * coll_old) - 1j * h * coll_new[:-1]
            c_old = coll_old[-1] + coll_old[-1].conj().T
            c_new = coll_new[-1] + coll_new[-1].conj().T
            new[-1] = U @ (old[-1] - 1j * h * c_old) @ Ud - 1j * h * c_new
            rows.append(new)
        return rows

    def step(self) -> None:
        """Extend the grid by one time slice."""
        i = self.G.extent - 1
        if i + 1 >= len(self.free_steps) + 1:
            raise IndexError("propagation grid exhausted")
        # predictor: collision integrals carried over from slice i
        guess_l = np.concatenate([self.coll_l, self.coll_l[-1:]])
        guess_g = np.concatenate([self.coll_g, self.coll_g[-1:]])
        row_l, row_g = self._advance(i, guess_l, guess_g)
        self._store_row(i + 1, row_l, row_g)
        for it in range(1, self.max_iterations + 1):
            coll_l, coll_g = self._collision(i + 1)
            new_l, new_g = self._advance(i, coll_l, coll_g)
            change = max(np.max(np.abs(new_l - row_l)), np.max(np.abs(new_g - row_g)))
            row_l, row_g = new_l, new_g
            self._store_row(i + 1, row_l, row_g)
            if change < self.tol:
                break
        else:
            raise CorrectorError(
                f"corrector did not converge at t={(i + 1) * self.dt:.6g} "
                f"(last change {change:.3g}); use a smaller negf_dt"
            )
        self.iterations.append(it)
        # collision from the last pass differs from the stored row by O(tol)
        self.coll_l, self.coll_g = coll_l, coll_g
        self.G.extent = i + 2


def kb_step(prop: KBPropagator) -> TwoTimeGF:
    """Extend the propagator's Green's function by one slice and return it."""
    prop.step()
    return prop.G


def free_step_propagators(params: SystemParams, signal: DriveSignal | None, times: np.ndarray) -> np.ndarray:
    """Free evolution over each NEGF step, from RK4 on a sub-grid of ``qme_dt``."""
    dt = times[1] - times[0]
    sub = max(1, int(np.ceil(dt / params.qme_dt - 1e-9)))
    fine = np.linspace(times[0], times[-1], sub * (len(times) - 1) + 1)
    free = propagate_free(params, signal, fine)
    U = free.U[::sub]
    return U[1:] @ np.conj(np.swapaxes(U[:-1], -1, -2))


def negf_trajectory(
    params: SystemParams,
    signal: DriveSignal | None,
    rho0: QubitState,
    t_end: float | None = None,
    *,
    bath: BathCorrelation | None = None,
    dt: float | None = None,
    corrector_tol: float = 1e-9,
    progress=None,
) -> Trajectory:
    """Propagate the Kadanoff-Baym equations from a decoupled initial state.

    Returns a :class:`Trajectory` whose ``extra["gf"]`` holds the two-time
    Green's function.  Thermodynamic columns are filled by
    :func:`drivenqubit.thermo.attach_ledger`; here they are NaN.
    """
    if t_end is None:
        if signal is None:
            raise ValueError("t_end is required without a drive signal")
        t_end = signal.control_time
    dt = dt if dt is not None else params.negf_step(t_end)
    times = time_grid(t_end, dt)
    n = len(times) - 1
    if bath is None:
        bath = build_bath_correlation(params, t_end)
    kernels = bath_kernels(bath, dt, n)
    steps = free_step_propagators(params, signal, times)
    prop = KBPropagator(rho0, steps, kernels, dt, corrector_tol=corrector_tol)
    for k in range(n):
        prop.step()
        if progress is not None:
            progress(k + 1, n)
    rho = prop.G.density()
    nan = np.full(len(times), np.nan)
    return Trajectory(
        "negf", times, drive_on_grid(signal, times), rho, nan, nan.copy(), von_neumann_entropy(rho),
        extra={"gf": prop.G, "bath": bath, "iterations": np.array(prop.iterations), "rho0": rho0},
    )
