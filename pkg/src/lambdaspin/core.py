"""Rotating-frame optical Bloch equations for a three-level Lambda system.

Basis order is ``(g1, g2, e)``. Level ``g1`` sits at ``delta_avg - delta/2``
and couples to ``e`` through ``omega_minus``; level ``g2`` sits at
``delta_avg + delta/2`` and couples through ``omega_plus``. The excited
level ``e`` is the zero of energy.

Units: every quantity handled here is angular (rad/us) and times are in
microseconds. Use :func:`mhz` to convert ordinary frequencies once, at the
configuration boundary.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import DegenerateInputError, InvalidWindowError, NonConvergenceError

__all__ = [
    "LambdaParams",
    "FieldSample",
    "mhz",
    "to_mhz",
    "nv_params",
    "hamiltonian",
    "dissipator",
    "rhs",
    "liouvillian",
    "propagate",
    "propagate_batch",
    "default_time_step",
    "piecewise_constant_oracle",
    "effective_rabi_frequency",
    "dark_state",
    "effective_two_level_propagate",
    "projector",
    "ground_state",
    "check_density_matrix",
]

TWO_PI = 2.0 * math.pi

# Optical decay and coherence rates, and the electron spin T2.
NV_GAMMA_MHZ = 7.0
NV_T2_US = 200.0

MAX_PHASE_PER_STEP = 0.04
# stage samples at a step's ends are taken this fraction of a step inside it
_EDGE_INSET = 1e-9
TRACE_DRIFT_LIMIT = 1e-6


def mhz(f_mhz):
    """Ordinary frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * f_mhz


def to_mhz(omega):
    return omega / TWO_PI


@dataclass(frozen=True)
class LambdaParams:
    """Detunings and rates of the Lambda system, all angular (rad/us)."""

    delta_avg: float = 0.0
    delta_two_photon: float = 0.0
    gamma_repop: float = 0.0
    gamma_opt: float = 0.0
    gamma_spin: float = 0.0
    leak_rate: float = 0.0

    def __post_init__(self):
        for name in ("gamma_repop", "gamma_opt", "gamma_spin", "leak_rate"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if self.gamma_opt < self.gamma_repop:
            warnings.warn(
                "gamma_opt < gamma_repop: the dissipator is not completely positive",
                RuntimeWarning, stacklevel=3)

    def replace(self, **changes) -> "LambdaParams":
        return dataclasses.replace(self, **changes)

    @property
    def level_energies(self) -> tuple[float, float]:
        return (self.delta_avg - 0.5 * self.delta_two_photon,
                self.delta_avg + 0.5 * self.delta_two_photon)


def nv_params(delta_avg_mhz: float, delta_two_photon_mhz: float = 0.0, *,
              decay: bool = True, leak_rate_mhz: float = 0.0) -> LambdaParams:
    """NV defaults: Gamma/2pi = gamma/2pi = 7 MHz, gamma_s = 1/T2 with T2 = 200 us."""
    gamma = mhz(NV_GAMMA_MHZ) if decay else 0.0
    return LambdaParams(
        delta_avg=mhz(delta_avg_mhz),
        delta_two_photon=mhz(delta_two_photon_mhz),
        gamma_repop=gamma,
        gamma_opt=gamma,
        gamma_spin=1.0 / NV_T2_US if decay else 0.0,
        leak_rate=mhz(leak_rate_mhz),
    )


@dataclass(frozen=True)
class FieldSample:
    omega_plus: float = 0.0
    omega_minus: float = 0.0

    def __post_init__(self):
        if self.omega_plus < 0 or self.omega_minus < 0:
            raise ValueError("Rabi frequencies must be >= 0")


def hamiltonian(params: LambdaParams, fields: FieldSample) -> np.ndarray:
    e1, e2 = params.level_energies
    m = 0.5 * fields.omega_minus
    p = 0.5 * fields.omega_plus
    return np.array([[e1, 0.0, m],
                     [0.0, e2, p],
                     [m, p, 0.0]], dtype=complex)


def dissipator(params: LambdaParams, rho: np.ndarray) -> np.ndarray:
    """Repopulation of both ground levels, coherence decay, optional leak."""
    rho = np.asarray(rho, dtype=complex)
    G, g, gs = params.gamma_repop, params.gamma_opt, params.gamma_spin
    pe = rho[2, 2]
    D = np.empty((3, 3), dtype=complex)
    D[0, 0] = D[1, 1] = G * pe
    D[2, 2] = -2.0 * G * pe - params.leak_rate * pe
    D[0, 1] = -gs * rho[0, 1]
    D[1, 0] = -gs * rho[1, 0]
    D[0, 2] = -g * rho[0, 2]
    D[2, 0] = -g * rho[2, 0]
    D[1, 2] = -g * rho[1, 2]
    D[2, 1] = -g * rho[2, 1]
    return D


def rhs(params: LambdaParams, fields: FieldSample, rho: np.ndarray) -> np.ndarray:
    """Time derivative ``-i[H, rho] + D(rho)``."""
    rho = np.asarray(rho, dtype=complex)
    H = hamiltonian(params, fields)
    return -1j * (H @ rho - rho @ H) + dissipator(params, rho)


def liouvillian(params: LambdaParams, fields: FieldSample) -> np.ndarray:
    """9x9 matrix of ``rhs`` acting on the row-major flattening of rho."""
    L = np.empty((9, 9), dtype=complex)
    for k in range(9):
        basis = np.zeros(9, dtype=complex)
        basis[k] = 1.0
        L[:, k] = rhs(params, fields, basis.reshape(3, 3)).ravel()
    return L


def piecewise_constant_oracle(rho0, fields: FieldSample, params: LambdaParams, t: float) -> np.ndarray:
    """Exact evolution over ``t`` with constant fields via the matrix exponential."""
    L = liouvillian(params, fields)
    vec = np.asarray(rho0, dtype=complex).ravel()
    return (expm(L * t) @ vec).reshape(3, 3)


def effective_rabi_frequency(omega_plus: float, omega_minus: float, delta_avg: float) -> float:
    """Two-photon Rabi frequency ``omega_plus * omega_minus / (2 * delta_avg)``."""
    if delta_avg == 0:
        raise ZeroDivisionError("effective Rabi frequency is undefined at zero one-photon detuning")
    return omega_plus * omega_minus / (2.0 * delta_avg)


def dark_state(omega_plus: float, omega_minus: float) -> np.ndarray:
    """Ground-manifold amplitudes ``(c_g1, c_g2)`` of the state decoupled from ``e``.

    ``g1`` couples through ``omega_minus`` and ``g2`` through ``omega_plus``,
    so the uncoupled combination is ``(omega_plus, -omega_minus)`` normalized.
    """
    norm = math.hypot(omega_plus, omega_minus)
    if norm == 0:
        raise DegenerateInputError("dark state undefined when both fields vanish")
    return np.array([omega_plus / norm, -omega_minus / norm])


def effective_two_level_propagate(rho0, omega_r: float, delta_two_photon: float, t: float) -> np.ndarray:
    """Closed-form evolution of the adiabatically eliminated spin.

    ``H = diag(-delta/2, +delta/2) + (omega_r/2) sigma_x`` in the ``(g1, g2)``
    basis, matching the level placement of the full model. No decay.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    omega = math.hypot(omega_r, delta_two_photon)
    if omega == 0:
        return rho0.copy()
    c = math.cos(0.5 * omega * t)
    s = math.sin(0.5 * omega * t)
    nx = omega_r / omega
    nz = -delta_two_photon / omega
    U = np.array([[c - 1j * s * nz, -1j * s * nx],
                  [-1j * s * nx, c + 1j * s * nz]])
    return U @ rho0 @ U.conj().T


def projector(amplitudes) -> np.ndarray:
    """Density matrix of a pure state; 2-component inputs live in the ground manifold."""
    psi = np.zeros(3, dtype=complex)
    amplitudes = np.asarray(amplitudes, dtype=complex)
    psi[: amplitudes.size] = amplitudes
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def ground_state(index: int = 0) -> np.ndarray:
    rho = np.zeros((3, 3), dtype=complex)
    rho[index, index] = 1.0
    return rho


def check_density_matrix(rho, *, hermitian_tol=1e-12, trace_tol=1e-9, psd_tol=1e-9,
                         expected_trace: float | None = 1.0) -> None:
    """Raise ``ValueError`` when ``rho`` violates a density-matrix invariant."""
    rho = np.asarray(rho)
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > hermitian_tol:
        raise ValueError(f"not Hermitian (max deviation {herm:.3g})")
    if expected_trace is not None:
        drift = abs(np.trace(rho) - expected_trace)
        if drift > trace_tol:
            raise ValueError(f"trace off by {drift:.3g}")
    low = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if low < -psd_tol:
        raise ValueError(f"negative eigenvalue {low:.3g}")


# --------------------------------------------------------------------------
# Integrator


def _to_real(rhos: np.ndarray) -> np.ndarray:
    """``(B, 3, 3)`` complex -> ``(9, B)`` real state vectors."""
    S = np.empty((9, rhos.shape[0]))
    S[0] = rhos[:, 0, 0].real
    S[1] = rhos[:, 1, 1].real
    S[2] = rhos[:, 2, 2].real
    S[3], S[4] = rhos[:, 0, 1].real, rhos[:, 0, 1].imag
    S[5], S[6] = rhos[:, 0, 2].real, rhos[:, 0, 2].imag
    S[7], S[8] = rhos[:, 1, 2].real, rhos[:, 1, 2].imag
    return S


def _to_complex(S: np.ndarray) -> np.ndarray:
    """``(..., 9, B)`` real -> ``(B, ..., 3, 3)`` complex."""
    S = np.moveaxis(S, -1, 0)
    rho = np.empty(S.shape[:-1] + (3, 3), dtype=complex)
    rho[..., 0, 0] = S[..., 0]
    rho[..., 1, 1] = S[..., 1]
    rho[..., 2, 2] = S[..., 2]
    rho[..., 0, 1] = S[..., 3] + 1j * S[..., 4]
    rho[..., 0, 2] = S[..., 5] + 1j * S[..., 6]
    rho[..., 1, 2] = S[..., 7] + 1j * S[..., 8]
    rho[..., 1, 0] = rho[..., 0, 1].conj()
    rho[..., 2, 0] = rho[..., 0, 2].conj()
    rho[..., 2, 1] = rho[..., 1, 2].conj()
    return rho


def default_time_step(params_list, sequence) -> float:
    """Largest step ``1/K`` us (``K`` a multiple of 1000) keeping the phase per step <= MAX_PHASE_PER_STEP (0.04 rad).

    The 1 ns alignment puts any nanosecond-resolution time exactly on the grid.
    """
    if isinstance(params_list, LambdaParams):
        params_list = [params_list]
    rate = max(abs(p.delta_avg) + 0.5 * abs(p.delta_two_photon) + 2.0 * p.gamma_repop
               for p in params_list)
    rate += sequence.peak_plus + sequence.peak_minus
    per_ns = max(1, math.ceil(rate / (MAX_PHASE_PER_STEP * 1000.0)))
    return 1.0 / (1000.0 * per_ns)


def _grid_index(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) < 1e-6 else x


def _plan(sequence, h: float, n_end: int):
    """Split ``[0, n_end)`` steps into runs of constant fields and runs needing stage sampling.

    Returns ``(n0, n1, fields)`` with ``fields`` a ``(plus, minus)`` tuple for
    constant runs and ``None`` otherwise. A step is constant only when it lies
    strictly between two breakpoints of a flat region.
    """
    t_end = n_end * h
    bps = sorted({b for b in sequence.breakpoints() if 0.0 <= b < t_end} | {0.0, t_end})
    runs = []
    cursor = 0
    for a, b in zip(bps, bps[1:]):
        probe = a + (b - a) * np.array([0.25, 0.5, 0.75])
        plus, minus = sequence.fields(probe)
        if np.ptp(plus) or np.ptp(minus):
            continue
        lo = int(math.floor(_grid_index(a / h))) + 1
        hi = int(math.ceil(_grid_index(b / h))) - 1
        lo = max(lo, cursor)
        hi = min(hi, n_end)
        if hi <= lo:
            continue
        if lo > cursor:
            runs.append((cursor, lo, None))
        runs.append((lo, hi, (float(plus[1]), float(minus[1]))))
        cursor = hi
    if cursor < n_end:
        runs.append((cursor, n_end, None))
    return runs


class _Batch:
    """Per-member coefficient arrays plus a cache of constant-field step matrices."""

    def __init__(self, params_list, h):
        self.h = h
        e = np.array([p.level_energies for p in params_list])
        self.d1 = np.ascontiguousarray(e[:, 0])
        self.d2 = np.ascontiguousarray(e[:, 1])
        self.G = np.array([p.gamma_repop for p in params_list])
        self.g = np.array([p.gamma_opt for p in params_list])
        self.gs = np.array([p.gamma_spin for p in params_list])
        self.lk = np.array([p.leak_rate for p in params_list])
        self._steps = {}
        self._powers = {}

    def step_matrix(self, fields):
        M = self._steps.get(fields)
        if M is None:
            A = self.h * _kernels.real_generators(fields[0], fields[1], self.d1, self.d2,
                                                  self.G, self.g, self.gs, self.lk)
            # RK4 applied to a linear autonomous system is this Taylor polynomial.
            eye = np.broadcast_to(np.eye(9), A.shape)
            A2 = A @ A
            A3 = A2 @ A
            M = eye + A + A2 / 2.0 + A3 / 6.0 + (A3 @ A) / 24.0
            self._steps[fields] = M
        return M

    def advance_constant(self, S, fields, k):
        key = (fields, k)
        P = self._powers.get(key)
        if P is None:
            P = np.linalg.matrix_power(self.step_matrix(fields), k)
            self._powers[key] = P
        return np.ascontiguousarray(np.einsum("bij,jb->ib", P, S))

    def _rk4(self, S, sequence, starts, h):
        inset = _EDGE_INSET * h
        t = np.stack([starts + inset, starts + 0.5 * h, starts + h - inset], axis=1).ravel()
        plus, minus = sequence.fields(t)
        _kernels.rk4_steps(S, plus, minus, h, self.d1, self.d2,
                           self.G, self.g, self.gs, self.lk)

    def advance_sampled(self, S, sequence, n0, n1):
        """RK4 steps ``n0 .. n1``; a step containing an off-grid breakpoint is split there."""
        h = self.h
        cuts = {}
        for b in sequence.breakpoints():
            x = b / h
            if n0 * h < b < n1 * h and _grid_index(x) != round(x):
                cuts.setdefault(int(math.floor(x)), []).append(b)
        pos = n0
        for k in sorted(cuts):
            if k > pos:
                self._rk4(S, sequence, np.arange(pos, k) * h, h)
            edges = [k * h, *sorted(cuts[k]), (k + 1) * h]
            for a, b in zip(edges, edges[1:]):
                if b - a > 0:
                    self._rk4(S, sequence, np.array([a]), b - a)
            pos = k + 1
        if n1 > pos:
            self._rk4(S, sequence, np.arange(pos, n1) * h, h)
        return S


def propagate_batch(rho0, sequence, params_list, sample_times, dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Integrate many parameter sets through one pulse sequence on a shared step grid.

    Returns ``(times, states)`` where ``times`` are the snapped sample times
    and ``states`` has shape ``(B, n_times, 3, 3)``. ``rho0`` is one 3x3
    matrix or one per member. See :func:`propagate` for the method.
    """
    params_list = list(params_list)
    if not params_list:
        raise ValueError("need at least one parameter set")
    times = np.atleast_1d(np.asarray(sample_times, dtype=float))
    if times.ndim != 1 or times.size == 0:
        raise ValueError("sample_times must be a non-empty 1-D sequence")
    if np.any(np.diff(times) < 0):
        raise ValueError("sample_times must be nondecreasing")
    tol = 1e-9 * max(1.0, sequence.span)
    if times[0] < -tol or times[-1] > sequence.span + tol:
        raise InvalidWindowError(
            f"sample times [{times[0]}, {times[-1]}] outside [0, {sequence.span}]")
    h = default_time_step(params_list, sequence) if dt is None else float(dt)
    if not h > 0:
        raise ValueError("dt must be > 0")

    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 2:
        rho0 = np.broadcast_to(rho0, (len(params_list), 3, 3))
    S = _to_real(rho0)
    trace0 = S[0] + S[1] + S[2]

    steps = np.maximum(np.rint(times / h).astype(np.int64), 0)
    out = np.empty((times.size, 9, S.shape[1]))
    batch = _Batch(params_list, h)

    def record(n):
        hit = steps == n
        out[hit] = S

    record(0)
    sample_steps = np.unique(steps)
    # an unstable step overflows; that is caught below as non-finite output
    with np.errstate(over="ignore", invalid="ignore"):
        for n0, n1, fields in _plan(sequence, h, int(steps[-1])):
            stops = [int(s) for s in sample_steps if n0 < s < n1] + [n1]
            pos = n0
            for stop in stops:
                if fields is None:
                    S = batch.advance_sampled(S, sequence, pos, stop)
                else:
                    S = batch.advance_constant(S, fields, stop - pos)
                record(stop)
                pos = stop

    if not np.all(np.isfinite(out)):
        raise NonConvergenceError("non-finite state; dt is far too large")
    traces = out[:, 0] + out[:, 1] + out[:, 2]
    drift = traces - trace0
    lossless = batch.lk == 0
    if np.any(np.abs(drift[:, lossless]) > TRACE_DRIFT_LIMIT) or np.any(drift > TRACE_DRIFT_LIMIT):
        raise NonConvergenceError(
            f"trace drift {np.max(np.abs(drift)):.3g} exceeds {TRACE_DRIFT_LIMIT}; reduce dt")
    return steps * h, _to_complex(out)


def propagate(rho0, sequence, params: LambdaParams, sample_times, dt: float | None = None):
    """Fixed-step fourth-order Runge-Kutta integration of the master equation.

    Fields are evaluated at the RK4 stage times ``t, t + dt/2, t + dt``,
    with the end samples taken just inside the step so a pulse edge is seen
    from the correct side. A step that contains a pulse breakpoint off the
    step grid is split into two substeps at that breakpoint.
    Sample times are snapped to the nearest step boundary (the default step
    is 1 ns aligned, so nanosecond-resolution times are hit exactly). Steps
    lying inside a region where both fields are constant are applied as
    powers of the exact one-step RK4 matrix, which is the same map.

    Returns a list of ``(time, rho)`` pairs.

    Raises
    ------
    InvalidWindowError
        A sample time lies outside ``[0, sequence.span]``.
    NonConvergenceError
        The trace drifted by more than 1e-6, which signals a too-large ``dt``.
    """
    times, states = propagate_batch(rho0, sequence, [params], sample_times, dt)
    return [(float(t), rho) for t, rho in zip(times, states[0])]
