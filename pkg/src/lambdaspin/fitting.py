"""Least-squares extraction of oscillation parameters from scan curves.

Two models are supported::

    damped cosine   y = A exp(-t/tau) cos(2 pi f t + phi) + B + C t
    gaussian cosine y = A exp(-(t/T2*)^2) cos(2 pi f t + phi) + B

Frequencies are ordinary (MHz for microsecond time axes). Seeding takes
the frequency from the dominant non-DC bin of a zero-padded DFT, refines
it by scanning a linear least-squares problem, and takes the decay from a
regression of the log analytic-signal envelope. The nonlinear refinement
is scipy's trust-region least squares with a finite-difference Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import hilbert

from .errors import NoOscillationError, NonConvergenceError

__all__ = [
    "FitResult",
    "damped_cosine",
    "gaussian_cosine",
    "fit_damped_cosine",
    "fit_gaussian_cosine",
    "extract_period",
]

MAX_ITERATIONS = 200
STEP_TOL = 1e-10
_PAD = 16


def damped_cosine(t, amplitude, frequency, phase, decay_time, offset, slope=0.0):
    t = np.asarray(t, dtype=float)
    rate = 0.0 if math.isinf(decay_time) else 1.0 / decay_time
    return amplitude * np.exp(-rate * t) * np.cos(2 * np.pi * frequency * t + phase) + offset + slope * t


def gaussian_cosine(t, amplitude, t2_star, frequency, phase, offset):
    t = np.asarray(t, dtype=float)
    s = 0.0 if math.isinf(t2_star) else 1.0 / t2_star ** 2
    return amplitude * np.exp(-s * t ** 2) * np.cos(2 * np.pi * frequency * t + phase) + offset


@dataclass
class FitResult:
    model: str
    parameters: dict[str, float]
    units: dict[str, str]
    residual_norm: float
    seed_residual_norm: float
    converged: bool
    iterations: int
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]

    def curve(self, t) -> np.ndarray:
        p = self.parameters
        if self.model == "damped-cosine":
            return damped_cosine(t, p["amplitude"], p["frequency"], p["phase"],
                                 p["decay_time"], p["offset"], p["slope"])
        return gaussian_cosine(t, p["amplitude"], p["t2_star"], p["frequency"],
                               p["phase"], p["offset"])


# -- internal parameter vectors ---------------------------------------------
# damped:   [A, f, phi, rate, B, C]   rate = 1/tau
# gaussian: [A, f, phi, s, B]         s = 1/T2*^2


def _eval_damped(x, t):
    A, f, phi, k, B, C = x
    return A * np.exp(-k * t) * np.cos(2 * np.pi * f * t + phi) + B + C * t


def _eval_gauss(x, t):
    A, f, phi, s, B = x
    return A * np.exp(-s * t * t) * np.cos(2 * np.pi * f * t + phi) + B


def _prepare(t, y):
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if t.shape != y.shape:
        raise ValueError("t and y must have the same length")
    order = np.argsort(t, kind="stable")
    t, y = t[order], y[order]
    if t.size < 6:
        raise NoOscillationError("too few points to resolve an oscillation")
    if not np.all(np.isfinite(y)):
        raise ValueError("data contains non-finite values")
    return t, y


def _detrend(t, y, with_slope):
    basis = [np.ones_like(t)]
    if with_slope:
        basis.append(t - t.mean())
    X = np.stack(basis, axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return y - X @ coef


def _uniform(t, r):
    grid = np.linspace(t[0], t[-1], t.size)
    if np.allclose(np.diff(t), grid[1] - grid[0], rtol=1e-6, atol=0):
        return grid, r
    return grid, np.interp(grid, t, r)


def _seed_frequency(t, r):
    """Dominant non-DC frequency of the detrended data ``r``."""
    scale = max(1.0, float(np.max(np.abs(r))))
    if np.ptp(r) <= 1e-12 * scale:
        raise NoOscillationError("data are constant after removing the trend")
    grid, ru = _uniform(t, r)
    n = grid.size
    dt = grid[1] - grid[0]
    spectrum = np.abs(np.fft.rfft(ru, n * _PAD))
    freqs = np.fft.rfftfreq(n * _PAD, dt)
    # fewer than two cycles across the record cannot be told apart from a trend
    coarse = np.abs(np.fft.rfft(ru))
    if coarse.size < 3 or np.argmax(coarse) < 2:
        raise NoOscillationError("spectral peak indistinguishable from DC")
    usable = freqs >= 1.0 / (n * dt)
    k = np.flatnonzero(usable)[np.argmax(spectrum[usable])]
    if spectrum[k] <= 1e-9 * scale * n:
        raise NoOscillationError("no spectral peak")
    return float(freqs[k]), 1.0 / (n * dt)


def _envelope_regression(t, r, power):
    """Decay coefficient from ``log|analytic(r)|`` vs ``t**power``."""
    grid, ru = _uniform(t, r)
    env = np.abs(hilbert(ru))
    n = env.size
    keep = np.zeros(n, dtype=bool)
    keep[n // 10: n - n // 10] = True
    keep &= env > 0.1 * env.max()
    if keep.sum() < 3:
        return 0.0
    slope = np.polyfit(grid[keep] ** power, np.log(env[keep]), 1)[0]
    return max(-slope, 0.0)


def _linear_amplitudes(t, y, f, decay, with_slope, power):
    env = np.exp(-decay * t ** power)
    cols = [env * np.cos(2 * np.pi * f * t), env * np.sin(2 * np.pi * f * t), np.ones_like(t)]
    if with_slope:
        cols.append(t)
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return coef, float(resid @ resid)


def _refine_frequency(t, y, f0, df, decay, with_slope, power):
    """Scan f over +-1 DFT bin with the linear parameters solved exactly."""
    lo = max(f0 - df, 0.25 * df)
    candidates = np.linspace(lo, f0 + df, 81)
    costs = [_linear_amplitudes(t, y, f, decay, with_slope, power)[1] for f in candidates]
    return float(candidates[int(np.argmin(costs))])


def _normalise(A, phi):
    A, phi = float(A), float(phi)
    if A < 0:
        A, phi = -A, phi + math.pi
    phi = math.remainder(phi, 2 * math.pi)
    if phi <= -math.pi:
        phi += 2 * math.pi
    return A, phi


def _fit(t, y, model):
    t, y = _prepare(t, y)
    damped = model == "damped-cosine"
    power = 1 if damped else 2
    evaluate = _eval_damped if damped else _eval_gauss
    r = _detrend(t, y, with_slope=damped)
    f0, df = _seed_frequency(t, r)
    decay0 = _envelope_regression(t, r, power)
    f0 = _refine_frequency(t, y, f0, df, decay0, damped, power)

    yscale = float(np.linalg.norm(y - y.mean())) or 1.0
    span = t[-1] - t[0]
    decay_floor = 1.0 / span ** power
    seeds = []
    for decay in (decay0, 3.0 * decay0, decay0 / 3.0, 0.0, decay_floor):
        coef, _ = _linear_amplitudes(t, y, f0, decay, damped, power)
        A = math.hypot(coef[0], coef[1])
        phi = math.atan2(-coef[1], coef[0])
        x0 = [A, f0, phi, decay, coef[2]] + ([coef[3]] if damped else [])
        seeds.append(np.array(x0, dtype=float))

    lower = np.full(seeds[0].size, -np.inf)
    lower[1] = 0.0
    lower[3] = 0.0
    best = None
    best_seed_cost = None
    for x0 in seeds:
        seed_cost = float(np.sum((evaluate(x0, t) - y) ** 2))
        sol = least_squares(lambda x: evaluate(x, t) - y, x0, method="trf",
                            bounds=(lower, np.inf), x_scale="jac", jac="2-point",
                            xtol=STEP_TOL, ftol=1e-15, gtol=1e-15, max_nfev=MAX_ITERATIONS)
        if best is None or sol.cost < best.cost:
            best, best_seed_cost = sol, seed_cost
    if best.status <= 0:
        raise NonConvergenceError(f"{model} fit hit the iteration cap ({MAX_ITERATIONS})")

    x = best.x
    A, phi = _normalise(x[0], x[2])
    residual = math.sqrt(2.0 * best.cost) / yscale
    seed_residual = math.sqrt(best_seed_cost) / yscale
    if damped:
        params = {"amplitude": A, "frequency": float(x[1]), "phase": phi,
                  "decay_time": math.inf if x[3] == 0 else float(1.0 / x[3]),
                  "offset": float(x[4]), "slope": float(x[5])}
        units = {"amplitude": "", "frequency": "MHz", "phase": "rad",
                 "decay_time": "us", "offset": "", "slope": "1/us"}
    else:
        params = {"amplitude": A, "t2_star": math.inf if x[3] == 0 else float(1.0 / math.sqrt(x[3])),
                  "frequency": float(x[1]), "phase": phi, "offset": float(x[4])}
        units = {"amplitude": "", "t2_star": "us", "frequency": "MHz",
                 "phase": "rad", "offset": ""}
    return FitResult(model, params, units, residual, seed_residual,
                     converged=True, iterations=int(best.nfev))


def fit_damped_cosine(t, y) -> FitResult:
    """Fit ``A exp(-t/tau) cos(2 pi f t + phi) + B + C t``.

    Raises
    ------
    NoOscillationError
        The data are flat, or their spectrum peaks at DC.
    NonConvergenceError
        The optimizer hit the iteration cap.
    """
    return _fit(t, y, "damped-cosine")


def fit_gaussian_cosine(t, y) -> FitResult:
    """Fit ``A exp(-(t/T2*)^2) cos(2 pi f t + phi) + B``."""
    return _fit(t, y, "gaussian-cosine")


def extract_period(t, y) -> float:
    """Oscillation period (same unit as ``t``) from a damped-cosine fit."""
    return 1.0 / fit_damped_cosine(t, y)["frequency"]
