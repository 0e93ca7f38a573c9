"""Named measurement reproductions built on the propagator and ensemble layers.

Every scan starts from ``|g1><g1|`` and records final populations. Ensemble
members are split into fixed-size chunks that do not depend on the thread
count, and chunk results are reduced in member order, so output is
bit-for-bit the same for any ``threads``.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .core import LambdaParams, default_time_step, ground_state, mhz, propagate_batch
from .ensemble import EnsembleSpec, HyperfineConfig
from .errors import InsufficientDataError, NoOscillationError, NonConvergenceError
from .fitting import fit_damped_cosine
from .pulses import (PulseSequence, Shape, make_rabi_pair, make_ramsey_sequence,
                     make_stirap_pair)

__all__ = [
    "ExperimentConfig",
    "ScanResult",
    "PeriodRow",
    "rabi_scan",
    "stirap_scan",
    "ramsey_scan",
    "cpt_scan",
    "period_vs_detuning",
    "estimate_fidelity",
]

CHUNK = 64
POP_TOL = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    """Physical and numerical settings shared by all scans.

    Frequencies are ordinary (MHz, i.e. value/2pi) and times are in us;
    conversion to angular units happens in :meth:`params` and when pulses
    are built. ``omega_minus=None`` means equal to ``omega_plus``.
    """

    delta_avg: float = 1500.0
    delta_two_photon: float = 0.0
    omega_plus: float = 46.0
    omega_minus: float | None = None
    decay: bool = True
    gamma_repop: float = 7.0
    gamma_opt: float = 7.0
    t2: float = 200.0
    leak_rate: float = 0.0
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    stirap_width: float = 1.5
    pulse_shape: str = "trapezoid"
    ramsey_omega_r: float = 2.5
    dt: float | None = None
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.omega_plus < 0 or (self.omega_minus is not None and self.omega_minus < 0):
            raise ValueError("Rabi frequencies must be >= 0")
        if self.t2 <= 0:
            raise ValueError("t2 must be > 0")

    def params(self) -> LambdaParams:
        on = 1.0 if self.decay else 0.0
        return LambdaParams(
            delta_avg=mhz(self.delta_avg),
            delta_two_photon=mhz(self.delta_two_photon),
            gamma_repop=on * mhz(self.gamma_repop),
            gamma_opt=on * mhz(self.gamma_opt),
            gamma_spin=0.0 if not self.decay or math.isinf(self.t2) else 1.0 / self.t2,
            leak_rate=on * mhz(self.leak_rate),
        )

    @property
    def peak_plus(self) -> float:
        return mhz(self.omega_plus)

    @property
    def peak_minus(self) -> float:
        return mhz(self.omega_plus if self.omega_minus is None else self.omega_minus)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def snapshot(self) -> dict:
        snap = dataclasses.asdict(self)
        snap.pop("threads")
        return snap


@dataclass
class ScanResult:
    """Final populations of ``|g1>, |g2>, |e>`` over one scan variable."""

    scan_variable: str
    unit: str
    x: np.ndarray
    populations: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.populations = np.asarray(self.populations, dtype=float)
        if self.populations.shape != (self.x.size, 3):
            raise ValueError("populations must have shape (len(x), 3)")
        if np.any(np.diff(self.x) < 0):
            raise ValueError("scan points must be sorted by x")
        p = self.populations
        if p.size and (p.min() < -POP_TOL or p.max() > 1 + POP_TOL
                       or self.trace.max() > 1 + POP_TOL):
            raise NonConvergenceError("populations left [0, 1]; reduce dt")

    @property
    def pop_g1(self) -> np.ndarray:
        return self.populations[:, 0]

    @property
    def pop_g2(self) -> np.ndarray:
        return self.populations[:, 1]

    @property
    def pop_e(self) -> np.ndarray:
        return self.populations[:, 2]

    @property
    def trace(self) -> np.ndarray:
        return self.populations.sum(axis=1)

    @property
    def points(self) -> list[tuple[float, float, float, float, float]]:
        return [(float(x), float(a), float(b), float(c), float(a + b + c))
                for x, (a, b, c) in zip(self.x, self.populations)]

    def __len__(self):
        return self.x.size


# -- engine ----------------------------------------------------------------


def _members(cfg: ExperimentConfig, ensemble: EnsembleSpec | None = None):
    members = (ensemble or cfg.ensemble).members(cfg.params())
    return [p for p, _ in members], np.array([w for _, w in members])


def _run(cfg, sequences, sample_times, ensemble=None):
    """Ensemble-averaged populations, one ``(n_times, 3)`` array per sequence.

    All sequences and members share a single step size so every scan point
    is integrated on the same grid.
    """
    params, weights = _members(cfg, ensemble)
    dt = cfg.dt if cfg.dt is not None else min(default_time_step(params, s) for s in sequences)
    chunks = [slice(i, min(i + CHUNK, len(params))) for i in range(0, len(params), CHUNK)]
    tasks = [(k, c) for k in range(len(sequences)) for c in chunks]
    rho0 = ground_state(0)

    def work(task):
        k, c = task
        _, states = propagate_batch(rho0, sequences[k], params[c], sample_times[k], dt)
        return np.real(np.diagonal(states, axis1=2, axis2=3))

    if cfg.threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    out = []
    it = iter(results)
    for k in range(len(sequences)):
        pops = np.concatenate([next(it) for _ in chunks], axis=0)
        total = np.zeros(pops.shape[1:])
        for w, member in zip(weights, pops):
            total = total + w * member
        out.append(total)
    return out


def _sorted(values, name):
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError(f"{name} must not be empty")
    if np.any(x < 0):
        raise ValueError(f"{name} must be >= 0")
    return np.sort(x, kind="stable")


def _meta(cfg, experiment, **extra):
    return {"experiment": experiment, "version": __version__, "config": cfg.snapshot(), **extra}


# -- scans -----------------------------------------------------------------


def rabi_scan(durations, cfg: ExperimentConfig) -> ScanResult:
    """Final populations after simultaneous square pulses of each duration.

    One trajectory under the longest pulse pair is sampled at every
    duration: while both fields are on, a shorter pulse is a prefix of the
    longer one.
    """
    x = _sorted(durations, "durations")
    seq = make_rabi_pair(cfg.peak_plus, float(x[-1]), cfg.peak_minus)
    (pops,) = _run(cfg, [seq], [x])
    return ScanResult("duration", "us", x, pops, _meta(cfg, "rabi"))


def stirap_scan(T_values, t_rise: float, cfg: ExperimentConfig) -> ScanResult:
    """Final populations versus delay ``T`` for the ramped, delayed pulse pair."""
    x = _sorted(T_values, "T_values")
    shape = Shape(cfg.pulse_shape)
    if t_rise == 0 and shape is Shape.SQUARE:
        shape = Shape.TRAPEZOID
    seqs = [_stirap_sequence(cfg, t_rise, T, shape) for T in x]
    pops = _run(cfg, seqs, [np.array([s.span]) for s in seqs])
    return ScanResult("delay", "us", x, np.concatenate(pops),
                      _meta(cfg, "stirap", t_rise_us=float(t_rise)))


def _stirap_sequence(cfg, t_rise, T, shape):
    seq = make_stirap_pair(cfg.peak_plus, cfg.stirap_width, t_rise, float(T), shape)
    if cfg.peak_minus != cfg.peak_plus:
        minus = tuple(dataclasses.replace(e, peak=cfg.peak_minus) for e in seq.minus_envelopes)
        seq = PulseSequence(seq.plus_envelopes, minus, seq.span, seq.label)
    return seq


def ramsey_scan(tau_values, cfg: ExperimentConfig, manifold: int | str | None = None) -> ScanResult:
    """Final populations after two pi/2 Raman pulse pairs separated by ``tau``.

    ``manifold`` selects the nuclear-spin preparation: an integer ``m_n``
    for a single manifold, ``"random"`` for the equal-weight three-manifold
    mixture, or ``None`` to use ``cfg.ensemble`` unchanged.

    The metadata key ``pulse_time_offset_us`` is the effective extra
    free-precession time contributed by the two finite pulses,
    ``4 t_pi/2 / pi``; add it to ``tau`` before fitting a precession model.
    """
    x = _sorted(tau_values, "tau_values")
    ensemble = _with_manifold(cfg, manifold)
    params = cfg.params()
    omega_r = mhz(cfg.ramsey_omega_r)
    seqs = [make_ramsey_sequence(omega_r, params, float(tau)) for tau in x]
    pops = _run(cfg, seqs, [np.array([s.span]) for s in seqs], ensemble)
    t_half = seqs[0].plus_envelopes[0].width
    meta = _meta(cfg, "ramsey", manifold=str(manifold), pi_half_us=t_half,
                 pulse_time_offset_us=4.0 * t_half / math.pi)
    return ScanResult("tau", "us", x, np.concatenate(pops), meta)


def _with_manifold(cfg, manifold):
    if manifold is None:
        return cfg.ensemble
    base = cfg.ensemble.hyperfine or HyperfineConfig()
    extra = dict(dip_spacing=base.dip_spacing, hyperfine_A=base.hyperfine_A,
                 zeeman_wB=base.zeeman_wB)
    if manifold == "random":
        hyperfine = HyperfineConfig(**extra)
    else:
        hyperfine = HyperfineConfig.selected(int(manifold), **extra)
    return dataclasses.replace(cfg.ensemble, hyperfine=hyperfine)


def cpt_scan(two_photon_offsets, pulse_duration: float, cfg: ExperimentConfig) -> ScanResult:
    """Final populations after a long pulse pair versus laser two-photon offset (MHz).

    The three nuclear-spin manifolds are always summed (``cfg``'s hyperfine
    settings, or the defaults), so ``pop_g1`` dips wherever one manifold is
    on Raman resonance.
    """
    x = np.sort(np.asarray(two_photon_offsets, dtype=float).ravel(), kind="stable")
    if x.size == 0:
        raise ValueError("two_photon_offsets must not be empty")
    if pulse_duration < 0:
        raise ValueError("pulse_duration must be >= 0")
    hyperfine = cfg.ensemble.hyperfine or HyperfineConfig()
    seq = make_rabi_pair(cfg.peak_plus, float(pulse_duration), cfg.peak_minus)
    rows = []
    # every offset shifts only delta, so one step size serves the whole scan
    ensembles = [dataclasses.replace(cfg.ensemble, hyperfine=hyperfine, laser_offset=float(o))
                 for o in x]
    all_params = [p for e in ensembles for p in _members(cfg, e)[0]]
    dt = cfg.dt if cfg.dt is not None else default_time_step(all_params, seq)
    fixed = cfg.replace(dt=dt)
    for ens in ensembles:
        (pops,) = _run(fixed, [seq], [np.array([seq.span])], ens)
        rows.append(pops[0])
    return ScanResult("two_photon_offset", "MHz", x, np.array(rows),
                      _meta(cfg, "cpt", pulse_duration_us=float(pulse_duration)))


@dataclass(frozen=True)
class PeriodRow:
    delta_ghz: float
    intensity_scale: float
    period_us: float

    @property
    def rabi_frequency_mhz(self) -> float:
        return 1.0 / self.period_us


def period_vs_detuning(delta_values, intensity_scale, cfg: ExperimentConfig,
                       periods: float = 4.0, points_per_period: int = 16) -> list[PeriodRow]:
    """Fitted Rabi period for every (detuning GHz, intensity scale) pair.

    Both fields scale as ``sqrt(intensity_scale)``. Each scan covers
    ``periods`` expected periods, predicted from the effective two-photon
    Rabi frequency, at ``points_per_period`` samples per period.
    """
    rows = []
    for delta in delta_values:
        if delta == 0:
            raise ValueError("detuning must be non-zero")
        for scale in intensity_scale:
            if scale <= 0:
                raise ValueError("intensity_scale must be > 0")
            root = math.sqrt(scale)
            c = cfg.replace(delta_avg=1000.0 * delta, omega_plus=cfg.omega_plus * root,
                            omega_minus=None if cfg.omega_minus is None else cfg.omega_minus * root)
            f_plus, f_minus = c.omega_plus, c.omega_minus or c.omega_plus
            expected = 2.0 * abs(c.delta_avg) / (f_plus * f_minus)
            n = int(round(periods * points_per_period))
            durations = np.linspace(0.0, periods * expected, n + 1)
            scan = rabi_scan(durations, c)
            fit = fit_damped_cosine(scan.x, scan.pop_g2)
            rows.append(PeriodRow(float(delta), float(scale), 1.0 / fit["frequency"]))
    return rows


def estimate_fidelity(scan: ScanResult, participating_fraction: float) -> float:
    """Peak ``pop_g2`` within the first oscillation period over ``participating_fraction``.

    The period comes from a damped-cosine fit of ``pop_g2``. The result is
    clamped to ``[0, 1]``.

    Raises
    ------
    InsufficientDataError
        No oscillation is detectable, or the scan is shorter than one period.
    """
    if not 0 < participating_fraction <= 1:
        raise ValueError("participating_fraction must lie in (0, 1]")
    try:
        fit = fit_damped_cosine(scan.x, scan.pop_g2)
    except NoOscillationError as exc:
        raise InsufficientDataError(f"no oscillation detected: {exc}") from exc
    period = 1.0 / fit["frequency"]
    x0 = scan.x[0]
    if scan.x[-1] - x0 < period:
        raise InsufficientDataError("scan shorter than one oscillation period")
    window = scan.x <= x0 + period
    peak = float(scan.pop_g2[window].max())
    return min(max(peak / participating_fraction, 0.0), 1.0)
