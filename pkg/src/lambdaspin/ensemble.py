"""Inhomogeneous averaging: Gaussian quadrature over detunings and the 14N hyperfine sum.

Specs are given in ordinary frequency (MHz); offsets are converted to
angular units when applied to :class:`~lambdaspin.core.LambdaParams`.
All reductions run in fixed grid order so results do not depend on how
evaluations were scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import LambdaParams, mhz
from .errors import InvalidSpecError

__all__ = [
    "GaussianSpec",
    "HyperfineConfig",
    "EnsembleSpec",
    "gaussian_grid",
    "weighted_sum",
    "average_over_delta_avg",
    "average_over_two_photon",
    "hyperfine_sum",
]

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class GaussianSpec:
    fwhm: float = 0.0
    n_points: int = 21
    span_sigmas: float = 3.0

    def __post_init__(self):
        if self.fwhm < 0:
            raise InvalidSpecError("fwhm must be >= 0")
        if self.n_points < 1 or self.n_points % 2 == 0:
            raise InvalidSpecError(f"n_points must be a positive odd integer, got {self.n_points}")
        if self.span_sigmas <= 0:
            raise InvalidSpecError("span_sigmas must be > 0")

    @property
    def sigma(self) -> float:
        return self.fwhm / FWHM_PER_SIGMA


def gaussian_grid(spec: GaussianSpec) -> list[tuple[float, float]]:
    """Symmetric uniform grid over +-span_sigmas*sigma with normalized Gaussian weights."""
    if spec.fwhm == 0 or spec.n_points == 1:
        return [(0.0, 1.0)]
    sigma = spec.sigma
    half = spec.n_points // 2
    k = np.arange(-half, half + 1)
    offsets = k * (spec.span_sigmas * sigma / half)
    weights = np.exp(-0.5 * (k * (spec.span_sigmas / half)) ** 2)
    weights = weights / weights.sum()
    return [(float(x), float(w)) for x, w in zip(offsets, weights)]


@dataclass(frozen=True)
class HyperfineConfig:
    """Nuclear-spin manifolds m_n = -1, 0, +1 and their Raman resonance offsets.

    ``dip_spacing`` (MHz) is the two-photon detuning shift per unit m_n. The
    hyperfine constant and Zeeman splitting are carried for reference only.
    """

    dip_spacing: float = 4.4
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    hyperfine_A: float = 2.2
    zeeman_wB: float = 150.0

    manifolds = (-1, 0, 1)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != 3:
            raise InvalidSpecError("need three manifold weights")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1) > 1e-12:
            raise InvalidSpecError("manifold weights must be non-negative and sum to 1")
        if self.dip_spacing <= 0:
            raise InvalidSpecError("dip_spacing must be > 0")

    @classmethod
    def selected(cls, m_n: int, **kwargs) -> "HyperfineConfig":
        """Single-manifold preparation (nuclear-spin-selective initialization)."""
        if m_n not in cls.manifolds:
            raise InvalidSpecError(f"m_n must be one of {cls.manifolds}")
        weights = tuple(1.0 if m == m_n else 0.0 for m in cls.manifolds)
        return cls(weights=weights, **kwargs)

    def detuning(self, laser_offset: float, m_n: int) -> float:
        """Two-photon detuning (MHz) seen by manifold ``m_n``."""
        return laser_offset - m_n * self.dip_spacing

    def terms(self, laser_offset: float) -> list[tuple[int, float, float]]:
        """``(m_n, detuning MHz, weight)`` for manifolds with non-zero weight."""
        return [(m, self.detuning(laser_offset, m), w)
                for m, w in zip(self.manifolds, self.weights) if w > 0]


def weighted_sum(curves: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Left-to-right weighted sum (fixed order, hence reproducible)."""
    total = None
    for curve, w in zip(curves, weights):
        term = w * np.asarray(curve, dtype=float)
        total = term if total is None else total + term
    return total


def _evaluate(experiment, params_list, threads):
    if threads > 1 and len(params_list) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(experiment, params_list))
    return [experiment(p) for p in params_list]


def average_over_delta_avg(base: LambdaParams, spec: GaussianSpec,
                           experiment: Callable[[LambdaParams], np.ndarray],
                           threads: int = 1) -> np.ndarray:
    """Weighted average of ``experiment`` over a Gaussian spread of one-photon detuning."""
    grid = gaussian_grid(spec)
    members = [base.replace(delta_avg=base.delta_avg + mhz(x)) for x, _ in grid]
    return weighted_sum(_evaluate(experiment, members, threads), [w for _, w in grid])


def average_over_two_photon(base: LambdaParams, spec: GaussianSpec,
                            experiment: Callable[[LambdaParams], np.ndarray],
                            threads: int = 1) -> np.ndarray:
    """Weighted average of ``experiment`` over a Gaussian spread of two-photon detuning."""
    grid = gaussian_grid(spec)
    members = [base.replace(delta_two_photon=base.delta_two_photon + mhz(x)) for x, _ in grid]
    return weighted_sum(_evaluate(experiment, members, threads), [w for _, w in grid])


def hyperfine_sum(base: LambdaParams, config: HyperfineConfig, laser_two_photon_offset: float,
                  experiment: Callable[[LambdaParams], np.ndarray],
                  threads: int = 1) -> np.ndarray:
    """Sum ``experiment`` over nuclear-spin manifolds, each at its own two-photon detuning.

    The manifold detuning replaces ``base.delta_two_photon``.
    """
    terms = config.terms(laser_two_photon_offset)
    members = [base.replace(delta_two_photon=mhz(d)) for _, d, _ in terms]
    return weighted_sum(_evaluate(experiment, members, threads), [w for _, _, w in terms])


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything averaged over in one experiment.

    ``hyperfine=None`` means a single system at the base two-photon detuning;
    otherwise the manifold detunings are set from ``laser_offset`` (MHz).
    """

    delta_avg: GaussianSpec = field(default_factory=lambda: GaussianSpec(0.0, 1))
    two_photon: GaussianSpec = field(default_factory=lambda: GaussianSpec(0.0, 1))
    hyperfine: HyperfineConfig | None = None
    laser_offset: float = 0.0

    def members(self, base: LambdaParams) -> list[tuple[LambdaParams, float]]:
        """Flattened ``(params, weight)`` list: manifold outer, then delta_avg, then delta.

        Equivalent to nesting :func:`hyperfine_sum`, :func:`average_over_delta_avg`
        and :func:`average_over_two_photon` in that order.
        """
        if self.hyperfine is None:
            manifolds = [(base.delta_two_photon, 1.0)]
        else:
            manifolds = [(mhz(d), w) for _, d, w in self.hyperfine.terms(self.laser_offset)]
        out = []
        for delta_n, w_n in manifolds:
            for x, w_x in gaussian_grid(self.delta_avg):
                for y, w_y in gaussian_grid(self.two_photon):
                    params = base.replace(delta_avg=base.delta_avg + mhz(x),
                                          delta_two_photon=delta_n + mhz(y))
                    out.append((params, w_n * w_x * w_y))
        return out

    @property
    def participating_fraction(self) -> float:
        """Population share of the manifold on Raman resonance (1 without hyperfine sum)."""
        if self.hyperfine is None:
            return 1.0
        return max(w for _, _, w in self.hyperfine.terms(self.laser_offset))
