"""Rabi-frequency envelopes and the pulse sequences built from them.

Times are in microseconds and amplitudes are angular Rabi frequencies
(rad/us). Each channel holds non-overlapping envelopes; a channel's value
is the largest envelope value at that time, so envelopes that merely touch
(e.g. back-to-back Ramsey pulses) do not double up at the shared instant.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import FieldSample, LambdaParams, effective_rabi_frequency
from .errors import InvalidGeometryError

__all__ = [
    "Shape",
    "Envelope",
    "PulseSequence",
    "sample",
    "make_rabi_pair",
    "make_stirap_pair",
    "make_ramsey_sequence",
    "pi_half_duration",
]

_EDGE_TOL = 1e-12


class Shape(str, enum.Enum):
    SQUARE = "square"
    TRAPEZOID = "trapezoid"
    SIN2_RAMP = "sin2_ramp"


@dataclass(frozen=True)
class Envelope:
    """Single pulse: zero outside ``[start, start + width]``, ``peak`` on the flat top."""

    shape: Shape
    peak: float
    start: float
    width: float
    rise: float = 0.0
    fall: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        if self.peak < 0:
            raise InvalidGeometryError("envelope peak must be >= 0")
        if self.width < 0 or self.rise < 0 or self.fall < 0:
            raise InvalidGeometryError("envelope width, rise and fall must be >= 0")
        if self.rise + self.fall > self.width * (1 + 1e-12) + _EDGE_TOL:
            raise InvalidGeometryError(
                f"rise + fall ({self.rise + self.fall}) exceeds width ({self.width})")
        if self.shape is Shape.SQUARE and (self.rise or self.fall):
            raise InvalidGeometryError("square envelopes have no ramps")

    @property
    def end(self) -> float:
        return self.start + self.width

    def _ramp(self, u):
        if self.shape is Shape.SIN2_RAMP:
            return np.sin(0.5 * np.pi * u) ** 2
        return u

    def sample(self, t):
        """Envelope value at time(s) ``t``; vectorized over arrays."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        inside = (t >= self.start) & (t <= self.end)
        out[inside] = self.peak
        if self.rise > 0:
            rising = inside & (t < self.start + self.rise)
            out[rising] = self.peak * self._ramp((t[rising] - self.start) / self.rise)
        if self.fall > 0:
            falling = inside & (t > self.end - self.fall)
            out[falling] = self.peak * self._ramp((self.end - t[falling]) / self.fall)
        return out

    def breakpoints(self) -> tuple[float, ...]:
        return (self.start, self.start + self.rise, self.end - self.fall, self.end)

    def area(self) -> float:
        """Time integral of the envelope (both ramp shapes integrate to half the ramp)."""
        return self.peak * (self.width - 0.5 * (self.rise + self.fall))


def _overlap(a: Envelope, b: Envelope) -> bool:
    return min(a.end, b.end) - max(a.start, b.start) > _EDGE_TOL


@dataclass(frozen=True)
class PulseSequence:
    plus_envelopes: tuple[Envelope, ...] = ()
    minus_envelopes: tuple[Envelope, ...] = ()
    span: float = 0.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "plus_envelopes", tuple(self.plus_envelopes))
        object.__setattr__(self, "minus_envelopes", tuple(self.minus_envelopes))
        if self.span < 0:
            raise InvalidGeometryError("span must be >= 0")
        for name, channel in (("plus", self.plus_envelopes), ("minus", self.minus_envelopes)):
            ordered = sorted(channel, key=lambda e: e.start)
            for a, b in zip(ordered, ordered[1:]):
                if _overlap(a, b):
                    raise InvalidGeometryError(f"overlapping envelopes on the {name} channel")
            for env in channel:
                if env.end > self.span + _EDGE_TOL:
                    raise InvalidGeometryError(
                        f"{name} envelope ends at {env.end}, beyond span {self.span}")

    @staticmethod
    def _channel(envelopes, t):
        out = np.zeros_like(t)
        for env in envelopes:
            np.maximum(out, env.sample(t), out=out)
        return out

    def fields(self, t):
        """Return ``(omega_plus, omega_minus)`` arrays at times ``t``.

        Fields vanish for ``t < 0`` and ``t > span``.
        """
        t = np.asarray(t, dtype=float)
        plus = self._channel(self.plus_envelopes, t)
        minus = self._channel(self.minus_envelopes, t)
        outside = (t < 0) | (t > self.span)
        plus[outside] = 0.0
        minus[outside] = 0.0
        return plus, minus

    def sample(self, t: float) -> FieldSample:
        plus, minus = self.fields(np.array([t]))
        return FieldSample(float(plus[0]), float(minus[0]))

    def breakpoints(self) -> list[float]:
        points = {0.0, float(self.span)}
        for env in self.plus_envelopes + self.minus_envelopes:
            points.update(b for b in env.breakpoints() if 0.0 <= b <= self.span)
        return sorted(points)

    @property
    def peak_plus(self) -> float:
        return max((e.peak for e in self.plus_envelopes), default=0.0)

    @property
    def peak_minus(self) -> float:
        return max((e.peak for e in self.minus_envelopes), default=0.0)


def sample(seq: PulseSequence, t: float) -> FieldSample:
    return seq.sample(t)


def make_rabi_pair(peak: float, duration: float, peak_minus: float | None = None) -> PulseSequence:
    """Two simultaneous square pulses over ``[0, duration]``.

    ``peak_minus`` defaults to ``peak``. A zero duration gives an empty
    sequence.
    """
    if duration < 0:
        raise InvalidGeometryError("duration must be >= 0")
    if peak_minus is None:
        peak_minus = peak
    if duration == 0:
        return PulseSequence((), (), 0.0, label="rabi")
    plus = Envelope(Shape.SQUARE, peak, 0.0, duration)
    minus = Envelope(Shape.SQUARE, peak_minus, 0.0, duration)
    return PulseSequence((plus,), (minus,), duration, label="rabi")


def make_stirap_pair(peak: float, width: float, t_rise: float, delay: float,
                     shape: Shape | str = Shape.TRAPEZOID) -> PulseSequence:
    """Delayed pulse pair for the STIRAP/Rabi comparison.

    The plus pulse occupies ``[0, width]`` with a sharp rise and a trailing
    ramp of ``t_rise``. The minus pulse occupies ``[delay - width, delay]``
    with a leading ramp of ``t_rise`` and a sharp fall, so ``delay`` is the
    separation between the plus rising edge and the minus trailing edge.
    Portions at negative time are dropped.
    """
    if t_rise < 0 or t_rise > width:
        raise InvalidGeometryError(f"t_rise={t_rise} must lie in [0, width={width}]")
    if delay < 0:
        raise InvalidGeometryError("delay must be >= 0")
    shape = Shape(shape)
    if shape is Shape.SQUARE:
        if t_rise:
            raise InvalidGeometryError("square STIRAP pulses need t_rise = 0")
        shape = Shape.TRAPEZOID
    plus = Envelope(shape, peak, 0.0, width, rise=0.0, fall=t_rise)
    minus = Envelope(shape, peak, delay - width, width, rise=t_rise, fall=0.0)
    return PulseSequence((plus,), (minus,), max(width, delay), label="stirap")


def pi_half_duration(omega_r: float) -> float:
    """Duration of a pi/2 rotation at effective Rabi frequency ``omega_r``."""
    return 0.5 * math.pi / omega_r


def make_ramsey_sequence(omega_r_target: float, params: LambdaParams, tau: float) -> PulseSequence:
    """Two pi/2 Raman pulse pairs separated by a field-free gap ``tau``.

    Equal field amplitudes are chosen so the two-photon Rabi frequency at
    the nominal one-photon detuning equals ``omega_r_target``.
    """
    if omega_r_target <= 0:
        raise ValueError("omega_r_target must be > 0")
    if tau < 0:
        raise InvalidGeometryError("tau must be >= 0")
    peak = math.sqrt(2.0 * abs(params.delta_avg) * omega_r_target)
    omega_r = abs(effective_rabi_frequency(peak, peak, params.delta_avg))
    t_half = pi_half_duration(omega_r)
    second = t_half + tau

    def pair():
        return (Envelope(Shape.SQUARE, peak, 0.0, t_half),
                Envelope(Shape.SQUARE, peak, second, t_half))

    return PulseSequence(pair(), pair(), second + t_half, label="ramsey")
