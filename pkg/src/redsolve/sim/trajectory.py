"""Trajectory primitives for the closed-loop experiments.

All primitives are sampled as (position, velocity, acceleration) with the
position being the exact integral of the velocity, and hold their final value
beyond their duration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from redsolve.shaping import TrajectorySample


class TrajectoryError(ValueError):
    pass


def _raised_cosine(L: float, tau: float, t: float) -> tuple[float, float, float]:
    """Path coordinate with speed profile v(t) = (L/tau)(1 - cos 2 pi t/tau).

    Zero speed at both ends, peak speed 2L/tau at mid-segment.
    """
    w = 2.0 * np.pi / tau
    s = L * (t / tau - np.sin(w * t) / (2.0 * np.pi))
    v = (L / tau) * (1.0 - np.cos(w * t))
    a = (L / tau) * w * np.sin(w * t)
    return s, v, a


def _trapezoid(L: float, tau: float, t: float, ramp_fraction: float = 0.25):
    """Symmetric trapezoidal speed profile covering length L in time tau."""
    t_r = ramp_fraction * tau
    v_c = L / (tau - t_r)  # cruise speed for the symmetric ramp split
    a_r = v_c / t_r
    if t < t_r:
        return 0.5 * a_r * t * t, a_r * t, a_r
    if t < tau - t_r:
        return 0.5 * a_r * t_r * t_r + v_c * (t - t_r), v_c, 0.0
    td = tau - t
    return L - 0.5 * a_r * td * td, a_r * td, -a_r


def _profile(kind: str, L: float, tau: float, t: float):
    if kind == "sinusoidal":
        return _raised_cosine(L, tau, t)
    if kind == "trapezoidal":
        return _trapezoid(L, tau, t)
    raise TrajectoryError(f"unknown speed profile {kind!r}")


class Primitive:
    duration: float  # set by subclasses

    def _sample(self, t: float) -> TrajectorySample:  # pragma: no cover
        raise NotImplementedError

    def sample(self, t: float) -> TrajectorySample:
        if t <= 0.0:
            s = self._sample(0.0)
            return TrajectorySample(s.position, np.zeros_like(s.velocity),
                                    np.zeros_like(s.acceleration))
        if t >= self.duration:
            s = self._sample(self.duration)
            return TrajectorySample(s.position, np.zeros_like(s.velocity),
                                    np.zeros_like(s.acceleration))
        return self._sample(t)


@dataclass
class HoldPoint(Primitive):
    value: np.ndarray
    duration: float = np.inf

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)

    def sample(self, t: float) -> TrajectorySample:
        z = np.zeros_like(self.value)
        return TrajectorySample(self.value.copy(), z, z.copy())


@dataclass
class HoldOrientation(Primitive):
    """Constant orientation: quaternion with zero angular rates."""

    quaternion: np.ndarray
    duration: float = np.inf

    def __post_init__(self):
        self.quaternion = np.asarray(self.quaternion, dtype=float)

    def sample(self, t: float) -> TrajectorySample:
        z = np.zeros(3)
        return TrajectorySample(self.quaternion.copy(), z, z.copy())


@dataclass
class Line(Primitive):
    start: np.ndarray
    end: np.ndarray
    duration: float
    profile: str = "trapezoidal"

    def __post_init__(self):
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
        self.end = np.atleast_1d(np.asarray(self.end, dtype=float))
        if self.duration <= 0:
            raise TrajectoryError("duration must be positive")
        delta = self.end - self.start
        self._length = float(np.linalg.norm(delta))
        self._dir = delta / self._length if self._length > 0 else np.zeros_like(delta)

    def _sample(self, t: float) -> TrajectorySample:
        s, v, a = _profile(self.profile, self._length, self.duration, t)
        return TrajectorySample(self.start + s * self._dir, v * self._dir,
                                a * self._dir)


@dataclass
class StarPath(Primitive):
    """Out-and-back legs from a centre to equally spaced vertices in a plane.

    Each leg (one way) runs a full speed profile of the segment length, so
    velocity is zero at the centre and at every vertex.
    """

    center: np.ndarray
    axis1: np.ndarray  # in-plane unit vector toward vertex 0
    axis2: np.ndarray  # second in-plane unit vector
    segment_length: float = 0.24
    points: int = 8
    segment_time: float = 1.5  # time for one out-and-back pair
    profile: str = "sinusoidal"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.axis1 = np.asarray(self.axis1, dtype=float)
        self.axis2 = np.asarray(self.axis2, dtype=float)
        if self.segment_time <= 0 or self.points < 1:
            raise TrajectoryError("invalid star geometry")
        self.duration = self.points * self.segment_time
        self._leg_time = self.segment_time / 2.0

    def _vertex_dir(self, idx: int) -> np.ndarray:
        ang = 2.0 * np.pi * idx / self.points
        return np.cos(ang) * self.axis1 + np.sin(ang) * self.axis2

    def _sample(self, t: float) -> TrajectorySample:
        leg = min(int(t / self._leg_time), 2 * self.points - 1)
        t_leg = t - leg * self._leg_time
        vertex = leg // 2
        outward = leg % 2 == 0
        d = self._vertex_dir(vertex)
        s, v, a = _profile(self.profile, self.segment_length, self._leg_time, t_leg)
        if outward:
            return TrajectorySample(self.center + s * d, v * d, a * d)
        return TrajectorySample(self.center + (self.segment_length - s) * d,
                                -v * d, -a * d)


@dataclass
class Circle(Primitive):
    """Circular arc in the plane spanned by two unit vectors."""

    center: np.ndarray
    radius: float
    duration: float
    axis1: np.ndarray
    axis2: np.ndarray
    start_angle: float = 0.0
    turns: float = 1.0
    profile: str = "trapezoidal"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.axis1 = np.asarray(self.axis1, dtype=float)
        self.axis2 = np.asarray(self.axis2, dtype=float)
        if self.radius <= 0 or self.duration <= 0:
            raise TrajectoryError("invalid circle geometry")
        self._arc = 2.0 * np.pi * self.radius * self.turns

    def _sample(self, t: float) -> TrajectorySample:
        s, v, a = _profile(self.profile, self._arc, self.duration, t)
        ang = self.start_angle + s / self.radius
        radial = np.cos(ang) * self.axis1 + np.sin(ang) * self.axis2
        tangent = -np.sin(ang) * self.axis1 + np.cos(ang) * self.axis2
        pos = self.center + self.radius * radial
        vel = v * tangent
        acc = a * tangent - (v * v / self.radius) * radial
        return TrajectorySample(pos, vel, acc)


def sample_trajectory(t: float, primitive: Primitive) -> TrajectorySample:
    return primitive.sample(t)
