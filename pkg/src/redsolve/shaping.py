"""Task references, bound shaping and priority-level assembly.

References drive task variables toward desired trajectories as first- or
second-order linear systems; bounds convert position/velocity/acceleration
boxes on task variables into cycle-wise bounds on the control variable.
Levels combine both into the unified form A u = b_cmd - b_bias,
lower <= C u <= upper for the velocity, acceleration and torque schemes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from redsolve.model.chain import ChainEval, orientation_error, task_kinematics
from redsolve.solvers.types import AssembledLevel

SCHEMES = ("velocity", "acceleration", "torque")


class ShapingError(ValueError):
    """Invalid gains, limits or level specification."""


def _as_gain_matrix(value, m: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(m)
    elif arr.ndim == 1:
        if arr.shape != (m,):
            raise ShapingError(f"{what}: expected {m} diagonal entries, got {arr.shape}")
        arr = np.diag(arr)
    if arr.shape != (m, m):
        raise ShapingError(f"{what}: expected {m}x{m}, got {arr.shape}")
    if np.abs(arr - arr.T).max() > 1e-10 * max(1.0, np.abs(arr).max()):
        raise ShapingError(f"{what}: must be symmetric")
    if np.any(np.linalg.eigvalsh(arr) <= 0.0):
        raise ShapingError(f"{what}: must be positive definite")
    return arr


@dataclass
class ReferenceGains:
    """Convergence gains: K (1/s or 1/s^2) always, D (1/s) for second-order laws."""

    K: np.ndarray
    D: np.ndarray | None = None

    @classmethod
    def first_order(cls, k, m: int) -> "ReferenceGains":
        return cls(K=_as_gain_matrix(k, m, "K"))

    @classmethod
    def second_order(cls, k, d, m: int) -> "ReferenceGains":
        return cls(K=_as_gain_matrix(k, m, "K"), D=_as_gain_matrix(d, m, "D"))


@dataclass
class BoxLimits:
    """Box limits on one group of task variables; entries may be +-inf.

    Position bounds may move: ``pd``/``pdd`` carry their first and second
    time derivatives.  A ``sampler`` callback may supply the whole record
    per query time for time-varying boxes.
    """

    p_low: np.ndarray
    p_high: np.ndarray
    v_low: np.ndarray
    v_high: np.ndarray
    a_low: np.ndarray
    a_high: np.ndarray
    pd_low: np.ndarray = None  # type: ignore[assignment]
    pd_high: np.ndarray = None  # type: ignore[assignment]
    pdd_low: np.ndarray = None  # type: ignore[assignment]
    pdd_high: np.ndarray = None  # type: ignore[assignment]
    sampler: Callable[[float], "BoxLimits"] | None = None

    def __post_init__(self):
        m = len(np.atleast_1d(self.p_low))
        for name in ("p_low", "p_high", "v_low", "v_high", "a_low", "a_high"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        for name in ("pd_low", "pd_high", "pdd_low", "pdd_high"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(m))
            else:
                setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        self.validate()

    @classmethod
    def boxes(cls, m: int, position=None, velocity=None, acceleration=None) -> "BoxLimits":
        inf = np.full(m, np.inf)

        def expand(pair):
            if pair is None:
                return -inf.copy(), inf.copy()
            lo, hi = pair
            return np.broadcast_to(np.asarray(lo, dtype=float), (m,)).copy(), \
                np.broadcast_to(np.asarray(hi, dtype=float), (m,)).copy()

        p_lo, p_hi = expand(position)
        v_lo, v_hi = expand(velocity)
        a_lo, a_hi = expand(acceleration)
        return cls(p_low=p_lo, p_high=p_hi, v_low=v_lo, v_high=v_hi, a_low=a_lo, a_high=a_hi)

    @property
    def m(self) -> int:
        return self.p_low.shape[0]

    def validate(self) -> None:
        for lo, hi, what in ((self.p_low, self.p_high, "position"),
                             (self.v_low, self.v_high, "velocity"),
                             (self.a_low, self.a_high, "acceleration")):
            if np.any(lo > hi):
                raise ShapingError(f"{what} limits: low exceeds high")

    def at(self, t: float) -> "BoxLimits":
        return self.sampler(t) if self.sampler is not None else self


# --------------------------------------------------------------------------
# Reference shaping (equality constraints).


def reference_velocity(x_desired, xdot_desired, x_now, gains: ReferenceGains) -> np.ndarray:
    """First-order tracking law: desired velocity plus K times the displacement."""
    e = np.asarray(x_desired, dtype=float) - np.asarray(x_now, dtype=float)
    return np.asarray(xdot_desired, dtype=float) + gains.K @ e


def reference_acceleration(x_desired, xdot_desired, xddot_desired, x_now, xdot_now,
                           gains: ReferenceGains) -> np.ndarray:
    """Second-order tracking law with damping D on the velocity error."""
    if gains.D is None:
        raise ShapingError("second-order reference needs damping gains D")
    e = np.asarray(x_desired, dtype=float) - np.asarray(x_now, dtype=float)
    edot = np.asarray(xdot_desired, dtype=float) - np.asarray(xdot_now, dtype=float)
    return np.asarray(xddot_desired, dtype=float) + gains.D @ edot + gains.K @ e


# --------------------------------------------------------------------------
# Bound shaping (inequality constraints).


def _position_terms(K: np.ndarray, e_low: np.ndarray, e_upp: np.ndarray,
                    pd_low: np.ndarray, pd_high: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows pd + K e, with infinities short-circuited before any product."""
    m = e_low.shape[0]
    diag = np.abs(K - np.diag(np.diag(K))).max() == 0.0
    if diag:
        k = np.diag(K)
        low = np.where(np.isinf(e_low), e_low, pd_low + k * e_low)
        high = np.where(np.isinf(e_upp), e_upp, pd_high + k * e_upp)
        return low, high
    if np.any(np.isinf(e_low)) or np.any(np.isinf(e_upp)):
        raise ShapingError("non-diagonal gains require finite position limits")
    return pd_low + K @ e_low, pd_high + K @ e_upp


def velocity_bounds(limits: BoxLimits, x_now, K) -> tuple[np.ndarray, np.ndarray]:
    """Cycle bounds on task velocity from position and velocity boxes.

    Component-wise: low = max(pd_low + k_i . e_low, v_low) and
    high = min(pd_high + k_i . e_upp, v_high), with e_low = p_low - x and
    e_upp = p_high - x.  Outside the position box the bounds command recovery
    motion back toward it.
    """
    x = np.asarray(x_now, dtype=float).reshape(-1)
    K = _as_gain_matrix(K, x.shape[0], "K")
    e_low = limits.p_low - x
    e_upp = limits.p_high - x
    term_low, term_high = _position_terms(K, e_low, e_upp, limits.pd_low, limits.pd_high)
    # clipping (rather than a one-sided max/min) keeps the pair ordered when
    # the variable sits far outside its position box: recovery is then pinned
    # at the velocity cap instead of demanding an unattainable speed
    return (np.clip(term_low, limits.v_low, limits.v_high),
            np.clip(term_high, limits.v_low, limits.v_high))


def braking_velocity_bounds(limits: BoxLimits, x_now, period: float,
                            braking: float | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Period-based velocity bounds with a braking term near the position box.

    Component-wise: high = min(e_upp / T, v_high, sqrt(2 a_b e_upp)) and the
    mirrored lower form; negative displacements clamp the square root at zero.
    """
    if period <= 0.0:
        raise ShapingError("control period must be positive")
    x = np.asarray(x_now, dtype=float).reshape(-1)
    a_b = np.broadcast_to(np.asarray(braking, dtype=float), x.shape)
    if np.any(a_b <= 0.0):
        raise ShapingError("braking parameter must be positive")
    inv_T = 1.0 / period
    e_low = limits.p_low - x
    e_upp = limits.p_high - x
    # an infinite braking parameter disables the braking term (0 * inf guard)
    margin_high = np.maximum(e_upp, 0.0)
    margin_low = np.maximum(-e_low, 0.0)
    with np.errstate(invalid="ignore"):
        brake_high = np.where(margin_high == 0.0, 0.0, np.sqrt(2.0 * a_b * margin_high))
        brake_low = -np.where(margin_low == 0.0, 0.0, np.sqrt(2.0 * a_b * margin_low))
    low = np.clip(np.maximum(e_low * inv_T, brake_low), limits.v_low, limits.v_high)
    high = np.clip(np.minimum(e_upp * inv_T, brake_high), limits.v_low, limits.v_high)
    return low, high


def acceleration_bounds(limits: BoxLimits, x_now, xdot_now, D,
                        K1) -> tuple[np.ndarray, np.ndarray]:
    """Cycle bounds on task acceleration nesting the velocity bounds.

    The velocity bounds (with gain K1) bound how fast each variable may still
    move toward its position box; D converts the remaining velocity margin
    into an acceleration bound, clipped by the acceleration box.
    """
    x = np.asarray(x_now, dtype=float).reshape(-1)
    xd = np.asarray(xdot_now, dtype=float).reshape(-1)
    m = x.shape[0]
    D = _as_gain_matrix(D, m, "D")
    rv_low, rv_high = velocity_bounds(limits, x, K1)
    diag = np.abs(D - np.diag(np.diag(D))).max() == 0.0
    if diag:
        d = np.diag(D)
        term_low = np.where(np.isinf(rv_low), rv_low, limits.pdd_low + d * (rv_low - xd))
        term_high = np.where(np.isinf(rv_high), rv_high, limits.pdd_high + d * (rv_high - xd))
    else:
        if np.any(np.isinf(rv_low)) or np.any(np.isinf(rv_high)):
            raise ShapingError("non-diagonal damping requires finite velocity bounds")
        term_low = limits.pdd_low + D @ (rv_low - xd)
        term_high = limits.pdd_high + D @ (rv_high - xd)
    # clip into the acceleration box so a velocity overshoot cannot cross the
    # pair; the demanded recovery is then pinned at the acceleration cap
    return (np.clip(term_low, limits.a_low, limits.a_high),
            np.clip(term_high, limits.a_low, limits.a_high))


# --------------------------------------------------------------------------
# Level specification and assembly.


@dataclass
class TrajectorySample:
    position: np.ndarray  # task value; unit quaternion for orientation tasks
    velocity: np.ndarray
    acceleration: np.ndarray
    orientation: np.ndarray | None = None  # quaternion part of a pose sample
    ang_velocity: np.ndarray | None = None
    ang_acceleration: np.ndarray | None = None


@dataclass
class TrackingTask:
    """Equality part of a level: drive frame/selector along a sampled trajectory."""

    frame: str
    selector: str
    sample: Callable[[float], TrajectorySample]
    gains: ReferenceGains


@dataclass
class BoundTask:
    """Inequality part of a level: keep frame/selector inside shaped boxes."""

    frame: str
    selector: str
    limits: BoxLimits
    gains: ReferenceGains  # K for velocity scheme; D plus K1 for the others
    k1: np.ndarray | float | None = None
    label: str = ""


@dataclass
class TorqueBox:
    tau_low: np.ndarray
    tau_high: np.ndarray


@dataclass
class LevelSpec:
    equality: TrackingTask | None = None
    inequality: list[BoundTask] = field(default_factory=list)
    torque_box: TorqueBox | None = None

    def __post_init__(self):
        if self.equality is None and not self.inequality and self.torque_box is None:
            raise ShapingError("level must carry an equality, an inequality or a torque box")


class ModelOutputs:
    """Per-cycle model evaluation shared by all levels: kinematics plus lazy dynamics."""

    def __init__(self, chain, state):
        self.chain = chain
        self.state = state
        self.kin = ChainEval(chain, state.q, state.dq)
        self._M = None
        self._M_inv = None
        self._bias = None

    def task(self, frame: str, selector: str):
        return task_kinematics(self.kin, frame, selector)

    @property
    def inertia(self) -> np.ndarray:
        if self._M is None:
            from redsolve.model.chain import inertia_matrix
            self._M = inertia_matrix(self.chain, self.state.q)
        return self._M

    @property
    def inertia_inverse(self) -> np.ndarray:
        if self._M_inv is None:
            self._M_inv = np.linalg.inv(self.inertia)
        return self._M_inv

    @property
    def bias(self) -> np.ndarray:
        if self._bias is None:
            from redsolve.model.chain import bias_forces
            self._bias = bias_forces(self.chain, self.state)
        return self._bias


def _tracking_errors(task, kin_x, sample: TrajectorySample):
    """Task displacement and desired derivatives, quaternion-aware."""
    if task.selector == "pose":
        pos, quat = kin_x
        e = np.concatenate([sample.position - pos, orientation_error(sample.orientation, quat)])
        xd_d = np.concatenate([sample.velocity, sample.ang_velocity])
        xdd_d = np.concatenate([sample.acceleration, sample.ang_acceleration])
    elif task.selector == "orientation":
        e = orientation_error(sample.position, kin_x)
        xd_d, xdd_d = sample.velocity, sample.acceleration
    else:
        e = sample.position - kin_x
        xd_d, xdd_d = sample.velocity, sample.acceleration
    return e, xd_d, xdd_d


def assemble_level(scheme: str, spec: LevelSpec, state, outputs: ModelOutputs,
                   t: float) -> AssembledLevel:
    """Build one level's unified constraint data for the requested scheme."""
    if scheme not in SCHEMES:
        raise ShapingError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    n = outputs.chain.n
    dq = state.dq
    if scheme == "torque" and spec.torque_box is None and spec.equality is None and not spec.inequality:
        raise ShapingError("empty torque level")

    if spec.equality is not None:
        task = spec.equality
        tk = outputs.task(task.frame, task.selector)
        e, xd_d, xdd_d = _tracking_errors(task, tk.x, task.sample(t))
        if scheme == "velocity":
            A = tk.J
            b_cmd = xd_d + task.gains.K @ e
            b_bias = np.zeros(len(b_cmd))
        else:
            xdot_now = tk.J @ dq
            if task.gains.D is None:
                raise ShapingError("acceleration/torque schemes need damping gains D")
            b_cmd = xdd_d + task.gains.D @ (xd_d - xdot_now) + task.gains.K @ e
            b_bias = tk.jdot_dq.copy()
            A = tk.J if scheme == "acceleration" else tk.J @ outputs.inertia_inverse
    else:
        A = np.zeros((0, n))
        b_cmd = np.zeros(0)
        b_bias = np.zeros(0)

    C_rows: list[np.ndarray] = []
    lows: list[np.ndarray] = []
    highs: list[np.ndarray] = []
    labels: list[str] = []
    for bound in spec.inequality:
        tk = outputs.task(bound.frame, bound.selector)
        limits = bound.limits.at(t)
        x = tk.x
        if scheme == "velocity":
            lo, hi = velocity_bounds(limits, x, bound.gains.K)
        else:
            if bound.gains.D is None:
                raise ShapingError("acceleration/torque bound shaping needs damping gains D")
            k1 = bound.k1 if bound.k1 is not None else bound.gains.K
            lo, hi = acceleration_bounds(limits, x, tk.J @ dq, bound.gains.D, k1)
            drift = tk.jdot_dq
            lo = lo - drift
            hi = hi - drift
        rows = tk.J if scheme != "torque" else tk.J @ outputs.inertia_inverse
        keep = ~(np.isinf(lo) & (lo < 0) & np.isinf(hi) & (hi > 0))
        if not np.all(keep):
            rows, lo, hi = rows[keep], lo[keep], hi[keep]
        C_rows.append(rows)
        lows.append(lo)
        highs.append(hi)
        base = bound.label or f"{bound.frame}:{bound.selector}"
        kept_idx = np.flatnonzero(keep)
        labels.extend(f"{base}[{i}]" for i in kept_idx)

    if scheme == "torque" and spec.torque_box is not None:
        C_rows.append(np.eye(n))
        lows.append(np.asarray(spec.torque_box.tau_low, dtype=float) - outputs.bias)
        highs.append(np.asarray(spec.torque_box.tau_high, dtype=float) - outputs.bias)
        labels.extend(f"torque[{i}]" for i in range(n))

    if C_rows:
        C = np.vstack(C_rows)
        lower = np.concatenate(lows)
        upper = np.concatenate(highs)
    else:
        C = np.zeros((0, n))
        lower = np.zeros(0)
        upper = np.zeros(0)
    return AssembledLevel(A=A, b_cmd=b_cmd, b_bias=b_bias, C=C, lower=lower, upper=upper,
                          labels=labels)
