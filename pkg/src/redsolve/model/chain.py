"""Rigid-body robot models: kinematics, Jacobians and joint-space dynamics.

Chains are rooted trees of revolute/prismatic joints.  All quantities are
expressed in the world frame.  A per-configuration :class:`ChainEval` caches
the forward pass so that task Jacobians and drift terms for many frames can
be extracted cheaply within one control cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

def _cross(a, b):
    """3-vector cross product without numpy's generic-axis overhead."""
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def _cross_rows(A, B):
    """Row-wise cross product of two (n, 3) arrays."""
    out = np.empty_like(A)
    out[:, 0] = A[:, 1] * B[:, 2] - A[:, 2] * B[:, 1]
    out[:, 1] = A[:, 2] * B[:, 0] - A[:, 0] * B[:, 2]
    out[:, 2] = A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0]
    return out


REVOLUTE = "revolute"
PRISMATIC = "prismatic"


class ModelError(ValueError):
    """Invalid chain description or query."""


def rpy_matrix(rpy) -> np.ndarray:
    """Rotation matrix from roll-pitch-yaw (extrinsic x-y-z, applied Rz Ry Rx)."""
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(axis, axis)


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with non-negative scalar part."""
    t = np.trace(R)
    if t > 0:
        w = 0.5 * np.sqrt(1.0 + t)
        f = 0.25 / w
        q = np.array([w, (R[2, 1] - R[1, 2]) * f, (R[0, 2] - R[2, 0]) * f, (R[1, 0] - R[0, 1]) * f])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / (2.0 * r)
        q[1 + i] = 0.5 * r
        q[1 + j] = (R[j, i] + R[i, j]) / (2.0 * r)
        q[1 + k] = (R[k, i] + R[i, k]) / (2.0 * r)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quaternion_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quaternion_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def orientation_error(q_desired: np.ndarray, q_current: np.ndarray) -> np.ndarray:
    """Rotation error vector 2 * vec(q_d * q^-1), scalar part forced non-negative."""
    dq = quaternion_multiply(q_desired, quaternion_conjugate(q_current))
    if dq[0] < 0:
        dq = -dq
    return 2.0 * dq[1:]


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str  # REVOLUTE | PRISMATIC
    parent: int  # index of parent joint, -1 for the root
    origin_xyz: np.ndarray  # fixed offset in the parent frame
    origin_rot: np.ndarray  # fixed rotation in the parent frame
    axis: np.ndarray  # unit axis in the local frame
    pos_limit: tuple[float, float]
    vel_limit: tuple[float, float]
    acc_limit: tuple[float, float]
    mass: float
    com: np.ndarray  # centre of mass of the attached link, local frame
    inertia: np.ndarray  # 3x3 inertia about the COM, local frame


@dataclass(frozen=True)
class Frame:
    name: str
    parent: int  # joint index the frame is attached to, -1 for the world
    offset_xyz: np.ndarray
    offset_rot: np.ndarray


@dataclass(frozen=True)
class RobotChain:
    name: str
    joints: tuple[Joint, ...]
    frames: dict[str, Frame]
    gravity: np.ndarray

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def position_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([j.pos_limit[0] for j in self.joints]),
                np.array([j.pos_limit[1] for j in self.joints]))

    def velocity_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([j.vel_limit[0] for j in self.joints]),
                np.array([j.vel_limit[1] for j in self.joints]))

    def acceleration_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([j.acc_limit[0] for j in self.joints]),
                np.array([j.acc_limit[1] for j in self.joints]))

    def frame(self, name: str) -> Frame:
        try:
            return self.frames[name]
        except KeyError:
            known = ", ".join(sorted(self.frames))
            raise ModelError(f"unknown frame {name!r}; known frames: {known}") from None

    def validate(self) -> None:
        for i, j in enumerate(self.joints):
            if j.kind not in (REVOLUTE, PRISMATIC):
                raise ModelError(f"joint {j.name}: unknown kind {j.kind!r}")
            if j.parent >= i:
                raise ModelError(f"joint {j.name}: parent must precede it in the list")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ModelError(f"joint {j.name}: axis is not unit length")
            if not j.pos_limit[0] < j.pos_limit[1]:
                raise ModelError(f"joint {j.name}: position limits not ordered")
            if not j.vel_limit[0] < 0.0 < j.vel_limit[1]:
                raise ModelError(f"joint {j.name}: velocity limits must straddle zero")
            if not j.acc_limit[0] < 0.0 < j.acc_limit[1]:
                raise ModelError(f"joint {j.name}: acceleration limits must straddle zero")
            if j.mass <= 0.0:
                raise ModelError(f"joint {j.name}: mass must be positive")
            if np.abs(j.inertia - j.inertia.T).max() > 1e-9:
                raise ModelError(f"joint {j.name}: inertia tensor not symmetric")
            if np.any(np.linalg.eigvalsh(j.inertia) <= 0.0):
                raise ModelError(f"joint {j.name}: inertia tensor not positive definite")


@dataclass
class RobotState:
    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.dq = np.asarray(self.dq, dtype=float).reshape(-1)

    def copy(self) -> "RobotState":
        return RobotState(self.q.copy(), self.dq.copy())


@dataclass
class TaskKinematics:
    x: np.ndarray  # task value (or unit quaternion for orientation tasks)
    J: np.ndarray
    jdot_dq: np.ndarray


class ChainEval:
    """Forward pass over a chain at one state, with cheap per-frame extraction.

    Positions and rotations are always computed; the velocity/drift recursion
    (needed for J_dot q_dot) runs only when a velocity is supplied.
    """

    def __init__(self, chain: RobotChain, q, dq=None):
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != chain.n:
            raise ModelError(f"q has {q.shape[0]} entries, chain has {chain.n} joints")
        self.chain = chain
        self.q = q
        self.dq = None if dq is None else np.asarray(dq, dtype=float).reshape(-1)
        n = chain.n
        self.R = np.empty((n, 3, 3))
        self.p = np.empty((n, 3))
        self.axis_w = np.empty((n, 3))
        self._ancestors: list[np.ndarray] = []
        for i, joint in enumerate(chain.joints):
            if joint.parent < 0:
                R_parent, p_parent = np.eye(3), np.zeros(3)
                anc = np.zeros(n, dtype=bool)
            else:
                R_parent, p_parent = self.R[joint.parent], self.p[joint.parent]
                anc = self._ancestors[joint.parent].copy()
            anc[i] = True
            self._ancestors.append(anc)
            R_mount = R_parent @ joint.origin_rot
            p_joint = p_parent + R_parent @ joint.origin_xyz
            a = R_mount @ joint.axis
            self.axis_w[i] = a
            if joint.kind == REVOLUTE:
                self.R[i] = R_mount @ axis_rotation(joint.axis, q[i])
                self.p[i] = p_joint
            else:
                self.R[i] = R_mount
                self.p[i] = p_joint + a * q[i]
        if self.dq is not None:
            self._velocity_pass()

    def _velocity_pass(self):
        chain, dq = self.chain, self.dq
        n = chain.n
        self.omega = np.zeros((n, 3))
        self.v = np.zeros((n, 3))
        # zero-joint-acceleration spatial accelerations (drift terms)
        self.alpha0 = np.zeros((n, 3))
        self.a0 = np.zeros((n, 3))
        for i, joint in enumerate(chain.joints):
            if joint.parent < 0:
                w_p = v_p = al_p = ac_p = np.zeros(3)
                dp = self.p[i]
            else:
                k = joint.parent
                w_p, v_p, al_p, ac_p = self.omega[k], self.v[k], self.alpha0[k], self.a0[k]
                dp = self.p[i] - self.p[k]
            a = self.axis_w[i]
            if joint.kind == REVOLUTE:
                self.omega[i] = w_p + a * dq[i]
                self.v[i] = v_p + _cross(w_p, dp)
                self.alpha0[i] = al_p + _cross(w_p, a * dq[i])
                self.a0[i] = ac_p + _cross(al_p, dp) + _cross(w_p, _cross(w_p, dp))
            else:
                self.omega[i] = w_p
                self.v[i] = v_p + _cross(w_p, dp) + a * dq[i]
                self.alpha0[i] = al_p
                self.a0[i] = (ac_p + _cross(al_p, dp) + _cross(w_p, _cross(w_p, dp))
                              + 2.0 * _cross(w_p, a * dq[i]))

    # -- frame queries ------------------------------------------------------

    def frame_pose(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        f = self.chain.frame(name)
        if f.parent < 0:
            return f.offset_xyz.copy(), f.offset_rot.copy()
        R_b, p_b = self.R[f.parent], self.p[f.parent]
        return p_b + R_b @ f.offset_xyz, R_b @ f.offset_rot

    def frame_point_velocity(self, name: str) -> np.ndarray:
        f = self.chain.frame(name)
        if f.parent < 0:
            return np.zeros(3)
        pos, _ = self.frame_pose(name)
        b = f.parent
        return self.v[b] + _cross(self.omega[b], pos - self.p[b])

    def point_jacobian(self, name: str) -> np.ndarray:
        """Linear-velocity Jacobian (3 x n) of the frame origin."""
        f = self.chain.frame(name)
        n = self.chain.n
        J = np.zeros((3, n))
        if f.parent < 0:
            return J
        pos, _ = self.frame_pose(name)
        anc = self._ancestors[f.parent]
        for i in np.flatnonzero(anc):
            if self.chain.joints[i].kind == REVOLUTE:
                J[:, i] = _cross(self.axis_w[i], pos - self.p[i])
            else:
                J[:, i] = self.axis_w[i]
        return J

    def angular_jacobian(self, name: str) -> np.ndarray:
        f = self.chain.frame(name)
        n = self.chain.n
        J = np.zeros((3, n))
        if f.parent < 0:
            return J
        anc = self._ancestors[f.parent]
        for i in np.flatnonzero(anc):
            if self.chain.joints[i].kind == REVOLUTE:
                J[:, i] = self.axis_w[i]
        return J

    def point_drift(self, name: str) -> np.ndarray:
        """J_dot q_dot for the frame origin's linear velocity."""
        if self.dq is None:
            raise ModelError("drift terms require a velocity; pass dq")
        f = self.chain.frame(name)
        if f.parent < 0:
            return np.zeros(3)
        pos, _ = self.frame_pose(name)
        b = f.parent
        r = pos - self.p[b]
        return self.a0[b] + _cross(self.alpha0[b], r) + _cross(self.omega[b], _cross(self.omega[b], r))

    def angular_drift(self, name: str) -> np.ndarray:
        if self.dq is None:
            raise ModelError("drift terms require a velocity; pass dq")
        f = self.chain.frame(name)
        if f.parent < 0:
            return np.zeros(3)
        return self.alpha0[f.parent]


# --------------------------------------------------------------------------
# Task selectors.

_COORD_AXES = {"x": 0, "y": 1, "z": 2}


def _parse_selector(selector: str) -> tuple[str, int | None]:
    if selector.startswith("coord:"):
        axis = selector.split(":", 1)[1]
        if axis not in _COORD_AXES:
            raise ModelError(f"unknown coordinate {axis!r} in selector {selector!r}")
        return "coord", _COORD_AXES[axis]
    if selector in ("position", "orientation", "pose", "joint"):
        return selector, None
    raise ModelError(f"unknown task selector {selector!r}")


def forward_kinematics(chain: RobotChain, q, frame: str) -> tuple[np.ndarray, np.ndarray]:
    """Pose of a named frame: (position, unit quaternion w-x-y-z)."""
    ev = ChainEval(chain, q)
    pos, R = ev.frame_pose(frame)
    return pos, matrix_to_quaternion(R)


def task_jacobian(chain: RobotChain, q, frame: str, selector: str) -> np.ndarray:
    ev = ChainEval(chain, q)
    return task_kinematics(ev, frame, selector).J


def jdot_qdot(chain: RobotChain, state: RobotState, frame: str, selector: str) -> np.ndarray:
    ev = ChainEval(chain, state.q, state.dq)
    return task_kinematics(ev, frame, selector).jdot_dq


def task_kinematics(ev: ChainEval, frame: str, selector: str) -> TaskKinematics:
    """Task value, Jacobian and drift term for a frame/selector pair."""
    kind, axis = _parse_selector(selector)
    has_vel = ev.dq is not None
    n = ev.chain.n
    if kind == "joint":
        x = ev.q.copy()
        J = np.eye(n)
        drift = np.zeros(n)
        return TaskKinematics(x=x, J=J, jdot_dq=drift)
    pos, R = ev.frame_pose(frame)
    if kind == "position":
        return TaskKinematics(
            x=pos, J=ev.point_jacobian(frame),
            jdot_dq=ev.point_drift(frame) if has_vel else np.zeros(3))
    if kind == "coord":
        return TaskKinematics(
            x=pos[axis:axis + 1],
            J=ev.point_jacobian(frame)[axis:axis + 1],
            jdot_dq=ev.point_drift(frame)[axis:axis + 1] if has_vel else np.zeros(1))
    if kind == "orientation":
        return TaskKinematics(
            x=matrix_to_quaternion(R), J=ev.angular_jacobian(frame),
            jdot_dq=ev.angular_drift(frame) if has_vel else np.zeros(3))
    # pose: position rows then orientation rows
    J = np.vstack([ev.point_jacobian(frame), ev.angular_jacobian(frame)])
    if has_vel:
        drift = np.concatenate([ev.point_drift(frame), ev.angular_drift(frame)])
    else:
        drift = np.zeros(6)
    return TaskKinematics(x=(pos, matrix_to_quaternion(R)), J=J, jdot_dq=drift)


# --------------------------------------------------------------------------
# Dynamics: recursive Newton-Euler in world coordinates.


def inverse_dynamics(chain: RobotChain, q, dq, qdd, *, gravity=None) -> np.ndarray:
    """Joint forces tau realizing the given joint accelerations."""
    q = np.asarray(q, dtype=float).reshape(-1)
    dq = np.asarray(dq, dtype=float).reshape(-1)
    qdd = np.asarray(qdd, dtype=float).reshape(-1)
    g = chain.gravity if gravity is None else np.asarray(gravity, dtype=float)
    n = chain.n
    ev = ChainEval(chain, q, dq)
    omega, alpha = ev.omega, np.empty((n, 3))
    # linear acceleration of the joint origins, with gravity folded in as a
    # fictitious base acceleration
    acc = np.empty((n, 3))
    for i, joint in enumerate(chain.joints):
        a = ev.axis_w[i]
        if joint.parent < 0:
            w_p = np.zeros(3)
            al_p = np.zeros(3)
            ac_p = -g
            dp = ev.p[i]
        else:
            k = joint.parent
            w_p, al_p, ac_p = omega[k], alpha[k], acc[k]
            dp = ev.p[i] - ev.p[k]
        base = ac_p + _cross(al_p, dp) + _cross(w_p, _cross(w_p, dp))
        if joint.kind == REVOLUTE:
            alpha[i] = al_p + _cross(w_p, a * dq[i]) + a * qdd[i]
            acc[i] = base
        else:
            alpha[i] = al_p
            acc[i] = base + 2.0 * _cross(w_p, a * dq[i]) + a * qdd[i]
    # net force/moment per link about its COM
    F = np.empty((n, 3))
    N = np.empty((n, 3))
    com_w = np.empty((n, 3))
    for i, joint in enumerate(chain.joints):
        c = ev.R[i] @ joint.com
        com_w[i] = ev.p[i] + c
        a_com = acc[i] + _cross(alpha[i], c) + _cross(omega[i], _cross(omega[i], c))
        I_w = ev.R[i] @ joint.inertia @ ev.R[i].T
        F[i] = joint.mass * a_com
        N[i] = I_w @ alpha[i] + _cross(omega[i], I_w @ omega[i])
    # backward pass: accumulate child wrenches (children always follow parents)
    f = F.copy()
    nmom = N + _cross_rows(com_w - ev.p, F)  # moment about each joint origin
    tau = np.zeros(n)
    for i in range(n - 1, -1, -1):
        joint = chain.joints[i]
        if joint.kind == REVOLUTE:
            tau[i] = ev.axis_w[i] @ nmom[i]
        else:
            tau[i] = ev.axis_w[i] @ f[i]
        k = joint.parent
        if k >= 0:
            f[k] += f[i]
            nmom[k] += nmom[i] + _cross(ev.p[i] - ev.p[k], f[i])
    return tau


def bias_forces(chain: RobotChain, state: RobotState) -> np.ndarray:
    """Coriolis/centrifugal plus gravity forces: inverse dynamics at qdd = 0."""
    return inverse_dynamics(chain, state.q, state.dq, np.zeros(chain.n))


def inertia_matrix(chain: RobotChain, q) -> np.ndarray:
    """Joint-space inertia via composite-rigid-body accumulation.

    Column j is the generalized force of a unit acceleration of joint j with
    everything else at rest: the subtree past j moves rigidly, so its wrench
    follows from the accumulated composite mass, first moment and world-origin
    inertia of that subtree.
    """
    n = chain.n
    ev = ChainEval(chain, q)
    masses = np.empty(n)
    coms = np.empty((n, 3))
    J_origin = np.empty((n, 3, 3))  # per-link inertia about the world origin
    eye = np.eye(3)
    for i, joint in enumerate(chain.joints):
        c = ev.p[i] + ev.R[i] @ joint.com
        I_com = ev.R[i] @ joint.inertia @ ev.R[i].T
        masses[i] = joint.mass
        coms[i] = c
        J_origin[i] = I_com + joint.mass * ((c @ c) * eye - np.outer(c, c))
    # reverse accumulation over the tree
    mc = masses.copy()
    s = masses[:, None] * coms
    Jc = J_origin.copy()
    for i in range(n - 1, -1, -1):
        parent = chain.joints[i].parent
        if parent >= 0:
            mc[parent] += mc[i]
            s[parent] += s[i]
            Jc[parent] += Jc[i]
    M = np.zeros((n, n))
    for j in range(n):
        a = ev.axis_w[j]
        p_j = ev.p[j]
        if chain.joints[j].kind == REVOLUTE:
            # unit angular acceleration about the axis through p_j
            F = _cross(a, s[j] - mc[j] * p_j)
            N0 = Jc[j] @ a - _cross(s[j], _cross(a, p_j))
        else:
            F = mc[j] * a
            N0 = _cross(s[j], a)
        i = j
        while i >= 0:
            if chain.joints[i].kind == REVOLUTE:
                M[i, j] = ev.axis_w[i] @ (N0 - _cross(ev.p[i], F))
            else:
                M[i, j] = ev.axis_w[i] @ F
            M[j, i] = M[i, j]
            i = chain.joints[i].parent
    return 0.5 * (M + M.T)
