"""Robot description files.

Declarative YAML, schema ``robot-chain/1``:

.. code-block:: yaml

    schema: robot-chain/1
    name: my-robot
    gravity: [0.0, 0.0, -9.81]
    joints:
      - name: joint1
        kind: revolute            # or prismatic
        parent: null              # name of the parent joint, null for the root
        origin: {xyz: [0, 0, 0.15], rpy: [0, 0, 0]}
        axis: [0, 0, 1]
        limits:
          position: [-2.9, 2.9]   # rad or m
          velocity: [-1.45, 1.45] # rad/s or m/s; .inf allowed
          acceleration: [-9, 9]
        inertial:
          mass: 3.4               # kg
          com: [0, 0.03, 0.12]    # m, local frame
          inertia: [0.02, 0.02, 0.01]   # diagonal, or a full 3x3 nested list
    frames:
      - {name: tool, parent: joint7, xyz: [0, 0, 0.045], rpy: [0, 0, 0]}
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from redsolve.model.chain import Frame, Joint, ModelError, RobotChain, rpy_matrix

SCHEMA = "robot-chain/1"


def _vec3(value, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ModelError(f"{what} must be a 3-vector, got {value!r}")
    return arr


def _pair(value, what: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ModelError(f"{what} must be a [low, high] pair, got {value!r}")
    return float(value[0]), float(value[1])


def _inertia(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ModelError(f"inertia must be a diagonal 3-vector or 3x3 matrix, got shape {arr.shape}")


def chain_from_dict(data: dict) -> RobotChain:
    if data.get("schema") != SCHEMA:
        raise ModelError(f"unsupported robot schema {data.get('schema')!r}, expected {SCHEMA!r}")
    name = data.get("name", "robot")
    gravity = _vec3(data.get("gravity", [0.0, 0.0, -9.81]), "gravity")
    joints: list[Joint] = []
    index: dict[str, int] = {}
    for entry in data.get("joints", []):
        jname = entry["name"]
        if jname in index:
            raise ModelError(f"duplicate joint name {jname!r}")
        parent_name = entry.get("parent")
        if parent_name is None:
            parent = -1
        else:
            if parent_name not in index:
                raise ModelError(f"joint {jname!r}: unknown parent {parent_name!r}")
            parent = index[parent_name]
        origin = entry.get("origin", {})
        limits = entry.get("limits", {})
        inertial = entry.get("inertial", {})
        axis = _vec3(entry.get("axis", [0, 0, 1]), f"joint {jname!r} axis")
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ModelError(f"joint {jname!r}: zero axis")
        joints.append(Joint(
            name=jname,
            kind=entry.get("kind", "revolute"),
            parent=parent,
            origin_xyz=_vec3(origin.get("xyz", [0, 0, 0]), f"joint {jname!r} origin"),
            origin_rot=rpy_matrix(_vec3(origin.get("rpy", [0, 0, 0]), f"joint {jname!r} rpy")),
            axis=axis / norm,
            pos_limit=_pair(limits.get("position", [-np.inf, np.inf]), "position limits"),
            vel_limit=_pair(limits.get("velocity", [-np.inf, np.inf]), "velocity limits"),
            acc_limit=_pair(limits.get("acceleration", [-np.inf, np.inf]), "acceleration limits"),
            mass=float(inertial.get("mass", 1.0)),
            com=_vec3(inertial.get("com", [0, 0, 0]), f"joint {jname!r} com"),
            inertia=_inertia(inertial.get("inertia", [1e-3, 1e-3, 1e-3])),
        ))
        index[jname] = len(joints) - 1
    frames: dict[str, Frame] = {}
    for entry in data.get("frames", []):
        fname = entry["name"]
        parent_name = entry.get("parent")
        parent = -1 if parent_name is None else index.get(parent_name)
        if parent is None:
            raise ModelError(f"frame {fname!r}: unknown parent joint {parent_name!r}")
        frames[fname] = Frame(
            name=fname,
            parent=parent,
            offset_xyz=_vec3(entry.get("xyz", [0, 0, 0]), f"frame {fname!r} xyz"),
            offset_rot=rpy_matrix(_vec3(entry.get("rpy", [0, 0, 0]), f"frame {fname!r} rpy")),
        )
    # every joint doubles as a frame at its own origin
    for jname, idx in index.items():
        frames.setdefault(jname, Frame(name=jname, parent=idx,
                                       offset_xyz=np.zeros(3), offset_rot=np.eye(3)))
    chain = RobotChain(name=name, joints=tuple(joints), frames=frames, gravity=gravity)
    chain.validate()
    return chain


def load_chain(path) -> RobotChain:
    with open(Path(path), "r") as fh:
        data = yaml.safe_load(fh)
    return chain_from_dict(data)
