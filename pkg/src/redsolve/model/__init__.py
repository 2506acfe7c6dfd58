from redsolve.model.bundled import HOME_CONFIGURATIONS, load_bundled
from redsolve.model.chain import (
    ChainEval,
    ModelError,
    RobotChain,
    RobotState,
    TaskKinematics,
    bias_forces,
    forward_kinematics,
    inertia_matrix,
    inverse_dynamics,
    jdot_qdot,
    orientation_error,
    task_jacobian,
    task_kinematics,
)
from redsolve.model.io import chain_from_dict, load_chain

__all__ = [
    "ChainEval",
    "ModelError",
    "RobotChain",
    "RobotState",
    "TaskKinematics",
    "bias_forces",
    "forward_kinematics",
    "inertia_matrix",
    "inverse_dynamics",
    "jdot_qdot",
    "orientation_error",
    "task_jacobian",
    "task_kinematics",
    "chain_from_dict",
    "load_chain",
    "load_bundled",
    "HOME_CONFIGURATIONS",
]
