"""Bundled robot models."""

from __future__ import annotations

from importlib import resources

import numpy as np
import yaml

from redsolve.model.chain import ModelError, RobotChain
from redsolve.model.io import chain_from_dict

BUNDLED = ("iiwa7", "mobile_dual_arm")


def load_bundled(name: str) -> RobotChain:
    if name not in BUNDLED:
        raise ModelError(f"unknown bundled model {name!r}; available: {', '.join(BUNDLED)}")
    ref = resources.files("redsolve.model") / "data" / f"{name}.yaml"
    with ref.open("r") as fh:
        data = yaml.safe_load(fh)
    return chain_from_dict(data)


# Initial configurations used by the bundled scenarios.

IIWA7_HOME = np.array([-0.7854, 2.0502, 2.0721, -1.6563, -2.0893, 2.0342, 0.0])
IIWA7_FAST_STAR_HOME = np.array([-0.9, 2.0, 2.1721, -1.8055, -2.0893, 1.9834, 0.0])
DUAL_ARM_BASE_HOME = np.array([0.0, 0.0, 0.0])
DUAL_ARM_LEFT_HOME = np.array([-2.4096, -1.2189, 1.0583, -0.0093, 2.295, 0.0057, 0.0])
DUAL_ARM_RIGHT_HOME = np.array([1.6999, -0.368, 2.3917, -1.2467, 0.9135, 1.2496, 0.0])
DUAL_ARM_HOME = np.concatenate([DUAL_ARM_BASE_HOME, DUAL_ARM_LEFT_HOME, DUAL_ARM_RIGHT_HOME])

HOME_CONFIGURATIONS = {
    "iiwa7": IIWA7_HOME,
    "mobile_dual_arm": DUAL_ARM_HOME,
}
