"""Scenario configuration: declarative YAML to runnable experiment setups.

Schema ``scenario/1``: robot, initial configuration, control period and
duration, per-scheme weight/secondary-input/gain choices, and the ordered
priority levels (equality tasks with trajectory primitives, inequality bound
groups).  Placeholders like ``initial`` are resolved against the robot model
when the scenario is instantiated for a scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from redsolve.model import ChainEval, RobotState, load_bundled, load_chain
from redsolve.model.chain import matrix_to_quaternion
from redsolve.shaping import (
    BoundTask,
    BoxLimits,
    LevelSpec,
    ReferenceGains,
    TorqueBox,
    TrackingTask,
    TrajectorySample,
)
from redsolve.sim.trajectory import Circle, HoldPoint, Line, StarPath

SCHEMA = "scenario/1"
BUNDLED_SCENARIOS = ("sect4a", "sect4b", "sect4c")

_PLANES = {"xy": (0, 1), "yz": (1, 2), "xz": (0, 2)}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str
    data: dict
    path: str = ""

    @property
    def schemes(self) -> list[str]:
        return list(self.data.get("schemes", ["velocity"]))

    @property
    def default_scheme(self) -> str:
        return self.data.get("default_scheme", self.schemes[0])

    @property
    def duration(self) -> float:
        return float(self.data.get("duration", 8.0))

    @property
    def period(self) -> float:
        return float(self.data.get("period", 0.001))


@dataclass
class RuntimeScenario:
    name: str
    scheme: str
    chain: object
    initial_state: RobotState
    levels: list[LevelSpec]
    weight_choice: str
    secondary_policy: dict
    duration: float
    period: float
    level_names: list[str] = field(default_factory=list)


def load_scenario(source) -> ScenarioConfig:
    """Load a scenario by bundled name or from a YAML file path."""
    if isinstance(source, str) and source in BUNDLED_SCENARIOS:
        ref = resources.files("redsolve") / "scenarios" / f"{source}.yaml"
        with ref.open("r") as fh:
            data = yaml.safe_load(fh)
        path = str(ref)
    else:
        p = Path(source)
        if not p.exists():
            raise ConfigError(
                f"unknown scenario {source!r}; bundled scenarios: "
                + ", ".join(BUNDLED_SCENARIOS))
        with open(p) as fh:
            data = yaml.safe_load(fh)
        path = str(p)
    if data.get("schema") != SCHEMA:
        raise ConfigError(f"unsupported scenario schema {data.get('schema')!r}")
    return ScenarioConfig(name=data.get("name", Path(path).stem), data=data, path=path)


def _per_scheme(entry, scheme: str, what: str):
    """Gain/weight tables may be flat or keyed by scheme."""
    if isinstance(entry, dict) and scheme in entry:
        return entry[scheme]
    if isinstance(entry, dict) and any(s in entry for s in ("velocity", "acceleration", "torque")):
        raise ConfigError(f"{what}: no entry for scheme {scheme!r}")
    return entry


def _gains(entry, scheme: str, m: int, what: str) -> tuple[ReferenceGains, float | None]:
    g = _per_scheme(entry, scheme, what)
    if not isinstance(g, dict) or "k" not in g and "d" not in g:
        raise ConfigError(f"{what}: expected gain mapping, got {g!r}")
    k1 = g.get("k1")
    if scheme == "velocity":
        return ReferenceGains.first_order(float(g["k"]), m), None
    if "d" not in g:
        raise ConfigError(f"{what}: scheme {scheme!r} needs damping gain d")
    k = float(g.get("k", g["d"]))  # bound tasks may give only d and k1
    return ReferenceGains.second_order(k, float(g["d"]), m), \
        (float(k1) if k1 is not None else None)


def _selector_dim(selector: str, n: int) -> int:
    if selector == "joint":
        return n
    if selector == "position" or selector == "orientation":
        return 3
    if selector == "pose":
        return 6
    if selector.startswith("coord:"):
        return 1
    raise ConfigError(f"unknown selector {selector!r}")


def _limits_from_entry(entry, chain, selector: str, n: int) -> BoxLimits:
    if entry == "from-chain":
        lo_p, hi_p = chain.position_limits()
        lo_v, hi_v = chain.velocity_limits()
        lo_a, hi_a = chain.acceleration_limits()
        return BoxLimits.boxes(n, position=(lo_p, hi_p), velocity=(lo_v, hi_v),
                               acceleration=(lo_a, hi_a))
    if not isinstance(entry, dict):
        raise ConfigError(f"invalid limits entry {entry!r}")
    m = _selector_dim(selector, n)

    def pair(key):
        if key not in entry:
            return None
        lo, hi = entry[key]
        return (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))

    return BoxLimits.boxes(m, position=pair("position"), velocity=pair("velocity"),
                           acceleration=pair("acceleration"))


def _build_trajectory(spec: dict, ev: ChainEval, frame: str, selector: str):
    kind = spec.get("kind", "hold")
    pos, R = (ev.frame_pose(frame) if selector != "joint" else (ev.q.copy(), np.eye(3)))
    if selector.startswith("coord:"):
        axis = {"x": 0, "y": 1, "z": 2}[selector.split(":")[1]]
        start = pos[axis:axis + 1]
    elif selector in ("position", "pose"):
        start = pos
    elif selector == "joint":
        start = pos
    else:
        start = pos

    def resolve_point(value, reference):
        if value == "initial":
            return reference.copy()
        if isinstance(value, dict) and "initial-offset" in value:
            return reference + np.asarray(value["initial-offset"], dtype=float)
        return np.asarray(value, dtype=float)

    if kind == "hold":
        return HoldPoint(start)
    if kind == "line":
        target = resolve_point(spec["to"], start)
        return Line(start=resolve_point(spec.get("from", "initial"), start),
                    end=target, duration=float(spec["duration"]),
                    profile=spec.get("profile", "trapezoidal"))
    if kind == "star":
        i, j = _PLANES[spec.get("plane", "yz")]
        a1 = np.zeros(3)
        a1[i] = 1.0
        a2 = np.zeros(3)
        a2[j] = 1.0
        return StarPath(center=resolve_point(spec.get("center", "initial"), start),
                        axis1=a1, axis2=a2,
                        segment_length=float(spec.get("segment_length", 0.24)),
                        points=int(spec.get("points", 8)),
                        segment_time=float(spec.get("segment_time", 1.0)),
                        profile=spec.get("profile", "sinusoidal"))
    if kind == "circle":
        i, j = _PLANES[spec.get("plane", "xy")]
        a1 = np.zeros(3)
        a1[i] = 1.0
        a2 = np.zeros(3)
        a2[j] = 1.0
        center = resolve_point(spec["center"], start)
        radial = start - center
        start_angle = float(np.arctan2(radial[j], radial[i]))
        return Circle(center=center, radius=float(spec["radius"]),
                      duration=float(spec["duration"]), axis1=a1, axis2=a2,
                      start_angle=start_angle, turns=float(spec.get("turns", 1.0)),
                      profile=spec.get("profile", "trapezoidal"))
    raise ConfigError(f"unknown trajectory kind {kind!r}")


def _wrap_pose_sampler(primitive, quat):
    def sample(t: float) -> TrajectorySample:
        s = primitive.sample(t)
        return TrajectorySample(position=s.position, velocity=s.velocity,
                                acceleration=s.acceleration, orientation=quat,
                                ang_velocity=np.zeros(3), ang_acceleration=np.zeros(3))
    return sample


def instantiate(config: ScenarioConfig, scheme: str | None = None) -> RuntimeScenario:
    """Resolve a scenario for one control scheme against its robot model."""
    scheme = scheme or config.default_scheme
    if scheme not in config.schemes:
        raise ConfigError(
            f"scenario {config.name!r} does not support scheme {scheme!r}; "
            f"supported: {', '.join(config.schemes)}")
    data = config.data
    robot = data["robot"]
    chain = load_bundled(robot) if isinstance(robot, str) and "/" not in robot \
        else load_chain(robot)
    n = chain.n
    q0 = np.asarray(data["initial_position"], dtype=float)
    if q0.shape != (n,):
        raise ConfigError(f"initial_position has {q0.shape[0]} entries, robot has {n}")
    state0 = RobotState(q0, np.zeros(n))
    ev = ChainEval(chain, q0)

    levels = []
    level_names = []
    for idx, lvl in enumerate(data.get("levels", [])):
        equality = None
        if "equality" in lvl:
            e = lvl["equality"]
            selector = e["selector"]
            m = _selector_dim(selector, n)
            gains, _ = _gains(e["gains"], scheme, m, f"level {idx} equality gains")
            primitive = _build_trajectory(e.get("trajectory", {"kind": "hold"}), ev,
                                          e.get("frame", ""), selector)
            if selector == "pose":
                _, R = ev.frame_pose(e["frame"])
                sampler = _wrap_pose_sampler(primitive, matrix_to_quaternion(R))
            else:
                sampler = primitive.sample
            equality = TrackingTask(frame=e.get("frame", ""), selector=selector,
                                    sample=sampler, gains=gains)
        bounds = []
        for b in lvl.get("inequality", []):
            selector = b["selector"]
            m = _selector_dim(selector, n)
            gains, k1 = _gains(b["gains"], scheme, m, f"level {idx} bound gains")
            limits = _limits_from_entry(b.get("limits", "from-chain"), chain,
                                        selector, n)
            bounds.append(BoundTask(frame=b.get("frame", ""), selector=selector,
                                    limits=limits, gains=gains, k1=k1,
                                    label=b.get("label", f"L{idx}")))
        torque_box = None
        if "torque_box" in lvl and scheme == "torque":
            tb = lvl["torque_box"]
            torque_box = TorqueBox(tau_low=np.asarray(tb["low"], dtype=float),
                                   tau_high=np.asarray(tb["high"], dtype=float))
        levels.append(LevelSpec(equality=equality, inequality=bounds,
                                torque_box=torque_box))
        level_names.append(lvl.get("name", f"level{idx + 1}"))

    weight_choice = _per_scheme(data.get("weight", "identity"), scheme, "weight")
    secondary = _per_scheme(data.get("secondary", {"policy": "zero"}), scheme,
                            "secondary")
    return RuntimeScenario(
        name=config.name, scheme=scheme, chain=chain, initial_state=state0,
        levels=levels, weight_choice=weight_choice, secondary_policy=secondary,
        duration=config.duration, period=config.period, level_names=level_names)
