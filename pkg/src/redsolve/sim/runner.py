"""Closed-loop experiment runner: assemble, solve, integrate, log.

Integration is semi-implicit Euler at the configured control period: the
velocity scheme integrates u into positions directly, the acceleration and
torque schemes update velocities first and positions with the new velocity.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from redsolve.linalg import WeightMatrix
from redsolve.model.chain import orientation_error
from redsolve.shaping import ModelOutputs, assemble_level
from redsolve.sim.config import RuntimeScenario
from redsolve.solvers import basic, fast, opt
from redsolve.solvers.types import HierarchyProblem, SolveOptions

SOLVER_VARIANTS = ("basic", "fast", "opt", "opt-warm", "oracle")


class RunnerError(RuntimeError):
    pass


@dataclass
class SimLog:
    """Per-cycle log with a fixed, documented column order.

    Columns: time, q*, dq*, u*, then per level (scale, saturation-set size,
    tracking error, normalized bound violation), then cost, iterations,
    solve_time, viol_pos, viol_vel.
    """

    scenario: str
    scheme: str
    solver: str
    period: float
    n: int
    n_levels: int
    level_names: list[str]
    seed: int = 0
    time: np.ndarray = None  # type: ignore[assignment]
    q: np.ndarray = None  # type: ignore[assignment]
    dq: np.ndarray = None  # type: ignore[assignment]
    u: np.ndarray = None  # type: ignore[assignment]
    scale: np.ndarray = None  # type: ignore[assignment]
    sat_size: np.ndarray = None  # type: ignore[assignment]
    track_err: np.ndarray = None  # type: ignore[assignment]
    level_violation: np.ndarray = None  # type: ignore[assignment]
    cost: np.ndarray = None  # type: ignore[assignment]
    iterations: np.ndarray = None  # type: ignore[assignment]
    solve_time: np.ndarray = None  # type: ignore[assignment]
    viol_pos: np.ndarray = None  # type: ignore[assignment]
    viol_vel: np.ndarray = None  # type: ignore[assignment]
    exhausted: np.ndarray = None  # type: ignore[assignment]

    @property
    def cycles(self) -> int:
        return len(self.time)

    def columns(self) -> list[str]:
        cols = ["time"]
        cols += [f"q{i}" for i in range(self.n)]
        cols += [f"dq{i}" for i in range(self.n)]
        cols += [f"u{i}" for i in range(self.n)]
        for k in range(self.n_levels):
            cols += [f"scale_L{k + 1}", f"sat_L{k + 1}", f"err_L{k + 1}",
                     f"viol_L{k + 1}"]
        cols += ["cost", "iterations", "solve_time", "viol_pos", "viol_vel"]
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for i in range(self.cycles):
                row = [f"{self.time[i]:.6f}"]
                row += [repr(v) for v in self.q[i]]
                row += [repr(v) for v in self.dq[i]]
                row += [repr(v) for v in self.u[i]]
                for k in range(self.n_levels):
                    row += [repr(self.scale[i, k]), str(int(self.sat_size[i, k])),
                            repr(self.track_err[i, k]), repr(self.level_violation[i, k])]
                row += [repr(self.cost[i]), str(int(self.iterations[i])),
                        repr(self.solve_time[i]), repr(self.viol_pos[i]),
                        repr(self.viol_vel[i])]
                writer.writerow(row)


def _weight(choice, outputs: ModelOutputs, n: int) -> WeightMatrix:
    if choice == "identity":
        return WeightMatrix.identity(n)
    if choice == "inertia":
        return WeightMatrix.from_matrix(outputs.inertia, validate=False)
    if choice == "inverse-inertia":
        return WeightMatrix.from_matrix(outputs.inertia_inverse, validate=False)
    arr = np.asarray(choice, dtype=float)
    return WeightMatrix.from_matrix(arr)


def _secondary(policy: dict, scheme: str, state, outputs: ModelOutputs) -> np.ndarray:
    kind = policy.get("policy", "zero")
    n = len(state.q)
    if kind == "zero":
        return np.zeros(n)
    if kind == "damping":
        gain = float(policy.get("gain", 0.0))
        damping = -gain * state.dq
        if scheme == "torque":
            return outputs.inertia @ damping
        return damping
    if kind == "explicit":
        return np.asarray(policy["value"], dtype=float)
    raise RunnerError(f"unknown secondary-input policy {kind!r}")


def _normalized_violation(values, lower, upper) -> float:
    """Worst bound overrun, scaled by each row's half-range when finite."""
    if len(values) == 0:
        return 0.0
    overrun = np.maximum(lower - values, values - upper)
    span = upper - lower
    scale = np.where(np.isfinite(span) & (span > 0), span / 2.0, 1.0)
    return float(max(0.0, np.max(overrun / scale)))


def _tracking_error(level_spec, outputs: ModelOutputs, t: float) -> float:
    task = level_spec.equality
    if task is None:
        return 0.0
    tk = outputs.task(task.frame, task.selector)
    sample = task.sample(t)
    if task.selector == "pose":
        pos, quat = tk.x
        e = np.concatenate([sample.position - pos,
                            orientation_error(sample.orientation, quat)])
    elif task.selector == "orientation":
        e = orientation_error(sample.position, tk.x)
    else:
        e = sample.position - tk.x
    return float(np.linalg.norm(e))


def run_experiment(scenario: RuntimeScenario, solver: str = "basic", *,
                   duration: float | None = None, seed: int = 0,
                   oracle_weight: float = 1e8,
                   options: SolveOptions | None = None) -> SimLog:
    """Run the closed control loop and return the populated log."""
    if solver not in SOLVER_VARIANTS:
        raise RunnerError(f"unknown solver variant {solver!r}; "
                          f"expected one of {SOLVER_VARIANTS}")
    chain = scenario.chain
    scheme = scenario.scheme
    n = chain.n
    T = scenario.period
    total = duration if duration is not None else scenario.duration
    cycles = int(round(total / T))
    n_levels = len(scenario.levels)
    opts = options or SolveOptions()

    state = scenario.initial_state.copy()
    memory = opt.WarmStartMemory()
    lo_p, hi_p = chain.position_limits()
    lo_v, hi_v = chain.velocity_limits()

    log = SimLog(scenario=scenario.name, scheme=scheme, solver=solver, period=T,
                 n=n, n_levels=n_levels, seed=seed,
                 level_names=list(scenario.level_names))
    log.time = np.empty(cycles)
    log.q = np.empty((cycles, n))
    log.dq = np.empty((cycles, n))
    log.u = np.empty((cycles, n))
    log.scale = np.empty((cycles, n_levels))
    log.sat_size = np.empty((cycles, n_levels), dtype=int)
    log.track_err = np.empty((cycles, n_levels))
    log.level_violation = np.empty((cycles, n_levels))
    log.cost = np.empty(cycles)
    log.iterations = np.empty(cycles, dtype=int)
    log.solve_time = np.empty(cycles)
    log.viol_pos = np.empty(cycles)
    log.viol_vel = np.empty(cycles)
    log.exhausted = np.zeros((cycles, n_levels), dtype=bool)

    for i in range(cycles):
        t = i * T
        outputs = ModelOutputs(chain, state)
        levels = [assemble_level(scheme, spec, state, outputs, t)
                  for spec in scenario.levels]
        W = _weight(scenario.weight_choice, outputs, n)
        u_r = _secondary(scenario.secondary_policy, scheme, state, outputs)
        problem = HierarchyProblem(n=n, W=W, u_r=u_r, levels=levels)

        t0 = time.perf_counter()
        if solver == "basic":
            sol = basic.solve(problem, opts)
        elif solver == "fast":
            sol = fast.solve_fast(problem, opts)
        elif solver == "opt":
            sol = opt.solve_opt(problem, options=opts)[0]
        elif solver == "opt-warm":
            sol, _, memory = opt.solve_opt(problem, memory=memory, options=opts)
        else:  # oracle
            from redsolve.oracle import solve_hierarchy
            osols = solve_hierarchy(problem, oracle_weight)
            sol = _solution_from_oracle(problem, osols)
        log.solve_time[i] = time.perf_counter() - t0

        u = sol.u
        du = u - u_r
        log.time[i] = t
        log.q[i] = state.q
        log.dq[i] = state.dq
        log.u[i] = u
        log.cost[i] = 0.5 * float(du @ W.matrix @ du)
        log.iterations[i] = sol.total_iterations
        for k in range(n_levels):
            lvl_res = sol.levels[k]
            log.scale[i, k] = lvl_res.scale
            log.sat_size[i, k] = len(lvl_res.saturations)
            log.track_err[i, k] = _tracking_error(scenario.levels[k], outputs, t)
            lvl = levels[k]
            log.level_violation[i, k] = _normalized_violation(
                lvl.C @ u if lvl.n_ineq else np.zeros(0), lvl.lower, lvl.upper)
            log.exhausted[i, k] = lvl_res.exhausted

        # integrate
        if scheme == "velocity":
            state.q = state.q + T * u
            state.dq = u.copy()
        elif scheme == "acceleration":
            state.dq = state.dq + T * u
            state.q = state.q + T * state.dq
        else:  # torque: u is the generalized force above the bias
            qdd = outputs.inertia_inverse @ u
            state.dq = state.dq + T * qdd
            state.q = state.q + T * state.dq

        log.viol_pos[i] = _normalized_violation(state.q, lo_p, hi_p)
        log.viol_vel[i] = _normalized_violation(state.dq, lo_v, hi_v)

    return log


def _solution_from_oracle(problem, oracle_solutions):
    """Adapt the per-level oracle cascade into the common solution shape."""
    from redsolve.solvers.types import Diagnostics, LevelResult, SaturationSet
    from redsolve.solvers.types import Solution

    results = []
    for k, osol in enumerate(oracle_solutions):
        results.append(LevelResult(u_k=osol.u, scale=min(1.0, max(0.0, osol.s)),
                                   saturations=SaturationSet(),
                                   iterations=osol.iterations))
    return Solution(u=oracle_solutions[-1].u, levels=results,
                    diagnostics=Diagnostics())


@dataclass
class Metrics:
    avg_scale: list[float]
    avg_cost: float
    max_violation: float
    max_level_violation: list[float]
    max_viol_pos: float
    max_viol_vel: float
    avg_solve_time: float
    max_solve_time: float
    total_iterations: int

    def as_dict(self) -> dict:
        out = {}
        for k, s in enumerate(self.avg_scale):
            out[f"avg_scale_L{k + 1}"] = s
        out["avg_cost"] = self.avg_cost
        out["max_violation"] = self.max_violation
        for k, v in enumerate(self.max_level_violation):
            out[f"max_violation_L{k + 1}"] = v
        out["max_viol_pos"] = self.max_viol_pos
        out["max_viol_vel"] = self.max_viol_vel
        out["avg_solve_time"] = self.avg_solve_time
        out["max_solve_time"] = self.max_solve_time
        out["total_iterations"] = self.total_iterations
        return out


def metrics(log: SimLog) -> Metrics:
    if log.cycles == 0:
        raise RunnerError("empty log")
    return Metrics(
        avg_scale=[float(np.mean(log.scale[:, k])) for k in range(log.n_levels)],
        avg_cost=float(np.mean(log.cost)),
        max_violation=float(np.max(log.level_violation)),
        max_level_violation=[float(np.max(log.level_violation[:, k]))
                             for k in range(log.n_levels)],
        max_viol_pos=float(np.max(log.viol_pos)),
        max_viol_vel=float(np.max(log.viol_vel)),
        avg_solve_time=float(np.mean(log.solve_time)),
        max_solve_time=float(np.max(log.solve_time)),
        total_iterations=int(np.sum(log.iterations)),
    )
