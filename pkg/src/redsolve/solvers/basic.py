"""Multi-priority solver with inequality saturation and task scaling.

Each priority level is solved in the null space of the levels above it.
Violated inequality rows are converted one at a time into pinned equalities
(the saturation set); when no redundancy is left to pin another row, the
equality task of the level is scaled by the best factor found so far.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from redsolve.linalg import projector_step, rank_estimate, weighted_pinv
from redsolve.solvers.types import (
    Diagnostics,
    HierarchyProblem,
    LevelResult,
    SaturationSet,
    Solution,
    SolveOptions,
)


@dataclass
class ScalingQuery:
    """Inputs of the task-scaling subproblem for the stacked inequality rows.

    ``rho`` is the response of each row to the full task command; ``sigma``
    the row value with the task command removed.  Scaling the command by s
    moves row i to sigma_i + s * rho_i.
    """

    rho: np.ndarray
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def task_scaling_factor(query: ScalingQuery, *, violation_tol: float = 1e-9) -> tuple[float, int]:
    """Largest feasible scale in [0, 1] and the most critical row index.

    Per row the feasible scale interval is ((lower - sigma)/rho,
    (upper - sigma)/rho), sorted.  Rows with rho = 0 impose no restriction
    while satisfied and force a zero factor when violated.  The most critical
    row minimizes the interval's upper end (smallest index on ties).
    """
    rho, sigma = query.rho, query.sigma
    lower, upper = query.lower, query.upper
    with np.errstate(divide="ignore", invalid="ignore"):
        s_low = (lower - sigma) / rho
        s_high = (upper - sigma) / rho
    swap = s_low > s_high
    s_low2 = np.where(swap, s_high, s_low)
    s_high2 = np.where(swap, s_low, s_high)
    zero = rho == 0.0
    if np.any(zero):
        satisfied = (sigma >= lower - violation_tol) & (sigma <= upper + violation_tol)
        s_low2 = np.where(zero, -np.inf, s_low2)
        s_high2 = np.where(zero & satisfied, np.inf, s_high2)
        s_high2 = np.where(zero & ~satisfied, -np.inf, s_high2)
    s_max = float(np.min(s_high2))
    s_min = float(np.max(s_low2))
    # smallest index among (near-)ties: rows re-checked after a previous level
    # pinned them share interval endpoints exactly, so bitwise argmin would be
    # decided by roundoff
    if np.isfinite(s_max):
        tie = s_high2 <= s_max + 1e-8 * max(1.0, abs(s_max))
    else:
        tie = s_high2 == s_max
    most_critical = int(np.argmax(tie))
    if s_min > s_max or s_max < 0.0 or s_min > 1.0:
        return 0.0, most_critical
    return min(s_max, 1.0), most_critical


def violated_side(value: float, lower: float, upper: float, rho: float = 0.0) -> str:
    """Which bound the row should be pinned to: only finite bounds qualify."""
    if value < lower:
        return "lower"
    if value > upper:
        return "upper"
    # degenerate: the scaling subproblem singled out a still-satisfied row;
    # pin the bound it would cross as the task command grows
    if rho > 0.0 and np.isfinite(upper):
        return "upper"
    if rho < 0.0 and np.isfinite(lower):
        return "lower"
    if not np.isfinite(lower):
        return "upper"
    if not np.isfinite(upper):
        return "lower"
    return "lower" if abs(value - lower) <= abs(value - upper) else "upper"


@dataclass
class CriticalRow:
    any_violation: bool
    scale: float = 1.0
    row: int = -1
    side: str = ""
    bound: float = 0.0
    worst: float = 0.0


def find_most_critical(C_all, lo_all, hi_all, u_k, u_task, sat_rows: set[int],
                       *, violation_tol: float) -> CriticalRow:
    """Violation check plus scaling query over the stacked rows of levels 1..k.

    Rows already in the saturation set hold with equality by construction;
    they are excluded from the violation test and their scaling response is
    structurally zero.
    """
    phi = C_all @ u_k
    violated = (phi < lo_all - violation_tol) | (phi > hi_all + violation_tol)
    if sat_rows:
        idx = np.fromiter(sat_rows, dtype=int)
        violated[idx] = False
    if not violated.any():
        return CriticalRow(any_violation=False)
    rho = C_all @ u_task
    sigma = phi - rho
    if sat_rows:
        rho[idx] = 0.0
        sigma[idx] = np.clip(phi[idx], lo_all[idx], hi_all[idx])
    s, j = task_scaling_factor(
        ScalingQuery(rho=rho, sigma=sigma, lower=lo_all, upper=hi_all),
        violation_tol=violation_tol)
    overrun = np.maximum(lo_all - phi, phi - hi_all)
    if not violated[j]:
        # degenerate pick (noise-level sigma/rho make the intervals
        # meaningless): address the worst actual violation instead of jumping
        # a satisfied row to a far-away bound
        masked = np.where(violated, overrun, -np.inf)
        j = int(np.argmax(masked))
    side = violated_side(float(phi[j]), float(lo_all[j]), float(hi_all[j]),
                         rho=float(rho[j]))
    bound = float(lo_all[j] if side == "lower" else hi_all[j])
    worst = float(np.max(overrun))
    return CriticalRow(any_violation=True, scale=s, row=int(j), side=side, bound=bound,
                       worst=worst)


def repair_exhausted_level(A, b_cmd, b_bias, sat: SaturationSet, u_prev, P, W,
                           u_r_k, C_all, lo_all, hi_all, options: SolveOptions,
                           sat_budget: int, l_above: int = 0,
                           ) -> tuple[np.ndarray, SaturationSet, float, bool, int]:
    """Best-effort completion of an exhausted level.

    From the stored candidate's saturation set, keeps pinning the most
    violated row while redundancy lasts; the applied scale factor is
    recomputed for every repaired state so the output stays consistent
    (a stored factor belongs to the pieces it was computed with).
    Candidates are ranked by the bound residual of the levels above first,
    then of this level's own rows; when no pieced candidate can keep the
    higher levels' rows satisfied, the level's equality is abandoned and the
    higher-level solution is passed through unchanged (``relaxed``).
    Deterministic and shared by all solver variants so their exhaustion
    outputs coincide.  Returns (u_k, set, applied scale, relaxed, iterations).
    """
    n = P.shape[0]
    m_k = A.shape[0]
    sat = sat.copy()

    def build(current: SaturationSet):
        if len(current):
            res_sat = weighted_pinv(current.C_sat @ P, W, rank_tol=options.rank_tol)
            P_hat_prev = projector_step(P, current.C_sat, res_sat.pinv)
            u_sat = res_sat.pinv @ (current.d_sat - current.C_sat @ u_prev)
        else:
            P_hat_prev = P
            u_sat = np.zeros(n)
        A_hat = A @ P_hat_prev
        if m_k > 0 and len(current) and rank_estimate(A_hat, options.rank_tol) < m_k:
            return None
        res_hat = weighted_pinv(A_hat, W, rank_tol=options.rank_tol)
        P_hat_k = projector_step(P_hat_prev, A, res_hat.pinv)
        u_task = res_hat.pinv @ b_cmd
        base = (u_prev + u_sat + res_hat.pinv @ (-b_bias - A @ (u_prev + u_sat))
                + P_hat_k @ u_r_k)
        return base, u_task, P_hat_k

    def scaled(base, u_task, current: SaturationSet):
        """Feasible scale for this state and the resulting point."""
        if C_all.shape[0] == 0:
            return base + u_task, 1.0
        rho = C_all @ u_task
        sigma = C_all @ base
        if current.entries:
            idx = [e.row for e in current.entries]
            rho[idx] = 0.0
            sigma[idx] = np.clip(sigma[idx], lo_all[idx], hi_all[idx])
        s, _ = task_scaling_factor(
            ScalingQuery(rho=rho, sigma=sigma, lower=lo_all, upper=hi_all),
            violation_tol=options.violation_tol)
        return base + s * u_task, s

    def residuals(u_k):
        if C_all.shape[0] == 0:
            return 0.0, 0.0
        phi = C_all @ u_k
        overrun = np.maximum(np.maximum(lo_all - phi, phi - hi_all), 0.0)
        above = float(overrun[:l_above].max()) if l_above else 0.0
        own = float(overrun[l_above:].max()) if C_all.shape[0] > l_above else 0.0
        # residuals inside the violation tolerance count as satisfied so the
        # pass-through candidate cannot win on roundoff dust
        above = 0.0 if above <= options.violation_tol else above
        own = 0.0 if own <= options.violation_tol else own
        return above, own

    built = build(sat)
    if built is None:
        sat = SaturationSet()
        built = build(sat)
    base, u_task, P_hat_k = built
    u_k, s_applied = scaled(base, u_task, sat)
    best = (residuals(u_k), u_k, sat, s_applied, False)
    l_k = C_all.shape[0]
    iterations = 0
    while iterations < l_k + options.iteration_margin:
        iterations += 1
        phi = C_all @ u_k
        overrun = np.maximum(lo_all - phi, phi - hi_all)
        if sat.entries:
            overrun[[e.row for e in sat.entries]] = -np.inf
        key = residuals(u_k)
        if key < best[0]:
            best = (key, u_k, sat, s_applied, False)
        j = int(np.argmax(overrun)) if l_k else -1
        if j < 0 or overrun[j] <= options.violation_tol:
            break
        if len(sat) >= sat_budget:
            break
        c_row = C_all[j]
        if np.linalg.norm(P_hat_k.T @ c_row) <= options.dependence_tol * max(
                np.linalg.norm(c_row), 1.0):
            break
        side = "lower" if phi[j] < lo_all[j] else "upper"
        trial = sat.copy()
        trial.append(j, side, c_row, float(lo_all[j] if side == "lower" else hi_all[j]))
        built = build(trial)
        if built is None:
            break
        sat = trial
        base, u_task, P_hat_k = built
        u_k, s_applied = scaled(base, u_task, sat)
    # passing the higher-level solution through untouched keeps every
    # inherited row satisfied; it wins when no pieced candidate does
    passthrough_key = residuals(u_prev)
    if passthrough_key < best[0]:
        best = (passthrough_key, u_prev.copy(), SaturationSet(), 0.0, True)
    if best[0] > (0.0, 0.0) and m_k > 0:
        # abandoning the equality entirely can still satisfy every bound row
        u_rows, sat_rows_, _, _, extra = repair_exhausted_level(
            np.zeros((0, n)), np.zeros(0), np.zeros(0), SaturationSet(), u_prev,
            P, W, u_r_k, C_all, lo_all, hi_all, options,
            int(round(np.trace(P))), l_above=l_above)
        iterations += extra
        rows_key = residuals(u_rows)
        if rows_key < best[0]:
            best = (rows_key, u_rows, sat_rows_, 0.0, True)
    _, u_k, sat, s_applied, relaxed = best
    return u_k, sat, s_applied, relaxed, iterations


def _secondary_input(problem: HierarchyProblem, k: int, options: SolveOptions) -> np.ndarray:
    if options.u_r_per_level is not None:
        return np.asarray(options.u_r_per_level[k], dtype=float)
    if k == len(problem.levels) - 1:
        return problem.u_r
    return np.zeros(problem.n)


@dataclass
class _LevelState:
    """Solution pieces of one saturation iteration."""

    u_sat: np.ndarray
    u_task: np.ndarray
    u_drift: np.ndarray
    u_null: np.ndarray
    saturations: SaturationSet

    def combined(self, u_prev: np.ndarray, scale: float = 1.0) -> np.ndarray:
        return u_prev + self.u_sat + scale * self.u_task + self.u_drift + self.u_null

    def snapshot(self) -> "_LevelState":
        return _LevelState(self.u_sat, self.u_task, self.u_drift, self.u_null,
                           self.saturations.copy())


def solve(problem: HierarchyProblem, options: SolveOptions | None = None) -> Solution:
    """Solve the prioritized problem, recomputing pseudoinverses per iteration."""
    opts = options or SolveOptions()
    problem.validate()
    n = problem.n
    W = problem.W
    P = np.eye(n)
    u = np.zeros(n)
    diag = Diagnostics()
    results: list[LevelResult] = []

    for k, level in enumerate(problem.levels):
        A, b_cmd, b_bias = level.A, level.b_cmd, level.b_bias
        m_k = level.m
        u_r_k = _secondary_input(problem, k, opts)
        C_all, lo_all, hi_all = problem.stacked_inequalities(k + 1)
        l_k = C_all.shape[0]

        res_task = weighted_pinv(A @ P, W, rank_tol=opts.rank_tol)
        diag.damped_pinv |= res_task.damped
        P_k = projector_step(P, A, res_task.pinv)

        state = _LevelState(
            u_sat=np.zeros(n),
            u_task=res_task.pinv @ b_cmd,
            u_drift=res_task.pinv @ (-b_bias - A @ u),
            u_null=P_k @ u_r_k,
            saturations=SaturationSet(),
        )
        P_hat_k = P_k
        s_star = 0.0
        starred = state.snapshot()
        iterations = 0
        exhausted = False
        cap = l_k + opts.iteration_margin
        # DOFs left for saturation alongside this level's task
        sat_budget = int(round(np.trace(P))) - res_task.rank
        u_k = state.combined(u)

        while l_k > 0:
            iterations += 1
            u_k = state.combined(u)
            sat_rows = {e.row for e in state.saturations.entries}
            crit = find_most_critical(C_all, lo_all, hi_all, u_k, state.u_task, sat_rows,
                                      violation_tol=opts.violation_tol)
            if not crit.any_violation:
                break
            if crit.scale > s_star:
                s_star = crit.scale
                starred = state.snapshot()
            j, side, bound = crit.row, crit.side, crit.bound
            c_row = C_all[j]

            row_free = np.linalg.norm(P_hat_k.T @ c_row) > opts.dependence_tol * max(
                np.linalg.norm(c_row), 1.0)
            if not row_free or iterations >= cap or len(state.saturations) >= sat_budget:
                exhausted = True
                diag.iteration_cap_hit |= iterations >= cap
                break

            trial = state.saturations.copy()
            trial.append(j, side, c_row, bound)
            res_sat = weighted_pinv(trial.C_sat @ P, W, rank_tol=opts.rank_tol)
            P_hat_prev = projector_step(P, trial.C_sat, res_sat.pinv)
            A_hat = A @ P_hat_prev
            if m_k > 0 and rank_estimate(A_hat, opts.rank_tol) < m_k:
                exhausted = True
                break
            diag.damped_pinv |= res_sat.damped
            res_hat = weighted_pinv(A_hat, W, rank_tol=opts.rank_tol)
            diag.damped_pinv |= res_hat.damped
            P_hat_k = projector_step(P_hat_prev, A, res_hat.pinv)
            u_sat = res_sat.pinv @ (trial.d_sat - trial.C_sat @ u)
            state = _LevelState(
                u_sat=u_sat,
                u_task=res_hat.pinv @ b_cmd,
                u_drift=res_hat.pinv @ (-b_bias - A @ (u + u_sat)),
                u_null=P_hat_k @ u_r_k,
                saturations=trial,
            )

        relaxed = False
        if exhausted:
            u_k, sat, scale, relaxed, extra = repair_exhausted_level(
                A, b_cmd, b_bias, starred.saturations, u, P, W, u_r_k,
                C_all, lo_all, hi_all, opts, sat_budget,
                l_above=l_k - level.n_ineq)
            iterations += extra
        else:
            scale = 1.0
            sat = state.saturations

        residual = 0.0
        if l_k > 0:
            phi = C_all @ u_k
            residual = float(max(0.0, np.max(np.maximum(lo_all - phi, phi - hi_all))))
        diag.bound_violation = max(diag.bound_violation, residual)
        results.append(LevelResult(u_k=u_k, scale=scale, saturations=sat,
                                   iterations=iterations, exhausted=exhausted,
                                   residual=residual, relaxed=relaxed))
        u = u_k
        P = P_k

    return Solution(u=u, levels=results, diagnostics=diag)
