"""Fast solver variant: row-augmented pseudoinverse maintained incrementally.

Same contract and iteration policy as :mod:`redsolve.solvers.basic`, but the
per-iteration pseudoinverses are obtained by appending one row at a time to a
task-augmented stack through rank-one updates; after the initial QR
factorization the inner loop only performs triangular solves and
vector-scaled outer products.
"""

from __future__ import annotations

import numpy as np

from redsolve.linalg import (
    AugmentedPinv,
    DependentRowError,
    chi_update_vector,
    projector_step,
    qr_weighted_pinv,
)
from redsolve.solvers.basic import (
    _secondary_input,
    find_most_critical,
    repair_exhausted_level,
)
from redsolve.solvers.types import (
    Diagnostics,
    HierarchyProblem,
    LevelResult,
    SaturationSet,
    Solution,
    SolveOptions,
)


def solve_fast(problem: HierarchyProblem, options: SolveOptions | None = None) -> Solution:
    """Solve the prioritized problem with incremental pseudoinverse updates."""
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

        res_task = qr_weighted_pinv(A @ P, W, rank_tol=opts.rank_tol)
        diag.damped_pinv |= res_task.damped
        P_k = projector_step(P, A, res_task.pinv)

        context = AugmentedPinv(rows=A.copy(), projector=P, weight=W,
                                pinv=res_task.pinv.copy())
        u_sat = np.zeros(n)
        u_task = res_task.pinv @ b_cmd
        u_drift = res_task.pinv @ (-b_bias - A @ u)
        P_hat_k = P_k.copy()
        u_null = P_hat_k @ u_r_k
        sat = SaturationSet()

        s_star = 0.0
        starred = (u_sat, u_task, u_drift, u_null, sat.copy())
        iterations = 0
        exhausted = False
        cap = l_k + opts.iteration_margin
        # DOFs left for saturation alongside this level's task
        sat_budget = int(round(np.trace(P))) - res_task.rank
        u_k = u + u_sat + u_task + u_drift + u_null

        while l_k > 0:
            iterations += 1
            u_k = u + u_sat + u_task + u_drift + u_null
            sat_rows = {e.row for e in sat.entries}
            crit = find_most_critical(C_all, lo_all, hi_all, u_k, u_task, sat_rows,
                                      violation_tol=opts.violation_tol)
            if not crit.any_violation:
                break
            if crit.scale > s_star:
                s_star = crit.scale
                starred = (u_sat, u_task, u_drift, u_null, sat.copy())
            j, side, bound = crit.row, crit.side, crit.bound
            c_row = C_all[j]

            if iterations >= cap or len(sat) >= sat_budget:
                diag.iteration_cap_hit |= iterations >= cap
                exhausted = True
                break
            try:
                chi = chi_update_vector(c_row, P_hat_k, W,
                                        dependence_tol=opts.dependence_tol)
            except DependentRowError:
                exhausted = True
                break

            cG = c_row @ context.pinv
            context = AugmentedPinv(
                rows=np.vstack([context.rows, c_row[None, :]]),
                projector=P, weight=W,
                pinv=np.hstack([context.pinv - np.outer(chi, cG), chi[:, None]]),
                updates=context.updates + 1, damped=context.damped)
            sat.append(j, side, c_row, bound)

            P_hat_k = P_hat_k - np.outer(chi, c_row @ P_hat_k)
            u_sat = u_sat + chi * (bound - c_row @ (u + u_sat))
            u_task = u_task - chi * (c_row @ u_task)
            u_drift = u_drift - chi * (c_row @ u_drift)
            u_null = P_hat_k @ u_r_k

            if (context.updates % opts.refresh_every == 0
                    or context.residual() > opts.refresh_residual):
                context.refresh()
                diag.refreshes += 1
                diag.damped_pinv |= context.damped
                u_sat, u_task, u_drift, P_hat_k = _pieces_from_context(
                    context, A, b_cmd, b_bias, sat, u, P, m_k)
                u_null = P_hat_k @ u_r_k

        relaxed = False
        if exhausted:
            u_k, sat, scale, relaxed, extra = repair_exhausted_level(
                A, b_cmd, b_bias, starred[4], u, P, W, u_r_k,
                C_all, lo_all, hi_all, opts, sat_budget,
                l_above=l_k - level.n_ineq)
            iterations += extra
        else:
            scale = 1.0

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


def _pieces_from_context(context: AugmentedPinv, A, b_cmd, b_bias, sat: SaturationSet,
                         u_prev, P, m_k: int):
    """Rebuild the solution pieces from a freshly refactorized context.

    The augmented pseudoinverse splits into task columns and saturation
    columns; the running projector follows from the full stack.
    """
    G = context.pinv
    G_task = G[:, :m_k]
    G_sat = G[:, m_k:]
    u_sat = G_sat @ (sat.d_sat - sat.C_sat @ u_prev) if len(sat) else np.zeros(P.shape[0])
    u_task = G_task @ b_cmd
    u_drift = G_task @ (-b_bias - A @ u_prev)
    P_hat_k = P - G @ (context.rows @ P)
    return u_sat, u_task, u_drift, P_hat_k
