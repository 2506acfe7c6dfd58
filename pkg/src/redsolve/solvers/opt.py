"""Optimality-checked solver variant with saturation-set pruning and warm start.

Extends the saturation strategy with a first-order multiplier test per level.
After the insertion loop converges, rows pinned at a bound with a wrong-signed
Lagrange multiplier are removed one at a time and the solution moves toward
the reduced set's optimum, stopping at the first blocking row (which is then
pinned).  The polish keeps the level's scale factor fixed and terminates at a
point whose saturated multipliers are all sign-correct.  Converged saturation
sets can seed the next solve (warm start).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from redsolve.linalg import PinvResult, projector_step, rank_estimate, weighted_pinv
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


@dataclass
class KktCertificate:
    """First-order optimality data for one level's fixed-scale subproblem."""

    mu_tilde_sat: np.ndarray  # signed auxiliary multipliers, one per saturated row
    mu: np.ndarray  # multipliers of the doubled inequality rows (2 l_k)
    lambda_tilde: np.ndarray  # equality multipliers of this level's task rows
    stationarity_residual: float
    complementarity_residual: float
    primal_eq_residual: float = 0.0
    primal_ineq_residual: float = 0.0
    min_multiplier: float = 0.0


@dataclass
class WarmStartMemory:
    """Per-level saturation sets from the previous solve of the same hierarchy."""

    entries: list[list[tuple[int, str]]] = field(default_factory=list)
    signature: tuple | None = None

    @staticmethod
    def _signature(problem: HierarchyProblem) -> tuple:
        return (problem.n, tuple((lvl.m, lvl.n_ineq) for lvl in problem.levels))

    def get(self, problem: HierarchyProblem, k: int, l_k: int) -> list[tuple[int, str]]:
        if self.signature != self._signature(problem) or k >= len(self.entries):
            return []
        return [(row, side) for row, side in self.entries[k] if row < l_k]

    def store(self, problem: HierarchyProblem, sets: list[list[tuple[int, str]]]) -> None:
        self.signature = self._signature(problem)
        self.entries = sets


@dataclass
class _LevelPieces:
    u_sat: np.ndarray
    u_task: np.ndarray
    u_drift: np.ndarray
    u_null: np.ndarray
    sat: SaturationSet
    P_hat_prev: np.ndarray
    P_hat_k: np.ndarray
    res_sat: PinvResult | None
    res_hat: PinvResult

    def combined(self, u_prev, scale: float = 1.0) -> np.ndarray:
        return u_prev + self.u_sat + scale * self.u_task + self.u_drift + self.u_null


def _build_pieces(A, b_cmd, b_bias, sat: SaturationSet, u_prev, P, W, u_r_k, opts,
                  diag: Diagnostics) -> _LevelPieces | None:
    """Solution pieces for a given saturation set; None if the task loses rank."""
    n = P.shape[0]
    m_k = A.shape[0]
    if len(sat):
        res_sat = weighted_pinv(sat.C_sat @ P, W, rank_tol=opts.rank_tol)
        P_hat_prev = projector_step(P, sat.C_sat, res_sat.pinv)
        u_sat = res_sat.pinv @ (sat.d_sat - sat.C_sat @ u_prev)
    else:
        res_sat = None
        P_hat_prev = P
        u_sat = np.zeros(n)
    A_hat = A @ P_hat_prev
    if m_k > 0 and len(sat) and rank_estimate(A_hat, opts.rank_tol) < m_k:
        return None
    res_hat = weighted_pinv(A_hat, W, rank_tol=opts.rank_tol)
    diag.damped_pinv |= res_hat.damped or (res_sat.damped if res_sat else False)
    P_hat_k = projector_step(P_hat_prev, A, res_hat.pinv)
    return _LevelPieces(
        u_sat=u_sat,
        u_task=res_hat.pinv @ b_cmd,
        u_drift=res_hat.pinv @ (-b_bias - A @ (u_prev + u_sat)),
        u_null=P_hat_k @ u_r_k,
        sat=sat,
        P_hat_prev=P_hat_prev,
        P_hat_k=P_hat_k,
        res_sat=res_sat,
        res_hat=res_hat,
    )


def saturated_multipliers(W, A_k, res_hat: PinvResult, res_sat: PinvResult | None,
                          u_k, u_r_k) -> np.ndarray:
    """Auxiliary multipliers of the saturated rows, from available pseudoinverses.

    Sign convention: the true multiplier of a lower-side saturation is the
    negated entry, of an upper-side saturation the entry itself; optimality
    requires all true multipliers to be non-negative.
    """
    if res_sat is None:
        return np.zeros(0)
    X = res_sat.pinv  # n x l_sat
    Y = X - res_hat.pinv @ (A_k @ X) if A_k.shape[0] else X
    return -(Y.T @ (W.matrix @ (u_k - u_r_k)))


def optimality_check_and_prune(sat: SaturationSet, mu_tilde: np.ndarray,
                               pinned: set[tuple[int, str]],
                               prune_tol: float) -> list[int]:
    """Removal candidates (positions into the set), most wrong-signed first."""
    scored = []
    for pos, entry in enumerate(sat.entries):
        if (entry.row, entry.side) in pinned:
            continue
        signed = -mu_tilde[pos] if entry.side == "lower" else mu_tilde[pos]
        if signed < -prune_tol:
            scored.append((signed, pos))
    return [pos for _, pos in sorted(scored)]


def _sat_from_entries(entries, C_all, lo_all, hi_all) -> SaturationSet:
    sat = SaturationSet()
    for row, side in entries:
        bound = lo_all[row] if side == "lower" else hi_all[row]
        sat.append(row, side, C_all[row], bound)
    return sat


def solve_opt(problem: HierarchyProblem, memory: WarmStartMemory | None = None,
              options: SolveOptions | None = None
              ) -> tuple[Solution, list[KktCertificate | None], WarmStartMemory]:
    """Solve with per-level optimality checking.

    Returns the solution, one certificate per level (populated when
    ``options.certify`` is set) and the updated warm-start memory.
    """
    opts = options or SolveOptions()
    problem.validate()
    n = problem.n
    W = problem.W
    P = np.eye(n)
    u = np.zeros(n)
    diag = Diagnostics()
    results: list[LevelResult] = []
    certificates: list[KktCertificate | None] = []
    new_memory_sets: list[list[tuple[int, str]]] = []
    memory = memory if memory is not None else WarmStartMemory()

    for k, level in enumerate(problem.levels):
        A, b_cmd, b_bias = level.A, level.b_cmd, level.b_bias
        u_r_k = _secondary_input(problem, k, opts)
        C_all, lo_all, hi_all = problem.stacked_inequalities(k + 1)
        l_k = C_all.shape[0]

        res_task = weighted_pinv(A @ P, W, rank_tol=opts.rank_tol)
        diag.damped_pinv |= res_task.damped
        P_k = projector_step(P, A, res_task.pinv)

        warm = memory.get(problem, k, l_k)
        sat0 = _sat_from_entries(warm, C_all, lo_all, hi_all)
        pieces = _build_pieces(A, b_cmd, b_bias, sat0, u, P, W, u_r_k, opts, diag)
        if pieces is None:  # stale warm start starves the task: cold start
            pieces = _build_pieces(A, b_cmd, b_bias, SaturationSet(), u, P, W, u_r_k,
                                   opts, diag)

        # insertion phase (identical policy to the plain solver)
        s_star = 0.0
        starred = pieces
        iterations = 0
        exhausted = False
        cap = l_k + opts.iteration_margin
        sat_budget = int(round(np.trace(P))) - res_task.rank
        u_k = pieces.combined(u)
        while l_k > 0:
            iterations += 1
            u_k = pieces.combined(u)
            sat_rows = {e.row for e in pieces.sat.entries}
            crit = find_most_critical(C_all, lo_all, hi_all, u_k, pieces.u_task,
                                      sat_rows, violation_tol=opts.violation_tol)
            if not crit.any_violation:
                break
            if crit.scale > s_star:
                s_star = crit.scale
                starred = pieces
            c_row = C_all[crit.row]
            row_free = np.linalg.norm(pieces.P_hat_k.T @ c_row) > opts.dependence_tol * max(
                np.linalg.norm(c_row), 1.0)
            if (not row_free or iterations >= cap
                    or len(pieces.sat) >= sat_budget):
                diag.iteration_cap_hit |= iterations >= cap
                exhausted = True
                break
            trial = pieces.sat.copy()
            trial.append(crit.row, crit.side, c_row, crit.bound)
            new_pieces = _build_pieces(A, b_cmd, b_bias, trial, u, P, W, u_r_k, opts,
                                       diag)
            if new_pieces is None:
                exhausted = True
                break
            pieces = new_pieces

        relaxed = False
        if exhausted:
            u_k, repaired_sat, scale, relaxed, extra = repair_exhausted_level(
                A, b_cmd, b_bias, starred.sat, u, P, W, u_r_k,
                C_all, lo_all, hi_all, opts, sat_budget,
                l_above=l_k - level.n_ineq)
            iterations += extra
            rebuilt = _build_pieces(A, b_cmd, b_bias, repaired_sat, u, P, W,
                                    u_r_k, opts, diag)
            pieces = rebuilt if rebuilt is not None else starred
        else:
            scale = 1.0
            u_k = pieces.combined(u)

        # optimality phase: active-set polish at the fixed scale factor
        if l_k > 0 and not relaxed:
            pieces, u_k, polish_iters = _polish(
                A, b_cmd, b_bias, pieces, u_k, scale, u, P, W, u_r_k,
                C_all, lo_all, hi_all, opts, diag, sat_budget)
            iterations += polish_iters

        residual = 0.0
        if l_k > 0:
            phi = C_all @ u_k
            residual = float(max(0.0, np.max(np.maximum(lo_all - phi, phi - hi_all))))
        diag.bound_violation = max(diag.bound_violation, residual)
        results.append(LevelResult(u_k=u_k, scale=scale,
                                   saturations=pieces.sat if not relaxed else SaturationSet(),
                                   iterations=iterations, exhausted=exhausted,
                                   residual=residual, relaxed=relaxed))
        new_memory_sets.append([(e.row, e.side) for e in pieces.sat.entries])
        if opts.certify:
            certificates.append(kkt_verify(
                problem, k, u_k, [r.scale for r in results],
                pieces.sat if not relaxed else SaturationSet(), u_r_k=u_r_k,
                relaxed_above={i for i, r in enumerate(results[:-1]) if r.relaxed}))
        else:
            certificates.append(None)
        u = u_k
        P = P_k

    memory.store(problem, new_memory_sets)
    return Solution(u=u, levels=results, diagnostics=diag), certificates, memory


def _polish(A, b_cmd, b_bias, pieces, u_k, scale, u_prev, P, W, u_r_k,
            C_all, lo_all, hi_all, opts, diag, sat_budget):
    """Fixed-scale active-set refinement from a feasible candidate.

    Repeatedly removes the saturated row with the most negative multiplier and
    walks toward the reduced set's optimum, pinning the first blocking row on
    the way.  The walk preserves the equality tasks exactly (both endpoints
    satisfy them), so only saturation membership changes.
    """
    l_k = C_all.shape[0]
    phi = C_all @ u_k
    if np.max(np.maximum(lo_all - phi, phi - hi_all)) > 10 * opts.violation_tol:
        return pieces, u_k, 0  # scaled fallback left violations: nothing to polish

    x = u_k
    target = u_k  # x equals the current set's optimum on entry
    guard = 6 * l_k + 30
    steps = 0
    pinned: set[tuple[int, str]] = set()
    removal_counts: dict[tuple[int, str], int] = {}
    while steps < guard:
        steps += 1
        gap = np.linalg.norm(target - x)
        if gap <= 1e-12 * max(1.0, np.linalg.norm(x)):
            x = target
            mu_tilde = saturated_multipliers(W, A, pieces.res_hat, pieces.res_sat,
                                             x, u_r_k)
            candidates = optimality_check_and_prune(pieces.sat, mu_tilde, pinned,
                                                    opts.prune_tol)
            if not candidates:
                break
            pos = candidates[0]
            key = (pieces.sat.entries[pos].row, pieces.sat.entries[pos].side)
            removal_counts[key] = removal_counts.get(key, 0) + 1
            if removal_counts[key] > opts.max_pin_count:
                pinned.add(key)  # oscillation guard
                diag.pinned_rows += 1
                continue
            entries = [(e.row, e.side) for i, e in enumerate(pieces.sat.entries)
                       if i != pos]
            trial_sat = _sat_from_entries(entries, C_all, lo_all, hi_all)
            trial = _build_pieces(A, b_cmd, b_bias, trial_sat, u_prev, P, W, u_r_k,
                                  opts, diag)
            if trial is None:
                pinned.add(key)
                diag.pinned_rows += 1
                continue
            pieces = trial
            target = pieces.combined(u_prev, scale=scale)
            continue
        # ratio test along x -> target over rows outside the saturation set
        direction_vals = C_all @ target - C_all @ x
        phi_x = C_all @ x
        in_set = np.zeros(l_k, dtype=bool)
        for e in pieces.sat.entries:
            in_set[e.row] = True
        theta = 1.0
        block_row, block_side = -1, ""
        for i in range(l_k):
            if in_set[i] or direction_vals[i] == 0.0:
                continue
            if direction_vals[i] > 0 and np.isfinite(hi_all[i]):
                t = (hi_all[i] - phi_x[i]) / direction_vals[i]
                side = "upper"
            elif direction_vals[i] < 0 and np.isfinite(lo_all[i]):
                t = (lo_all[i] - phi_x[i]) / direction_vals[i]
                side = "lower"
            else:
                continue
            t = max(t, 0.0)
            if t < theta - 1e-15:
                theta, block_row, block_side = t, i, side
        if block_row < 0:
            x = target
            continue
        if len(pieces.sat) >= sat_budget:
            break  # no DOF left to pin the blocking row
        x = x + theta * (target - x)
        bound = lo_all[block_row] if block_side == "lower" else hi_all[block_row]
        trial_sat = pieces.sat.copy()
        trial_sat.append(block_row, block_side, C_all[block_row], bound)
        trial = _build_pieces(A, b_cmd, b_bias, trial_sat, u_prev, P, W, u_r_k,
                              opts, diag)
        if trial is None:
            break  # blocking row starves the task: keep the feasible x state
        pieces = trial
        target = pieces.combined(u_prev, scale=scale)
    if steps >= guard:
        diag.iteration_cap_hit = True
    return pieces, x, steps


def kkt_verify(problem: HierarchyProblem, k: int, u_k, scales, sat: SaturationSet,
               u_r_k=None, relaxed_above: set[int] | None = None) -> KktCertificate:
    """Independent first-order check of a level's fixed-scale subproblem.

    Rebuilds the constraint data from the problem definition and recomputes
    all multipliers from scratch with a dense least-squares solve; shares no
    state with the solver that produced the candidate.
    """
    n = problem.n
    H = problem.W.matrix
    if u_r_k is None:
        u_r_k = problem.u_r if k == len(problem.levels) - 1 else np.zeros(n)
    xi = u_k - u_r_k

    relaxed_above = relaxed_above or set()
    eq_rows = [problem.levels[k].A]
    eq_rhs = [scales[k] * problem.levels[k].b_cmd - problem.levels[k].b_bias
              - problem.levels[k].A @ u_r_k]
    for i in range(k):
        lvl = problem.levels[i]
        if lvl.m == 0:
            continue
        eq_rows.append(lvl.A)
        if i in relaxed_above:
            # a relaxed level promises only the value it actually holds
            eq_rhs.append(lvl.A @ (u_k - u_r_k))
        else:
            eq_rhs.append(scales[i] * lvl.b_cmd - lvl.b_bias - lvl.A @ u_r_k)
    Lam = np.vstack(eq_rows)
    beta = np.concatenate(eq_rhs)
    m_k = problem.levels[k].m

    C_all, lo_all, hi_all = problem.stacked_inequalities(k + 1)
    l_k = C_all.shape[0]
    Gamma = np.vstack([-C_all, C_all]) if l_k else np.zeros((0, n))
    delta = np.concatenate([-(lo_all - C_all @ u_r_k), hi_all - C_all @ u_r_k]) \
        if l_k else np.zeros(0)

    act_rows = []
    for e in sat.entries:
        act_rows.append(e.row if e.side == "lower" else l_k + e.row)
    Gamma_act = Gamma[act_rows] if act_rows else np.zeros((0, n))

    # stationarity: H xi + Lam^T lambda + Gamma_act^T mu_act = 0
    normals = np.vstack([Lam, Gamma_act]) if (Lam.size or Gamma_act.size) \
        else np.zeros((0, n))
    if normals.shape[0]:
        y, *_ = np.linalg.lstsq(normals.T, -(H @ xi), rcond=None)
    else:
        y = np.zeros(0)
    lam = y[:Lam.shape[0]]
    mu_act = y[Lam.shape[0]:]

    mu = np.zeros(2 * l_k)
    for pos, row in enumerate(act_rows):
        mu[row] = mu_act[pos]
    stationarity = H @ xi + Lam.T @ lam + (Gamma.T @ mu if l_k else 0.0)
    slack = Gamma @ xi - delta if l_k else np.zeros(0)
    # infinite bounds carry zero multipliers; their slack is -inf by design
    finite_slack = np.where(np.isfinite(slack), slack, 0.0)
    complementarity = float(np.abs(mu * finite_slack).max()) if l_k else 0.0

    mu_tilde = np.zeros(len(sat.entries))
    for pos, e in enumerate(sat.entries):
        mu_tilde[pos] = -mu_act[pos] if e.side == "lower" else mu_act[pos]

    return KktCertificate(
        mu_tilde_sat=mu_tilde,
        mu=mu,
        lambda_tilde=lam[:m_k],
        stationarity_residual=float(np.abs(stationarity).max()),
        complementarity_residual=complementarity,
        primal_eq_residual=float(np.abs(Lam @ xi - beta).max()) if beta.size else 0.0,
        primal_ineq_residual=float(max(0.0, np.where(np.isfinite(slack), slack, -1.0).max()))
        if slack.size else 0.0,
        min_multiplier=float(mu_act.min()) if mu_act.size else 0.0,
    )
