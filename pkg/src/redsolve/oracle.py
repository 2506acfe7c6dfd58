"""Independent quadratic-programming oracle for cross-validating the solvers.

Solves the per-level scaled problem

    min 0.5 (u - u_r)^T H (u - u_r) + 0.5 M (1 - s)^2
    s.t. equality tasks of levels 1..k (higher levels at their frozen scales),
         stacked bounds, 0 <= s <= 1

as a standard strictly convex QP through a dual active-set method.  The
implementation deliberately relies on plain dense solves only (no shared
code with the solver kernels) so it can serve as ground truth for solutions,
active sets and Lagrange multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_M_WEIGHT = 1e8
CONDITION_WARN = 1e12


class OracleError(RuntimeError):
    """The oracle could not certify a solution."""


class OracleInfeasible(OracleError):
    """The constraint set is inconsistent."""


@dataclass
class OracleProblem:
    """Standard-form data: min 0.5 x^T Theta x s.t. Lambda x = beta, Gamma x <= delta.

    The decision vector is x = [u - u_r; 1 - s].
    """

    Theta: np.ndarray
    Lambda: np.ndarray
    beta: np.ndarray
    Gamma: np.ndarray
    delta: np.ndarray
    u_r: np.ndarray
    M_weight: float
    n: int
    scaled: bool = True  # last coordinate is the 1 - s slack

    @property
    def conditioning_warning(self) -> bool:
        eigs = np.linalg.eigvalsh(self.Theta)
        return bool(eigs[-1] / max(eigs[0], 1e-300) > CONDITION_WARN)


@dataclass
class OracleSolution:
    u: np.ndarray
    s: float
    xi: np.ndarray
    objective: float
    active: list[int]  # row indices into Gamma
    multipliers: np.ndarray  # mu >= 0 for Gamma rows (full length, zeros if inactive)
    eq_multipliers: np.ndarray  # lambda for Lambda rows
    iterations: int
    conditioning_warning: bool = False


@dataclass
class LevelContext:
    """Everything the oracle needs about one level of the hierarchy."""

    H: np.ndarray
    u_r: np.ndarray
    A_k: np.ndarray
    b_cmd_k: np.ndarray
    b_bias_k: np.ndarray
    A_above: np.ndarray  # stacked equality rows of levels 1..k-1
    b_above: np.ndarray  # frozen right-hand sides (scaled commands minus biases)
    C: np.ndarray  # stacked inequality rows of levels 1..k
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_problem(cls, problem, k: int, scales: list[float] | None = None,
                     u_r_k: np.ndarray | None = None) -> "LevelContext":
        """Build the context for 0-based level ``k`` with frozen higher scales."""
        scales = scales or []
        n = problem.n
        above_rows = []
        above_rhs = []
        for i in range(k):
            lvl = problem.levels[i]
            if lvl.m == 0:
                continue
            s_i = scales[i] if i < len(scales) else 1.0
            above_rows.append(lvl.A)
            above_rhs.append(s_i * lvl.b_cmd - lvl.b_bias)
        A_above = np.vstack(above_rows) if above_rows else np.zeros((0, n))
        b_above = np.concatenate(above_rhs) if above_rhs else np.zeros(0)
        C, lo, hi = problem.stacked_inequalities(k + 1)
        lvl = problem.levels[k]
        if u_r_k is None:
            u_r_k = problem.u_r if k == len(problem.levels) - 1 else np.zeros(n)
        return cls(H=problem.W.matrix, u_r=u_r_k, A_k=lvl.A, b_cmd_k=lvl.b_cmd,
                   b_bias_k=lvl.b_bias, A_above=A_above, b_above=b_above,
                   C=C, lower=lo, upper=hi)


def build_big_m_problem(ctx: LevelContext, M_weight: float = DEFAULT_M_WEIGHT) -> OracleProblem:
    """Assemble the standard-form blocks of the scaled per-level problem."""
    if M_weight <= 1.0:
        raise OracleError(f"scale weight must exceed 1, got {M_weight}")
    n = ctx.H.shape[0]
    m_k = ctx.A_k.shape[0]
    m_up = ctx.A_above.shape[0]
    l_k = ctx.C.shape[0]
    Theta = np.zeros((n + 1, n + 1))
    Theta[:n, :n] = ctx.H
    Theta[n, n] = M_weight
    Lambda = np.zeros((m_k + m_up, n + 1))
    Lambda[:m_k, :n] = ctx.A_k
    Lambda[:m_k, n] = ctx.b_cmd_k
    Lambda[m_k:, :n] = ctx.A_above
    beta = np.concatenate([
        ctx.b_cmd_k - ctx.b_bias_k - ctx.A_k @ ctx.u_r,
        ctx.b_above - ctx.A_above @ ctx.u_r,
    ])
    # finite bound rows only; the s-box rows close the list
    rows = []
    rhs = []
    for i in range(l_k):
        if np.isfinite(ctx.lower[i]):
            r = np.zeros(n + 1)
            r[:n] = -ctx.C[i]
            rows.append(r)
            rhs.append(-ctx.lower[i] + ctx.C[i] @ ctx.u_r)
    for i in range(l_k):
        if np.isfinite(ctx.upper[i]):
            r = np.zeros(n + 1)
            r[:n] = ctx.C[i]
            rows.append(r)
            rhs.append(ctx.upper[i] - ctx.C[i] @ ctx.u_r)
    s_up = np.zeros(n + 1)
    s_up[n] = 1.0
    s_dn = np.zeros(n + 1)
    s_dn[n] = -1.0
    rows.extend([s_up, s_dn])
    rhs.extend([1.0, 0.0])
    Gamma = np.vstack(rows)
    delta = np.asarray(rhs, dtype=float)
    return OracleProblem(Theta=Theta, Lambda=Lambda, beta=beta, Gamma=Gamma, delta=delta,
                         u_r=ctx.u_r.copy(), M_weight=M_weight, n=n)


# --------------------------------------------------------------------------
# Dual active-set core.


def _equality_start(G, Ce, be):
    """Minimizer of 0.5 x^T G x subject to Ce x = be, with multipliers."""
    n = G.shape[1]
    me = Ce.shape[0]
    if me == 0:
        return np.zeros(n), np.zeros(0)
    # consistency check through a least-squares residual
    x_ls, *_ = np.linalg.lstsq(Ce, be, rcond=None)
    scale = max(1.0, float(np.abs(be).max()))
    if np.abs(Ce @ x_ls - be).max() > 1e-8 * scale:
        raise OracleInfeasible("equality constraints are inconsistent")
    KKT = np.block([[G, Ce.T], [Ce, np.zeros((me, me))]])
    rhs = np.concatenate([np.zeros(n), be])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    return sol[:n], sol[n:]


def solve_qp(problem: OracleProblem, *, max_iter: int = 500,
             feas_tol: float | None = None) -> OracleSolution:
    """Dual active-set solve of the standard-form problem.

    Starts from the equality-constrained optimum and adds the most violated
    inequality until primal feasibility; blocked active constraints are
    dropped when their multipliers hit zero.  Deterministic through
    smallest-index tie-breaking.
    """
    G = problem.Theta
    Ce, be = problem.Lambda, problem.beta
    Ci, di = problem.Gamma, problem.delta
    n = G.shape[0]
    me, mi = Ce.shape[0], Ci.shape[0]
    if feas_tol is None:
        # working precision degrades with the conditioning of the cost
        eigs = np.linalg.eigvalsh(G)
        feas_tol = max(1e-9, 1e-14 * eigs[-1] / max(eigs[0], 1e-300))

    x, lam_eq = _equality_start(G, Ce, be)
    active: list[int] = []  # inequality rows in the working set
    mu_active: list[float] = []
    Ginv = np.linalg.inv(G)

    def directions(normal):
        """Primal step z and dual adjustment r for adding `normal` (>= form)."""
        if not active and me == 0:
            return Ginv @ normal, np.zeros(0)
        N = np.vstack([Ce, -Ci[active]]).T  # n x q, columns are active normals
        GiN = Ginv @ N
        K = N.T @ GiN
        try:
            r = np.linalg.solve(K, GiN.T @ normal)
        except np.linalg.LinAlgError:
            r, *_ = np.linalg.lstsq(K, GiN.T @ normal, rcond=None)
        z = Ginv @ normal - GiN @ r
        return z, r

    iterations = 0
    for _ in range(max_iter):
        if mi == 0:
            break
        iterations += 1
        slack = di - Ci @ x
        # rows already in the working set sit on their surface by construction;
        # re-picking them on residual noise would cycle
        candidates = slack.copy()
        if active:
            candidates[active] = np.inf
        worst = int(np.argmin(candidates))
        if candidates[worst] >= -feas_tol:
            break
        # new constraint in >= form: -Ci[worst] x >= -di[worst]
        normal = -Ci[worst]
        mu_new = 0.0
        for _ in range(max_iter):
            violation = float(Ci[worst] @ x - di[worst])  # > 0 while violated
            z, r = directions(normal)
            r_in = r[me:]  # decrease rates of the active multipliers
            t1, blocker = np.inf, -1
            for idx, rv in enumerate(r_in):
                if rv > 1e-12:
                    ratio = mu_active[idx] / rv
                    if ratio < t1 - 1e-15:
                        t1, blocker = ratio, idx
            ztn = float(normal @ z)
            t2 = violation / ztn if ztn > 1e-12 else np.inf
            if not np.isfinite(min(t1, t2)):
                raise OracleInfeasible("inequality constraints are inconsistent")
            t = min(t1, t2)
            x = x + t * z
            mu_new += t
            lam_eq = lam_eq + t * r[:me]
            mu_active = [m - t * rv for m, rv in zip(mu_active, r_in)]
            if t2 <= t1:
                # full step: x reached the new constraint surface
                active.append(worst)
                mu_active.append(mu_new)
                break
            # dual step exhausted a blocking multiplier: drop it and retry
            active.pop(blocker)
            mu_active.pop(blocker)
        else:
            raise OracleError("inner active-set iteration limit exceeded")
    else:
        raise OracleError("active-set iteration limit exceeded")

    if mi:
        final_violation = float(np.max(Ci @ x - di))
        if final_violation > max(1e-6, 100.0 * feas_tol):
            # a working-set row never reached its surface: the constraint set
            # is inconsistent (degenerate working-set systems end up here)
            raise OracleInfeasible(
                f"constraints inconsistent (residual {final_violation:.3e})")
    mu = np.zeros(mi)
    for idx, row in enumerate(active):
        mu[row] = mu_active[idx]
    # prune numerically inactive rows for a clean report
    active_clean = sorted(r for r in active if mu[r] > 1e-12 or
                          abs(di[r] - Ci[r] @ x) < 1e-7)
    xi = x
    u = xi[:problem.n] + problem.u_r
    s = 1.0 - xi[problem.n] if problem.scaled else 1.0
    objective = 0.5 * float(xi @ G @ xi)
    return OracleSolution(u=u, s=float(s), xi=xi, objective=objective,
                          active=active_clean, multipliers=mu, eq_multipliers=lam_eq,
                          iterations=iterations,
                          conditioning_warning=problem.conditioning_warning)


def kkt_residuals(problem: OracleProblem, sol: OracleSolution) -> dict[str, float]:
    """Independent recomputation of the first-order optimality residuals."""
    G, Ce, be, Ci, di = (problem.Theta, problem.Lambda, problem.beta,
                         problem.Gamma, problem.delta)
    x = sol.xi
    stationarity = G @ x + Ce.T @ sol.eq_multipliers + Ci.T @ sol.multipliers
    slack = Ci @ x - di
    return {
        "stationarity": float(np.abs(stationarity).max()) if stationarity.size else 0.0,
        "primal_eq": float(np.abs(Ce @ x - be).max()) if be.size else 0.0,
        "primal_ineq": float(max(0.0, slack.max())) if slack.size else 0.0,
        "complementarity": float(np.abs(sol.multipliers * slack).max()) if slack.size else 0.0,
        "dual": float(min(0.0, sol.multipliers.min())) if sol.multipliers.size else 0.0,
    }


def solve_level(ctx: LevelContext, M_weight: float = DEFAULT_M_WEIGHT) -> OracleSolution:
    return solve_qp(build_big_m_problem(ctx, M_weight))


def solve_hierarchy(problem, M_weight: float = DEFAULT_M_WEIGHT) -> list[OracleSolution]:
    """Cascade of per-level solves, freezing each level's scale for the next."""
    scales: list[float] = []
    out = []
    for k in range(len(problem.levels)):
        ctx = LevelContext.from_problem(problem, k, scales)
        sol = solve_level(ctx, M_weight)
        scales.append(sol.s)
        out.append(sol)
    return out


@dataclass
class ScaleSensitivity:
    M_values: list[float]
    avg_scale: list[float]
    avg_cost: list[float]

    def rows(self):
        return list(zip(self.M_values, self.avg_scale, self.avg_cost))


def extract_scale_sensitivity(instances, M_values) -> ScaleSensitivity:
    """Average scale factor and effort cost per weight over an instance stream.

    ``instances`` yields LevelContext objects; the effort cost is measured in
    the original variable, 0.5 (u - u_r)^T H (u - u_r).
    """
    instances = list(instances)
    avg_s, avg_c = [], []
    for M in M_values:
        s_sum = c_sum = 0.0
        for ctx in instances:
            sol = solve_level(ctx, M)
            du = sol.u - ctx.u_r
            s_sum += sol.s
            c_sum += 0.5 * float(du @ ctx.H @ du)
        avg_s.append(s_sum / len(instances))
        avg_c.append(c_sum / len(instances))
    return ScaleSensitivity(M_values=list(M_values), avg_scale=avg_s, avg_cost=avg_c)
