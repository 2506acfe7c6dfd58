import numpy as np
import pytest

from redsolve.linalg import WeightMatrix
from redsolve.solvers.basic import solve
from redsolve.solvers.opt import (
    WarmStartMemory,
    kkt_verify,
    optimality_check_and_prune,
    solve_opt,
)
from redsolve.solvers.types import (
    AssembledLevel,
    HierarchyProblem,
    SaturationSet,
    SolveOptions,
)
from redsolve.oracle import LevelContext, OracleError, OracleInfeasible, solve_level
from redsolve.validate import random_problem

CERT = SolveOptions(certify=True)


def cost(problem, u):
    du = u - problem.u_r
    return 0.5 * float(du @ problem.W.matrix @ du)


def signed_multipliers(level_result, cert):
    return [(-mt if e.side == "lower" else mt)
            for e, mt in zip(level_result.saturations.entries, cert.mu_tilde_sat)]


class TestAgainstBasic:
    def test_identical_when_basic_optimal(self):
        # loose bounds: no saturations, both reduce to the closed form
        rng = np.random.default_rng(0)
        for _ in range(30):
            problem = random_problem(rng, infinite_bounds=True)
            a = solve(problem)
            o, _, _ = solve_opt(problem)
            assert np.abs(a.u - o.u).max() < 1e-10

    def test_never_costlier_at_equal_scale(self):
        rng = np.random.default_rng(1)
        strictly_better = 0
        for _ in range(300):
            problem = random_problem(rng, max_levels=1)
            a = solve(problem)
            o, _, _ = solve_opt(problem)
            if abs(a.levels[0].scale - o.levels[0].scale) > 1e-9:
                continue
            ca, co = cost(problem, a.u), cost(problem, o.u)
            assert co <= ca + 1e-9
            if co < ca - 1e-6:
                strictly_better += 1
        assert strictly_better >= 10

    def test_crafted_wrong_saturation_is_repaired(self):
        # greedy insertion pins a row the optimum holds at the other bound;
        # the multiplier check must recover the cheaper solution
        rng = np.random.default_rng(42)
        found = None
        for i in range(200):
            problem = random_problem(rng, max_levels=1, n_range=(3, 12))
            a = solve(problem)
            o, certs, _ = solve_opt(problem, options=CERT)
            if abs(a.levels[0].scale - o.levels[0].scale) > 1e-9:
                continue
            if cost(problem, o.u) < cost(problem, a.u) - 1e-4:
                found = (problem, a, o, certs)
                break
        assert found is not None
        problem, a, o, certs = found
        # the oracle confirms the cheaper point is the true optimum
        osol = solve_level(LevelContext.from_problem(problem, 0), 1e8)
        assert abs(osol.s - o.levels[0].scale) < 1e-6
        assert np.abs(osol.u - o.u).max() < 1e-6
        # and the basic output is detectably non-optimal for its own set
        cert_basic = kkt_verify(problem, 0, a.u, [a.levels[0].scale],
                                a.levels[0].saturations)
        assert min(signed_multipliers(a.levels[0], cert_basic)) < -1e-6


class TestMultipliers:
    def test_empty_set_empty_vector(self):
        rng = np.random.default_rng(2)
        problem = random_problem(rng, infinite_bounds=True, max_levels=1)
        o, certs, _ = solve_opt(problem, options=CERT)
        assert certs[0].mu_tilde_sat.size == 0

    def test_all_final_multipliers_sign_correct(self):
        # sign-correctness is an optimality property of feasible subproblems;
        # levels whose fixed-scale subproblem is infeasible (exhausted with a
        # residual) carry no KKT point and are skipped
        rng = np.random.default_rng(3)
        saturated = 0
        for _ in range(200):
            problem = random_problem(rng, max_levels=2)
            o, certs, _ = solve_opt(problem, options=CERT)
            for lvl_res, cert in zip(o.levels, certs):
                if lvl_res.residual > 1e-7:
                    continue
                signed = signed_multipliers(lvl_res, cert)
                if signed:
                    saturated += 1
                    assert min(signed) > -1e-8
        assert saturated > 50

    def test_matches_oracle_duals(self):
        rng = np.random.default_rng(4)
        checked = 0
        for _ in range(150):
            problem = random_problem(rng, max_levels=1, n_range=(3, 10))
            o, certs, _ = solve_opt(problem, options=CERT)
            if not o.levels[0].saturations.entries or o.levels[0].exhausted:
                continue
            try:
                osol = solve_level(LevelContext.from_problem(problem, 0), 1e8)
            except (OracleInfeasible, OracleError):
                continue
            if abs(osol.s - o.levels[0].scale) > 1e-9:
                continue
            C, lo, hi = problem.stacked_inequalities(1)
            l_k = C.shape[0]
            fin_lo = np.flatnonzero(np.isfinite(lo))
            fin_hi = np.flatnonzero(np.isfinite(hi))
            for e, mt in zip(o.levels[0].saturations.entries, certs[0].mu_tilde_sat):
                # oracle rows: finite lower block first, then finite upper block
                if e.side == "lower":
                    pos = int(np.where(fin_lo == e.row)[0][0])
                    mu_oracle = osol.multipliers[pos]
                    mu_ours = -mt
                else:
                    pos = len(fin_lo) + int(np.where(fin_hi == e.row)[0][0])
                    mu_oracle = osol.multipliers[pos]
                    mu_ours = mt
                assert abs(mu_oracle - mu_ours) < 1e-6
                checked += 1
        assert checked >= 30

    def test_prune_conditions(self):
        sat = SaturationSet()
        sat.append(0, "upper", np.array([1.0, 0.0]), 1.0)
        sat.append(1, "lower", np.array([0.0, 1.0]), -1.0)
        # upper with negative value and lower with positive value are wrong
        assert optimality_check_and_prune(sat, np.array([-0.5, 0.2]), set(), 1e-8) == [0, 1]
        assert optimality_check_and_prune(sat, np.array([0.5, -0.2]), set(), 1e-8) == []
        # pinned rows are never selected
        assert optimality_check_and_prune(sat, np.array([-0.5, 0.2]),
                                          {(0, "upper")}, 1e-8) == [1]


class TestKktVerify:
    def test_unconstrained_residuals_zero(self):
        n = 4
        rng = np.random.default_rng(5)
        u_r = rng.standard_normal(n)
        problem = HierarchyProblem(
            n=n, W=WeightMatrix.identity(n), u_r=u_r,
            levels=[AssembledLevel(A=np.zeros((0, n)), b_cmd=np.zeros(0),
                                   b_bias=np.zeros(0), C=np.zeros((0, n)),
                                   lower=np.zeros(0), upper=np.zeros(0))])
        cert = kkt_verify(problem, 0, u_r, [1.0], SaturationSet())
        assert cert.stationarity_residual < 1e-12
        assert cert.complementarity_residual == 0.0

    def test_residuals_small_on_single_level_outputs(self):
        rng = np.random.default_rng(6)
        checked = 0
        for _ in range(150):
            problem = random_problem(rng, max_levels=1)
            o, certs, _ = solve_opt(problem, options=CERT)
            if o.levels[0].relaxed:
                continue  # equality abandoned: no fixed-scale KKT point exists
            checked += 1
            assert certs[0].stationarity_residual < 1e-7
            assert certs[0].complementarity_residual < 1e-7
        assert checked >= 130

    def test_multi_level_primal_residuals(self):
        # cascaded levels inherit saturation components from above, so full
        # subproblem stationarity only binds when the levels above are clean;
        # primal consistency is certified unconditionally
        rng = np.random.default_rng(6)
        conditional_checked = 0
        for _ in range(100):
            problem = random_problem(rng, max_levels=3)
            o, certs, _ = solve_opt(problem, options=CERT)
            for k, (lvl_res, cert) in enumerate(zip(o.levels, certs)):
                if not lvl_res.relaxed:
                    assert cert.primal_eq_residual < 1e-7
                if not lvl_res.exhausted:
                    assert cert.primal_ineq_residual < 1e-7
                above_clean = not any(len(o.levels[i].saturations) or o.levels[i].relaxed
                                      or o.levels[i].exhausted for i in range(k))
                if above_clean and not lvl_res.exhausted:
                    conditional_checked += 1
                    assert cert.stationarity_residual < 1e-7
        assert conditional_checked > 80

    def test_detects_non_optimal_candidate(self):
        # hand-built: minimize |u|^2 with box [-1,1]^2, no equality rows;
        # pinning u0 at the upper bound is feasible but clearly not optimal
        n = 2
        problem = HierarchyProblem(
            n=n, W=WeightMatrix.identity(n), u_r=np.zeros(n),
            levels=[AssembledLevel(A=np.zeros((0, n)), b_cmd=np.zeros(0),
                                   b_bias=np.zeros(0), C=np.eye(n),
                                   lower=-np.ones(n), upper=np.ones(n))])
        sat = SaturationSet()
        sat.append(0, "upper", np.array([1.0, 0.0]), 1.0)
        cert = kkt_verify(problem, 0, np.array([1.0, 0.0]), [1.0], sat)
        # upper-side saturation with a negative true multiplier: non-optimal
        assert cert.mu_tilde_sat[0] < -1e-9
        assert cert.stationarity_residual < 1e-10


class TestWarmStart:
    def test_neutrality_on_converged_solutions(self):
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(100):
            problem = random_problem(rng, max_levels=2)
            cold, _, memory = solve_opt(problem)
            if any(lvl.exhausted for lvl in cold.levels):
                continue
            warm, _, _ = solve_opt(problem, memory=memory)
            assert np.abs(warm.u - cold.u).max() < 1e-9
            checked += 1
        assert checked >= 60

    def test_warm_start_reduces_iterations_on_smooth_stream(self):
        # drifting bounds: consecutive problems share most of the active set
        rng = np.random.default_rng(8)
        n = 8
        A = rng.standard_normal((2, n))
        b0 = rng.standard_normal(2) * 2.0
        C = np.eye(n)
        base = np.ones(n) * 0.4
        W = WeightMatrix.identity(n)

        def make(t):
            lo = -base - 0.02 * np.sin(t + np.arange(n))
            hi = base + 0.02 * np.cos(t + np.arange(n))
            return HierarchyProblem(n=n, W=W, u_r=np.zeros(n), levels=[
                AssembledLevel(A=A, b_cmd=b0, b_bias=np.zeros(2), C=C,
                               lower=lo, upper=hi)])

        cold_total = 0
        warm_total = 0
        memory = WarmStartMemory()
        for i in range(60):
            problem = make(0.01 * i)
            c, _, _ = solve_opt(problem)
            w, _, memory = solve_opt(problem, memory=memory)
            assert np.abs(c.u - w.u).max() < 1e-8
            cold_total += c.total_iterations
            warm_total += w.total_iterations
        assert warm_total < cold_total

    def test_stale_memory_dropped(self):
        rng = np.random.default_rng(9)
        p1 = random_problem(rng, n=6, max_levels=1)
        p2 = random_problem(rng, n=7, max_levels=2)
        _, _, memory = solve_opt(p1)
        sol, _, _ = solve_opt(p2, memory=memory)  # different signature: cold start
        ref, _, _ = solve_opt(p2)
        assert np.abs(sol.u - ref.u).max() < 1e-12


class TestOracleAgreement:
    def test_u_matches_whenever_scales_agree(self):
        rng = np.random.default_rng(10)
        agreements = 0
        for _ in range(250):
            problem = random_problem(rng, max_levels=1, n_range=(3, 12))
            o, _, _ = solve_opt(problem)
            try:
                osol = solve_level(LevelContext.from_problem(problem, 0), 1e8)
            except (OracleInfeasible, OracleError):
                continue
            if abs(osol.s - o.levels[0].scale) < 1e-9:
                agreements += 1
                assert np.abs(osol.u - o.u).max() < 1e-6
        assert agreements >= 50
