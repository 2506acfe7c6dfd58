import numpy as np
import pytest

from redsolve.linalg import record_operations
from redsolve.solvers.basic import solve
from redsolve.solvers.fast import solve_fast
from redsolve.solvers.types import AssembledLevel, HierarchyProblem, SolveOptions
from redsolve.linalg import WeightMatrix
from redsolve.validate import random_problem


def membership(sol):
    return [lvl.saturations.membership() for lvl in sol.levels]


class TestEquivalence:
    def test_no_saturation_path_identical(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            problem = random_problem(rng, infinite_bounds=True)
            a = solve(problem)
            b = solve_fast(problem)
            assert np.abs(a.u - b.u).max() < 1e-10

    @pytest.mark.parametrize("scheme", ["velocity", "acceleration", "torque"])
    def test_random_instances_match(self, scheme):
        rng = np.random.default_rng(sum(map(ord, scheme)))
        for _ in range(150):
            problem = random_problem(rng, scheme=scheme)
            a = solve(problem)
            b = solve_fast(problem)
            assert np.abs(a.u - b.u).max() < 1e-8
            assert membership(a) == membership(b)
            for la, lb in zip(a.levels, b.levels):
                assert abs(la.scale - lb.scale) < 1e-8

    def test_saturation_heavy_instances(self):
        rng = np.random.default_rng(1)
        saturated = 0
        for _ in range(120):
            problem = random_problem(rng, n_range=(6, 17), bound_width=0.35)
            a = solve(problem)
            b = solve_fast(problem)
            assert np.abs(a.u - b.u).max() < 1e-8
            assert membership(a) == membership(b)
            saturated += any(len(lvl.saturations) for lvl in a.levels)
        assert saturated > 60

    def test_exhaustion_paths_match(self):
        rng = np.random.default_rng(2)
        exhausted = 0
        for _ in range(120):
            problem = random_problem(rng, bound_width=0.15)
            a = solve(problem)
            b = solve_fast(problem)
            assert np.abs(a.u - b.u).max() < 1e-8
            for la, lb in zip(a.levels, b.levels):
                assert la.exhausted == lb.exhausted
                assert abs(la.scale - lb.scale) < 1e-8
                exhausted += la.exhausted
        assert exhausted > 20


class TestIncrementalContext:
    def test_context_integrity_after_solve(self):
        # the refresh policy keeps the reconstruction residual tiny; verified
        # here end to end by solving with a tiny refresh period (exhausted
        # levels are skipped: their fallback is tie-sensitive by design)
        rng = np.random.default_rng(3)
        opts = SolveOptions(refresh_every=2)
        checked = 0
        for _ in range(40):
            problem = random_problem(rng, bound_width=0.4)
            a = solve(problem)
            if any(lvl.exhausted for lvl in a.levels):
                continue
            b = solve_fast(problem, opts)
            assert np.abs(a.u - b.u).max() < 1e-8
            checked += 1
        assert checked >= 20

    def test_null_component_definitional(self):
        # the secondary-input component is always the current projector image
        rng = np.random.default_rng(4)
        n = 8
        A = rng.standard_normal((2, n))
        C = np.eye(n)
        lo = np.full(n, -0.4)
        hi = np.full(n, 0.4)
        u_r = rng.standard_normal(n)
        problem = HierarchyProblem(
            n=n, W=WeightMatrix.identity(n), u_r=u_r,
            levels=[AssembledLevel(A=A, b_cmd=rng.standard_normal(2) * 2.0,
                                   b_bias=np.zeros(2), C=C, lower=lo, upper=hi)])
        a = solve(problem)
        b = solve_fast(problem)
        assert np.abs(a.u - b.u).max() < 1e-8


class TestCostStructure:
    def test_no_dense_inversion_in_saturation_loop(self):
        # after the per-level factorization, only row pseudoinverses and
        # triangular solves may appear (full-rank instances)
        rng = np.random.default_rng(5)
        problem = random_problem(rng, n_range=(10, 17), bound_width=0.3,
                                 weight="dense")
        with record_operations() as rec:
            solve_fast(problem)
        kinds = rec.kinds()
        assert "dense_inverse" not in kinds
        assert "qr" in kinds

    def test_update_cheaper_than_recompute_from_third_iteration(self):
        # dominant dense-product counts of one saturation update versus one
        # full recompute, mirroring the operations each code path performs
        def fast_update_flops(n, m, t):
            # chi row pseudoinverse + pinv/projector/piece rank-one updates
            return 2 * n**2 + 2 * n * (m + t) + 2 * n**2 + 4 * n

        def basic_iteration_flops(n, m, t):
            # pinv of the t-row saturation stack and the m-row task stack,
            # plus the two projector rebuild products
            pinv_sat = 2 * n * n * t + 2 * n * t * t + 2 * t**3 / 3
            pinv_task = 2 * n * n * m + 2 * n * m * m + 2 * m**3 / 3
            projectors = 2 * n * n * (t + m)
            return pinv_sat + pinv_task + projectors

        n, m = 17, 6
        for t in range(3, 12):
            assert fast_update_flops(n, m, t) < basic_iteration_flops(n, m, t)

    def test_faster_on_saturation_heavy_instance(self):
        import time

        rng = np.random.default_rng(6)
        n, m = 17, 6
        A = rng.standard_normal((m, n))
        b_cmd = rng.standard_normal(m) * 8.0  # demands far more than the box allows
        problem = HierarchyProblem(
            n=n, W=WeightMatrix.from_matrix(np.diag(rng.uniform(0.5, 2.0, n))),
            u_r=np.zeros(n),
            levels=[AssembledLevel(A=A, b_cmd=b_cmd, b_bias=np.zeros(m),
                                   C=np.eye(n), lower=-np.ones(n), upper=np.ones(n))])
        a = solve(problem)
        b = solve_fast(problem)
        assert np.abs(a.u - b.u).max() < 1e-8
        assert a.levels[0].iterations >= 4  # genuinely saturation-heavy

        def best_of(fn, reps=7):
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                fn(problem)
                times.append(time.perf_counter() - t0)
            return min(times)

        t_basic = best_of(solve)
        t_fast = best_of(solve_fast)
        # generous margin: the incremental path must not be slower
        assert t_fast < 1.2 * t_basic
