"""Randomized cross-validation of the solver family against independent oracles.

Provides the instance generator used by the property suites and the property
runners behind the ``validate`` command.  Each property pits one code path
against an independently implemented reference and reports the worst residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from redsolve.linalg import WeightMatrix
from redsolve.solvers.types import AssembledLevel, HierarchyProblem, SolveOptions


def random_spd(rng, n, spread=(0.3, 3.0)) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(rng.uniform(*spread, size=n)) @ Q.T


def random_weight(rng, n, kind: str | None = None) -> WeightMatrix:
    kind = kind or rng.choice(["identity", "diagonal", "dense"])
    if kind == "identity":
        return WeightMatrix.identity(n)
    if kind == "diagonal":
        return WeightMatrix.from_matrix(np.diag(rng.uniform(0.3, 3.0, n)))
    return WeightMatrix.from_matrix(random_spd(rng, n))


def random_problem(
    rng,
    *,
    n: int | None = None,
    n_range: tuple[int, int] = (3, 12),
    max_levels: int = 3,
    max_rows: int = 10,
    scheme: str | None = None,
    weight: str | None = None,
    bound_width: float = 1.2,
    infinite_bounds: bool = False,
    with_u_r: bool | None = None,
) -> HierarchyProblem:
    """Random hierarchy with a controllable mix of tight and loose bounds.

    Bound boxes are centred away from zero with lognormal widths so the
    generated stream contains comfortably feasible levels, saturating ones
    and occasional scaling/exhaustion cases.
    """
    if n is None:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
    N = int(rng.integers(1, max_levels + 1))
    scheme = scheme or rng.choice(["velocity", "acceleration", "torque"])
    W = random_weight(rng, n, weight)
    if with_u_r is None:
        with_u_r = bool(rng.random() < 0.5)
    u_r = rng.standard_normal(n) * 0.5 if with_u_r else np.zeros(n)

    # equality sizes: keep some redundancy so saturation has room to act
    m_budget = max(1, n - 2)
    sizes = []
    for _ in range(N):
        m_k = int(rng.integers(0, min(3, m_budget) + 1))
        if m_k > 0:
            m_budget -= m_k
        sizes.append(m_k)
    if all(s == 0 for s in sizes):
        sizes[0] = 1

    rows_left = int(rng.integers(1, max_rows + 1))
    levels = []
    for k in range(N):
        m_k = sizes[k]
        A = rng.standard_normal((m_k, n))
        b_cmd = rng.standard_normal(m_k)
        b_bias = np.zeros(m_k) if scheme == "velocity" else rng.standard_normal(m_k) * 0.3
        l_k = int(rng.integers(0, rows_left + 1)) if k < N - 1 else rows_left
        rows_left -= l_k
        if l_k > 0:
            joint_rows = rng.random(l_k) < 0.4
            C = rng.standard_normal((l_k, n))
            for i in np.flatnonzero(joint_rows):
                C[i] = 0.0
                C[i, rng.integers(0, n)] = 1.0
            centre = rng.standard_normal(l_k) * 0.5
            width = np.exp(rng.normal(0.0, 0.8, l_k)) * bound_width
            lower = centre - width
            upper = centre + width
            if infinite_bounds:
                lower = np.full(l_k, -np.inf)
                upper = np.full(l_k, np.inf)
            else:
                lower[rng.random(l_k) < 0.1] = -np.inf
                upper[rng.random(l_k) < 0.1] = np.inf
        else:
            C = np.zeros((0, n))
            lower = np.zeros(0)
            upper = np.zeros(0)
        levels.append(AssembledLevel(A=A, b_cmd=b_cmd, b_bias=b_bias,
                                     C=C, lower=lower, upper=upper))
    return HierarchyProblem(n=n, W=W, u_r=u_r, levels=levels)


def recursive_equality_solution(problem: HierarchyProblem) -> np.ndarray:
    """Closed-form prioritized solution ignoring all inequality rows."""
    from redsolve.linalg import projector_step, weighted_pinv

    n = problem.n
    P = np.eye(n)
    u = np.zeros(n)
    for k, lvl in enumerate(problem.levels):
        res = weighted_pinv(lvl.A @ P, problem.W)
        u = u + res.pinv @ (lvl.b_cmd - lvl.b_bias - lvl.A @ u)
        P = projector_step(P, lvl.A, res.pinv)
    return u + P @ problem.u_r


@dataclass
class PropertyResult:
    name: str
    cases: int
    worst: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name}: worst residual {self.worst:.3e} "
                f"(threshold {self.threshold:.1e}, {self.cases} cases){self.detail}")


def check_equality_reduction(cases: int = 200, seed: int = 0) -> PropertyResult:
    """All solver variants reproduce the recursive closed form with loose bounds."""
    from redsolve.solvers import basic, fast, opt

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        problem = random_problem(rng, infinite_bounds=True)
        expected = recursive_equality_solution(problem)
        for solver in (basic.solve, fast.solve_fast):
            sol = solver(problem)
            worst = max(worst, float(np.abs(sol.u - expected).max()))
        sol, _, _ = opt.solve_opt(problem)
        worst = max(worst, float(np.abs(sol.u - expected).max()))
    return PropertyResult("equality-reduction", cases, worst, 1e-9, worst < 1e-9)


def check_hard_bounds(cases: int = 300, seed: int = 1) -> PropertyResult:
    """Returned solutions satisfy the stacked bounds unless a level exhausted."""
    from redsolve.solvers import basic

    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for _ in range(cases):
        problem = random_problem(rng)
        sol = basic.solve(problem)
        for k, lvl_res in enumerate(sol.levels):
            if lvl_res.exhausted:
                continue
            C, lo, hi = problem.stacked_inequalities(k + 1)
            if C.shape[0] == 0:
                continue
            phi = C @ lvl_res.u_k
            worst = max(worst, float(np.max(np.maximum(lo - phi, phi - hi))))
            checked += 1
    return PropertyResult("hard-bounds", checked, worst, 1e-8, worst < 1e-8)


def check_priority_preservation(cases: int = 300, seed: int = 2) -> PropertyResult:
    """Lower levels never disturb the scaled equality tasks of higher ones."""
    from redsolve.solvers import basic

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        problem = random_problem(rng)
        sol = basic.solve(problem)
        u_N = sol.u
        for k, lvl in enumerate(problem.levels):
            if lvl.m == 0 or sol.levels[k].relaxed:
                continue
            target = sol.levels[k].scale * lvl.b_cmd - lvl.b_bias
            worst = max(worst, float(np.abs(lvl.A @ u_N - target).max()))
    return PropertyResult("priority-preservation", cases, worst, 1e-8, worst < 1e-8)
