"""Shared problem and solution containers for the hierarchy solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from redsolve.linalg import WeightMatrix


class ProblemError(ValueError):
    """The hierarchy problem is structurally invalid."""


@dataclass
class AssembledLevel:
    """One priority level in unified form: A u = b_cmd - b_bias, lower <= C u <= upper.

    ``b_cmd`` is the commanded task rate (the part that task scaling shrinks)
    and ``b_bias`` the state-dependent feedforward correction subtracted from it.
    """

    A: np.ndarray
    b_cmd: np.ndarray
    b_bias: np.ndarray
    C: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b_cmd = np.asarray(self.b_cmd, dtype=float).reshape(-1)
        self.b_bias = np.asarray(self.b_bias, dtype=float).reshape(-1)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.C.shape[0]

    def validate(self, n: int) -> None:
        if self.A.shape != (self.m, n) and self.m > 0:
            raise ProblemError(f"A has shape {self.A.shape}, expected ({self.m}, {n})")
        if self.A.shape[1] != n and self.m > 0:
            raise ProblemError(f"A has {self.A.shape[1]} columns, expected {n}")
        if self.b_cmd.shape != (self.m,) or self.b_bias.shape != (self.m,):
            raise ProblemError("equality right-hand sides do not match A")
        if self.n_ineq > 0 and self.C.shape[1] != n:
            raise ProblemError(f"C has {self.C.shape[1]} columns, expected {n}")
        if self.lower.shape != (self.n_ineq,) or self.upper.shape != (self.n_ineq,):
            raise ProblemError("bound vectors do not match C")
        for name, arr in (("A", self.A), ("b_cmd", self.b_cmd), ("b_bias", self.b_bias), ("C", self.C)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ProblemError(f"{name} contains non-finite entries")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ProblemError("bounds contain NaN")
        if np.any(self.lower > self.upper):
            raise ProblemError("lower bound exceeds upper bound")


def empty_level(n: int) -> AssembledLevel:
    return AssembledLevel(
        A=np.zeros((0, n)), b_cmd=np.zeros(0), b_bias=np.zeros(0),
        C=np.zeros((0, n)), lower=np.zeros(0), upper=np.zeros(0),
    )


@dataclass
class HierarchyProblem:
    """Weighted multi-level problem: minimize (u - u_r)^T H (u - u_r) / 2 per level."""

    n: int
    W: WeightMatrix
    u_r: np.ndarray
    levels: list[AssembledLevel]

    def __post_init__(self):
        self.u_r = np.asarray(self.u_r, dtype=float).reshape(-1)

    def validate(self) -> None:
        if self.W.n != self.n:
            raise ProblemError(f"weight is {self.W.n}x{self.W.n}, expected {self.n}")
        if self.u_r.shape != (self.n,):
            raise ProblemError(f"u_r has shape {self.u_r.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(self.u_r)):
            raise ProblemError("u_r contains non-finite entries")
        if not self.levels:
            raise ProblemError("problem has no levels")
        for lvl in self.levels:
            lvl.validate(self.n)

    def stacked_inequalities(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """C, lower, upper stacked over levels 1..k (1-based ``k``)."""
        Cs = [lvl.C for lvl in self.levels[:k] if lvl.n_ineq]
        if not Cs:
            return np.zeros((0, self.n)), np.zeros(0), np.zeros(0)
        C = np.vstack(Cs)
        lo = np.concatenate([lvl.lower for lvl in self.levels[:k] if lvl.n_ineq])
        hi = np.concatenate([lvl.upper for lvl in self.levels[:k] if lvl.n_ineq])
        return C, lo, hi


@dataclass
class SatEntry:
    row: int  # index into the stacked inequality rows of levels 1..k
    side: str  # 'lower' | 'upper'


@dataclass
class SaturationSet:
    """Inequality rows currently pinned at a bound, in insertion order."""

    entries: list[SatEntry] = field(default_factory=list)
    C_sat: np.ndarray = None  # type: ignore[assignment]
    d_sat: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.C_sat is None:
            self.C_sat = np.zeros((0, 0))
        if self.d_sat is None:
            self.d_sat = np.zeros(0)

    def __len__(self) -> int:
        return len(self.entries)

    def membership(self) -> set[tuple[int, str]]:
        return {(e.row, e.side) for e in self.entries}

    def copy(self) -> "SaturationSet":
        return SaturationSet(
            entries=list(self.entries),
            C_sat=self.C_sat.copy(),
            d_sat=self.d_sat.copy(),
        )

    def append(self, row: int, side: str, c_row: np.ndarray, bound: float) -> None:
        if any(e.row == row for e in self.entries):
            raise ValueError(f"row {row} already saturated")
        if self.C_sat.size == 0:
            self.C_sat = c_row[None, :].copy()
        else:
            self.C_sat = np.vstack([self.C_sat, c_row])
        self.d_sat = np.append(self.d_sat, bound)
        self.entries.append(SatEntry(row=row, side=side))


@dataclass
class LevelResult:
    u_k: np.ndarray
    scale: float
    saturations: SaturationSet
    iterations: int
    exhausted: bool = False
    residual: float = 0.0  # worst bound violation at exit
    relaxed: bool = False  # equality abandoned: higher-level solution passed through


@dataclass
class Diagnostics:
    damped_pinv: bool = False
    bound_violation: float = 0.0
    iteration_cap_hit: bool = False
    refreshes: int = 0
    pinned_rows: int = 0


@dataclass
class Solution:
    u: np.ndarray
    levels: list[LevelResult]
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def scales(self) -> list[float]:
        return [lvl.scale for lvl in self.levels]

    @property
    def total_iterations(self) -> int:
        return sum(lvl.iterations for lvl in self.levels)


@dataclass
class SolveOptions:
    violation_tol: float = 1e-9  # a row is violated beyond this absolute excess
    rank_tol: float = 1e-8
    dependence_tol: float = 1e-9
    iteration_margin: int = 5  # per-level cap is l_k + margin
    refresh_every: int = 32  # full refactorization period for the fast variant
    refresh_residual: float = 1e-6
    prune_tol: float = 1e-8  # multiplier must be below -prune_tol to be removed
    max_pin_count: int = 3  # insert/remove cycles before a row is pinned
    certify: bool = False  # attach independently computed optimality certificates
    u_r_per_level: list[np.ndarray] | None = None  # override: secondary input per level
