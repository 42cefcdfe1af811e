"""Support constraints by leave-one-out re-solving, and a degeneracy heuristic.

Scenario ``i`` is of support when removing it alone moves the solution by
more than ``comparison_tol``. ``check_degeneracy`` re-solves with only the
support scenarios; this is a check on one draw, not a proof that the
non-degeneracy assumption holds almost surely.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NotConvergedError, ScenviError
from .solver import ScenarioVIProblem, Solution, SolverParams, solve_qvi, solve_vi

COMPARISON_TOL = 1e-4
AMBIGUITY_BAND = 10.0


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SCENVI_THREADS", "1")))
    except ValueError:
        return 1


def _solve(problem: ScenarioVIProblem, params: SolverParams) -> Solution:
    return solve_qvi(problem, params) if problem.mode == "QVI" else solve_vi(problem, params)


@dataclass
class SupportReport:
    s_star: int
    support_indices: list[int]
    comparison_tol: float
    per_index_displacement: list[float]
    x_star: np.ndarray
    unresolved: list[int] = field(default_factory=list)
    ambiguous: list[int] = field(default_factory=list)
    degeneracy_check: str = "skipped"

    @property
    def valid(self) -> bool:
        return not self.unresolved

    @property
    def min_support_displacement(self) -> float | None:
        d = [self.per_index_displacement[i] for i in self.support_indices]
        return min(d) if d else None

    @property
    def max_nonsupport_displacement(self) -> float | None:
        s = set(self.support_indices)
        d = [v for i, v in enumerate(self.per_index_displacement) if i not in s]
        return max(d) if d else None

    def to_dict(self) -> dict:
        return {
            "s_star": self.s_star,
            "support_indices": list(self.support_indices),
            "comparison_tol": self.comparison_tol,
            "degeneracy_check": self.degeneracy_check,
            "per_index_displacement": [float(v) for v in self.per_index_displacement],
            "min_support_displacement": self.min_support_displacement,
            "max_nonsupport_displacement": self.max_nonsupport_displacement,
            "valid": self.valid,
            "unresolved": list(self.unresolved),
            "ambiguous": list(self.ambiguous),
            "x_star": [float(v) for v in self.x_star],
        }


def count_support(problem: ScenarioVIProblem, params: SolverParams | None = None,
                  comparison_tol: float = COMPARISON_TOL, max_workers: int | None = None,
                  solution: Solution | None = None) -> SupportReport:
    """Leave-one-out support count.

    Re-solves warm start from ``x*``. Results are aggregated by index, so the
    thread schedule does not matter. A leave-one-out solve that fails to
    converge marks its index unresolved and the report invalid.
    """
    params = params or SolverParams()
    if solution is None:
        solution = _solve(problem, params)
    if not solution.converged:
        raise NotConvergedError("the full problem did not converge", result=solution)
    x_star = solution.x_star
    warm = replace(params, x0=x_star, check_residual=False)

    def one(i):
        try:
            sol = _solve(problem.without(i), warm)
        except ScenviError:
            return np.inf, False
        return float(np.linalg.norm(sol.x_star - x_star)), sol.converged

    workers = max_workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(problem.N)))
    else:
        results = [one(i) for i in range(problem.N)]

    disp = [r[0] for r in results]
    unresolved = [i for i, r in enumerate(results) if not r[1]]
    support = [i for i, d in enumerate(disp) if d > comparison_tol and i not in unresolved]
    lo, hi = comparison_tol / AMBIGUITY_BAND, comparison_tol * AMBIGUITY_BAND
    ambiguous = [i for i, d in enumerate(disp) if lo <= d <= hi]
    return SupportReport(len(support), support, comparison_tol, disp, x_star, unresolved, ambiguous)


def check_degeneracy(problem: ScenarioVIProblem, report: SupportReport,
                     params: SolverParams | None = None) -> str:
    """``"passed"`` when the support scenarios alone reproduce ``x*``."""
    if not report.valid:
        raise ValueError("degeneracy check needs a valid support report")
    params = replace(params or SolverParams(), x0=None)
    sol = _solve(problem.subset(report.support_indices), params)
    if not sol.converged:
        raise NotConvergedError("support-only problem did not converge", result=sol)
    ok = np.linalg.norm(sol.x_star - report.x_star) <= report.comparison_tol
    report.degeneracy_check = "passed" if ok else "failed"
    return report.degeneracy_check


def assert_dimension_bound(report: SupportReport, n: int, scenarios_convex: bool = True) -> bool:
    """``s* <= n``; a ``False`` with convex scenarios is an internal inconsistency."""
    return report.s_star <= n


__all__ = ["COMPARISON_TOL", "SupportReport", "assert_dimension_bound", "check_degeneracy", "count_support"]
