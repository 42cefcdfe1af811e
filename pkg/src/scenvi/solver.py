"""Sampled variational inequalities and their quasi-variational variant.

Find ``x*`` in ``X = X_1 ∩ ... ∩ X_N`` (optionally intersected with a fixed
base set) such that ``F(x*).(x - x*) >= 0`` for every ``x`` in ``X``.

Method choice follows what the operator declares:

* ``projection``: ``x <- P(x - g F(x))`` with ``g = alpha / L**2``, a
  contraction when ``F`` is ``alpha``-strongly monotone and ``L``-Lipschitz;
* ``extragradient``: Korpelevich steps with a backtracking step size, for
  monotone Lipschitz operators without declared constants;
* ``subgradient``: projected steps ``c/k`` along an element of a set-valued
  operator;
* ``conic``: affine operators ``F = A x + b``. Symmetric ``A`` turns the VI into
  one convex QP; otherwise a symmetric splitting is iterated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import conic
from .errors import (DegeneratePairsError, DimensionMismatchError, InvalidSetError,
                     NotConvergedError)
from .sets import PROJ_TOL, ParametrizedSet, ProductSet, intersect

SMOOTH_TOL = 1e-7
SUBGRADIENT_TOL = 1e-5
MAX_ITER = 1_000_000


@dataclass(frozen=True, eq=False)
class OperatorOracle:
    """Operator ``F: R^n -> R^n``.

    ``matrix``/``offset`` are filled for affine operators ``F(x) = A x + b`` and
    unlock the conic method. ``subgradient_eval`` returns one element of a
    set-valued operator.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray] | None = None
    subgradient_eval: Callable[[np.ndarray], np.ndarray] | None = None
    strong_monotonicity: float | None = None
    lipschitz: float | None = None
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __post_init__(self):
        if self.eval is None and self.subgradient_eval is None:
            raise ValueError("operator needs eval or subgradient_eval")
        a, L = self.strong_monotonicity, self.lipschitz
        if a is not None and a <= 0:
            raise ValueError("declared strong monotonicity must be positive")
        if L is not None and L <= 0:
            raise ValueError("declared Lipschitz constant must be positive")
        if a is not None and L is not None and a > L * (1 + 1e-12):
            raise ValueError(f"strong monotonicity {a} exceeds Lipschitz constant {L}")

    @classmethod
    def affine(cls, A, b=None) -> "OperatorOracle":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatchError(f"operator matrix must be square, got {A.shape}")
        b = np.zeros(n) if b is None else np.asarray(b, dtype=float).reshape(-1)
        if len(b) != n:
            raise DimensionMismatchError(f"offset of length {len(b)} for a {n}x{n} matrix")
        lam = np.linalg.eigvalsh(0.5 * (A + A.T)).min() if n else 0.0
        L = float(np.linalg.norm(A, 2)) if n else 0.0
        alpha = float(lam) if lam > 1e-12 * max(L, 1e-300) else None
        return cls(n, lambda x: A @ x + b, None, alpha, L if L > 0 else None, A, b)

    @classmethod
    def constant(cls, c) -> "OperatorOracle":
        c = np.asarray(c, dtype=float).reshape(-1)
        return cls.affine(np.zeros((len(c), len(c))), c)

    @property
    def is_affine(self) -> bool:
        return self.matrix is not None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        f = self.eval if self.eval is not None else self.subgradient_eval
        out = np.asarray(f(x), dtype=float)
        if out.shape != (self.dim,):
            raise DimensionMismatchError(f"operator returned shape {out.shape}, expected ({self.dim},)")
        return out


@dataclass(frozen=True, eq=False)
class ScenarioVIProblem:
    """VI (or QVI) over the intersection of sampled sets.

    ``base`` is a deterministic set that is always kept (never counted as a
    scenario). In QVI mode scenarios are :class:`ParametrizedSet`; ``base``
    may be either kind. ``initializer`` optionally maps a problem to a good
    starting point for the QVI fixed-point loop.
    """

    operator: OperatorOracle
    scenarios: tuple
    mode: str = "VI"
    base: object | None = None
    initializer: Callable[["ScenarioVIProblem"], np.ndarray] | None = None
    labels: tuple | None = None
    allow_empty: bool = field(default=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if self.mode not in ("VI", "QVI"):
            raise ValueError(f"mode must be VI or QVI, got {self.mode!r}")
        if not self.scenarios and not self.allow_empty:
            raise ValueError("at least one scenario is required")
        n = self.operator.dim
        for s in self.scenarios + ((self.base,) if self.base is not None else ()):
            if s.dim != n:
                raise DimensionMismatchError(f"scenario set of dimension {s.dim} for an operator on R^{n}")
            if self.mode == "VI" and isinstance(s, ParametrizedSet):
                raise InvalidSetError("parametrized sets require QVI mode")
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(len(self.scenarios))))

    @property
    def dim(self) -> int:
        return self.operator.dim

    @property
    def N(self) -> int:
        return len(self.scenarios)

    def subset(self, keep: Sequence[int]) -> "ScenarioVIProblem":
        keep = list(keep)
        return replace(self, scenarios=tuple(self.scenarios[i] for i in keep),
                       labels=tuple(self.labels[i] for i in keep), allow_empty=True)

    def without(self, i: int) -> "ScenarioVIProblem":
        return self.subset([k for k in range(self.N) if k != i])

    def feasible_set(self, anchor=None):
        """``X`` (VI) or ``X(anchor)`` (QVI)."""
        parts = list(self.scenarios)
        if self.base is not None:
            parts.append(self.base)
        if self.mode == "QVI":
            if anchor is None:
                raise ValueError("QVI feasible set needs an anchor")
            parts = [s.at(anchor) if isinstance(s, ParametrizedSet) else s for s in parts]
        return intersect(parts, self.dim)

    def anchored(self, anchor) -> "ScenarioVIProblem":
        """The VI obtained by freezing the QVI sets at ``anchor``."""
        if self.mode == "VI":
            return self
        a = np.asarray(anchor, dtype=float)
        base = self.base.at(a) if isinstance(self.base, ParametrizedSet) else self.base
        return ScenarioVIProblem(self.operator, tuple(s.at(a) for s in self.scenarios), "VI", base,
                                 labels=self.labels, allow_empty=True)


@dataclass
class SolverParams:
    method: str = "auto"
    tol: float = SMOOTH_TOL
    subgradient_tol: float = SUBGRADIENT_TOL
    max_iter: int = MAX_ITER
    proj_tol: float = PROJ_TOL
    x0: np.ndarray | None = None
    step_scale: float | None = None
    qvi_damping: float = 0.5
    qvi_max_outer: int = 500
    qvi_tol: float = 1e-6
    check_residual: bool = True   # False skips the final residual projection of conic/QVI solves


@dataclass
class Solution:
    x_star: np.ndarray
    natural_residual: float
    iterations: int
    feasibility_violation: float
    converged: bool
    method: str = ""

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x_star],
            "residual": float(self.natural_residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "feasibility_violation": float(self.feasibility_violation),
            "method": self.method,
        }


def _needs_conic(X) -> bool:
    blocks = X.blocks if isinstance(X, ProductSet) else (X,)
    for b in blocks:
        cons = b.flatten().constraints
        if len(cons) > 1 and not b.is_affine:
            return conic.representable(b)
    return False


def _projector(X, proj_tol):
    method = "conic" if _needs_conic(X) else "auto"
    return lambda z: X.project(z, tol=proj_tol, method=method)


def _residual(x, Fx, proj, gamma):
    return float(np.linalg.norm(x - proj(x - gamma * Fx)) / gamma)


def natural_residual(x, problem: ScenarioVIProblem, gamma: float = 1.0) -> float:
    """``|x - P_X(x - gamma F(x))| / gamma``; for QVIs ``X`` is anchored at ``x``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    X = problem.feasible_set(x if problem.mode == "QVI" else None)
    return _residual(x, problem.operator(x), _projector(X, PROJ_TOL), gamma)


COND_LIMIT = 100.0   # (L/alpha)^2 above which fixed-step projection is too slow


def _pick_method(op: OperatorOracle, requested: str, X=None) -> str:
    """``auto``: exact conic solves for strongly monotone affine operators when
    the set has no cheap projection or the step size would be tiny; else
    projection, extragradient or subgradient by what the oracle provides."""
    if requested != "auto":
        return requested
    if op.eval is None:
        return "subgradient"
    if op.strong_monotonicity is not None and op.lipschitz is not None:
        if op.is_affine and X is not None and conic.representable(X):
            if _needs_conic(X) or (op.lipschitz / op.strong_monotonicity) ** 2 > COND_LIMIT:
                return "conic"
        return "projection"
    return "extragradient"


def _finish(x, op, X, proj, params, iters, method, tol, converged_hint=True):
    if not params.check_residual and method == "conic":
        viol = X.violation(x)
        return Solution(x, math.nan, iters, viol, bool(converged_hint and viol <= 10 * params.proj_tol), method)
    r = _residual(x, op(x), proj, 1.0)
    viol = X.violation(x)
    ok = converged_hint and r <= tol and viol <= 10 * params.proj_tol
    return Solution(x, r, iters, viol, bool(ok), method)


def _projection(op, proj, x, params):
    gamma = op.strong_monotonicity / op.lipschitz ** 2
    if params.step_scale:
        gamma *= params.step_scale
    scale = max(1.0, gamma)
    for k in range(1, params.max_iter + 1):
        y = proj(x - gamma * op(x))
        if scale * np.linalg.norm(x - y) / gamma <= params.tol:
            return y, k, True
        x = y
    return x, params.max_iter, False


def _extragradient(op, proj, x, params, nu=0.9):
    gamma = params.step_scale or 1.0
    for k in range(1, params.max_iter + 1):
        Fx = op(x)
        y = proj(x - gamma * Fx)
        dxy = np.linalg.norm(x - y)
        if max(1.0, gamma) * dxy / gamma <= params.tol:
            return y, k, True
        Fy = op(y)
        while gamma * np.linalg.norm(Fx - Fy) > nu * dxy:
            gamma *= 0.5
            y = proj(x - gamma * Fx)
            dxy = np.linalg.norm(x - y)
            if dxy == 0.0:
                break
            Fy = op(y)
        x = proj(x - gamma * Fy)
        if gamma * np.linalg.norm(Fx - Fy) < 0.5 * nu * dxy:
            gamma *= 1.5
    return x, params.max_iter, False


def _subgradient(op, proj, x, params):
    c = params.step_scale or (1.0 / op.strong_monotonicity if op.strong_monotonicity else 1.0)
    best, best_r = x, math.inf
    for k in range(1, params.max_iter + 1):
        g = op(x)
        r = np.linalg.norm(x - proj(x - g))
        if r < best_r:
            best, best_r = x, r
        if r <= params.subgradient_tol:
            return x, k, True
        x = proj(x - (c / k) * g)
    return best, params.max_iter, False


def _conic(op, X, x, params, tol):
    if not op.is_affine:
        raise ValueError("the conic method needs an affine operator")
    A, b = op.matrix, op.offset
    S = 0.5 * (A + A.T)
    K = A - S
    nK = np.linalg.norm(K, 2) if A.size else 0.0
    if nK <= 1e-12 * max(np.abs(A).max(initial=0.0), 1e-300):
        return conic.solve_qp(S, b, X), 1, True
    # x+ solves the symmetric VI  G x + (A - G) x_k + b, contraction for large rho
    lam = np.linalg.eigvalsh(S).min()
    if lam <= 0:
        raise ValueError("non-symmetric conic splitting needs a positive definite symmetric part")
    rho = max(0.0, (nK ** 2 - lam ** 2) / (2 * lam)) * 1.01 + 1e-12
    G = S + rho * np.eye(len(b))
    if x is None:
        x = conic.solve_qp(np.eye(len(b)), np.zeros(len(b)), X)
    for k in range(1, min(params.max_iter, 10_000) + 1):
        y = conic.solve_qp(G, (A - G) @ x + b, X)
        if np.linalg.norm(y - x) <= tol * 1e-2:
            return y, k, True
        x = y
    return x, k, False


def _start(problem, X, proj, params):
    if params.x0 is not None:
        x0 = np.asarray(params.x0, dtype=float)
        if x0.shape != (problem.dim,):
            raise DimensionMismatchError(f"starting point of shape {x0.shape}")
        return proj(x0)
    return proj(np.zeros(problem.dim))


def solve_vi(problem: ScenarioVIProblem, params: SolverParams | None = None, anchor=None) -> Solution:
    """Solve the VI over the sampled feasible set.

    Budget exhaustion returns the best iterate with ``converged=False``; an
    empty feasible set raises :class:`InfeasibleSetError`.
    """
    params = params or SolverParams()
    if problem.mode == "QVI":
        if anchor is None:
            raise ValueError("use solve_qvi for QVI problems")
        problem = problem.anchored(anchor)
    op = problem.operator
    X = problem.feasible_set()
    proj = _projector(X, params.proj_tol)
    method = _pick_method(op, params.method, X)
    if method == "conic":
        x = None if params.x0 is None else np.asarray(params.x0, dtype=float)
        try:
            x, it, ok = _conic(op, X, x, params, params.tol)
        except NotConvergedError:
            it, ok = 0, False
            if x is None:
                x = _start(problem, X, proj, params)
        tol = params.tol * max(1.0, float(np.linalg.norm(op(x))))
        return _finish(x, op, X, proj, params, it, method, tol, ok)
    x = _start(problem, X, proj, params)
    if method == "projection":
        if op.strong_monotonicity is None or op.lipschitz is None:
            raise ValueError("projection method needs declared strong monotonicity and Lipschitz constants")
        x, it, ok = _projection(op, proj, x, params)
        tol = params.tol
    elif method == "extragradient":
        x, it, ok = _extragradient(op, proj, x, params)
        tol = params.tol
    elif method == "subgradient":
        x, it, ok = _subgradient(op, proj, x, params)
        tol = params.subgradient_tol
    else:
        raise ValueError(f"unknown method {method!r}")
    return _finish(x, op, X, proj, params, it, method, tol, ok)


def solve_qvi(problem: ScenarioVIProblem, params: SolverParams | None = None) -> Solution:
    """Damped anchored fixed point ``x <- x + d (S(x) - x)`` where ``S(x)``
    solves the VI over ``X(x)``.

    The damping ``d`` is halved whenever the fixed-point gap grows. If the
    problem carries an ``initializer`` and the first outer step from the
    given start does not close the gap, the loop restarts from the
    initializer's point.
    """
    params = params or SolverParams()
    if problem.mode == "VI":
        return solve_vi(problem, params)
    inner = replace(params, x0=None, check_residual=False)
    if params.x0 is not None:
        x = np.asarray(params.x0, dtype=float)
        seeded = False
    elif problem.initializer is not None:
        x = np.asarray(problem.initializer(problem), dtype=float)
        seeded = True
    else:
        x = np.zeros(problem.dim)
        seeded = False
    damping = params.qvi_damping
    prev_gap = math.inf
    total = 0
    inner_ok = True
    for outer in range(1, params.qvi_max_outer + 1):
        sol = solve_vi(problem, replace(inner, x0=x), anchor=x)
        total += sol.iterations
        inner_ok = sol.converged
        z = sol.x_star
        gap = float(np.linalg.norm(z - x))
        if gap <= params.qvi_tol:
            r = natural_residual(z, problem) if params.check_residual else math.nan
            ok = inner_ok and not r > max(params.tol, params.qvi_tol)
            return Solution(z, r, total, sol.feasibility_violation, bool(ok), f"qvi/{sol.method}")
        if not seeded and problem.initializer is not None:
            x = np.asarray(problem.initializer(problem), dtype=float)
            seeded = True
            prev_gap = math.inf
            continue
        if gap > prev_gap:
            damping *= 0.5
        x = x + damping * (z - x)
        prev_gap = gap
    X = problem.feasible_set(x)
    return Solution(x, natural_residual(x, problem), total, X.violation(x), False,
                    f"qvi/{_pick_method(problem.operator, params.method)}")


def estimate_strong_monotonicity(operator: OperatorOracle, sampler: Callable[[np.random.Generator], np.ndarray],
                                 pairs: int = 1000, seed: int = 0) -> float:
    """Minimum of ``(F(x)-F(y)).(x-y) / |x-y|^2`` over sampled pairs.

    Diagnostic only: an upper estimate of the true modulus.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    best = math.inf
    for _ in range(pairs):
        x = np.asarray(sampler(rng), dtype=float)
        y = np.asarray(sampler(rng), dtype=float)
        d = x - y
        nn = d @ d
        if nn <= 1e-28 * max(1.0, x @ x):
            continue
        best = min(best, float((operator(x) - operator(y)) @ d / nn))
    if best is math.inf:
        raise DegeneratePairsError("all sampled pairs coincide")
    return best


__all__ = [
    "OperatorOracle",
    "ScenarioVIProblem",
    "Solution",
    "SolverParams",
    "estimate_strong_monotonicity",
    "natural_residual",
    "solve_qvi",
    "solve_vi",
]
