"""Games with sampled uncertainty as (quasi-)variational inequalities.

Two uncertainty modes:

* ``constraints``: each agent's feasible set depends on the sample, costs do
  not. The Nash equilibrium over the intersection of sampled product sets
  solves the VI with the stacked own-gradient operator.
* ``costs``: each agent's cost depends on the sample, sets do not. A sampled
  robust equilibrium is a Nash equilibrium of the worst-case costs
  ``J_max^j(x) = max_i J^j(x; d_i)``.

Games with the affine-quadratic structure

    J^j(x; d) = 0.5 x^j.A_jj x^j + x^j.sum_{k != j} A_jk x^k + (b_j + R_j d).x^j

get exact conic routes; arbitrary cost oracles fall back to subgradient steps
and generic epigraph constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, EmptySamplesError, MissingGradientError
from .sets import ConvexSet, Epigraph, Halfspace, ParametrizedSet, ProductSet, Quadratic
from .solver import OperatorOracle, ScenarioVIProblem, Solution, SolverParams, solve_vi

TIE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class QuadraticModel:
    A: np.ndarray              # n x n, block (j, k) couples agent j's cost to x^k
    b: np.ndarray              # n
    R: tuple | None = None     # per agent: m_j x p, maps a sample to an own linear term


@dataclass(frozen=True, eq=False)
class GameSpec:
    dims: tuple
    cost: Callable[[int, np.ndarray, object], float]
    cost_grad: Callable[[int, np.ndarray, object], np.ndarray] | None
    local_sets: tuple
    uncertainty_mode: str = "costs"
    quadratic: QuadraticModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(m) for m in self.dims))
        object.__setattr__(self, "local_sets", tuple(self.local_sets))
        if not self.dims:
            raise ValueError("a game needs at least one agent")
        if self.uncertainty_mode not in ("constraints", "costs"):
            raise ValueError(f"unknown uncertainty mode {self.uncertainty_mode!r}")
        if len(self.local_sets) != self.M:
            raise DimensionMismatchError(f"{len(self.local_sets)} local sets for {self.M} agents")
        for j, s in enumerate(self.local_sets):
            if isinstance(s, (ConvexSet, ProductSet)) and s.dim != self.dims[j]:
                raise DimensionMismatchError(f"local set of agent {j} has dimension {s.dim}, expected {self.dims[j]}")

    @property
    def M(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    def own(self, x: np.ndarray, j: int) -> np.ndarray:
        o = self.offsets
        return x[o[j]:o[j + 1]]

    def with_own(self, x: np.ndarray, j: int, xj: np.ndarray) -> np.ndarray:
        o = self.offsets
        y = np.array(x, dtype=float)
        y[o[j]:o[j + 1]] = xj
        return y

    def local_set(self, j: int, delta=None):
        s = self.local_sets[j]
        return s(delta) if callable(s) and not isinstance(s, (ConvexSet, ProductSet)) else s

    def own_grad(self, j: int, x: np.ndarray, delta=None) -> np.ndarray:
        if self.quadratic is not None:
            q, o = self.quadratic, self.offsets
            g = q.A[o[j]:o[j + 1]] @ x + q.b[o[j]:o[j + 1]]
            if q.R is not None and delta is not None:
                g = g + q.R[j] @ np.atleast_1d(np.asarray(delta, dtype=float))
            return g
        if self.cost_grad is None:
            raise MissingGradientError(f"no gradient oracle for agent {j}")
        g = np.asarray(self.cost_grad(j, x, delta), dtype=float)
        if g.shape != (self.dims[j],):
            raise DimensionMismatchError(f"gradient of agent {j} has shape {g.shape}")
        return g


def affine_quadratic_game(dims: Sequence[int], A, b=None, R=None, local_sets=None,
                          uncertainty_mode: str = "costs") -> GameSpec:
    """Game with costs ``0.5 x^j.A_jj x^j + x^j.sum_k A_jk x^k + (b_j + R_j d).x^j``."""
    dims = tuple(int(m) for m in dims)
    n = sum(dims)
    A = np.asarray(A, dtype=float)
    if A.shape != (n, n):
        raise DimensionMismatchError(f"game matrix of shape {A.shape}, expected ({n}, {n})")
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    if R is not None:
        R = tuple(np.atleast_2d(np.asarray(r, dtype=float)) for r in R)
        for j, r in enumerate(R):
            if r.shape[0] != dims[j]:
                raise DimensionMismatchError(f"R_{j} has {r.shape[0]} rows, agent dimension is {dims[j]}")
    model = QuadraticModel(A, b, R)
    o = np.concatenate([[0], np.cumsum(dims)]).astype(int)

    def cost(j, x, delta=None):
        xj = x[o[j]:o[j + 1]]
        Ajj = A[o[j]:o[j + 1], o[j]:o[j + 1]]
        row = A[o[j]:o[j + 1]] @ x - Ajj @ xj
        lin = b[o[j]:o[j + 1]]
        if R is not None and delta is not None:
            lin = lin + R[j] @ np.atleast_1d(np.asarray(delta, dtype=float))
        return float(0.5 * xj @ Ajj @ xj + xj @ row + lin @ xj)

    if local_sets is None:
        local_sets = tuple(ConvexSet(m) for m in dims)
    return GameSpec(dims, cost, None, tuple(local_sets), uncertainty_mode, model)


def cartesian(sets) -> ProductSet:
    return ProductSet(tuple(sets))


def _stacked_operator(game: GameSpec, delta=None) -> OperatorOracle:
    if game.quadratic is not None:
        A, b = game.quadratic.A, game.quadratic.b
        if delta is not None and game.quadratic.R is not None:
            b = b + np.concatenate([r @ np.atleast_1d(np.asarray(delta, float)) for r in game.quadratic.R])
        return OperatorOracle.affine(A, b)
    if game.cost_grad is None:
        raise MissingGradientError("the game has no gradient oracle")
    return OperatorOracle(game.n, lambda x: np.concatenate([game.own_grad(j, x, delta) for j in range(game.M)]))


def assemble_nash_vi(game: GameSpec, samples: Sequence) -> ScenarioVIProblem:
    """VI whose solution is the Nash equilibrium over all sampled product sets."""
    if game.uncertainty_mode != "constraints":
        raise ValueError("assemble_nash_vi needs a game with uncertain constraints")
    if len(samples) == 0:
        raise EmptySamplesError("no samples")
    scen = []
    for d in samples:
        blocks = [game.local_set(j, d) for j in range(game.M)]
        for j, s in enumerate(blocks):
            if s.dim != game.dims[j]:
                raise DimensionMismatchError(f"sampled set of agent {j} has dimension {s.dim}")
        scen.append(cartesian(blocks))
    return ScenarioVIProblem(_stacked_operator(game), tuple(scen))


# --------------------------------------------------------------------------
# worst-case costs


def _sample_matrix(samples) -> np.ndarray:
    """Samples as rows; a flat sequence is read as scalar samples."""
    S = np.asarray(samples, dtype=float)
    return S[:, None] if S.ndim == 1 else S


def _linear_terms(game: GameSpec, samples, j: int) -> np.ndarray:
    """Rows ``R_j d_i`` (N x m_j)."""
    return _sample_matrix(samples) @ game.quadratic.R[j].T


def cost_values(game: GameSpec, samples, x: np.ndarray, j: int) -> np.ndarray:
    """``J^j(x; d_i)`` for every sample."""
    if len(samples) == 0:
        raise EmptySamplesError("no samples")
    x = np.asarray(x, dtype=float)
    q = game.quadratic
    if q is not None and q.R is not None:
        return game.cost(j, x, None) + _linear_terms(game, samples, j) @ game.own(x, j)
    return np.array([game.cost(j, x, d) for d in samples])


def worst_case_cost(game: GameSpec, samples, x: np.ndarray, j: int) -> tuple[float, np.ndarray, int]:
    """``(J_max^j(x), own subgradient, argmax index)``; ties go to the lowest index."""
    vals = cost_values(game, samples, x, j)
    i = int(np.argmax(vals))
    return float(vals[i]), game.own_grad(j, np.asarray(x, dtype=float), samples[i]), i


@dataclass
class RobustEquilibrium:
    x_sr: np.ndarray
    t_sr: np.ndarray
    active_scenarios: list[int]
    route: str = ""
    solution: Solution | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "x_sr": [float(v) for v in self.x_sr],
            "t_sr": [float(v) for v in self.t_sr],
            "active_scenarios": list(self.active_scenarios),
            "route": self.route,
        }


def _local_constraints(game: GameSpec, j: int, width: int):
    """Agent ``j``'s deterministic constraints on the first ``m_j`` of ``width`` coordinates."""
    s = game.local_set(j)
    cons = s.flatten().constraints
    if width == game.dims[j]:
        return list(cons)
    return [c.shifted(0) for c in cons]


def build_sre_vi(game: GameSpec, samples, cost_scale: float | None = None) -> ScenarioVIProblem:
    """Augmented VI in ``(x, tau)`` equivalent to the set-valued operator VI.

    ``tau_j`` is a level for the uncertain part ``max_i (R_j d_i).x^j`` only;
    the operator is ``((A x + b)/c, 1_M)``. Requires the affine-quadratic
    structure.
    """
    q = game.quadratic
    if q is None or q.R is None:
        raise ValueError("build_sre_vi needs an affine-quadratic game with uncertain linear costs")
    if len(samples) == 0:
        raise EmptySamplesError("no samples")
    n, M, o = game.n, game.M, game.offsets
    lin = [_linear_terms(game, samples, j) for j in range(M)]
    cs = cost_scale or max(1.0, max(np.abs(v).max(initial=0.0) for v in lin))
    A = np.zeros((n + M, n + M))
    A[:n, :n] = q.A / cs
    off = np.concatenate([q.b / cs, np.ones(M)])
    op = OperatorOracle.affine(A, off)
    base = []
    for j in range(M):
        for c in game.local_set(j).flatten().constraints:
            base.append(c.shifted(int(o[j])))
    scen = []
    for i in range(len(samples)):
        cons = [Halfspace(np.append(lin[j][i] / cs, -1.0), 0.0,
                          np.append(np.arange(o[j], o[j + 1]), n + j)) for j in range(M)]
        scen.append(ConvexSet(n + M, cons))
    return ScenarioVIProblem(op, tuple(scen), base=ConvexSet(n + M, base))


def solve_sampled_robust_eq(game: GameSpec, samples, params: SolverParams | None = None,
                            route: str = "auto") -> RobustEquilibrium:
    """Sampled robust equilibrium.

    ``route="operator"`` solves the augmented VI of :func:`build_sre_vi` with
    the conic method (exact, affine-quadratic games only).
    ``route="subgradient"`` runs projected subgradient steps on the
    worst-case operator; it works for any cost oracle but converges slowly.
    """
    if game.uncertainty_mode != "costs":
        raise ValueError("robust equilibria need a game with uncertain costs")
    if len(samples) == 0:
        raise EmptySamplesError("no samples")
    if route == "auto":
        route = "operator" if game.quadratic is not None and game.quadratic.R is not None else "subgradient"
    params = params or SolverParams()
    if route == "operator":
        prob = build_sre_vi(game, samples)
        sol = solve_vi(prob, replace(params, method="conic", x0=None))
        x = sol.x_star[:game.n]
    elif route == "subgradient":
        X = cartesian([game.local_set(j) for j in range(game.M)])

        def sub(x):
            return np.concatenate([worst_case_cost(game, samples, x, j)[1] for j in range(game.M)])

        alpha = None
        if game.quadratic is not None:
            A = game.quadratic.A
            lam = np.linalg.eigvalsh(0.5 * (A + A.T)).min()
            alpha = float(lam) if lam > 0 else None
        op = OperatorOracle(game.n, None, sub, alpha)
        prob = ScenarioVIProblem(op, (X,))
        sol = solve_vi(prob, replace(params, method="subgradient"))
        x = sol.x_star
    else:
        raise ValueError(f"unknown route {route!r}")
    wc = [worst_case_cost(game, samples, x, j) for j in range(game.M)]
    return RobustEquilibrium(x, np.array([w[0] for w in wc]), [w[2] for w in wc], route, sol)


# --------------------------------------------------------------------------
# epigraph QVI


@dataclass(frozen=True, eq=False)
class EpigraphLayout:
    """Index bookkeeping for ``y = (x^1, t^1, ..., x^M, t^M)`` with ``t`` in units of ``cost_scale``."""

    dims: tuple
    cost_scale: float

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([m + 1 for m in self.dims])]).astype(int)

    @property
    def t_index(self) -> np.ndarray:
        return self.offsets[1:] - 1

    @property
    def x_index(self) -> np.ndarray:
        o = self.offsets
        return np.concatenate([np.arange(o[j], o[j + 1] - 1) for j in range(len(self.dims))])

    def split(self, y) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        return y[self.x_index], y[self.t_index] * self.cost_scale

    def join(self, x, t) -> np.ndarray:
        y = np.empty(sum(self.dims) + len(self.dims))
        y[self.x_index] = x
        y[self.t_index] = np.asarray(t, dtype=float) / self.cost_scale
        return y


def build_epigraph_qvi(game: GameSpec, samples, cost_scale: float | None = None,
                       initializer: bool = True) -> tuple[ScenarioVIProblem, EpigraphLayout]:
    """QVI in ``y = (x^j, t^j)_j`` with constant operator ``1_M (x) [0_m; 1]``.

    Scenario ``i`` maps an anchor ``y`` to the product over agents of
    ``{(x^j, t^j): J^j(x^j, anchor^-j; d_i) <= t^j}``. Its solution is
    ``(x_SR, J_max(x_SR))`` and its support count is at scenario granularity.
    With ``initializer`` the problem carries a warm start computed by the
    operator route on the same samples (affine-quadratic games only).
    """
    if game.uncertainty_mode != "costs":
        raise ValueError("the epigraph reformulation needs a game with uncertain costs")
    if len(samples) == 0:
        raise EmptySamplesError("no samples")
    samples = list(samples)
    M, n, o = game.M, game.n, game.offsets
    if cost_scale is None:
        ref = np.ones(n)
        cost_scale = max(1.0, max(np.abs(cost_values(game, samples, ref, j)).max() for j in range(M)))
    layout = EpigraphLayout(game.dims, float(cost_scale))
    cs = layout.cost_scale
    dim = n + M
    e = np.zeros(dim)
    e[layout.t_index] = 1.0
    op = OperatorOracle.constant(e)
    q = game.quadratic

    blocks = []
    for j in range(M):
        blocks.append(ConvexSet(game.dims[j] + 1, _local_constraints(game, j, game.dims[j] + 1)))
    base = ProductSet(tuple(blocks))

    if q is not None:
        Qs, rows = [], []
        for j in range(M):
            m = game.dims[j]
            Q = np.zeros((m + 1, m + 1))
            Ajj = q.A[o[j]:o[j + 1], o[j]:o[j + 1]]
            Q[:m, :m] = 0.5 * (Ajj + Ajj.T) / cs
            Qs.append(Q)
            rows.append(q.A[o[j]:o[j + 1]].copy())
        lin = [_linear_terms(game, samples, j) if q.R is not None else np.zeros((len(samples), game.dims[j]))
               for j in range(M)]

        def make(i):
            def builder(y):
                x = y[layout.x_index]
                blks = []
                for j in range(M):
                    xj = x[o[j]:o[j + 1]]
                    Ajj = q.A[o[j]:o[j + 1], o[j]:o[j + 1]]
                    cross = rows[j] @ x - Ajj @ xj
                    c = np.append((cross + q.b[o[j]:o[j + 1]] + lin[j][i]) / cs, -1.0)
                    blks.append(ConvexSet(game.dims[j] + 1, (Quadratic.trusted(Qs[j], c, 0.0),)))
                return ProductSet(tuple(blks))
            return builder
    else:
        def make(i):
            d = samples[i]

            def builder(y):
                x = y[layout.x_index]
                blks = []
                for j in range(M):
                    m = game.dims[j]

                    def h(z, j=j):
                        return game.cost(j, game.with_own(x, j, z[:m]), d) / cs

                    def g(z, j=j):
                        return np.append(game.own_grad(j, game.with_own(x, j, z[:m]), d) / cs, 0.0)

                    blks.append(ConvexSet(m + 1, (Epigraph(h, g, m + 1, m),)))
                return ProductSet(tuple(blks))
            return builder

    scen = tuple(ParametrizedSet(dim, make(i)) for i in range(len(samples)))

    def init(problem: ScenarioVIProblem) -> np.ndarray:
        sub = [samples[k] for k in problem.labels]
        if not sub:
            return np.zeros(dim)
        eq = solve_sampled_robust_eq(game, sub, route="operator")
        return layout.join(eq.x_sr, eq.t_sr)

    exact = initializer and q is not None and q.R is not None
    return ScenarioVIProblem(op, scen, "QVI", base, initializer=init if exact else None), layout


# --------------------------------------------------------------------------
# risk predicates


def agent_risk_spec(game: GameSpec, x: np.ndarray, j: int, samples=None, tol: float = 1e-9):
    """Predicate over a batch of samples (rows) for agent ``j``'s risk event.

    Costs mode: ``J^j(x; d) >= J_max^j(x)`` with the threshold frozen from
    ``samples`` and a relative slack of 1e-12. Constraints mode: ``x^j``
    outside the sampled local set.
    """
    x = np.asarray(x, dtype=float)
    if game.uncertainty_mode == "costs":
        if samples is None or len(samples) == 0:
            raise EmptySamplesError("the worst-case threshold needs the observed samples")
        thr = worst_case_cost(game, samples, x, j)[0]
        cut = thr - TIE_SLACK * max(1.0, abs(thr))

        def pred(batch):
            return cost_values(game, batch, x, j) >= cut

        pred.threshold = thr
        return pred
    xj = game.own(x, j)

    def pred(batch):
        return np.array([game.local_set(j, d).violation(xj) > tol for d in _sample_matrix(batch)])

    return pred


def aggregate_risk_spec(game: GameSpec, x: np.ndarray, t: np.ndarray):
    """``J^j(x; d) >= t^j`` for some agent: the new sample is not in ``Y_d(y)``."""
    x = np.asarray(x, dtype=float)
    cuts = [tj - TIE_SLACK * max(1.0, abs(tj)) for tj in t]

    def pred(batch):
        out = np.zeros(len(batch), dtype=bool)
        for j in range(game.M):
            out |= cost_values(game, batch, x, j) >= cuts[j]
        return out

    return pred


def deviation_check(game: GameSpec, samples, x: np.ndarray, j: int, trials: int = 50,
                    seed: int = 0, rel_tol: float = 1e-5) -> bool:
    """No sampled feasible unilateral deviation of agent ``j`` beats ``x`` by more than ``rel_tol``."""
    rng = np.random.Generator(np.random.Philox(seed))
    x = np.asarray(x, dtype=float)
    base = worst_case_cost(game, samples, x, j)[0]
    xj = game.own(x, j)
    X = game.local_set(j)
    spread = max(1.0, np.abs(xj).max(initial=0.0))
    for _ in range(trials):
        dev = X.project(xj + spread * rng.standard_normal(len(xj)))
        val = worst_case_cost(game, samples, game.with_own(x, j, dev), j)[0]
        if base > val + rel_tol * max(1.0, abs(base)):
            return False
    return True


__all__ = [
    "EpigraphLayout",
    "GameSpec",
    "QuadraticModel",
    "RobustEquilibrium",
    "affine_quadratic_game",
    "agent_risk_spec",
    "aggregate_risk_spec",
    "assemble_nash_vi",
    "build_epigraph_qvi",
    "build_sre_vi",
    "cartesian",
    "cost_values",
    "deviation_check",
    "solve_sampled_robust_eq",
    "worst_case_cost",
]
