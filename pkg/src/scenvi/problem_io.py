"""JSON descriptions of sets and problems for the command line.

Set::

    {"dim": 2, "constraints": [
        {"type": "halfspace", "a": [1, 0], "b": 1, "anchor_coef": [0.5, 0]},
        {"type": "box", "lower": [0, null], "upper": [1, 2]},
        {"type": "quadratic", "Q": [[2, 0], [0, 2]], "c": [0, 0], "b": 1}]}

or ``{"product": [set, ...]}``. ``null`` box bounds are infinite; ``idx``
restricts a constraint to some coordinates. ``anchor_coef`` makes a
halfspace anchor-dependent, ``a.x <= b + anchor_coef.anchor``, and turns the
problem into a QVI.

Problem::

    {"operator": {"type": "affine", "A": [[...]], "b": [...]}
               | {"type": "game", "cost_model": "affine_quadratic", "dims": [...], "A": ..., "b": ...}
               | {"type": "game", "cost_model": "demand_response", "M": 2, "T": 24, "alpha": 500},
     "scenarios": [set, ...], "base": set, "params": {...}}
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import ParseError, ScenviError
from .sets import Box, ConvexSet, Halfspace, ParametrizedSet, ProductSet, Quadratic
from .solver import OperatorOracle, ScenarioVIProblem, SolverParams

PARAM_KEYS = {"method", "tol", "subgradient_tol", "max_iter", "proj_tol", "step_scale",
              "qvi_damping", "qvi_max_outer", "qvi_tol"}


def _arr(v, name):
    try:
        return np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{name} is not numeric") from None


def _bounds(v, dim, fill):
    if v is None:
        return np.full(dim, fill)
    return np.array([fill if e is None else float(e) for e in v])


def _anchored(spec) -> bool:
    if "product" in spec:
        return any(_anchored(s) for s in spec["product"])
    return any("anchor_coef" in c for c in spec.get("constraints", []))


def _constraint(c: dict, dim: int, anchor=None):
    kind = c.get("type")
    idx = c.get("idx")
    if kind == "halfspace":
        b = float(c["b"])
        if "anchor_coef" in c and anchor is not None:
            b += float(_arr(c["anchor_coef"], "anchor_coef") @ anchor)
        return Halfspace(_arr(c["a"], "a"), b, idx)
    if kind == "box":
        m = len(idx) if idx is not None else dim
        return Box(_bounds(c.get("lower"), m, -np.inf), _bounds(c.get("upper"), m, np.inf), idx)
    if kind == "quadratic":
        return Quadratic(_arr(c["Q"], "Q"), _arr(c["c"], "c"), float(c["b"]), idx)
    raise ParseError(f"unknown constraint type {kind!r}")


def _build(spec: dict, anchor=None):
    if "product" in spec:
        blocks = []
        off = 0
        for s in spec["product"]:
            sub = None
            if anchor is not None:
                d = set_dim(s)
                sub = anchor[off:off + d]
                off += d
            blocks.append(_build(s, sub))
        return ProductSet(tuple(blocks))
    dim = int(spec["dim"])
    return ConvexSet(dim, tuple(_constraint(c, dim, anchor) for c in spec.get("constraints", [])))


def set_dim(spec: dict) -> int:
    if "product" in spec:
        return sum(set_dim(s) for s in spec["product"])
    return int(spec["dim"])


def parse_set(spec: dict, qvi: bool = False):
    """A :class:`ConvexSet`/:class:`ProductSet`, or a :class:`ParametrizedSet` when
    ``qvi`` is set and some halfspace carries ``anchor_coef``."""
    try:
        if qvi and _anchored(spec):
            return ParametrizedSet(set_dim(spec), lambda a, s=spec: _build(s, a))
        return _build(spec)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed set description: {exc!r}") from None


def parse_operator(spec: dict) -> OperatorOracle:
    kind = spec.get("type", "affine")
    try:
        if kind == "affine":
            op = OperatorOracle.affine(_arr(spec["A"], "A"), _arr(spec.get("b", 0.0), "b")
                                       if "b" in spec else None)
            if "strong_monotonicity" in spec or "lipschitz" in spec:
                op = replace(op, strong_monotonicity=spec.get("strong_monotonicity", op.strong_monotonicity),
                             lipschitz=spec.get("lipschitz", op.lipschitz))
            return op
        if kind == "game":
            model = spec.get("cost_model")
            if model == "affine_quadratic":
                A = _arr(spec["A"], "A")
                dims = [int(m) for m in spec["dims"]]
                if A.shape != (sum(dims), sum(dims)):
                    raise ParseError(f"game matrix of shape {A.shape} for dims {dims}")
                return OperatorOracle.affine(A, _arr(spec["b"], "b") if "b" in spec else None)
            if model == "demand_response":
                M, T = int(spec["M"]), int(spec["T"])
                alpha = _arr(spec.get("alpha", 500.0), "alpha")
                alpha = np.full(T, float(alpha)) if alpha.ndim == 0 else alpha
                return OperatorOracle.affine(np.kron(np.eye(M) + np.ones((M, M)), np.diag(alpha)))
            raise ParseError(f"unknown cost model {model!r}")
    except KeyError as exc:
        raise ParseError(f"operator description lacks {exc}") from None
    raise ParseError(f"unknown operator type {kind!r}")


def parse_problem(spec: dict, qvi: bool = False) -> tuple[ScenarioVIProblem, SolverParams]:
    if "operator" not in spec or "scenarios" not in spec:
        raise ParseError("a problem needs 'operator' and 'scenarios'")
    qvi = qvi or spec.get("mode") == "QVI"
    op = parse_operator(spec["operator"])
    scen = tuple(parse_set(s, qvi) for s in spec["scenarios"])
    if qvi:
        scen = tuple(s if isinstance(s, ParametrizedSet) else ParametrizedSet(s.dim, lambda a, s=s: s)
                     for s in scen)
    base = parse_set(spec["base"], qvi) if spec.get("base") is not None else None
    raw = spec.get("params", {})
    unknown = set(raw) - PARAM_KEYS
    if unknown:
        raise ParseError(f"unknown solver parameters {sorted(unknown)}")
    params = SolverParams(**raw)
    try:
        return ScenarioVIProblem(op, scen, "QVI" if qvi else "VI", base), params
    except ScenviError:
        raise
    except ValueError as exc:
        raise ParseError(str(exc)) from None


__all__ = ["parse_operator", "parse_problem", "parse_set", "set_dim"]
