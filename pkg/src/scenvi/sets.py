"""Scenario constraint sets.

A :class:`ConvexSet` is a finite list of scalar convex constraints
``g(x) <= 0``. Four constraint families are supported: halfspaces, boxes,
convex quadratics and epigraphs of user-supplied convex functions. Each
constraint may act on a subset of coordinates (``idx``), which is how product
sets are embedded without densifying anything.

Projection onto an intersection uses, in order of preference, a closed form
(single constraint), an exact polyhedral solve (all constraints affine), or
Dykstra's alternating projections with the affine part grouped into one
polyhedral block.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize, nnls

from .errors import DimensionMismatchError, InfeasibleSetError, InvalidSetError

PROJ_TOL = 1e-9
MAX_SWEEPS = 10_000
PSD_FLOOR = -1e-8


def _as_vec(x, name="point") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a 1-D vector, got shape {v.shape}")
    return v


def _index(idx, dim: int) -> np.ndarray | None:
    if idx is None:
        return None
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or len(idx) != dim:
        raise DimensionMismatchError(f"index of length {len(idx)} for a {dim}-dimensional constraint")
    if len(np.unique(idx)) != len(idx):
        raise InvalidSetError("constraint index contains repeated coordinates")
    return idx


class Constraint:
    """Base class: ``g(x[idx]) <= 0`` where ``idx`` defaults to all coordinates."""

    dim: int
    idx: np.ndarray | None
    is_affine = False

    def _sub(self, x: np.ndarray) -> np.ndarray:
        return x if self.idx is None else x[self.idx]

    def _put(self, x: np.ndarray, sub: np.ndarray) -> np.ndarray:
        if self.idx is None:
            return sub
        out = x.copy()
        out[self.idx] = sub
        return out

    def value(self, x: np.ndarray) -> float:
        return self._value(self._sub(x))

    def project(self, x: np.ndarray) -> np.ndarray:
        return self._put(x, self._project(self._sub(x)))

    def shifted(self, offset: int) -> "Constraint":
        """Copy acting on coordinates ``offset + idx`` of a larger vector."""
        base = np.arange(self.dim) if self.idx is None else self.idx
        return self._with_idx(base + offset)

    def _value(self, z):  # pragma: no cover - abstract
        raise NotImplementedError

    def _project(self, z):  # pragma: no cover - abstract
        raise NotImplementedError

    def _with_idx(self, idx):  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Halfspace(Constraint):
    """``a . x <= b``."""

    a: np.ndarray
    b: float
    idx: np.ndarray | None = None
    is_affine = True

    def __post_init__(self):
        a = _as_vec(self.a, "a")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "idx", _index(self.idx, len(a)))

    @property
    def dim(self) -> int:
        return len(self.a)

    def _value(self, z):
        return float(self.a @ z - self.b)

    def _project(self, z):
        r = self.a @ z - self.b
        nrm2 = self.a @ self.a
        if r <= 0.0:
            return z.copy()
        if nrm2 == 0.0:
            raise InfeasibleSetError(f"empty halfspace 0 <= {self.b}")
        return z - (r / nrm2) * self.a

    def _with_idx(self, idx):
        return Halfspace(self.a, self.b, idx)


@dataclass(frozen=True, eq=False)
class Box(Constraint):
    """``lower <= x <= upper`` (infinite bounds allowed)."""

    lower: np.ndarray
    upper: np.ndarray
    idx: np.ndarray | None = None
    is_affine = True

    def __post_init__(self):
        lo, up = _as_vec(self.lower, "lower"), _as_vec(self.upper, "upper")
        if lo.shape != up.shape:
            raise DimensionMismatchError("box bounds have different lengths")
        if np.any(lo > up):
            raise InvalidSetError("box bounds must satisfy lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "idx", _index(self.idx, len(lo)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def _value(self, z):
        if len(z) == 0:
            return -np.inf
        return float(np.maximum(self.lower - z, z - self.upper).max())

    def _project(self, z):
        return np.clip(z, self.lower, self.upper)

    def _with_idx(self, idx):
        return Box(self.lower, self.upper, idx)

    def halfspace_rows(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Finite bounds as ``(local_index, sign, rhs)`` rows ``sign*z_i <= rhs``."""
        up = np.flatnonzero(np.isfinite(self.upper))
        lo = np.flatnonzero(np.isfinite(self.lower))
        loc = np.concatenate([up, lo])
        sign = np.concatenate([np.ones(len(up)), -np.ones(len(lo))])
        rhs = np.concatenate([self.upper[up], -self.lower[lo]])
        return loc, sign, rhs


@dataclass(frozen=True, eq=False)
class Quadratic(Constraint):
    """``0.5 x.Q x + c.x <= b`` with ``Q`` positive semidefinite."""

    Q: np.ndarray
    c: np.ndarray
    b: float
    idx: np.ndarray | None = None

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        c = _as_vec(self.c, "c")
        if Q.shape != (len(c), len(c)):
            raise DimensionMismatchError(f"Q has shape {Q.shape} but c has length {len(c)}")
        Q = 0.5 * (Q + Q.T)
        if len(c) and np.linalg.eigvalsh(Q).min() < PSD_FLOOR:
            raise InvalidSetError("quadratic constraint matrix is not positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "idx", _index(self.idx, len(c)))

    @property
    def dim(self) -> int:
        return len(self.c)

    @functools.cached_property
    def _eig(self):
        lam, V = np.linalg.eigh(self.Q)
        return np.clip(lam, 0.0, None), V

    @functools.cached_property
    def factor(self) -> np.ndarray:
        """``L`` with ``Q = L L^T`` (columns for the positive eigenvalues only)."""
        lam, V = self._eig
        keep = lam > 1e-12 * max(lam.max(initial=0.0), 1e-300)
        return V[:, keep] * np.sqrt(lam[keep])

    def _value(self, z):
        return float(0.5 * z @ self.Q @ z + self.c @ z - self.b)

    def _project(self, z):
        if self._value(z) <= 0.0:
            return z.copy()
        lam, V = self._eig
        zh, ch = V.T @ z, V.T @ self.c

        def point(mu):
            return (zh - mu * ch) / (1.0 + mu * lam)

        def g(mu):
            y = point(mu)
            return 0.5 * (lam * y) @ y + ch @ y - self.b

        hi = 1.0
        while g(hi) > 0.0:
            hi *= 4.0
            if hi > 1e30:
                if g(hi) <= PROJ_TOL:
                    return V @ point(hi)
                raise InfeasibleSetError("quadratic constraint set is empty")
        mu = brentq(g, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        return V @ point(mu)

    @classmethod
    def trusted(cls, Q, c, b, idx=None) -> "Quadratic":
        """Construct without the symmetry/PSD check (caller guarantees both)."""
        q = cls.__new__(cls)
        object.__setattr__(q, "Q", Q)
        object.__setattr__(q, "c", c)
        object.__setattr__(q, "b", float(b))
        object.__setattr__(q, "idx", None if idx is None else np.asarray(idx, dtype=np.intp))
        return q

    def _with_idx(self, idx):
        return Quadratic.trusted(self.Q, self.c, self.b, _index(idx, self.dim))


@dataclass(frozen=True, eq=False)
class Epigraph(Constraint):
    """``h(x) - x[t_index] <= 0`` for a convex oracle ``h``.

    ``h`` receives the full local vector and must not depend on the level
    coordinate. ``grad`` returns a (sub)gradient of ``h``.
    """

    h: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    dim_: int
    t_index: int
    idx: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.t_index < self.dim_:
            raise DimensionMismatchError("level coordinate outside the constraint dimension")
        object.__setattr__(self, "idx", _index(self.idx, self.dim_))

    @property
    def dim(self) -> int:
        return self.dim_

    def _value(self, z):
        return float(self.h(z) - z[self.t_index])

    def _project(self, z):
        if self._value(z) <= 0.0:
            return z.copy()
        e = np.zeros(self.dim_)
        e[self.t_index] = 1.0
        z0 = z.copy()
        z0[self.t_index] = self.h(z)
        res = minimize(
            lambda y: 0.5 * (y - z) @ (y - z),
            z0,
            jac=lambda y: y - z,
            constraints=[{
                "type": "ineq",
                "fun": lambda y: y[self.t_index] - self.h(y),
                "jac": lambda y: e - np.asarray(self.grad(y), dtype=float),
            }],
            method="SLSQP",
            options={"ftol": 1e-15, "maxiter": 500},
        )
        y = res.x
        # the level coordinate can always restore feasibility
        y[self.t_index] = max(y[self.t_index], self.h(y))
        return y

    def _with_idx(self, idx):
        return Epigraph(self.h, self.grad, self.dim_, self.t_index, idx)


# --------------------------------------------------------------------------
# polyhedral projection


def _affine_rows(constraints: Sequence[Constraint], dim: int):
    rows, rhs = [], []
    for c in constraints:
        if isinstance(c, Halfspace):
            a = np.zeros(dim)
            if c.idx is None:
                a[:] = c.a
            else:
                a[c.idx] = c.a
            rows.append(a)
            rhs.append(c.b)
        else:
            loc, sign, r = c.halfspace_rows()
            glob = loc if c.idx is None else c.idx[loc]
            for i, s, v in zip(glob, sign, r):
                a = np.zeros(dim)
                a[i] = s
                rows.append(a)
                rhs.append(v)
    if not rows:
        return np.zeros((0, dim)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def _box_halfspace(box: Box, hs: Halfspace, x: np.ndarray) -> np.ndarray:
    """Exact projection onto ``{l <= x <= u, a.x <= b}`` (both on all coordinates)."""
    l, u, a, b = box.lower, box.upper, hs.a, hs.b
    y0 = np.clip(x, l, u)
    if a @ y0 <= b:
        return y0
    # y(mu) = clip(x - mu a); phi(mu) = a.y(mu) - b is nonincreasing, piecewise linear
    nz = a != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        k1 = np.where(nz, (x - l) / a, np.inf)
        k2 = np.where(nz, (x - u) / a, np.inf)
    kinks = np.concatenate([k1[np.isfinite(k1)], k2[np.isfinite(k2)]])
    kinks = np.unique(kinks[kinks > 0.0])

    def phi(mu):
        return a @ np.clip(x - mu * a, l, u) - b

    lo_mu, lo_val = 0.0, phi(0.0)
    for mu in kinks:
        val = phi(mu)
        if val <= 0.0:
            # linear on [lo_mu, mu]
            t = lo_val / (lo_val - val) if lo_val != val else 1.0
            m = lo_mu + t * (mu - lo_mu)
            return np.clip(x - m * a, l, u)
        lo_mu, lo_val = mu, val
    # beyond the last kink phi is linear with slope -(a_free . a_free)
    free = nz & np.isinf(np.where(a > 0, l, u))
    slope = a[free] @ a[free]
    if slope <= 0.0:
        raise InfeasibleSetError("box and halfspace do not intersect")
    m = lo_mu + lo_val / slope
    return np.clip(x - m * a, l, u)


def project_polyhedron(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``{y : A y <= b}``.

    Solved as a least-distance program through nonnegative least squares
    (an active-set method), then polished on the detected active set.
    """
    r = A @ x - b
    if len(r) == 0 or r.max() <= 0.0:
        return x.copy()
    scale = np.linalg.norm(A, axis=1)
    scale[scale == 0.0] = 1.0
    An, bn = A / scale[:, None], b / scale
    rn = An @ x - bn
    n = len(x)
    E = np.vstack([-An.T, rn[None, :]])
    f = np.zeros(n + 1)
    f[-1] = 1.0
    u, _ = nnls(E, f, maxiter=50 * E.shape[1] + 100)
    res = E @ u - f
    if abs(res[-1]) < 1e-14:
        raise InfeasibleSetError("polyhedron is empty")
    y = x - res[:n] / res[-1]
    viol = max((An @ y - bn).max(), 0.0)
    # polish on the active set
    act = np.flatnonzero(u > 0.0)
    if len(act):
        As = An[act]
        lam = np.linalg.lstsq(As @ As.T, As @ x - bn[act], rcond=None)[0]
        yp = x - As.T @ lam
        vp = max((An @ yp - bn).max(), 0.0)
        if lam.min() >= -1e-12 and vp <= max(viol, 1e-13):
            y, viol = yp, vp
    if viol > 1e-6 * max(1.0, np.abs(bn).max()):
        raise InfeasibleSetError(f"polyhedral projection left residual {viol:.3g}")
    return y


# --------------------------------------------------------------------------
# sets


@dataclass(frozen=True, eq=False)
class ConvexSet:
    """Intersection of scalar convex constraints in ``R^dim``."""

    dim: int
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            if c.idx is None and c.dim != self.dim:
                raise DimensionMismatchError(
                    f"{type(c).__name__} of dimension {c.dim} in a {self.dim}-dimensional set")
            if c.idx is not None and len(c.idx) and (c.idx.max() >= self.dim or c.idx.min() < 0):
                raise DimensionMismatchError("constraint index outside the set dimension")

    @property
    def is_affine(self) -> bool:
        return all(c.is_affine for c in self.constraints)

    def _check(self, point) -> np.ndarray:
        x = _as_vec(point)
        if len(x) != self.dim:
            raise DimensionMismatchError(f"point of dimension {len(x)} for a {self.dim}-dimensional set")
        return x

    def values(self, point) -> np.ndarray:
        x = self._check(point)
        return np.array([c.value(x) for c in self.constraints])

    def violation(self, point) -> float:
        x = self._check(point)
        worst = 0.0
        for c in self.constraints:
            worst = max(worst, c.value(x))
        return float(worst)

    def contains(self, point, tol: float = PROJ_TOL) -> bool:
        return self.violation(point) <= tol

    def flatten(self) -> "ConvexSet":
        return self

    def project(self, point, tol: float = PROJ_TOL, max_sweeps: int = MAX_SWEEPS,
                method: str = "auto") -> np.ndarray:
        x = self._check(point)
        cons = self.constraints
        if method == "conic":
            from .conic import project_conic
            return project_conic(self, x)
        if not cons:
            return x.copy()
        if len(cons) == 1:
            return cons[0].project(x)
        if self.is_affine:
            boxes = [c for c in cons if isinstance(c, Box) and c.idx is None]
            hs = [c for c in cons if isinstance(c, Halfspace) and c.idx is None]
            if len(cons) == 2 and len(boxes) == 1 and len(hs) == 1:
                return _box_halfspace(boxes[0], hs[0], x)
            if all(isinstance(c, Box) for c in cons):
                y = x.copy()
                lo, up = np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
                for c in cons:
                    ix = np.arange(c.dim) if c.idx is None else c.idx
                    lo[ix] = np.maximum(lo[ix], c.lower)
                    up[ix] = np.minimum(up[ix], c.upper)
                if np.any(lo > up):
                    raise InfeasibleSetError("boxes do not intersect")
                return np.clip(y, lo, up)
            A, b = _affine_rows(cons, self.dim)
            return project_polyhedron(A, b, x)
        return self._dykstra(x, tol, max_sweeps)

    def _dykstra(self, x, tol, max_sweeps):
        affine = [c for c in self.constraints if c.is_affine]
        blocks: list[Callable[[np.ndarray], np.ndarray]] = []
        if affine:
            sub = ConvexSet(self.dim, affine)
            blocks.append(lambda z, s=sub: s.project(z))
        blocks.extend(c.project for c in self.constraints if not c.is_affine)
        y = x.copy()
        incr = [np.zeros_like(x) for _ in blocks]
        for _ in range(max_sweeps):
            y_prev = y
            for i, proj in enumerate(blocks):
                z = y + incr[i]
                y = proj(z)
                incr[i] = z - y
            if np.linalg.norm(y - y_prev) <= tol and self.violation(y) <= tol:
                return y
        raise InfeasibleSetError(
            f"Dykstra did not converge in {max_sweeps} sweeps; the intersection is likely empty")


@dataclass(frozen=True, eq=False)
class ProductSet:
    """Cartesian product of sets acting on consecutive coordinate blocks."""

    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def block_dims(self) -> tuple[int, ...]:
        return tuple(b.dim for b in self.blocks)

    @property
    def dim(self) -> int:
        return sum(self.block_dims)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_dims)])

    @property
    def constraints(self) -> tuple[Constraint, ...]:
        return self.flatten().constraints

    @property
    def is_affine(self) -> bool:
        return all(b.is_affine for b in self.blocks)

    def _check(self, point) -> np.ndarray:
        x = _as_vec(point)
        if len(x) != self.dim:
            raise DimensionMismatchError(f"point of dimension {len(x)} for a {self.dim}-dimensional set")
        return x

    def _split(self, x):
        o = self.offsets
        return [x[o[i]:o[i + 1]] for i in range(len(self.blocks))]

    def violation(self, point) -> float:
        x = self._check(point)
        return max([b.violation(p) for b, p in zip(self.blocks, self._split(x))], default=0.0)

    def contains(self, point, tol: float = PROJ_TOL) -> bool:
        return self.violation(point) <= tol

    def values(self, point) -> np.ndarray:
        x = self._check(point)
        parts = [b.values(p) for b, p in zip(self.blocks, self._split(x))]
        return np.concatenate(parts) if parts else np.zeros(0)

    def project(self, point, tol: float = PROJ_TOL, max_sweeps: int = MAX_SWEEPS,
                method: str = "auto") -> np.ndarray:
        x = self._check(point)
        return np.concatenate([b.project(p, tol, max_sweeps, method)
                               for b, p in zip(self.blocks, self._split(x))])

    @functools.cached_property
    def _flat(self) -> ConvexSet:
        cons = []
        for off, b in zip(self.offsets, self.blocks):
            cons.extend(c.shifted(int(off)) for c in b.flatten().constraints)
        return ConvexSet(self.dim, cons)

    def flatten(self) -> ConvexSet:
        return self._flat


@dataclass(frozen=True, eq=False)
class ParametrizedSet:
    """Set-valued map ``anchor -> ConvexSet`` (QVI feasible sets)."""

    dim: int
    builder: Callable[[np.ndarray], "ConvexSet | ProductSet"]

    def at(self, anchor) -> "ConvexSet | ProductSet":
        s = self.builder(np.asarray(anchor, dtype=float))
        if s.dim != self.dim:
            raise DimensionMismatchError(f"builder produced a {s.dim}-dimensional set, expected {self.dim}")
        return s


def intersect(sets: Iterable, dim: int | None = None):
    """Intersection of sets of equal dimension.

    Product sets with identical block structure are intersected blockwise,
    which keeps projections separable.
    """
    sets = list(sets)
    if not sets:
        if dim is None:
            raise DimensionMismatchError("dimension required for an empty intersection")
        return ConvexSet(dim)
    d = sets[0].dim if dim is None else dim
    for s in sets:
        if s.dim != d:
            raise DimensionMismatchError(f"cannot intersect sets of dimensions {s.dim} and {d}")
    if len(sets) == 1:
        return sets[0]
    if all(isinstance(s, ProductSet) for s in sets):
        dims = sets[0].block_dims
        if all(s.block_dims == dims for s in sets):
            return ProductSet(tuple(intersect([s.blocks[i] for s in sets]) for i in range(len(dims))))
    cons = []
    for s in sets:
        cons.extend(s.flatten().constraints)
    return ConvexSet(d, cons)


def contains(s, point, tol: float = PROJ_TOL) -> bool:
    return s.contains(point, tol)


def violation(s, point) -> float:
    return s.violation(point)


def project(s, point, tol: float = PROJ_TOL) -> np.ndarray:
    return s.project(point, tol)


__all__ = [
    "Box",
    "Constraint",
    "ConvexSet",
    "Epigraph",
    "Halfspace",
    "PROJ_TOL",
    "ParametrizedSet",
    "ProductSet",
    "Quadratic",
    "contains",
    "intersect",
    "project",
    "project_polyhedron",
    "violation",
]
