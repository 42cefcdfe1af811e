"""Exact subproblem solves through a conic interior-point method (Clarabel).

Used for two things: projections onto sets with quadratic constraints when
Dykstra would be too slow, and variational inequalities whose operator has a
symmetric affine part, which are then convex quadratic programs over the set.

Quadratic constraints sharing the same matrix on the same coordinates are
merged: ``0.5 x.Q x + c_i.x <= b_i`` for all ``i`` becomes one cone
``0.5 x.Q x <= u`` plus linear rows ``u + c_i.x <= b_i``.
"""

from __future__ import annotations

import clarabel
import numpy as np
from scipy import sparse

from .errors import InfeasibleSetError, NotConvergedError
from .sets import Box, Halfspace, Quadratic

SOLVED = {"Solved", "AlmostSolved"}
ACTIVE_SET_ROUNDS = 8


def representable(s) -> bool:
    return all(isinstance(c, (Halfspace, Box, Quadratic)) for c in s.flatten().constraints)


class _Rows:
    def __init__(self):
        self.r, self.c, self.v, self.rhs = [], [], [], []
        self.n = 0

    def add(self, cols, vals, rhs):
        cols = np.asarray(cols)
        self.r.append(np.full(len(cols), self.n))
        self.c.append(cols)
        self.v.append(np.asarray(vals, dtype=float))
        self.rhs.append(rhs)
        self.n += 1


def _settings(tol: float):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = 400
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.tol_ktratio = 1e-8
    return s


def solve_qp(P, q: np.ndarray, s, tol: float = 1e-11, polish: bool = True) -> np.ndarray:
    """Minimize ``0.5 x.P x + q.x`` over the set ``s``.

    ``P`` must be symmetric positive semidefinite (dense or sparse).
    """
    n = len(q)
    lin = _Rows()
    groups: dict = {}
    for con in s.flatten().constraints:
        cols = np.arange(con.dim) if con.idx is None else con.idx
        if isinstance(con, Halfspace):
            nrm = np.linalg.norm(con.a)
            if nrm == 0.0:
                if con.b < 0.0:
                    raise InfeasibleSetError("empty halfspace in conic model")
                continue
            lin.add(cols, con.a / nrm, con.b / nrm)
        elif isinstance(con, Box):
            loc, sign, rhs = con.halfspace_rows()
            for i, sg, r in zip(loc, sign, rhs):
                lin.add([cols[i]], [sg], r)
        elif isinstance(con, Quadratic):
            key = (id(con.Q), cols.tobytes())
            if key not in groups:
                L = con.factor
                naux = sum(g is not None for g in groups.values())
                groups[key] = None if L.shape[1] == 0 else (n + naux, cols, L)
            if groups[key] is None:
                # Q = 0: the constraint is affine
                nrm = np.linalg.norm(con.c)
                if nrm == 0.0:
                    if con.b < 0.0:
                        raise InfeasibleSetError("empty quadratic constraint")
                    continue
                lin.add(cols, con.c / nrm, con.b / nrm)
                continue
            aux = groups[key][0]
            nrm = max(np.linalg.norm(con.c), 1.0)
            lin.add(np.append(cols, aux), np.append(con.c, 1.0) / nrm, con.b / nrm)
        else:
            raise TypeError(f"{type(con).__name__} constraints are not conic-representable")

    groups = {k: g for k, g in groups.items() if g is not None}
    nv = n + len(groups)
    rows, cols_, vals, rhs = [], [], [], []
    if lin.n:
        rows.append(np.concatenate(lin.r))
        cols_.append(np.concatenate(lin.c))
        vals.append(np.concatenate(lin.v))
        rhs.append(np.array(lin.rhs, dtype=float))
    m = lin.n
    cones = [clarabel.NonnegativeConeT(lin.n)] if lin.n else []
    for aux, cols, L in groups.values():
        k = L.shape[1]
        # (u + 1, u - 1, sqrt(2) L^T x) in the second-order cone  <=>  0.5|L^T x|^2 <= u
        rows.append(np.array([m, m + 1]))
        cols_.append(np.array([aux, aux]))
        vals.append(np.array([-1.0, -1.0]))
        rr, cc = np.meshgrid(np.arange(k), np.arange(len(cols)), indexing="ij")
        rows.append(m + 2 + rr.ravel())
        cols_.append(cols[cc.ravel()])
        vals.append(-np.sqrt(2.0) * L.T.ravel())
        rhs.append(np.concatenate([[1.0, -1.0], np.zeros(k)]))
        cones.append(clarabel.SecondOrderConeT(k + 2))
        m += k + 2
    if m == 0:
        A = sparse.csc_matrix((0, nv))
        b = np.zeros(0)
    else:
        A = sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols_))), shape=(m, nv))
        b = np.concatenate(rhs)

    P = sparse.csc_matrix(P) if sparse.issparse(P) else sparse.csc_matrix(np.asarray(P, dtype=float))
    scale = max(abs(P).max() if P.nnz else 0.0, np.abs(q).max(initial=0.0), 1e-300)
    Pf = sparse.block_diag([P / scale, sparse.csc_matrix((len(groups), len(groups)))], format="csc")
    Pfull = Pf
    Pf = sparse.triu(Pf, format="csc")
    qf = np.concatenate([q / scale, np.zeros(len(groups))])

    if m == 0:
        if abs(Pf).max(initial=0.0) == 0.0 if Pf.nnz else True:
            if np.any(qf != 0.0):
                raise NotConvergedError("unbounded linear objective over the whole space")
            return np.zeros(n)
    sol = clarabel.DefaultSolver(Pf, qf, A, b, cones, _settings(tol)).solve()
    status = str(sol.status)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        raise InfeasibleSetError("conic model reports an empty feasible set")
    if status not in SOLVED:
        raise NotConvergedError(f"conic solve ended with status {status}")
    v = np.asarray(sol.x, dtype=float)
    if lin.n and polish:
        Al = A[:lin.n].toarray()
        Qg = {aux: L @ L.T for aux, _, L in groups.values()}
        cg = {aux: cols for aux, cols, _ in groups.values()}
        x = _polish(Pfull[:n, :n].toarray(), qf[:n], Al, b[:lin.n], np.asarray(sol.z[:lin.n]), Qg, cg, v, n)
        if x is not None:
            return x
    return v[:n]


def _polish(P, q, Al, bl, z, Qg, cg, v, n, iters=30):
    """Newton steps on the KKT system of the constraints the interior-point
    duals mark active, with each merged quadratic level ``u`` replaced by its
    exact value. A negative multiplier drops its row and a violated row is
    added, for a few rounds. Returns ``None`` unless the final point is
    feasible, has nonnegative multipliers and is stationary."""
    P = 0.5 * (P + P.T)
    Ax, Au = Al[:, :n], Al[:, n:]
    aux = sorted(Qg)

    def parts(x):
        h = Ax @ x
        J = Ax.copy()
        for k, a in enumerate(aux):
            w = Au[:, a - n]
            if not np.any(w):
                continue
            c = cg[a]
            Q = Qg[a]
            xc = x[c]
            h = h + w * (0.5 * xc @ Q @ xc)
            g = np.zeros(n)
            g[c] = Q @ xc
            J = J + np.outer(w, g)
        return h, J

    def hess(lam):
        H = P.copy()
        for a in aux:
            wl = Au[:, a - n] @ lam
            if wl:
                c = cg[a]
                H[np.ix_(c, c)] += wl * Qg[a]
        return H

    def newton(act, x, lam_full):
        prev_step = np.inf
        for _ in range(iters):
            h, J = parts(x)
            Ja = J[act]
            H = hess(lam_full)
            K = np.block([[H, Ja.T], [Ja, np.zeros((len(act), len(act)))]])
            rhs = np.concatenate([-(P @ x + q), bl[act] - h[act]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if not np.all(np.isfinite(sol)):
                return None, None
            dx = sol[:n]
            lam_full = np.zeros(len(bl))
            lam_full[act] = sol[n:]
            x = x + dx
            step = np.linalg.norm(dx)
            if step <= 1e-13 * (1.0 + np.linalg.norm(x)) or step >= prev_step:
                break
            prev_step = step
        return x, lam_full

    zmax = np.abs(z).max(initial=0.0)
    if zmax <= 0.0:
        return None
    act = np.flatnonzero(z > 1e-7 * zmax)
    x0 = v[:n].copy()
    lam0 = np.zeros(len(bl))
    lam0[act] = z[act]
    scale = 1.0 + np.abs(bl)
    # primal-dual active-set corrections: nearly parallel rows can both look
    # active to the interior-point method
    for _ in range(ACTIVE_SET_ROUNDS):
        x, lam_full = newton(act, x0.copy(), lam0)
        if x is None:
            return None
        h, J = parts(x)
        viol = (h - bl) / scale
        lam = lam_full[act]
        neg = lam < -1e-8 * max(1.0, np.abs(lam).max(initial=0.0))
        if np.any(neg):
            act = np.delete(act, np.argmin(lam))
            continue
        if np.any(viol > 1e-10):
            act = np.union1d(act, [int(np.argmax(viol))])
            continue
        stat = P @ x + q + J[act].T @ lam
        if np.linalg.norm(stat) > 1e-8 * (1.0 + np.linalg.norm(q) + np.linalg.norm(P @ x)):
            return None
        return x
    return None


def project_conic(s, x: np.ndarray) -> np.ndarray:
    n = len(x)
    return solve_qp(sparse.identity(n, format="csc"), -np.asarray(x, dtype=float), s)
