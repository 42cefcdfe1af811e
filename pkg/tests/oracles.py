"""Independent reference computations used by the tests.

Nothing here imports the package under test.
"""

import itertools
import math

import numpy as np


def bound_root(k, N, beta, xtol=1e-13):
    """Root of the bound polynomial by plain bisection.

    Uses the ratio recurrence C(l, k) / C(l+1, k) = (l+1-k)/(l+1) to build
    log C(l, k) - log C(N, k) from the top down, and a logaddexp sum.
    """
    if k >= N:
        return 0.0
    logr = np.zeros(N - k + 1)          # index l - k
    for l in range(N - 1, k - 1, -1):
        logr[l - k] = logr[l - k + 1] + math.log((l + 1 - k) / (l + 1))
    p = np.arange(N - k + 1)

    def sign(t):
        s = np.logaddexp.reduce(logr + p * math.log(t))
        return math.log(beta / (N + 1)) + s - (N - k) * math.log(t)

    lo, hi = 1e-15, 1 - 1e-15
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if sign(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bound_root_exact(k, N, beta, dps=50):
    """Same root with exact binomials in multiprecision (small N only)."""
    import mpmath as mp
    mp.mp.dps = dps
    b = mp.mpf(beta)

    def f(t):
        s = mp.fsum(math.comb(l, k) * t ** (l - k) for l in range(k, N + 1))
        return b / (N + 1) * s - math.comb(N, k) * t ** (N - k)

    if k >= N:
        return 0.0
    return float(mp.findroot(f, (mp.mpf("1e-30"), 1 - mp.mpf("1e-30")), solver="bisect"))


def affine_vi_kkt(A, b, G, h, tol=1e-9):
    """Solution of the VI with F(x) = Ax + b over {G x <= h} by enumerating
    active sets and solving the KKT equations of each."""
    n, m = A.shape[0], len(h)
    for size in range(0, min(n, m) + 1):
        for S in itertools.combinations(range(m), size):
            S = list(S)
            K = np.zeros((n + size, n + size))
            K[:n, :n] = A
            K[:n, n:] = G[S].T
            K[n:, :n] = G[S]
            rhs = np.concatenate([-b, h[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(lam >= -tol) and np.all(G @ x <= h + tol):
                return x
    raise RuntimeError("no KKT point found")


def gaussian_tail(a, thr, mu, Sigma):
    """P{a.d >= thr} via the error function."""
    m = float(np.dot(a, mu))
    v = float(np.asarray(a) @ np.asarray(Sigma) @ np.asarray(a))
    if v <= 0:
        return 1.0 if m >= thr else 0.0
    return 0.5 * math.erfc((thr - m) / math.sqrt(2 * v))


def random_affine_vi(rng, n_max=3, m_max=6):
    """Random strongly monotone affine VI over a nonempty polyhedron.

    A = S + K with S symmetric positive definite and K skew. The halfspaces
    have positive offsets, so the origin is feasible, and the unconstrained
    solution is pushed outside so constraints tend to bind.
    """
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    S = Q @ np.diag(rng.uniform(0.5, 3.0, n)) @ Q.T
    K = rng.normal(size=(n, n))
    K = 0.5 * (K - K.T)
    A = S + K
    target = 3.0 * rng.normal(size=n)
    b = -A @ target
    G = rng.normal(size=(m, n))
    h = rng.uniform(0.2, 1.5, m)
    return A, b, G, h


def accumulating_halfspaces():
    """Three halfspaces through the origin: the first is of support, the
    other two each redundant given the other. Pair with F(x) = x - (1, 1)."""
    return [(np.array([1.0, 0.0]), 0.0), (np.array([0.0, 1.0]), 0.0), (np.array([-0.5, 1.0]), 0.0)]
