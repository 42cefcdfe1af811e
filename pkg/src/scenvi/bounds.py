"""Risk bounds from the number of support constraints.

For ``0 <= k < N`` the level ``t(k)`` is the unique root in ``(0, 1)`` of

    beta/(N+1) * sum_{l=k}^{N} C(l, k) t^(l-k)  -  C(N, k) t^(N-k)  =  0

and ``t(k) = 0`` for ``k >= N``. The risk bound is ``epsilon(k) = 1 - t(k)``:
with probability at least ``1 - beta`` over the draw of ``N`` scenarios, the
computed solution violates a fresh scenario with probability at most
``epsilon(s*)``.

The polynomial is evaluated divided by ``C(N, k)`` so that all terms stay in
``[0, N+1]``; binomial ratios are formed in log space and summed with an
exponent shift, which keeps the evaluation finite for ``N`` in the thousands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import gammaln

from .errors import InvalidQueryError, NoBracketError

ROOT_XTOL = 1e-12
RESIDUAL_TOL = 1e-10
BRACKET_EDGE = 1e-15

Kind = Literal["a-priori", "a-posteriori"]


@dataclass(frozen=True)
class BoundQuery:
    k: int
    N: int
    beta: float

    def __post_init__(self):
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 0:
            raise InvalidQueryError(f"k must be a non-negative integer, got {self.k!r}")
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise InvalidQueryError(f"N must be a positive integer, got {self.N!r}")
        beta = float(self.beta)
        if not (0.0 < beta < 1.0) or math.isnan(beta):
            raise InvalidQueryError(f"beta must lie in (0, 1), got {self.beta!r}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class Certificate:
    """Outcome of a bound computation.

    The attached claim reads: with confidence at least ``1 - beta`` over the
    ``N``-sample draw, the risk of the solution is at most ``epsilon``.
    """

    query: BoundQuery
    t_value: float
    epsilon: float
    kind: str
    residual: float

    @property
    def confidence(self) -> float:
        return 1.0 - self.query.beta

    def to_dict(self) -> dict:
        return {
            "k": self.query.k,
            "N": self.query.N,
            "beta": self.query.beta,
            "t": self.t_value,
            "epsilon": self.epsilon,
            "kind": self.kind,
            "residual": self.residual,
        }


def _log_ratio_terms(k: int, N: int) -> np.ndarray:
    # log C(l, k) - log C(N, k) for l = k..N
    l = np.arange(k, N + 1, dtype=float)
    log_c = gammaln(l + 1) - gammaln(k + 1) - gammaln(l - k + 1)
    return log_c - log_c[-1]


class _Poly:
    """Normalized polynomial p(t) / C(N, k) for a fixed query."""

    def __init__(self, q: BoundQuery):
        self.k, self.N = q.k, q.N
        self.log_scale = math.log(q.beta) - math.log(q.N + 1)
        self.scale = q.beta / (q.N + 1)
        self.log_ratio = _log_ratio_terms(q.k, q.N)
        self.powers = np.arange(0, q.N - q.k + 1, dtype=float)

    def _log_sum(self, t: float) -> float:
        e = self.log_ratio + self.powers * math.log(t)
        shift = e.max()
        return shift + math.log(np.exp(e - shift).sum())

    def log_gap(self, t: float) -> float:
        """log(first term) - log(second term); positive left of the root."""
        return self.log_scale + self._log_sum(t) - (self.N - self.k) * math.log(t)

    def value(self, t: float) -> float:
        if t <= 0.0:
            return self.scale
        return self.scale * math.exp(self._log_sum(t)) - t ** (self.N - self.k)


def polynomial_value(query: BoundQuery, t: float) -> float:
    """Stable evaluation of the defining polynomial, divided by ``C(N, k)``."""
    return _Poly(query).value(t)


def _solve(query: BoundQuery, xtol: float) -> tuple[float, float]:
    if query.k >= query.N:
        return 0.0, 0.0
    p = _Poly(query)
    lo, hi = BRACKET_EDGE, 1.0 - BRACKET_EDGE
    g_lo, g_hi = p.log_gap(lo), p.log_gap(hi)
    if not (g_lo > 0.0 and g_hi < 0.0):
        raise NoBracketError(
            f"no sign change on ({lo}, {hi}) for k={query.k}, N={query.N}, beta={query.beta}"
        )
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if p.log_gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    # keep halving past xtol only while the residual is above tolerance
    r_lo, r_hi = abs(p.value(lo)), abs(p.value(hi))
    while min(r_lo, r_hi) > RESIDUAL_TOL:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if p.log_gap(mid) > 0.0:
            lo, r_lo = mid, abs(p.value(mid))
        else:
            hi, r_hi = mid, abs(p.value(mid))
    return (lo, r_lo) if r_lo <= r_hi else (hi, r_hi)


def solve_t(query: BoundQuery, xtol: float = ROOT_XTOL) -> float:
    """Root ``t(k)`` of the defining polynomial; 0 when ``k >= N``."""
    return _solve(query, xtol)[0]


def epsilon(query: BoundQuery, xtol: float = ROOT_XTOL) -> float:
    return 1.0 - solve_t(query, xtol)


def epsilon_table(N: int, beta: float, xtol: float = ROOT_XTOL) -> list[tuple[int, float]]:
    """``[(k, epsilon(k)) for k in 0..N]``."""
    BoundQuery(0, N, beta)
    return [(k, epsilon(BoundQuery(k, N, beta), xtol)) for k in range(N + 1)]


def certify(k: int, N: int, beta: float, kind: Kind = "a-posteriori") -> Certificate:
    """Build a certificate.

    For an a-posteriori certificate ``k`` is the observed support count; for an
    a-priori one the caller passes the decision dimension (or ``n + M`` for the
    epigraphic game reformulation).
    """
    if kind not in ("a-priori", "a-posteriori"):
        raise InvalidQueryError(f"unknown certificate kind {kind!r}")
    q = BoundQuery(k, N, beta)
    t, res = _solve(q, ROOT_XTOL)
    return Certificate(query=q, t_value=t, epsilon=1.0 - t, kind=kind, residual=res)


__all__ = [
    "BoundQuery",
    "Certificate",
    "certify",
    "epsilon",
    "epsilon_table",
    "polynomial_value",
    "solve_t",
]
