"""Risk of a decision: Monte Carlo with exact binomial intervals, a closed
form for linear functionals of a Gaussian, and coverage experiments that
check the support-count certificate empirically.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .bounds import BoundQuery, epsilon
from .errors import (DegenerateTrialError, NonPSDCovarianceError, SamplerFailureError,
                     ScenviError)
from .sets import ConvexSet, Halfspace
from .solver import OperatorOracle, ScenarioVIProblem, SolverParams, solve_vi
from .support import COMPARISON_TOL, check_degeneracy, count_support

MIN_SAMPLES = 100
BATCH = 100_000


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    method: str
    ci_low: float | None = None
    ci_high: float | None = None
    samples_used: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "samples_used": self.samples_used,
            "seed": self.seed,
        }


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    a = 1.0 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def mc_risk(predicate: Callable[[np.ndarray], np.ndarray],
            sampler: Callable[[np.random.Generator, int], np.ndarray],
            num_samples: int, seed: int = 0, batch: int = BATCH,
            confidence: float = 0.95) -> RiskEstimate:
    """Frequency of ``predicate`` over ``num_samples`` draws.

    Draws come in batches; batch ``b`` uses substream ``(seed, b)`` so the
    estimate does not depend on how batches are scheduled.
    """
    if num_samples < MIN_SAMPLES:
        raise ValueError(f"at least {MIN_SAMPLES} samples are required")
    hits = 0
    done = 0
    b = 0
    while done < num_samples:
        count = min(batch, num_samples - done)
        try:
            draws = sampler(rng_for(seed, b), count)
        except ScenviError:
            raise
        except Exception as exc:
            raise SamplerFailureError(f"sampler failed: {exc}") from exc
        if draws is None or len(draws) != count:
            raise SamplerFailureError(f"sampler returned {0 if draws is None else len(draws)} draws, expected {count}")
        flags = np.asarray(predicate(draws), dtype=bool)
        if flags.shape != (count,):
            raise ValueError(f"predicate returned shape {flags.shape}, expected ({count},)")
        hits += int(flags.sum())
        done += count
        b += 1
    lo, hi = clopper_pearson(hits, num_samples, confidence)
    return RiskEstimate(hits / num_samples, "monte-carlo", lo, hi, num_samples, seed)


def gaussian_linear_risk(a, threshold: float, mu, Sigma) -> RiskEstimate:
    """``P{a.d >= threshold}`` for ``d ~ N(mu, Sigma)``.

    With ``a.Sigma.a = 0`` the event is deterministic: 1 if ``a.mu >= threshold``
    else 0.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if Sigma.shape != (len(mu), len(mu)) or len(a) != len(mu):
        raise ValueError("a, mu and Sigma have inconsistent sizes")
    lam = np.linalg.eigvalsh(0.5 * (Sigma + Sigma.T))
    if lam.min(initial=0.0) < -1e-10 * max(1.0, np.abs(lam).max(initial=0.0)):
        raise NonPSDCovarianceError(f"covariance has eigenvalue {lam.min():.3g}")
    mean = float(a @ mu)
    var = float(a @ Sigma @ a)
    if var <= 0.0:
        v = 1.0 if mean >= threshold else 0.0
    else:
        v = float(stats.norm.sf((threshold - mean) / np.sqrt(var)))
    return RiskEstimate(v, "closed-form")


# --------------------------------------------------------------------------
# coverage


@dataclass
class CoverageInstance:
    problem: ScenarioVIProblem
    risk: Callable[[np.ndarray], float]
    params: SolverParams | None = None


@dataclass
class CoverageResult:
    trials: int
    violations: int
    beta: float
    empirical_rate: float
    s_star_histogram: dict
    degenerate: int = 0
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "violations": self.violations,
            "beta": self.beta,
            "empirical_rate": self.empirical_rate,
            "s_star_histogram": {str(k): v for k, v in sorted(self.s_star_histogram.items())},
            "degenerate": self.degenerate,
        }


def coverage_experiment(generator: Callable[[int, np.random.Generator], CoverageInstance],
                        trials: int, beta: float, seed: int = 0,
                        comparison_tol: float = COMPARISON_TOL) -> CoverageResult:
    """Fraction of trials where the exact risk exceeds ``epsilon(s*)``.

    Trials whose support set fails the degeneracy check are excluded and
    counted separately.
    """
    records = []
    hist: Counter = Counter()
    violations = degenerate = 0
    for k in range(trials):
        inst = generator(k, rng_for(seed, k))
        params = inst.params or SolverParams()
        sol = solve_vi(inst.problem, params)
        rep = count_support(inst.problem, params, comparison_tol, solution=sol)
        status = check_degeneracy(inst.problem, rep, params) if rep.valid else "unresolved"
        if status != "passed":
            degenerate += 1
            records.append({"trial": k, "s_star": rep.s_star, "epsilon": None, "risk": None,
                            "violated": None, "degenerate": True})
            continue
        eps = epsilon(BoundQuery(rep.s_star, inst.problem.N, beta))
        v = float(inst.risk(sol.x_star))
        bad = v > eps
        violations += bad
        hist[rep.s_star] += 1
        records.append({"trial": k, "s_star": rep.s_star, "epsilon": eps, "risk": v,
                        "violated": bool(bad), "degenerate": False})
    used = trials - degenerate
    if used == 0:
        raise DegenerateTrialError("every trial was degenerate")
    return CoverageResult(trials, violations, beta, violations / used, dict(hist), degenerate, records)


def builtin_1d_generator(N: int = 50):
    """``F(x) = x - 1`` with scenarios ``x <= d_i``, ``d ~ U[0, 2]``.

    ``x* = min(1, min_i d_i)`` and the exact risk is ``P{d < x*} = x*/2``.
    """
    op = OperatorOracle.affine([[1.0]], [-1.0])

    def gen(trial: int, rng: np.random.Generator) -> CoverageInstance:
        d = rng.uniform(0.0, 2.0, size=N)
        scen = tuple(ConvexSet(1, (Halfspace([1.0], float(v)),)) for v in d)
        return CoverageInstance(ScenarioVIProblem(op, scen), lambda x: float(np.clip(x[0] / 2.0, 0.0, 1.0)))

    return gen


__all__ = [
    "CoverageInstance",
    "CoverageResult",
    "RiskEstimate",
    "builtin_1d_generator",
    "clopper_pearson",
    "coverage_experiment",
    "gaussian_linear_risk",
    "mc_risk",
    "rng_for",
]
