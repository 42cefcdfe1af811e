"""Demand-response game with uncertain inflexible demand.

Agent ``j`` buys ``x^j_t`` MWh at hour ``t`` and pays

    J^j(x; d) = sum_t (alpha_t sigma_t(x) + beta_t d_t) x^j_t,

where ``sigma(x)`` is the total flexible load and ``d`` the inflexible demand
profile. Local sets are ``x^j >= 0`` and ``sum_t x^j_t >= gamma^j``. The game
is affine-quadratic with ``A = (I_M + 1 1^T) (x) diag(alpha)`` and the
uncertain own term ``(B d).x^j``, ``B = diag(beta)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .bounds import certify
from .errors import (FactorizationError, InconsistentWidthError, InsufficientDataError,
                     NegativeDemandError, ParseError, ScenviError)
from .games import (GameSpec, affine_quadratic_game, aggregate_risk_spec, build_epigraph_qvi,
                    cost_values, solve_sampled_robust_eq, worst_case_cost)
from .risk import gaussian_linear_risk, mc_risk, rng_for
from .sets import Box, ConvexSet, Halfspace
from .solver import SolverParams, solve_qvi
from .support import COMPARISON_TOL, check_degeneracy, count_support

log = logging.getLogger(__name__)

UNITS = {"energy": "MWh", "price_coefficient": "$/MWh^2", "cost": "$"}


@dataclass(frozen=True, eq=False)
class DRInstance:
    M: int
    T: int
    alpha: np.ndarray
    beta_price: np.ndarray
    gamma: np.ndarray
    demand_samples: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "beta_price", "gamma", "demand_samples"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.alpha.shape != (self.T,) or self.beta_price.shape != (self.T,):
            raise ValueError(f"price coefficients must have length T={self.T}")
        if self.gamma.shape != (self.M,):
            raise ValueError(f"gamma must have length M={self.M}")
        if self.demand_samples.ndim != 2 or self.demand_samples.shape[1] != self.T:
            raise ValueError(f"demand samples must be N x {self.T}")
        if np.any(self.alpha <= 0) or np.any(self.beta_price <= 0):
            raise ValueError("price coefficients must be positive")
        if np.any(self.gamma <= 0):
            raise ValueError("energy requirements must be positive")
        if np.any(self.demand_samples < 0):
            raise NegativeDemandError("demand samples must be nonnegative")

    @property
    def N(self) -> int:
        return self.demand_samples.shape[0]


@dataclass(frozen=True, eq=False)
class GaussianModel:
    mu: np.ndarray
    Sigma: np.ndarray
    regularization: float = 0.0

    @property
    def T(self) -> int:
        return len(self.mu)


# --------------------------------------------------------------------------
# profiles


def load_profiles(path) -> np.ndarray:
    """Read an ``N x T`` demand matrix from CSV; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"{path}:{lineno}: non-numeric entry") from None
            rows.append((lineno, vals))
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0][1])
    for lineno, vals in rows:
        if len(vals) != width:
            raise InconsistentWidthError(f"{path}:{lineno}: {len(vals)} columns, expected {width}")
    D = np.array([v for _, v in rows])
    if not np.all(np.isfinite(D)):
        raise ParseError(f"{path}: non-finite entries")
    if np.any(D < 0):
        raise NegativeDemandError(f"{path}: negative demand entries")
    return D


def save_profiles(path, D, header: bool = True) -> None:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"h{t + 1}" for t in range(D.shape[1])])
        for row in D:
            w.writerow([repr(float(v)) for v in row])


def fit_gaussian(D, ridge: float | None = None) -> GaussianModel:
    """Sample mean and unbiased covariance plus ``ridge * I``.

    Default ridge is ``1e-6 * trace(S) / T`` (``1e-6`` if the trace is zero).
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape[0] < 2:
        raise InsufficientDataError("at least two profiles are needed to fit a covariance")
    mu = D.mean(axis=0)
    S = np.atleast_2d(np.cov(D, rowvar=False, ddof=1))
    T = D.shape[1]
    if ridge is None:
        tr = float(np.trace(S))
        ridge = 1e-6 * tr / T if tr > 0 else 1e-6
    S = 0.5 * (S + S.T) + ridge * np.eye(T)
    return GaussianModel(mu, S, float(ridge))


def _cholesky(Sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"covariance factorization failed: {exc}") from exc


def gaussian_sampler(model: GaussianModel, clip: bool = True):
    L = _cholesky(model.Sigma)

    def draw(rng: np.random.Generator, count: int) -> np.ndarray:
        X = model.mu + rng.standard_normal((count, model.T)) @ L.T
        return np.maximum(X, 0.0) if clip else X

    return draw


def sample_profiles(model: GaussianModel, count: int, seed: int = 0) -> tuple[np.ndarray, float]:
    """``count`` draws from the model, negatives clipped to 0; returns ``(D, clip_fraction)``."""
    L = _cholesky(model.Sigma)
    rng = rng_for(seed, 0)
    X = model.mu + rng.standard_normal((count, model.T)) @ L.T
    neg = X < 0
    return np.where(neg, 0.0, X), float(neg.mean()) if X.size else 0.0


def truncated_normal(mean: float, sd: float, low: float, high: float, size: int,
                     rng: np.random.Generator, max_rounds: int = 10_000) -> np.ndarray:
    """Rejection sampler for ``N(mean, sd^2)`` restricted to ``[low, high]``."""
    if low > high:
        raise ValueError("empty truncation interval")
    if sd == 0:
        if not low <= mean <= high:
            raise ValueError("degenerate law outside the truncation interval")
        return np.full(size, float(mean))
    out = np.empty(0)
    for _ in range(max_rounds):
        if len(out) >= size:
            break
        z = rng.normal(mean, sd, size=max(2 * (size - len(out)), 16))
        out = np.concatenate([out, z[(z >= low) & (z <= high)]])
    else:
        raise ValueError("truncated normal rejection sampler made no progress")
    return out[:size]


def synthetic_winter_profiles(rows: int = 500, T: int = 24, seed: int = 0) -> np.ndarray:
    """Stand-in for historical winter-day demand (MWh): overnight trough,
    morning and evening peaks, day-level scaling and hour-to-hour noise."""
    rng = rng_for(seed, 7)
    h = np.arange(T) * 24.0 / T
    shape = (24000.0 + 5000.0 * np.exp(-0.5 * ((h - 8.5) / 2.0) ** 2)
             + 8000.0 * np.exp(-0.5 * ((h - 18.0) / 2.2) ** 2)
             - 4000.0 * np.exp(-0.5 * ((h - 3.5) / 2.5) ** 2))
    level = rng.normal(1.0, 0.06, size=(rows, 1))
    noise = np.zeros((rows, T))
    e = rng.normal(0.0, 350.0, size=(rows, T))
    for t in range(T):
        noise[:, t] = (0.7 * noise[:, t - 1] if t else 0.0) + e[:, t]
    return np.maximum(shape * level + noise, 0.0)


# --------------------------------------------------------------------------
# game


def dr_local_set(T: int, gamma: float) -> ConvexSet:
    return ConvexSet(T, (Box(np.zeros(T), np.full(T, np.inf)), Halfspace(-np.ones(T), -float(gamma))))


def build_dr_game(inst: DRInstance) -> GameSpec:
    M, T = inst.M, inst.T
    A = np.kron(np.eye(M) + np.ones((M, M)), np.diag(inst.alpha))
    B = np.diag(inst.beta_price)
    return affine_quadratic_game([T] * M, A, np.zeros(M * T), [B] * M,
                                 [dr_local_set(T, g) for g in inst.gamma], "costs")


def total_load(x: np.ndarray, M: int, T: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(M, T).sum(axis=0)


# --------------------------------------------------------------------------
# experiment


DEFAULTS = {
    "M": 5,
    "T": 24,
    "N": 100,
    "beta": 0.05,
    "alpha": 500.0,
    "beta_price": 500.0,
    "gamma_law": {"mean": 480.0, "sd": 120.0, "low": 400.0, "high": 560.0},
    "data": {"type": "synthetic", "rows": 500, "seed": 0},
    "mc_draws": 1_000_000,
    "cost_samples": 10_000,
    "comparison_tol": COMPARISON_TOL,
}


def _vec(v, T):
    a = np.asarray(v, dtype=float)
    return np.full(T, float(a)) if a.ndim == 0 else a


def resolve_config(config: dict) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    for k, v in (config or {}).items():
        cfg[k] = v
    return cfg


def _history(cfg: dict, base_dir: str | None) -> tuple[np.ndarray, str]:
    data = cfg["data"]
    kind = data.get("type", "synthetic")
    if kind == "synthetic":
        return synthetic_winter_profiles(int(data.get("rows", 500)), int(cfg["T"]), int(data.get("seed", 0))), kind
    key = "path" if kind == "csv" else "source_csv"
    path = data.get(key)
    if path is None:
        raise ParseError(f"data of type {kind!r} needs a {key!r} entry")
    if base_dir and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    D = load_profiles(path)
    if D.shape[1] != int(cfg["T"]):
        raise InconsistentWidthError(f"profiles have {D.shape[1]} columns, T = {cfg['T']}")
    return D, kind


def _stage(name):
    def wrap(exc: ScenviError):
        if exc.stage is None:
            exc.stage = name
        return exc
    return wrap


def run_dr_experiment(config: dict, seed: int = 0, out_dir: str | None = None,
                      base_dir: str | None = None) -> dict:
    """Full pipeline; returns the report and writes JSON/CSV artifacts to ``out_dir``.

    Stages: data, sample, build, solve, support, certify, risk, report.
    Errors leave with the stage that raised them.
    """
    cfg = resolve_config(config)
    M, T, N = int(cfg["M"]), int(cfg["T"]), int(cfg["N"])
    stage = "data"
    try:
        hist, kind = _history(cfg, base_dir)
        model = fit_gaussian(hist)

        stage = "sample"
        rng = rng_for(seed, 1)
        law = cfg["gamma_law"]
        if isinstance(law, (list, tuple)):
            gamma = np.asarray(law, dtype=float)
        else:
            gamma = truncated_normal(law["mean"], law["sd"], law["low"], law["high"], M, rng)
        if kind == "csv":
            if hist.shape[0] < N:
                raise InsufficientDataError(f"{hist.shape[0]} profiles in the file, N = {N}")
            D, clip = hist[:N], 0.0
        else:
            D, clip = sample_profiles(model, N, seed=seed)

        stage = "build"
        inst = DRInstance(M, T, _vec(cfg["alpha"], T), _vec(cfg["beta_price"], T), gamma, D)
        game = build_dr_game(inst)
        samples = list(D)

        stage = "solve"
        eq = solve_sampled_robust_eq(game, samples, route="operator")
        if not eq.solution.converged:
            log.warning("operator route reported residual %.3g", eq.solution.natural_residual)

        stage = "support"
        qvi, layout = build_epigraph_qvi(game, samples)
        params = SolverParams(method="conic")
        qsol = solve_qvi(qvi, params)
        report = count_support(qvi, params, float(cfg["comparison_tol"]), solution=qsol)
        degeneracy = check_degeneracy(qvi, report, params) if report.valid else "skipped"
        x_q, t_q = layout.split(qsol.x_star)

        stage = "certify"
        beta = float(cfg["beta"])
        post = certify(report.s_star, N, beta, "a-posteriori")
        prior = certify(game.n + M, N, beta, "a-priori")

        stage = "risk"
        x = eq.x_sr
        risks = []
        for j in range(M):
            a = inst.beta_price * game.own(x, j)
            thr = float((D @ a).max())
            risks.append(gaussian_linear_risk(a, thr, model.mu, model.Sigma).value)
        t_max = np.array([worst_case_cost(game, samples, x, j)[0] for j in range(M)])
        agg = mc_risk(aggregate_risk_spec(game, x, t_max), gaussian_sampler(model),
                      int(cfg["mc_draws"]), seed=seed)

        stage = "report"
        sigma = total_load(x, M, T)
        xs = x.reshape(M, T)
        rep = {
            "seed": seed,
            "config": cfg,
            "units": UNITS,
            "data_source": kind,
            "clip_fraction": clip,
            "gamma": gamma.tolist(),
            "x_sr": xs.tolist(),
            "t_sr": t_max.tolist(),
            "active_scenarios": eq.active_scenarios,
            "qvi": {
                "converged": bool(qsol.converged),
                "x_gap": float(np.abs(x_q - x).max()),
                "t_rel_gap": float(np.max(np.abs(t_q - t_max) / np.maximum(1.0, np.abs(t_max)))),
            },
            "support": report.to_dict() | {"degeneracy_check": degeneracy},
            "certificate": post.to_dict(),
            "a_priori_certificate": prior.to_dict(),
            "agent_risk": risks,
            "max_agent_risk": max(risks),
            "dominated": bool(max(risks) <= post.epsilon),
            "aggregate_risk": agg.to_dict(),
            "feasibility": {
                "min_entry": float(x.min()),
                "budget_slack": (xs.sum(axis=1) - gamma).tolist(),
            },
            "mu": model.mu.tolist(),
            "sigma": sigma.tolist(),
            "covariance_ridge": model.regularization,
        }
        del rep["support"]["x_star"]
        if out_dir is not None:
            rep["outputs"] = write_artifacts(out_dir, rep, game, x, model, int(cfg["cost_samples"]), seed)
        return rep
    except ScenviError as exc:
        raise _stage(stage)(exc)


def _digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_artifacts(out_dir: str, rep: dict, game: GameSpec, x: np.ndarray, model: GaussianModel,
                    cost_samples: int, seed: int) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    prof = os.path.join(out_dir, "profile.csv")
    with open(prof, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mu_MWh", "sigma_MWh"])
        for t, (m, s) in enumerate(zip(rep["mu"], rep["sigma"]), start=1):
            w.writerow([t, repr(m), repr(s)])
    costs = os.path.join(out_dir, "cost_samples.csv")
    draws = gaussian_sampler(model)(rng_for(seed, 2), cost_samples)
    cols = [cost_values(game, draws, x, j) for j in range(game.M)]
    with open(costs, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"agent_{j + 1}_cost" for j in range(game.M)])
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    return {"profile.csv": _digest(prof), "cost_samples.csv": _digest(costs)}


__all__ = [
    "DRInstance",
    "GaussianModel",
    "build_dr_game",
    "dr_local_set",
    "fit_gaussian",
    "gaussian_sampler",
    "load_profiles",
    "run_dr_experiment",
    "sample_profiles",
    "save_profiles",
    "synthetic_winter_profiles",
    "total_load",
    "truncated_normal",
]
