"""Command-line entry point: ``scenvi <subcommand> ...``.

Results go to standard output as JSON (sorted keys, so seeded runs are
byte-identical). One run manifest per invocation goes to ``--manifest`` or,
if absent, to standard error. Domain errors exit with status 1 and a JSON
``{stage, code, message}`` object on standard error; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .bounds import certify
from .demand_response import run_dr_experiment
from .errors import NonPSDCovarianceError, ParseError, ScenviError
from .problem_io import parse_problem
from .risk import builtin_1d_generator, coverage_experiment, gaussian_linear_risk, mc_risk
from .solver import solve_qvi, solve_vi
from .support import check_degeneracy, count_support

INSTANCES = {"builtin-1d": builtin_1d_generator}


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _read_json(path: str, stage: str = "input"):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}", stage=stage) from None


def _write(path: str, text: str) -> str:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------
# subcommands; each returns (result, {output file: digest}, config echo)


def cmd_certify(args):
    kind = "a-priori" if args.a_priori else "a-posteriori"
    cert = certify(args.k, args.n_samples, args.beta, kind)
    return cert.to_dict(), {}, {"k": args.k, "N": args.n_samples, "beta": args.beta, "kind": kind}


def cmd_solve_vi(args):
    spec = _read_json(args.problem)
    problem, params = parse_problem(spec, qvi=args.qvi)
    sol = solve_qvi(problem, params) if problem.mode == "QVI" else solve_vi(problem, params)
    out = sol.to_dict()
    out["mode"] = problem.mode
    return out, {}, {"problem": spec, "qvi": bool(args.qvi)}


def cmd_support(args):
    spec = _read_json(args.problem)
    problem, params = parse_problem(spec, qvi=args.qvi)
    rep = count_support(problem, params, args.tol)
    if rep.valid:
        check_degeneracy(problem, rep, params)
    return rep.to_dict(), {}, {"problem": spec, "tol": args.tol, "qvi": bool(args.qvi)}


def _linear_gaussian(spec):
    try:
        a = np.asarray(spec["a"], dtype=float)
        mu = np.asarray(spec["mu"], dtype=float)
        Sigma = np.atleast_2d(np.asarray(spec["Sigma"], dtype=float))
        thr = float(spec["threshold"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"risk spec needs numeric a, threshold, mu, Sigma ({exc})", stage="input") from None
    if a.shape != mu.shape or Sigma.shape != (len(mu), len(mu)):
        raise ParseError("risk spec has inconsistent sizes", stage="input")
    return a, thr, mu, Sigma


def cmd_risk(args):
    spec = _read_json(args.spec)
    a, thr, mu, Sigma = _linear_gaussian(spec)
    if args.mode == "gaussian":
        est = gaussian_linear_risk(a, thr, mu, Sigma)
    else:
        lam, V = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
        if lam.min() < -1e-10 * max(1.0, np.abs(lam).max()):
            raise NonPSDCovarianceError(f"covariance has eigenvalue {lam.min():.3g}", stage="input")
        L = V * np.sqrt(np.clip(lam, 0.0, None))

        def sampler(rng, count):
            return mu + rng.standard_normal((count, len(mu))) @ L.T

        est = mc_risk(lambda d: d @ a >= thr, sampler, args.samples, seed=args.seed)
    return est.to_dict(), {}, {"spec": spec, "mode": args.mode, "samples": args.samples, "seed": args.seed}


def cmd_coverage(args):
    gen = INSTANCES[args.instance](args.n_samples)
    res = coverage_experiment(gen, args.trials, args.beta, seed=args.seed)
    out = res.to_dict()
    out["instance"] = args.instance
    out["N"] = args.n_samples
    files = {}
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "s_star", "epsilon", "risk", "violated"])
        for r in res.records:
            w.writerow([r["trial"], r["s_star"], "" if r["epsilon"] is None else repr(r["epsilon"]),
                        "" if r["risk"] is None else repr(r["risk"]),
                        "" if r["violated"] is None else int(r["violated"])])
        files[args.csv] = _write(args.csv, buf.getvalue())
    cfg = {"instance": args.instance, "trials": args.trials, "beta": args.beta,
           "N": args.n_samples, "seed": args.seed}
    return out, files, cfg


def cmd_dr_experiment(args):
    cfg = _read_json(args.config) if args.config else {}
    base_dir = os.path.dirname(os.path.abspath(args.config)) if args.config else None
    rep = run_dr_experiment(cfg, seed=args.seed, out_dir=args.out_dir, base_dir=base_dir)
    files = {}
    if args.out_dir:
        for name, digest in rep.get("outputs", {}).items():
            files[os.path.join(args.out_dir, name)] = digest
        files[os.path.join(args.out_dir, "report.json")] = _write(
            os.path.join(args.out_dir, "report.json"), dumps(rep))
    return rep, files, {"config": rep["config"], "seed": args.seed}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenvi", description="Scenario-based certificates for variational inequalities and games.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{certify,solve-vi,support,risk,coverage,dr-experiment}")
    sub.required = True

    def common(sp):
        sp.add_argument("--manifest", help="write the run manifest here instead of standard error")
        sp.add_argument("--output", help="also write the JSON result to this file")

    s = sub.add_parser("certify", help="risk bound epsilon(k) for k support constraints out of N samples")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--n-samples", type=int, required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--a-priori", action="store_true", help="label the certificate a-priori (k = dimension)")
    common(s)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("solve-vi", help="solve a sampled VI/QVI from a JSON description")
    s.add_argument("--problem", required=True)
    s.add_argument("--qvi", action="store_true")
    common(s)
    s.set_defaults(func=cmd_solve_vi)

    s = sub.add_parser("support", help="count support constraints by leave-one-out")
    s.add_argument("--problem", required=True)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--qvi", action="store_true")
    common(s)
    s.set_defaults(func=cmd_support)

    s = sub.add_parser("risk", help="risk of a linear-Gaussian event")
    s.add_argument("--mode", choices=["mc", "gaussian"], required=True)
    s.add_argument("--spec", required=True, help="JSON with a, threshold, mu, Sigma")
    s.add_argument("--samples", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    common(s)
    s.set_defaults(func=cmd_risk)

    s = sub.add_parser("coverage", help="empirical coverage of the support-count certificate")
    s.add_argument("--instance", choices=sorted(INSTANCES), required=True)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--beta", type=float, default=0.05)
    s.add_argument("--n-samples", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", help="per-trial records (trial, s_star, epsilon, risk, violated)")
    common(s)
    s.set_defaults(func=cmd_coverage)

    s = sub.add_parser("dr-experiment", help="demand-response robust equilibrium with certificate")
    s.add_argument("--config", help="JSON config; defaults give the desk-scale instance")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir")
    common(s)
    s.set_defaults(func=cmd_dr_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        result, files, cfg = args.func(args)
    except ScenviError as exc:
        if exc.stage is None:
            exc.stage = args.command
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"stage": args.command, "code": "io-error", "message": str(exc)},
                                    sort_keys=True) + "\n")
        return 1
    text = dumps(result)
    sys.stdout.write(text)
    if args.output:
        files[args.output] = _write(args.output, text)
    manifest = {
        "subcommand": args.command,
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "duration_s": time.perf_counter() - start,
        "outputs": files,
    }
    mtext = dumps(manifest)
    if args.manifest:
        _write(args.manifest, mtext)
    else:
        sys.stderr.write(mtext)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
