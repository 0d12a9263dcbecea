"""Command-line front end: ``ewtls estimate|simulate|validate``.

Exit codes form a stable contract: 0 on success, 1 on input errors
(unreadable or malformed files, inconsistent dimensions), 2 on numerical
non-convergence.  All outputs are machine-readable JSON/CSV with exact
round-trip floats.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from ewtls import dataio, validation
from ewtls.exceptions import (
    ConstraintViolationError,
    DataFormatError,
    EwtlsError,
    InferenceError,
    InitializationError,
    ModelInputError,
    TlsSolutionError,
)
from ewtls.inference import confidence_ellipsoid, estimate_nuisance, sandwich_Su
from ewtls.objective import ObjectiveContext
from ewtls.simulation import default_scenario, run_monte_carlo
from ewtls.solver import (
    EstimationResult,
    SolverOptions,
    ewtls_solve,
    ols_estimate,
    tls_estimate,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2

_INPUT_ERRORS = (DataFormatError, ModelInputError, OSError)
_NUMERIC_ERRORS = (
    ConstraintViolationError,
    InitializationError,
    TlsSolutionError,
    InferenceError,
)


def _parse_u(text: str) -> np.ndarray:
    try:
        u = np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError:
        raise DataFormatError(f"--u: not a comma-separated vector: {text!r}") \
            from None
    if u.size == 0:
        raise DataFormatError("--u: empty vector")
    return u


def _default_threads() -> int:
    raw = os.environ.get("EWTLS_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_estimate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("estimate", help="estimate X from a data/covariance file pair")
    p.add_argument("--data", required=True, help="CSV with m rows, n+d columns (A then B)")
    p.add_argument("--cov", required=True, help="covariance JSON (J, d, sigma matrices)")
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--header", action="store_true",
                   help="first CSV line is a header row")
    p.add_argument("--method", choices=["ewtls", "tls", "ols"], default="ewtls")
    p.add_argument("--init", choices=["ols", "tls"], default="ols")
    p.add_argument("--grad-tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--seed", type=int, default=0,
                   help="seed for multistart perturbations")
    p.add_argument("--u", type=str, default=None,
                   help='direction "v1,v2,..." for the covariance/ellipsoid')
    p.add_argument("--level", type=float, default=0.95)


def _add_simulate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("simulate", help="run a Monte Carlo study for a scenario")
    p.add_argument("--scenario", default=None,
                   help="scenario JSON (omit for the built-in default scenario)")
    p.add_argument("--out", required=True, help="summary JSON path")
    p.add_argument("--replicates-csv", default=None,
                   help="per-replicate CSV path (default: derived from --out)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--u", type=str, default=None)
    p.add_argument("--level", type=float, default=None)
    p.add_argument("--threads", type=int, default=_default_threads())


def _add_validate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("validate", help="run the numerical validation suites")
    p.add_argument("--suite", action="append", default=None,
                   choices=list(validation.SUITE_NAMES),
                   help="run only this suite (repeatable; default: all)")
    p.add_argument("--quick", action="store_true",
                   help="cap Monte Carlo suites at 1e4 draws, double tolerances")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="also write the report JSON here")


def _cmd_estimate(args) -> int:
    data, errors = dataio.load_problem(args.data, args.cov, header=args.header)
    ctx = ObjectiveContext(data=data, errors=errors)

    if args.method == "ewtls":
        opts = SolverOptions(grad_tol=args.grad_tol, max_iter=args.max_iter,
                             init=args.init, seed=args.seed)
        est = ewtls_solve(ctx, opts)
    else:
        X = ols_estimate(data) if args.method == "ols" else tls_estimate(data)
        est = EstimationResult(
            X_hat=X, Q_min=float("nan"), grad_norm=float("nan"),
            eq_residual_norm=float("nan"), iterations=0, converged=True,
            init_used=args.method,
        )

    nuis = estimate_nuisance(ctx, est.X_hat)
    cov = None
    ellipsoid = None
    if args.u is not None:
        u = _parse_u(args.u)
        if u.size != data.d:
            raise DataFormatError(
                f"--u has length {u.size}, expected d={data.d}"
            )
        cov = sandwich_Su(ctx, est.X_hat, nuis.VA_hat, u)
        ellipsoid = confidence_ellipsoid(est, cov, data.m, args.level)

    extra = {"method": args.method, "m": data.m, "n": data.n, "d": data.d}
    payload = dataio.results_to_dict(est, nuis, cov, ellipsoid,
                                     extra_diagnostics=extra)
    # NaN diagnostics (direct methods have no objective value) become nulls
    diag = payload["diagnostics"]
    for key in ("Q_min", "grad_norm", "eq_residual_norm"):
        if isinstance(diag[key], float) and np.isnan(diag[key]):
            diag[key] = None
    dataio.write_json(args.out, payload)
    return EXIT_OK if est.converged else EXIT_NUMERIC


def _cmd_simulate(args) -> int:
    if args.scenario is not None:
        spec, mc = dataio.read_scenario_json(args.scenario)
    else:
        spec, mc = default_scenario(), {}

    spec = spec.with_overrides(m=args.m, seed=args.seed)
    replicates = args.replicates if args.replicates is not None \
        else int(mc.get("replicates", 1000))
    if replicates < 1:
        raise DataFormatError("--replicates must be >= 1")
    level = args.level if args.level is not None \
        else float(mc.get("level", 0.95))
    if args.u is not None:
        u = _parse_u(args.u)
    elif "u" in mc:
        u = np.asarray(mc["u"], dtype=np.float64)
    else:
        u = np.zeros(spec.d)
        u[0] = 1.0

    summary = run_monte_carlo(spec, replicates, u, level=level,
                              threads=args.threads)
    dataio.write_json(args.out, dataio.summary_to_dict(summary))
    csv_path = args.replicates_csv
    if csv_path is None:
        out = Path(args.out)
        csv_path = out.with_name(out.stem + ".replicates.csv")
    dataio.write_replicates_csv(csv_path, summary)
    return EXIT_NUMERIC if summary.invalid else EXIT_OK


def _cmd_validate(args) -> int:
    report = validation.run_suites(args.suite, quick=args.quick,
                                   seed=args.seed)
    text = dataio.dumps_json(report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ewtls",
        description="Weighted total least squares estimation for "
                    "errors-in-variables data with per-row covariances",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_estimate(sub)
    _add_simulate(sub)
    _add_validate(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "estimate": _cmd_estimate,
        "simulate": _cmd_simulate,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except _INPUT_ERRORS as exc:
        print(f"ewtls: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _NUMERIC_ERRORS as exc:
        print(f"ewtls: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EwtlsError as exc:
        print(f"ewtls: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
