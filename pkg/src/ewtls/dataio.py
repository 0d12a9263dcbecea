"""File-format boundary: CSV data, JSON covariance/scenario/results files.

Column indices are 1-based in every file format and 0-based in the Python
API; this module owns the conversion.  All floats are serialized with 17
significant digits so values round-trip exactly, and writers are fully
deterministic (fixed key order, no timestamps).
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from ewtls.exceptions import DataFormatError
from ewtls.inference import ConfidenceEllipsoid, CovarianceEstimate, NuisanceEstimates
from ewtls.model import ErrorStructure, ProblemData
from ewtls.simulation import (
    ConstantProfile,
    ConvergingProfile,
    ERROR_LAWS,
    FixedMatrix,
    IidRows,
    McSummary,
    PerRowProfile,
    ScenarioSpec,
)
from ewtls.solver import EstimationResult

__all__ = [
    "read_matrix_csv",
    "read_cov_json",
    "load_problem",
    "scenario_from_dict",
    "scenario_to_dict",
    "read_scenario_json",
    "results_to_dict",
    "summary_to_dict",
    "write_json",
    "dumps_json",
    "write_replicates_csv",
]


# ---------------------------------------------------------------------------
# deterministic JSON with 17-significant-digit floats

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise DataFormatError("cannot serialize non-finite float to JSON")
    return format(float(x), ".17g")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad_in}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad_in}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise DataFormatError(f"cannot serialize object of type {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


# ---------------------------------------------------------------------------
# CSV data files

def read_matrix_csv(path, header: bool = False) -> np.ndarray:
    """Read an m x p numeric matrix; errors carry line and field positions.

    Scientific notation is accepted; decimal separator is the point, no
    locale handling.
    """
    rows: list[list[float]] = []
    width = None
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open data file: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not record or all(not f.strip() for f in record):
                continue
            parsed = []
            for fieldno, fieldval in enumerate(record, start=1):
                text = fieldval.strip()
                try:
                    value = float(text)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: line {lineno}, field {fieldno}: "
                        f"not a number: {text!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataFormatError(
                        f"{path}: line {lineno}, field {fieldno}: "
                        "non-finite value"
                    )
                parsed.append(value)
            if width is None:
                width = len(parsed)
            elif len(parsed) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} fields, "
                    f"got {len(parsed)}"
                )
            rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# covariance JSON

def _as_matrix(obj, what: str) -> np.ndarray:
    try:
        M = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError):
        raise DataFormatError(f"{what} is not a numeric matrix") from None
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DataFormatError(f"{what} must be a square matrix")
    return M


def read_cov_json(path, m: int, p: int) -> tuple[ErrorStructure, int]:
    """Parse the covariance file; returns (ErrorStructure, d).

    Required fields: ``d`` (output-column count, defines the A|B split) and
    ``J`` (1-based error-carrying column indices).  Exactly one of
    ``sigma_common`` (one |J| x |J| matrix for all rows) or ``sigma_per_row``
    (m matrices) must be present; ``sigma2`` is optional.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(f"cannot open covariance file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataFormatError(f"{path}: top-level JSON object expected")

    if "d" not in raw:
        raise DataFormatError(f"{path}: missing required field 'd'")
    d = raw["d"]
    if not isinstance(d, int) or not 1 <= d < p:
        raise DataFormatError(
            f"{path}: field 'd' must be an integer in [1, {p - 1}]"
        )

    if "J" not in raw:
        raise DataFormatError(f"{path}: missing required field 'J'")
    J_raw = raw["J"]
    if (not isinstance(J_raw, list) or not J_raw
            or not all(isinstance(j, int) for j in J_raw)):
        raise DataFormatError(f"{path}: field 'J' must be a list of integers")
    if any(b <= a for a, b in zip(J_raw, J_raw[1:])):
        raise DataFormatError(f"{path}: 'J' must be strictly increasing")
    if J_raw[0] < 1 or J_raw[-1] > p:
        raise DataFormatError(
            f"{path}: 'J' indices must lie in 1..{p} (1-based columns)"
        )
    J = tuple(j - 1 for j in J_raw)
    k = len(J)

    has_common = "sigma_common" in raw
    has_per_row = "sigma_per_row" in raw
    if has_common == has_per_row:
        raise DataFormatError(
            f"{path}: exactly one of 'sigma_common' or 'sigma_per_row' "
            "is required"
        )

    sigma2 = raw.get("sigma2")
    if sigma2 is not None:
        if not isinstance(sigma2, (int, float)) or sigma2 < 0:
            raise DataFormatError(f"{path}: 'sigma2' must be nonnegative")
        sigma2 = float(sigma2)

    try:
        if has_common:
            sigma = _as_matrix(raw["sigma_common"], "sigma_common")
            if sigma.shape != (k, k):
                raise DataFormatError(
                    f"{path}: sigma_common has shape {sigma.shape}, "
                    f"expected ({k}, {k}) for |J|={k}"
                )
            es = ErrorStructure.common(J, sigma, m, sigma2=sigma2)
        else:
            entries = raw["sigma_per_row"]
            if not isinstance(entries, list):
                raise DataFormatError(
                    f"{path}: sigma_per_row must be a list of matrices"
                )
            if len(entries) != m:
                row = min(len(entries) + 1, m)
                raise DataFormatError(
                    f"{path}: sigma_per_row has {len(entries)} entries but "
                    f"the data has m={m} rows; missing matrix for row {row}"
                )
            stack = np.empty((m, k, k))
            for i, entry in enumerate(entries):
                M = _as_matrix(entry, f"sigma_per_row[{i}] (row {i + 1})")
                if M.shape != (k, k):
                    raise DataFormatError(
                        f"{path}: matrix for row {i + 1} has shape {M.shape},"
                        f" expected ({k}, {k})"
                    )
                stack[i] = M
            es = ErrorStructure.per_row(J, stack, sigma2=sigma2)
    except DataFormatError:
        raise
    except Exception as exc:  # ModelInputError and friends become file errors
        raise DataFormatError(f"{path}: {exc}") from None
    return es, d


def load_problem(data_path, cov_path,
                 header: bool = False) -> tuple[ProblemData, ErrorStructure]:
    """Load and cross-validate a data/covariance file pair."""
    C = read_matrix_csv(data_path, header=header)
    m, p = C.shape
    errors, d = read_cov_json(cov_path, m=m, p=p)
    data = ProblemData(C=C, n=p - d, d=d)
    try:
        errors.validate_for(data.n, data.d)
    except Exception as exc:
        raise DataFormatError(f"{cov_path}: {exc}") from None
    return data, errors


# ---------------------------------------------------------------------------
# scenario JSON (mirrors ScenarioSpec; J is 1-based in the file)

def scenario_to_dict(spec: ScenarioSpec, mc: dict | None = None) -> dict:
    law = spec.a0_law
    if isinstance(law, FixedMatrix):
        a0_law = {"kind": "fixed", "A0": law.A0}
    else:
        a0_law = {"kind": "iid_rows", "mean": law.mean, "cov": law.cov}
    prof = spec.sigma_profile
    if isinstance(prof, ConstantProfile):
        profile = {"kind": "constant", "sigma": prof.sigma}
    elif isinstance(prof, ConvergingProfile):
        profile = {"kind": "converging", "sigma_inf": prof.sigma_inf,
                   "gamma": prof.gamma}
    else:
        profile = {"kind": "per_row", "sigmas": prof.sigmas}
    out = {
        "m": spec.m,
        "n": spec.n,
        "d": spec.d,
        "X0": spec.X0,
        "a0_law": a0_law,
        "J": [j + 1 for j in spec.J],
        "sigma2": spec.sigma2,
        "sigma_profile": profile,
        "error_law": spec.error_law,
        "seed": spec.seed,
    }
    if spec.allow_asymmetric_errors:
        out["allow_asymmetric_errors"] = True
    if mc:
        out["mc"] = mc
    return out


def scenario_from_dict(raw: dict, source: str = "scenario") -> ScenarioSpec:
    def need(key):
        if key not in raw:
            raise DataFormatError(f"{source}: missing required field '{key}'")
        return raw[key]

    try:
        m, n, d = int(need("m")), int(need("n")), int(need("d"))
        X0 = np.asarray(need("X0"), dtype=np.float64)
        J_raw = need("J")
        if (not isinstance(J_raw, list)
                or not all(isinstance(j, int) for j in J_raw)):
            raise DataFormatError(f"{source}: 'J' must be a list of integers")
        if J_raw and (J_raw[0] < 1 or J_raw[-1] > n + d):
            raise DataFormatError(
                f"{source}: 'J' indices must lie in 1..{n + d}"
            )
        J = tuple(j - 1 for j in J_raw)
        sigma2 = float(need("sigma2"))

        law_raw = need("a0_law")
        kind = law_raw.get("kind")
        if kind == "fixed":
            a0_law = FixedMatrix(A0=np.asarray(law_raw["A0"], dtype=np.float64))
        elif kind == "iid_rows":
            a0_law = IidRows(
                mean=np.asarray(law_raw["mean"], dtype=np.float64),
                cov=np.asarray(law_raw["cov"], dtype=np.float64),
            )
        else:
            raise DataFormatError(
                f"{source}: a0_law.kind must be 'fixed' or 'iid_rows'"
            )

        prof_raw = need("sigma_profile")
        pkind = prof_raw.get("kind")
        if pkind == "constant":
            profile = ConstantProfile(
                sigma=np.asarray(prof_raw["sigma"], dtype=np.float64)
            )
        elif pkind == "converging":
            profile = ConvergingProfile(
                sigma_inf=np.asarray(prof_raw["sigma_inf"], dtype=np.float64),
                gamma=float(prof_raw.get("gamma", 1.0)),
            )
        elif pkind == "per_row":
            profile = PerRowProfile(
                sigmas=np.asarray(prof_raw["sigmas"], dtype=np.float64)
            )
        else:
            raise DataFormatError(
                f"{source}: sigma_profile.kind must be 'constant', "
                "'converging' or 'per_row'"
            )

        error_law = raw.get("error_law", "gaussian")
        allow_asym = bool(raw.get("allow_asymmetric_errors", False))
        if error_law not in ERROR_LAWS + UNSUPPORTED_ERROR_LAWS:
            raise DataFormatError(
                f"{source}: error_law must be one of {list(ERROR_LAWS)}"
            )
        return ScenarioSpec(
            m=m, n=n, d=d, X0=X0, a0_law=a0_law, J=J, sigma2=sigma2,
            sigma_profile=profile, error_law=error_law,
            seed=int(raw.get("seed", 0)),
            allow_asymmetric_errors=allow_asym,
        )
    except DataFormatError:
        raise
    except KeyError as exc:
        raise DataFormatError(f"{source}: missing field {exc}") from None
    except Exception as exc:
        raise DataFormatError(f"{source}: {exc}") from None


def read_scenario_json(path) -> tuple[ScenarioSpec, dict]:
    """Load (ScenarioSpec, mc-defaults dict) from a scenario file."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(f"cannot open scenario file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataFormatError(f"{path}: top-level JSON object expected")
    spec = scenario_from_dict(raw, source=str(path))
    mc = raw.get("mc", {})
    if not isinstance(mc, dict):
        raise DataFormatError(f"{path}: 'mc' must be an object")
    return spec, mc


# ---------------------------------------------------------------------------
# results / summary writers

def results_to_dict(est: EstimationResult, nuis: NuisanceEstimates,
                    cov: CovarianceEstimate | None = None,
                    ellipsoid: ConfidenceEllipsoid | None = None,
                    extra_diagnostics: dict | None = None) -> dict:
    diagnostics = {
        "converged": est.converged,
        "iterations": est.iterations,
        "grad_norm": est.grad_norm,
        "eq_residual_norm": est.eq_residual_norm,
        "Q_min": est.Q_min,
        "init_used": est.init_used,
    }
    if extra_diagnostics:
        diagnostics.update(extra_diagnostics)
    return {
        "X_hat": est.X_hat,
        "sigma2_hat": nuis.sigma2_hat,
        "VA_hat": nuis.VA_hat,
        "Su_hat": None if cov is None else {
            "u": cov.u, "matrix": cov.Su_hat,
        },
        "ellipsoid": None if ellipsoid is None else {
            "center": ellipsoid.center,
            "shape": ellipsoid.shape,
            "level": ellipsoid.level,
            "radius2": ellipsoid.radius2,
        },
        "diagnostics": diagnostics,
    }


def summary_to_dict(s: McSummary) -> dict:
    return {
        "m": s.m,
        "n": s.n,
        "d": s.d,
        "u": s.u,
        "level": s.level,
        "seed": s.seed,
        "replicates": s.replicates,
        "converged_count": s.converged_count,
        "excluded_fraction": s.excluded_fraction,
        "invalid": s.invalid,
        "degenerate": s.degenerate,
        "median_err_fro": s.median_err_fro,
        "mean_err_fro": s.mean_err_fro,
        "coverage": s.coverage,
        "emp_cov": s.emp_cov,
        "mean_Su_hat": s.mean_Su_hat,
        "mean_sigma2_hat": s.mean_sigma2_hat,
        "mean_VA_hat": s.mean_VA_hat,
        "stat_quantiles": None if s.stat_quantiles is None else {
            _fmt_float(q): v for q, v in s.stat_quantiles.items()
        },
        "chi2_quantiles": {
            _fmt_float(q): v for q, v in s.chi2_quantiles.items()
        },
    }


def write_replicates_csv(path, summary: McSummary) -> None:
    """Flat per-replicate table for external plotting."""
    n, d = summary.n, summary.d
    header = ["replicate", "converged", "iterations", "grad_norm", "err_fro",
              "sigma2_hat", "statistic", "covered"]
    header += [f"x_hat_{i + 1}_{j + 1}" for i in range(n) for j in range(d)]

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return _fmt_float(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for o in summary.outcomes:
            row = [cell(o.index), cell(o.converged), cell(o.iterations),
                   cell(o.grad_norm), cell(o.err_fro), cell(o.sigma2_hat),
                   cell(o.statistic), cell(o.covered)]
            row += [cell(v) for v in np.asarray(o.X_hat).reshape(-1)]
            writer.writerow(row)
