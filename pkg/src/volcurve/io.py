"""File formats: CSV ingestion, config parsing, fitted-model serialization.

All delimited outputs are plain CSV with fixed headers; floats are written
in shortest round-trip form so reloading reproduces values bit-for-bit.
Randomized outputs carry their seed as a leading ``# seed=N`` comment line.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .design import ModelSpec, PatientRecord, SmoothTerm
from .errors import InputError
from .fit import FittedModel
from .proxy import VolumeTable
from .sim import SimConfig
from .spline import KnotVector, SplineConfig

FITTED_FORMAT = "volcurve-fitted-model"
FITTED_VERSION = 1

CURVE_HEADER = "v,f_hat,se,band_lo,band_hi,plus_tau,minus_tau"
PROB_HEADER = "v,pi_star,band_lo,band_hi,plus_tau,minus_tau"
HIST_HEADER = "volume,count"
STUDY_HEADER = (
    "config,shape,I,mu_n,tau_true,replicate,seed,status,error,n_obs,converged,"
    "tau_hat,tau_boundary,p_smooth,p_tau,or_v1,or_v2,or_hat,or_lo,or_hi,"
    "edf_smooth,laml"
)
CURVES_HEADER = "config,replicate,v,f_hat"


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return repr(x)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def ingest_patients(path) -> list:
    """Read patient records from CSV: provider_id,year,outcome,<covariates...>."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["provider_id", "year", "outcome"]:
            raise InputError(
                f"{path}: header must start with provider_id,year,outcome "
                f"(got {','.join(header[:3])})"
            )
        covariate_names = header[3:]
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}: line {line_no}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            pid = row[0].strip()
            if not pid:
                raise InputError(f"{path}: line {line_no}: empty provider_id")
            try:
                year = int(row[1])
            except ValueError:
                raise InputError(
                    f"{path}: line {line_no}: year {row[1]!r} is not an integer"
                ) from None
            if row[2].strip() not in ("0", "1"):
                raise InputError(
                    f"{path}: line {line_no}: outcome must be 0 or 1, got {row[2]!r}"
                )
            covariates = {}
            for name, cell in zip(covariate_names, row[3:]):
                cell = cell.strip()
                if cell == "":
                    raise InputError(
                        f"{path}: line {line_no}: missing value for covariate "
                        f"{name!r} (provider {pid})"
                    )
                try:
                    covariates[name] = float(cell)
                except ValueError:
                    raise InputError(
                        f"{path}: line {line_no}: covariate {name!r} value "
                        f"{cell!r} is not a number"
                    ) from None
            records.append(
                PatientRecord(pid, year, int(row[2]), covariates)
            )
    if not records:
        raise InputError(f"{path}: no data rows")
    return records


def ingest_volumes(path) -> VolumeTable:
    """Read yearly volumes from CSV: provider_id,year,volume (volume >= 0)."""
    path = Path(path)
    entries = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["provider_id", "year", "volume"]:
            raise InputError(f"{path}: header must be provider_id,year,volume")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise InputError(
                    f"{path}: line {line_no}: expected 3 fields, got {len(row)}"
                )
            pid = row[0].strip()
            try:
                year = int(row[1])
                volume = int(row[2])
            except ValueError:
                raise InputError(
                    f"{path}: line {line_no}: year and volume must be integers"
                ) from None
            if volume < 0:
                raise InputError(
                    f"{path}: line {line_no}: negative volume {volume}"
                )
            if (pid, year) in entries:
                raise InputError(
                    f"{path}: line {line_no}: duplicate entry for provider "
                    f"{pid}, year {year}"
                )
            entries[(pid, year)] = volume
    return VolumeTable(entries=entries)


# ---------------------------------------------------------------------------
# model / simulation configuration
# ---------------------------------------------------------------------------


def spline_config_from_json(obj: dict) -> SplineConfig:
    known = {"n_basis", "degree", "penalty_order", "knot_rule"}
    extra = set(obj) - known - {"name"}
    if extra:
        raise InputError(f"unknown spline options {sorted(extra)}")
    return SplineConfig(**{k: obj[k] for k in known if k in obj})


def model_spec_from_json(obj) -> ModelSpec:
    if isinstance(obj, (str, Path)):
        with open(obj, encoding="utf-8") as fh:
            obj = json.load(fh)
    smooth_terms = tuple(
        (term["name"], spline_config_from_json(term))
        for term in obj.get("smooth_terms", ())
    )
    return ModelSpec(
        linear_terms=tuple(obj.get("linear_terms", ())),
        smooth_terms=smooth_terms,
        year_intercepts=bool(obj.get("year_intercepts", False)),
        random_intercept=bool(obj.get("random_intercept", True)),
        volume_mode=obj.get("volume_mode", "caseload"),
    )


def model_spec_to_json(spec: ModelSpec) -> dict:
    return {
        "linear_terms": list(spec.linear_terms),
        "smooth_terms": [
            {
                "name": name,
                "n_basis": cfg.n_basis,
                "degree": cfg.degree,
                "penalty_order": cfg.penalty_order,
                "knot_rule": cfg.knot_rule,
            }
            for name, cfg in spec.smooth_terms
        ],
        "year_intercepts": spec.year_intercepts,
        "random_intercept": spec.random_intercept,
        "volume_mode": spec.volume_mode,
    }


def sim_config_from_json(obj) -> SimConfig:
    if isinstance(obj, (str, Path)):
        with open(obj, encoding="utf-8") as fh:
            obj = json.load(fh)
    kw = dict(obj)
    if "year_effects" in kw and kw["year_effects"] is not None:
        kw["year_effects"] = tuple(kw["year_effects"])
    try:
        return SimConfig(**kw)
    except TypeError as exc:
        raise InputError(f"bad simulation config: {exc}") from None


def study_config_from_json(obj) -> dict:
    """Study file: {"configs": [SimConfig...], "n_reps": int, ...options}."""
    if isinstance(obj, (str, Path)):
        with open(obj, encoding="utf-8") as fh:
            obj = json.load(fh)
    if "configs" not in obj or not obj["configs"]:
        raise InputError("study config needs a non-empty 'configs' list")
    out = {
        "configs": [sim_config_from_json(c) for c in obj["configs"]],
        "n_reps": int(obj.get("n_reps", 50)),
        "base_seed": int(obj.get("base_seed", 0)),
        "or_pair": tuple(obj.get("or_pair", (90.0, 100.0))),
        "grid_size": int(obj.get("grid_size", 50)),
        "n_basis": int(obj.get("n_basis", 10)),
        "with_curve": bool(obj.get("with_curve", True)),
    }
    if len(out["or_pair"]) != 2:
        raise InputError("or_pair must have exactly two volumes")
    return out


# ---------------------------------------------------------------------------
# fitted model serialization
# ---------------------------------------------------------------------------


def _tri_pack(cov: np.ndarray) -> list:
    idx = np.tril_indices(cov.shape[0])
    return [float(v) for v in cov[idx]]


def _tri_unpack(values, dim: int) -> np.ndarray:
    cov = np.zeros((dim, dim))
    idx = np.tril_indices(dim)
    cov[idx] = values
    cov = cov + np.tril(cov, -1).T
    return cov


def fitted_to_json(fitted: FittedModel, inference: dict | None = None) -> dict:
    smooths = {}
    for name, term in fitted.smooths.items():
        smooths[name] = {
            "name": name,
            "config": {
                "n_basis": term.config.n_basis,
                "degree": term.config.degree,
                "penalty_order": term.config.penalty_order,
                "knot_rule": term.config.knot_rule,
            },
            "degree": term.knots.degree,
            "knots": [float(k) for k in term.knots.knots],
            "centering": [[float(v) for v in row] for row in term.centering],
            "cols": list(term.cols),
        }
    doc = {
        "format": FITTED_FORMAT,
        "version": FITTED_VERSION,
        "model_spec": model_spec_to_json(fitted.spec),
        "n_obs": fitted.n_obs,
        "years": list(fitted.years),
        "provider_ids": list(fitted.provider_ids),
        "index_map": {k: list(v) for k, v in fitted.index_map.items()},
        "penalty_names": list(fitted.penalty_names),
        "log_lambdas": [float(v) for v in fitted.log_lambdas],
        "theta": [float(v) for v in fitted.theta],
        "cov_dim": int(fitted.posterior_cov.shape[0]),
        "cov_lower": _tri_pack(fitted.posterior_cov),
        "tau_hat": fitted.tau_hat,
        "tau_boundary": fitted.tau_boundary,
        "laml": fitted.laml,
        "edf": {k: float(v) for k, v in fitted.edf.items()},
        "edf1": {k: float(v) for k, v in fitted.edf1.items()},
        "deviance": fitted.deviance,
        "converged": fitted.converged,
        "iterations": fitted.iterations,
        "eta_star": fitted.eta_star,
        "volume_hist": {
            "values": [float(v) for v in fitted.volume_hist[0]],
            "counts": [int(c) for c in fitted.volume_hist[1]],
        },
        "smooths": smooths,
    }
    if inference is not None:
        doc["inference"] = inference
    return doc


def save_fitted(fitted: FittedModel, path, inference: dict | None = None) -> None:
    doc = fitted_to_json(fitted, inference=inference)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_fitted(path) -> FittedModel:
    """Reload a fitted model for prediction and covariance-based inference.

    The training data are not stored, so refit-based operations (tau test,
    profile intervals) are unavailable on the result.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FITTED_FORMAT:
        raise InputError(f"{path}: not a fitted-model file")
    if doc.get("version") != FITTED_VERSION:
        raise InputError(f"{path}: unsupported version {doc.get('version')}")
    spec = model_spec_from_json(doc["model_spec"])
    smooths = {}
    for name, sm in doc["smooths"].items():
        cfg = spline_config_from_json(sm["config"])
        smooths[name] = SmoothTerm(
            name=name,
            config=cfg,
            knots=KnotVector(
                knots=np.array(sm["knots"], dtype=float), degree=int(sm["degree"])
            ),
            centering=np.array(sm["centering"], dtype=float),
            cols=tuple(sm["cols"]),
        )
    return FittedModel(
        spec=spec,
        index_map={k: tuple(v) for k, v in doc["index_map"].items()},
        smooths=smooths,
        provider_ids=tuple(doc["provider_ids"]),
        years=tuple(doc["years"]),
        n_obs=int(doc["n_obs"]),
        theta=np.array(doc["theta"], dtype=float),
        posterior_cov=_tri_unpack(doc["cov_lower"], int(doc["cov_dim"])),
        log_lambdas=np.array(doc["log_lambdas"], dtype=float),
        penalty_names=tuple(doc["penalty_names"]),
        tau_hat=doc["tau_hat"],
        tau_boundary=bool(doc["tau_boundary"]),
        laml=float(doc["laml"]),
        edf={k: float(v) for k, v in doc["edf"].items()},
        edf1={k: float(v) for k, v in doc.get("edf1", {}).items()},
        deviance=float(doc["deviance"]),
        converged=bool(doc["converged"]),
        iterations=int(doc["iterations"]),
        eta_star=doc["eta_star"],
        volume_hist=(
            tuple(doc["volume_hist"]["values"]),
            tuple(doc["volume_hist"]["counts"]),
        ),
        fit=None,
        model=None,
    )


# ---------------------------------------------------------------------------
# delimited outputs
# ---------------------------------------------------------------------------


def write_curve_csv(curve, path) -> None:
    """Logit-scale curve: v,f_hat,se,band_lo,band_hi,plus_tau,minus_tau."""
    tau = curve.tau_hat or 0.0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# seed={curve.seed}\n")
        fh.write(CURVE_HEADER + "\n")
        for i in range(len(curve.grid)):
            fh.write(
                ",".join(
                    _fmt(v)
                    for v in (
                        curve.grid[i],
                        curve.f_hat[i],
                        curve.se[i],
                        curve.band_lower[i],
                        curve.band_upper[i],
                        curve.f_hat[i] + tau,
                        curve.f_hat[i] - tau,
                    )
                )
                + "\n"
            )


def write_probability_csv(prob, path) -> None:
    """Probability-scale curve: v,pi_star,band_lo,band_hi,plus_tau,minus_tau."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# seed={prob.seed}\n")
        fh.write(PROB_HEADER + "\n")
        for i in range(len(prob.grid)):
            fh.write(
                ",".join(
                    _fmt(v)
                    for v in (
                        prob.grid[i],
                        prob.pi_star[i],
                        prob.band_lower[i],
                        prob.band_upper[i],
                        prob.plus_tau[i],
                        prob.minus_tau[i],
                    )
                )
                + "\n"
            )


def write_histogram_csv(volume_hist, path) -> None:
    values, counts = volume_hist
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HIST_HEADER + "\n")
        for v, c in zip(values, counts):
            fh.write(f"{_fmt(v)},{int(c)}\n")


def or_estimates_to_json(estimates, strict_se: bool, seed=None) -> dict:
    return {
        "kind": "odds-ratios",
        "strict_se": strict_se,
        "estimates": [
            {
                "v1": e.v1,
                "v2": e.v2,
                "or_hat": e.or_hat,
                "ci_lower": e.ci_lower,
                "ci_upper": e.ci_upper,
                "se_g": e.se_g,
            }
            for e in estimates
        ],
    }


def write_study_csv(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(STUDY_HEADER + "\n")
        for r in results:
            fields = [
                str(r.config_index),
                r.shape,
                str(r.I),
                _fmt(r.mu_n),
                _fmt(r.tau_true),
                str(r.replicate),
                str(r.seed),
                r.status,
                '"' + r.error.replace('"', "'") + '"' if r.error else "",
                str(r.n_obs),
                _fmt(r.converged),
                _fmt(r.tau_hat),
                _fmt(r.tau_boundary),
                _fmt(r.p_smooth),
                _fmt(r.p_tau),
                _fmt(r.or_v1),
                _fmt(r.or_v2),
                _fmt(r.or_hat),
                _fmt(r.or_lo),
                _fmt(r.or_hi),
                _fmt(r.edf_smooth),
                _fmt(r.laml),
            ]
            fh.write(",".join(fields) + "\n")


def write_study_curves_csv(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CURVES_HEADER + "\n")
        for r in results:
            for v, f in zip(r.curve_grid, r.curve_f):
                fh.write(f"{r.config_index},{r.replicate},{_fmt(v)},{_fmt(f)}\n")


def write_summary_csv(rows, path) -> None:
    if not rows:
        raise InputError("no summary rows")
    keys = list(rows[0].keys())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[k]) if not isinstance(row[k], str) else row[k] for k in keys) + "\n")


def write_patients_csv(records, path, covariate_names=None) -> None:
    if covariate_names is None:
        covariate_names = sorted(records[0].covariates) if records else []
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["provider_id", "year", "outcome", *covariate_names]) + "\n")
        for r in records:
            cells = [r.provider_id, str(r.year), str(r.outcome)]
            cells += [_fmt(r.covariates[c]) for c in covariate_names]
            fh.write(",".join(cells) + "\n")


def write_volumes_csv(table: VolumeTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("provider_id,year,volume\n")
        for (pid, year), vol in sorted(table.entries.items()):
            fh.write(f"{pid},{year},{int(vol)}\n")


def write_variability_csv(stats, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("provider_id,mean,sd,n_years,single_year\n")
        for s in stats:
            fh.write(
                f"{s.provider_id},{_fmt(s.mean)},{_fmt(s.sd)},{s.n_years},"
                f"{_fmt(s.single_year)}\n"
            )
