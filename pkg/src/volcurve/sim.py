"""Synthetic clustered data and the simulation study harness.

Data are generated provider by provider: a Poisson caseload, a Gaussian
provider effect, then per-patient risk factors and Bernoulli outcomes whose
probability is the inverse logit of the linear predictor. Every replicate
derives its own generator stream from (base seed, config index, replicate
index), so results are independent of execution order and parallelism.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing as mp

import numpy as np
from scipy.special import expit, logit

from . import inference
from .design import ModelSpec, PatientRecord, assemble
from .errors import InputError, VolcurveError
from .fit import optimize
from .proxy import VolumeTable
from .spline import SplineConfig

log = logging.getLogger("volcurve.sim")

SHAPES = ("none", "linear", "ushape")

_BLAS_ENV = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "BLIS_NUM_THREADS",
)


def true_volume_effect(shape: str, n) -> np.ndarray | float:
    """Volume effect used by the generator: none, linear decrease, or U-shape."""
    n = np.asarray(n, dtype=float)
    if shape == "none":
        out = np.zeros_like(n)
    elif shape == "linear":
        out = 0.03 * (100.0 - n)
    elif shape == "ushape":
        out = (n - 100.0) ** 2 / 1000.0
    else:
        raise InputError(f"unknown volume-effect shape {shape!r}")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SimConfig:
    """Generator parameters.

    ``beta0`` defaults to logit(0.1), a 10% baseline event probability; the
    ``beta0_literal`` switch instead uses inverse-logit(0.1) = 0.525 for
    sensitivity runs. A multi-year setup (``n_years`` > 1) draws one volume
    per provider-year plus optional pre-study history years and applies the
    volume effect to the cumulative average of non-zero yearly volumes.
    """

    I: int
    mu_n: float = 100.0
    tau: float = 0.5
    pi1: float = 0.3
    beta0: float | None = None
    beta1: float = 0.3
    beta2: float = 0.5
    shape: str = "ushape"
    beta0_literal: bool = False
    n_years: int = 1
    history_years: int = 0
    start_year: int = 2014
    year_effects: tuple | None = None

    def __post_init__(self):
        if self.I < 2:
            raise InputError("need at least 2 providers")
        if not 0.0 < self.pi1 < 1.0:
            raise InputError("pi1 must lie in (0, 1)")
        if self.mu_n <= 0:
            raise InputError("mu_n must be positive")
        if self.tau < 0:
            raise InputError("tau must be nonnegative")
        if self.shape not in SHAPES:
            raise InputError(f"unknown shape {self.shape!r}")
        if self.n_years < 1 or self.history_years < 0:
            raise InputError("invalid year configuration")
        if self.year_effects is not None and len(self.year_effects) != self.n_years:
            raise InputError("year_effects must have one entry per analysis year")

    @property
    def beta0_effective(self) -> float:
        if self.beta0 is not None:
            return float(self.beta0)
        return float(expit(0.1)) if self.beta0_literal else float(logit(0.1))


@dataclass(frozen=True)
class SimData:
    """One generated dataset plus the true provider effects."""

    records: list
    volume_table: VolumeTable | None
    u: np.ndarray
    caseloads: np.ndarray  # (I,) single-year, (I, n_years) multi-year
    provider_ids: tuple
    config: SimConfig
    seed: int


def _provider_ids(n: int) -> tuple:
    width = len(str(n))
    return tuple(f"P{i + 1:0{width}d}" for i in range(n))


def _draw_nonzero_poisson(rng, mu, size) -> np.ndarray:
    draws = rng.poisson(mu, size=size)
    while np.any(draws == 0):
        zero = draws == 0
        draws[zero] = rng.poisson(mu, size=int(zero.sum()))
    return draws


def generate(config: SimConfig, seed: int) -> SimData:
    """Generate one dataset; the same seed yields bitwise-identical output."""
    rng = np.random.default_rng(seed)
    ids = _provider_ids(config.I)
    beta0 = config.beta0_effective
    year_effects = (
        np.asarray(config.year_effects, dtype=float)
        if config.year_effects is not None
        else np.zeros(config.n_years)
    )

    if config.n_years == 1:
        n = _draw_nonzero_poisson(rng, config.mu_n, config.I)
        u = rng.normal(0.0, config.tau, size=config.I)
        f_vol = true_volume_effect(config.shape, n)
        records: list[PatientRecord] = []
        year = config.start_year
        for i in range(config.I):
            m = int(n[i])
            x1 = (rng.random(m) < config.pi1).astype(float)
            x2 = rng.standard_normal(m)
            eta = beta0 + year_effects[0] + config.beta1 * x1 + config.beta2 * x2
            eta += f_vol[i] + u[i]
            y = (rng.random(m) < expit(eta)).astype(int)
            records.extend(
                PatientRecord(ids[i], year, int(y[j]), {"x1": x1[j], "x2": x2[j]})
                for j in range(m)
            )
        return SimData(
            records=records,
            volume_table=None,
            u=u,
            caseloads=n.astype(float),
            provider_ids=ids,
            config=config,
            seed=seed,
        )

    # multi-year: yearly volumes (history years included), cumulative-average
    # volume effect, year-specific intercepts
    s, h = config.history_years, config.n_years
    vols = np.empty((config.I, s + h), dtype=np.int64)
    for k in range(s + h):
        vols[:, k] = rng.poisson(config.mu_n, size=config.I)
    dead = vols[:, s:].sum(axis=1) == 0
    while np.any(dead):
        for k in range(s + h):
            vols[dead, k] = rng.poisson(config.mu_n, size=int(dead.sum()))
        dead = vols[:, s:].sum(axis=1) == 0
    u = rng.normal(0.0, config.tau, size=config.I)

    nonzero = vols > 0
    cum_sum = np.cumsum(vols, axis=1, dtype=float)
    cum_cnt = np.cumsum(nonzero, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum_avg = cum_sum / cum_cnt  # NaN while a provider has no history yet

    years = tuple(config.start_year + k for k in range(h))
    entries = {}
    for i in range(config.I):
        for k in range(s + h):
            entries[(ids[i], config.start_year - s + k)] = int(vols[i, k])
    table = VolumeTable(entries=entries)

    records = []
    for k in range(h):
        col = s + k
        for i in range(config.I):
            m = int(vols[i, col])
            if m == 0:
                continue
            v_ik = cum_avg[i, col]
            x1 = (rng.random(m) < config.pi1).astype(float)
            x2 = rng.standard_normal(m)
            eta = beta0 + year_effects[k] + config.beta1 * x1 + config.beta2 * x2
            eta += true_volume_effect(config.shape, v_ik) + u[i]
            y = (rng.random(m) < expit(eta)).astype(int)
            records.extend(
                PatientRecord(ids[i], years[k], int(y[j]), {"x1": x1[j], "x2": x2[j]})
                for j in range(m)
            )
    return SimData(
        records=records,
        volume_table=table,
        u=u,
        caseloads=vols[:, s:].astype(float),
        provider_ids=ids,
        config=config,
        seed=seed,
    )


@dataclass(frozen=True)
class StudyResult:
    """Per-replicate outputs of the simulation study."""

    config_index: int
    replicate: int
    seed: int
    shape: str
    I: int
    mu_n: float
    tau_true: float
    status: str = "ok"
    error: str = ""
    n_obs: int = 0
    converged: bool = False
    tau_hat: float = float("nan")
    tau_boundary: bool = False
    p_smooth: float = float("nan")
    p_tau: float = float("nan")
    or_v1: float = float("nan")
    or_v2: float = float("nan")
    or_hat: float = float("nan")
    or_lo: float = float("nan")
    or_hi: float = float("nan")
    edf_smooth: float = float("nan")
    laml: float = float("nan")
    curve_grid: tuple = ()
    curve_f: tuple = ()


def replicate_seed(base_seed: int, config_index: int, replicate: int) -> int:
    """Stable per-replicate seed derived from the study seed and indices."""
    ss = np.random.SeedSequence([int(base_seed), int(config_index), int(replicate)])
    return int(ss.generate_state(1, np.uint64)[0])


def model_spec_for(config: SimConfig, n_basis: int = 10) -> ModelSpec:
    smooth = SplineConfig(n_basis=n_basis)
    if config.n_years == 1:
        return ModelSpec(
            linear_terms=("x1", "x2"),
            smooth_terms=(("volume", smooth),),
            year_intercepts=False,
            random_intercept=True,
            volume_mode="caseload",
        )
    return ModelSpec(
        linear_terms=("x1", "x2"),
        smooth_terms=(("volume", smooth),),
        year_intercepts=True,
        random_intercept=True,
        volume_mode="cumulative_average",
    )


def run_replicate(
    config: SimConfig,
    config_index: int,
    replicate: int,
    seed: int,
    or_pair=(90.0, 100.0),
    grid_size: int = 50,
    with_curve: bool = True,
    n_basis: int = 10,
) -> StudyResult:
    """Generate, fit, and summarize one replicate; failures become a record."""
    base = dict(
        config_index=config_index,
        replicate=replicate,
        seed=seed,
        shape=config.shape,
        I=config.I,
        mu_n=config.mu_n,
        tau_true=config.tau,
    )
    try:
        data = generate(config, seed)
        spec = model_spec_for(config, n_basis=n_basis)
        model = assemble(data.records, spec, volumes=data.volume_table)
        fitted = optimize(model)
        p_smooth = inference.test_smooth(fitted).p_value
        p_tau = inference.test_tau(model, full=fitted).p_value
        orr = inference.odds_ratio(fitted, or_pair[0], or_pair[1])
        curve_grid: tuple = ()
        curve_f: tuple = ()
        if with_curve:
            lo, hi = fitted.support()
            grid = np.linspace(lo, hi, grid_size)
            term = fitted.smooths["volume"]
            a, b = fitted.smooth_cols("volume")
            f_hat = term.block(grid) @ fitted.theta[a:b]
            curve_grid = tuple(float(v) for v in grid)
            curve_f = tuple(float(v) for v in f_hat)
        return StudyResult(
            **base,
            status="ok",
            n_obs=model.n_obs,
            converged=fitted.converged,
            tau_hat=fitted.tau_hat,
            tau_boundary=fitted.tau_boundary,
            p_smooth=p_smooth,
            p_tau=p_tau,
            or_v1=float(or_pair[0]),
            or_v2=float(or_pair[1]),
            or_hat=orr.or_hat,
            or_lo=orr.ci_lower,
            or_hi=orr.ci_upper,
            edf_smooth=fitted.edf["s(volume)"],
            laml=fitted.laml,
            curve_grid=curve_grid,
            curve_f=curve_f,
        )
    except VolcurveError as exc:
        return StudyResult(**base, status="error", error=f"{exc.code}: {exc}")
    except Exception as exc:  # replicate failures must never abort the study
        return StudyResult(**base, status="error", error=f"{type(exc).__name__}: {exc}")


def _worker(payload: dict) -> StudyResult:
    return run_replicate(**payload)


def run_study(
    config_grid,
    n_reps: int,
    base_seed: int,
    parallelism: int = 1,
    or_pair=(90.0, 100.0),
    grid_size: int = 50,
    with_curve: bool = True,
    n_basis: int = 10,
) -> list:
    """Run ``n_reps`` replicates per config; results are order-stable.

    ``parallelism`` >= 1 runs replicates in spawned worker processes pinned
    to single-threaded BLAS, so outputs are byte-identical for any worker
    count; ``parallelism=0`` runs inline in this process (debugging aid).
    """
    if n_reps < 1:
        raise InputError("n_reps must be at least 1")
    configs = list(config_grid)
    payloads = [
        dict(
            config=cfg,
            config_index=ci,
            replicate=ri,
            seed=replicate_seed(base_seed, ci, ri),
            or_pair=tuple(or_pair),
            grid_size=grid_size,
            with_curve=with_curve,
            n_basis=n_basis,
        )
        for ci, cfg in enumerate(configs)
        for ri in range(n_reps)
    ]

    if parallelism == 0:
        results = [_worker(p) for p in payloads]
    else:
        saved = {v: os.environ.get(v) for v in _BLAS_ENV}
        os.environ.update({v: "1" for v in _BLAS_ENV})
        try:
            ctx = mp.get_context("spawn")
            chunk = max(1, len(payloads) // (8 * parallelism))
            with ProcessPoolExecutor(max_workers=parallelism, mp_context=ctx) as ex:
                results = list(ex.map(_worker, payloads, chunksize=chunk))
        finally:
            for k, v in saved.items():
                if v is None:
                    os.environ.pop(k, None)
                else:
                    os.environ[k] = v
    results.sort(key=lambda r: (r.config_index, r.replicate))
    n_err = sum(1 for r in results if r.status != "ok")
    if n_err:
        log.warning("study finished with %d failed replicates", n_err)
    return results


def summarize(results) -> list:
    """Per-config quartile summary of tau-hat, p-values, and the odds ratio."""
    if not results:
        raise InputError("no study results to summarize")
    by_config: dict[int, list] = {}
    for r in results:
        by_config.setdefault(r.config_index, []).append(r)
    rows = []
    for ci in sorted(by_config):
        group = by_config[ci]
        ok = [r for r in group if r.status == "ok"]
        row = {
            "config": ci,
            "shape": group[0].shape,
            "I": group[0].I,
            "mu_n": group[0].mu_n,
            "tau_true": group[0].tau_true,
            "n_ok": len(ok),
            "n_failed": len(group) - len(ok),
        }
        for name, vals in (
            ("tau_hat", [r.tau_hat for r in ok]),
            ("p_smooth", [r.p_smooth for r in ok]),
            ("p_tau", [r.p_tau for r in ok]),
            ("or_hat", [r.or_hat for r in ok]),
        ):
            if ok:
                q25, q50, q75 = np.percentile(vals, [25.0, 50.0, 75.0])
            else:
                q25 = q50 = q75 = float("nan")
            row[f"{name}_q25"] = float(q25)
            row[f"{name}_median"] = float(q50)
            row[f"{name}_q75"] = float(q75)
        row["reject_smooth_05"] = (
            float(np.mean([r.p_smooth <= 0.05 for r in ok])) if ok else float("nan")
        )
        row["p_tau_below_1e9"] = (
            float(np.mean([r.p_tau < 1e-9 for r in ok])) if ok else float("nan")
        )
        rows.append(row)
    return rows
