"""Post-fit inference: curves, bands, tests, odds ratios, MOR.

All quantities derive from the fitted coefficients and their posterior
covariance. Monte-Carlo operations (simultaneous bands) take an explicit
seed and are safe to call concurrently.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit, ndtri
from scipy.stats import chi2

from . import fit as fitmod
from .design import VOLUME_TERM, AssembledModel
from .errors import InputError
from .fit import FittedModel

log = logging.getLogger("volcurve.inference")

# exp(-sqrt(2) * Phi^-1(3/4) * tau) maps tau to the median odds ratio
_MOR_SLOPE = float(np.sqrt(2.0) * ndtri(0.75))


@dataclass(frozen=True)
class CurveEstimate:
    """Smooth-term estimate on a grid with pointwise and simultaneous bands."""

    grid: np.ndarray
    f_hat: np.ndarray
    se: np.ndarray
    band_lower: np.ndarray
    band_upper: np.ndarray
    crit: float  # simultaneous critical value (>= the pointwise z quantile)
    alpha: float
    tau_hat: float | None
    seed: int


@dataclass(frozen=True)
class ProbabilityCurve:
    """Outcome-probability curve for an average patient at an average provider."""

    grid: np.ndarray
    pi_star: np.ndarray
    band_lower: np.ndarray
    band_upper: np.ndarray
    plus_tau: np.ndarray
    minus_tau: np.ndarray
    eta_star: float
    alpha: float
    seed: int


@dataclass(frozen=True)
class OREstimate:
    """Odds ratio between two volumes with a delta-method interval."""

    v1: float
    v2: float
    or_hat: float
    ci_lower: float
    ci_upper: float
    se_g: float


@dataclass(frozen=True)
class MOREstimate:
    """Median odds ratio of the provider random effects, in (0, 1]."""

    mor_hat: float
    ci: tuple | None
    tau_hat: float
    tau_ci: tuple | None
    boundary: bool


@dataclass(frozen=True)
class TestResult:
    statistic: float
    reference_df: float
    p_value: float
    kind: str  # "smooth_wald" or "variance_boundary_lrt"


def _smooth_eval(fitted: FittedModel, term: str, grid, clamp: bool):
    smooth = fitted.smooths.get(term)
    if smooth is None:
        raise InputError(f"no smooth term {term!r} in this model")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    basis = smooth.block(grid, clamp=clamp)
    a, b = fitted.smooth_cols(term)
    return grid, basis, fitted.theta[a:b], fitted.smooth_block_cov(term)


def smooth_curve(
    fitted: FittedModel,
    term: str = VOLUME_TERM,
    grid=None,
    alpha: float = 0.05,
    n_draws: int = 10_000,
    seed: int = 0,
    clamp: bool = False,
) -> CurveEstimate:
    """Estimated smooth with pointwise SEs and a simultaneous (1-alpha) band.

    The band is f_hat +/- c * se with c the empirical (1-alpha) quantile of
    the max absolute standardized deviation over the grid, across draws
    from the Gaussian posterior of the block coefficients.
    """
    if grid is None:
        lo, hi = fitted.support(term)
        grid = np.linspace(lo, hi, 200)
    if n_draws < 1000:
        raise InputError("n_draws must be at least 1000 for a stable band")
    grid, basis, theta, cov = _smooth_eval(fitted, term, grid, clamp)
    f_hat = basis @ theta
    var = np.einsum("ij,jk,ik->i", basis, cov, basis)
    se = np.sqrt(np.maximum(var, 0.0))

    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(len(cov)) * max(cov.max(), 1.0))
    draws = rng.standard_normal((n_draws, len(theta))) @ chol.T
    dev = np.abs(draws @ basis.T) / np.where(se > 0, se, np.inf)
    crit = float(np.quantile(dev.max(axis=1), 1.0 - alpha))
    return CurveEstimate(
        grid=grid,
        f_hat=f_hat,
        se=se,
        band_lower=f_hat - crit * se,
        band_upper=f_hat + crit * se,
        crit=crit,
        alpha=alpha,
        tau_hat=fitted.tau_hat,
        seed=seed,
    )


# half the chi-square(1) 0.95 quantile: the profile-likelihood cutoff that
# defines the smoothing levels indistinguishable from the optimum
_PROFILE_CUT = 0.5 * float(chi2.ppf(0.95, 1))


def _screened_smoothing(fitted: FittedModel, pen_index: int):
    """Largest log-lambda for one penalty inside the 95% profile set.

    Evaluating the smooth test at the stiffest smoothing level the
    criterion cannot reject removes the selection effect: the same noise
    that pulls lambda down would otherwise inflate the Wald statistic.
    Returns the PIRLS fit at that smoothing level.
    """
    model = fitted.model
    lo = float(fitted.log_lambdas[pen_index])
    warm = {"theta": fitted.theta}

    def slice_fit(x):
        lams = fitted.log_lambdas.copy()
        lams[pen_index] = x
        f = fitmod.pirls(model, lams, init=warm["theta"])
        warm["theta"] = f.theta
        return f, fitmod.laml_from_fit(model, f)

    hi = fitmod.LOG_LAMBDA_BOX
    f_hi, v_hi = slice_fit(hi)
    if fitted.laml - v_hi <= _PROFILE_CUT:
        return f_hi
    f_best = None
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        f_mid, v_mid = slice_fit(mid)
        if fitted.laml - v_mid <= _PROFILE_CUT:
            lo, f_best = mid, f_mid
        else:
            hi = mid
        if hi - lo < 0.05:
            break
    if f_best is None:
        f_best, _ = slice_fit(lo)
    return f_best


def test_smooth(fitted: FittedModel, term: str = VOLUME_TERM) -> TestResult:
    """Wald test of "the smooth is constant" over the training covariate values.

    The statistic f' V^(r-) f uses the rank-r pseudo-inverse of the
    posterior covariance of the fitted values. To keep the null p-values
    uniform under data-driven smoothing, both the fitted block and its
    covariance are taken at the smoothest lambda for this term within the
    95% profile set of the criterion, and r is the rounded upper effective
    degrees of freedom (2 tr(F) - tr(FF)) of that fit, clamped to
    [1, block size].
    """
    model = fitted.model
    if model is None:
        raise InputError("test_smooth requires the training data; refit the model")
    smooth = fitted.smooths.get(term)
    if smooth is None:
        raise InputError(f"no smooth term {term!r} in this model")
    a, b = fitted.smooth_cols(term)
    key = f"s({term})"

    edf = fitted.edf[key]
    if edf < 0.5:
        warnings.warn(
            f"effective degrees of freedom for s({term}) are degenerate "
            f"({edf:.3g}); reporting p = 1",
            stacklevel=2,
        )
        return TestResult(statistic=0.0, reference_df=0.0, p_value=1.0, kind="smooth_wald")
    if not np.any(fitted.theta[a:b]):
        return TestResult(statistic=0.0, reference_df=1.0, p_value=1.0, kind="smooth_wald")

    pen_index = fitted.penalty_names.index(key)
    f = _screened_smoothing(fitted, pen_index)
    cov_full = fitmod._posterior_cov(model, f.state)
    theta = f.theta[a:b]
    cov = cov_full[a:b, a:b]
    edf1 = fitmod._edf1_smooth_blocks(model, cov_full, f.state.lambdas)[key]
    r = int(np.clip(round(edf1), 1, b - a))

    # reduce to the coefficient space: with basis = QR, the fitted-value
    # covariance has the same nonzero spectrum as R cov R'
    basis = model.x_fixed[:, a:b]
    rmat = np.linalg.qr(basis, mode="r")
    core = rmat @ cov @ rmat.T
    eigval, eigvec = np.linalg.eigh(0.5 * (core + core.T))
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    proj = eigvec[:, :r].T @ (rmat @ theta)
    usable = eigval[:r] > 1e-12 * max(eigval[0], 1e-300)
    stat = float(np.sum(proj[usable] ** 2 / eigval[:r][usable]))
    p = float(chi2.sf(stat, r))
    return TestResult(statistic=stat, reference_df=float(r), p_value=p, kind="smooth_wald")


def test_tau(
    model: AssembledModel,
    full: FittedModel | None = None,
    reduced: FittedModel | None = None,
) -> TestResult:
    """Test tau = 0 against tau > 0 via a boundary-corrected likelihood ratio.

    The statistic is twice the gap between the Laplace-approximate marginal
    likelihoods of the fits with and without the provider block; its null
    distribution is the equal mixture of a point mass at zero and
    chi-square(1).
    """
    if model.provider_index is None:
        raise InputError("test_tau requires a model with random intercepts")
    if full is None:
        full = fitmod.optimize(model)
    if reduced is None:
        reduced = fitmod.optimize(model.without_random_intercept())
    if not (full.converged and reduced.converged):
        raise InputError("tau test needs both fits to converge")
    stat = max(0.0, 2.0 * (full.laml - reduced.laml))
    p = 1.0 if stat == 0.0 else 0.5 * float(chi2.sf(stat, 1))
    return TestResult(
        statistic=stat, reference_df=0.5, p_value=p, kind="variance_boundary_lrt"
    )


def odds_ratio(
    fitted: FittedModel,
    v1: float,
    v2: float,
    strict_se: bool = False,
    clamp: bool = False,
) -> OREstimate:
    """Odds ratio exp(f(v1) - f(v2)) with a +/- 2 SE delta-method interval.

    ``strict_se`` reports the raw delta-method quadratic form as the SE
    instead of its square root (see README on this reporting variant); the
    interval lower bound is floored at zero.
    """
    _, basis, theta, cov = _smooth_eval(
        fitted, VOLUME_TERM, [float(v1), float(v2)], clamp
    )
    d = basis[0] - basis[1]
    g = float(np.exp(d @ theta))
    quad = float(d @ cov @ d) * g * g  # grad = d * g on the smooth block
    se_g = quad if strict_se else float(np.sqrt(max(quad, 0.0)))
    return OREstimate(
        v1=float(v1),
        v2=float(v2),
        or_hat=g,
        ci_lower=max(0.0, g - 2.0 * se_g),
        ci_upper=g + 2.0 * se_g,
        se_g=se_g,
    )


def mor_point(tau: float) -> float:
    """Median odds ratio for a given random-intercept standard deviation."""
    return float(np.exp(-_MOR_SLOPE * tau))


def mor(fitted: FittedModel, level: float = 0.95, with_ci: bool = True) -> MOREstimate:
    """Median odds ratio of the provider effects with a profile interval.

    The tau interval comes from profiling the fitting criterion over the
    random-intercept smoothing parameter; monotonicity then transforms it
    into the MOR interval directly (endpoints swap order).
    """
    if fitted.tau_hat is None:
        raise InputError("MOR requires a model with random intercepts")
    boundary = fitted.tau_boundary
    point = 1.0 if boundary else mor_point(fitted.tau_hat)
    tau_ci = None
    ci = None
    if with_ci:
        tau_lo, tau_hi = fitmod.profile_tau_interval(fitted, level=level)
        tau_ci = (tau_lo, tau_hi)
        ci = (0.0 if np.isinf(tau_hi) else mor_point(tau_hi), mor_point(tau_lo))
        if boundary:
            ci = (ci[0], 1.0)
    return MOREstimate(
        mor_hat=point,
        ci=ci,
        tau_hat=0.0 if boundary else fitted.tau_hat,
        tau_ci=tau_ci,
        boundary=boundary,
    )


def probability_curve(
    fitted: FittedModel,
    grid=None,
    alpha: float = 0.05,
    n_draws: int = 10_000,
    seed: int = 0,
    clamp: bool = False,
) -> ProbabilityCurve:
    """Outcome probability against volume for an average patient.

    The patient level is the logit of the mean fitted probability with the
    volume and provider contributions removed; the provider effect is set
    to its mean, zero. Band endpoints are the logistic transform of the
    logit-scale simultaneous band shifted by that level.
    """
    if fitted.eta_star is None:
        raise InputError("probability curve requires a fitted volume smooth")
    curve = smooth_curve(
        fitted, VOLUME_TERM, grid=grid, alpha=alpha, n_draws=n_draws, seed=seed, clamp=clamp
    )
    eta0 = fitted.eta_star
    tau = fitted.tau_hat or 0.0
    return ProbabilityCurve(
        grid=curve.grid,
        pi_star=expit(eta0 + curve.f_hat),
        band_lower=expit(eta0 + curve.band_lower),
        band_upper=expit(eta0 + curve.band_upper),
        plus_tau=expit(eta0 + curve.f_hat + tau),
        minus_tau=expit(eta0 + curve.f_hat - tau),
        eta_star=eta0,
        alpha=alpha,
        seed=seed,
    )
