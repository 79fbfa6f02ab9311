"""Penalized logistic fitting.

Two nested loops. The inner loop (PIRLS) maximizes the penalized Bernoulli
log-likelihood for fixed smoothing parameters by iterating weighted least
squares on the working response, with step-halving as a safeguard. The
outer loop picks the smoothing parameters - one per penalty, including the
random-intercept precision 1/tau^2 - by maximizing a Laplace-approximate
restricted marginal likelihood (LAML) over log-lambda with Nelder-Mead
restarted from a coarse grid.

The provider indicator block enters the normal equations only through a
diagonal, so all solves reduce to the small fixed-effect block via a Schur
complement; cost per iteration is O(N * p_fixed^2) regardless of the
number of providers.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import brentq, minimize
from scipy.special import expit, logit
from scipy.stats import chi2

from .design import AssembledModel, VOLUME_TERM
from .errors import FitError, IdentifiabilityError, InputError

log = logging.getLogger("volcurve.fit")

MU_CLAMP = 1e-10
PIRLS_TOL = 1e-8
PIRLS_MAX_ITER = 200
LOG_LAMBDA_BOX = 15.0
GRID_START = (-5.0, 0.0, 5.0)


@dataclass
class _SolverState:
    """Factorized penalized normal equations at the final iterate."""

    lambdas: np.ndarray
    lambda_u: float | None
    chol: tuple  # cho_factor of the fixed-block (Schur) system
    xwx: np.ndarray  # X_f' W X_f, unpenalized
    s_fixed: np.ndarray  # fixed-part penalty sum at these lambdas
    b: np.ndarray | None  # X_f' W U, shape (p_fixed, I)
    s_diag: np.ndarray | None  # provider-block diagonal incl. lambda_u
    s0_diag: np.ndarray | None  # provider-block diagonal of X'WX alone


@dataclass
class PenalizedFit:
    """Inner-loop result at fixed smoothing parameters."""

    theta: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    deviance: float
    penalized_deviance: float
    edf: dict
    converged: bool
    iterations: int
    log_lambdas: np.ndarray
    p_fixed: int
    state: _SolverState = field(repr=False)
    pd_trace: tuple = field(default=(), repr=False)

    @property
    def edf_total(self) -> float:
        return float(sum(self.edf.values()))

    @property
    def penalized_hessian(self) -> np.ndarray:
        """Dense H_p = X'WX + S_lambda."""
        st = self.state
        h_ff = st.xwx + st.s_fixed
        if st.b is None:
            return h_ff
        n_u = len(st.s_diag)
        p = self.p_fixed + n_u
        h = np.zeros((p, p))
        h[: self.p_fixed, : self.p_fixed] = h_ff
        h[: self.p_fixed, self.p_fixed :] = st.b
        h[self.p_fixed :, : self.p_fixed] = st.b.T
        h[self.p_fixed :, self.p_fixed :] = np.diag(st.s_diag)
        return h


def _fixed_penalty_sum(model: AssembledModel, lambdas: np.ndarray) -> np.ndarray:
    s = np.zeros((model.p_fixed, model.p_fixed))
    for pen, lam in zip(model.penalties, lambdas):
        if pen.matrix is not None:
            a, b = pen.cols
            s[a:b, a:b] += lam * pen.matrix
    return s


def _penalty_quadform(model, lambdas, theta_f, theta_u) -> float:
    total = 0.0
    for pen, lam in zip(model.penalties, lambdas):
        if pen.matrix is None:
            total += lam * float(theta_u @ theta_u)
        else:
            a, b = pen.cols
            block = theta_f[a:b]
            total += lam * float(block @ pen.matrix @ block)
    return total


def _deviance(y, mu) -> float:
    return -2.0 * float(y @ np.log(mu) + (1.0 - y) @ np.log1p(-mu))


def _initial_theta(model: AssembledModel) -> tuple[np.ndarray, np.ndarray]:
    theta_f = np.zeros(model.p_fixed)
    eta0 = float(logit((model.y.sum() + 0.5) / (model.n_obs + 1.0)))
    key = "year" if model.spec.year_intercepts else "intercept"
    a, b = model.index_map[key]
    theta_f[a:b] = eta0
    theta_u = np.zeros(model.n_providers if model.provider_index is not None else 0)
    return theta_f, theta_u


def pirls(
    model: AssembledModel,
    log_lambdas,
    init: np.ndarray | None = None,
) -> PenalizedFit:
    """Penalized IRLS for the coefficients at fixed log smoothing parameters.

    Iterates the working response z = eta + (y - mu)/(mu(1 - mu)) with
    weights mu(1 - mu) until the relative change in penalized deviance
    drops below 1e-8. Non-convergence (including quasi-separation, flagged
    when fitted probabilities pin at the clamping bounds) is reported, not
    raised; a singular system raises.
    """
    log_lambdas = np.asarray(log_lambdas, dtype=float)
    if log_lambdas.shape != (len(model.penalties),):
        raise InputError(
            f"expected {len(model.penalties)} log-lambdas, got {log_lambdas.shape}"
        )
    if not np.all(np.isfinite(log_lambdas)):
        raise InputError("log smoothing parameters must be finite")
    lambdas = np.exp(log_lambdas)

    y = model.y
    x = model.x_fixed
    idx = model.provider_index
    has_u = idx is not None
    n_u = model.n_providers if has_u else 0
    lambda_u = None
    if has_u:
        (u_pos,) = [i for i, p in enumerate(model.penalties) if p.matrix is None]
        lambda_u = float(lambdas[u_pos])
    s_fixed = _fixed_penalty_sum(model, lambdas)

    if init is not None and len(init) == model.p:
        theta_f = init[: model.p_fixed].copy()
        theta_u = init[model.p_fixed :].copy()
    else:
        theta_f, theta_u = _initial_theta(model)

    def predictor(tf, tu):
        eta = x @ tf
        if has_u:
            eta = eta + tu[idx]
        return eta

    def pen_dev(tf, tu, mu):
        return _deviance(y, mu) + _penalty_quadform(model, lambdas, tf, tu)

    def factorize(w):
        """Weighted crossproducts and the Cholesky of the fixed-block system."""
        wx = x * w[:, None]
        xwx = x.T @ wx
        try:
            if has_u:
                s0 = np.bincount(idx, weights=w, minlength=n_u)
                s_diag = s0 + lambda_u
                b = np.empty((model.p_fixed, n_u))
                for j in range(model.p_fixed):
                    b[j] = np.bincount(idx, weights=wx[:, j], minlength=n_u)
                schur = xwx + s_fixed - (b / s_diag) @ b.T
                chol = cho_factor(schur, lower=True)
            else:
                s0 = s_diag = b = None
                chol = cho_factor(xwx + s_fixed, lower=True)
        except np.linalg.LinAlgError:
            raise IdentifiabilityError("model not identifiable") from None
        return chol, xwx, b, s_diag, s0

    eta = predictor(theta_f, theta_u)
    mu = np.clip(expit(eta), MU_CLAMP, 1.0 - MU_CLAMP)
    pd_old = pen_dev(theta_f, theta_u, mu)
    pd_trace = [pd_old]

    converged = False
    iterations = 0
    for iterations in range(1, PIRLS_MAX_ITER + 1):
        w = mu * (1.0 - mu)
        z = eta + (y - mu) / w
        chol, xwx, b, s_diag, s0 = factorize(w)
        r_f = x.T @ (w * z)
        if has_u:
            r_u = np.bincount(idx, weights=w * z, minlength=n_u)
            tf_new = cho_solve(chol, r_f - b @ (r_u / s_diag))
            tu_new = (r_u - b.T @ tf_new) / s_diag
        else:
            tf_new = cho_solve(chol, r_f)
            tu_new = theta_u

        eta_new = predictor(tf_new, tu_new)
        mu_new = np.clip(expit(eta_new), MU_CLAMP, 1.0 - MU_CLAMP)
        pd_new = pen_dev(tf_new, tu_new, mu_new)
        halvings = 0
        while pd_new > pd_old + 1e-10 * (abs(pd_old) + 0.1) and halvings < 30:
            tf_new = 0.5 * (tf_new + theta_f)
            tu_new = 0.5 * (tu_new + theta_u)
            eta_new = predictor(tf_new, tu_new)
            mu_new = np.clip(expit(eta_new), MU_CLAMP, 1.0 - MU_CLAMP)
            pd_new = pen_dev(tf_new, tu_new, mu_new)
            halvings += 1

        theta_f, theta_u, eta, mu = tf_new, tu_new, eta_new, mu_new
        delta = abs(pd_new - pd_old)
        pd_old = pd_new
        pd_trace.append(pd_new)
        if delta / (abs(pd_new) + 0.1) < PIRLS_TOL:
            converged = True
            break

    pinned = bool(np.any(mu <= MU_CLAMP) or np.any(mu >= 1.0 - MU_CLAMP))
    if pinned:
        converged = False

    if converged:
        # one Newton polish step: the deviance-based stopping rule leaves a
        # coefficient residual around 1e-8, and IRLS at the canonical link
        # is Newton, so a single extra solve squares it away
        w = mu * (1.0 - mu)
        z = eta + (y - mu) / w
        chol, xwx, b, s_diag, s0 = factorize(w)
        r_f = x.T @ (w * z)
        if has_u:
            r_u = np.bincount(idx, weights=w * z, minlength=n_u)
            tf_new = cho_solve(chol, r_f - b @ (r_u / s_diag))
            tu_new = (r_u - b.T @ tf_new) / s_diag
        else:
            tf_new = cho_solve(chol, r_f)
            tu_new = theta_u
        eta_new = predictor(tf_new, tu_new)
        mu_new = np.clip(expit(eta_new), MU_CLAMP, 1.0 - MU_CLAMP)
        pd_new = pen_dev(tf_new, tu_new, mu_new)
        if pd_new <= pd_old + 1e-12 * (abs(pd_old) + 0.1):
            theta_f, theta_u, eta, mu = tf_new, tu_new, eta_new, mu_new
            pd_old = pd_new
            pd_trace.append(pd_new)

    # refactorize at the accepted iterate so the Hessian, covariance and
    # effective degrees of freedom all refer to theta-hat exactly
    chol, xwx, b, s_diag, s0 = factorize(mu * (1.0 - mu))
    state = _SolverState(
        lambdas=lambdas,
        lambda_u=lambda_u,
        chol=chol,
        xwx=xwx,
        s_fixed=s_fixed,
        b=b,
        s_diag=s_diag,
        s0_diag=s0,
    )
    theta = np.concatenate([theta_f, theta_u]) if has_u else theta_f.copy()
    edf = _edf_by_block(model, state)
    return PenalizedFit(
        theta=theta,
        eta=eta,
        mu=mu,
        deviance=_deviance(y, mu),
        penalized_deviance=pd_old,
        edf=edf,
        converged=converged,
        iterations=iterations,
        log_lambdas=log_lambdas.copy(),
        p_fixed=model.p_fixed,
        state=state,
        pd_trace=tuple(pd_trace),
    )


def _edf_by_block(model: AssembledModel, st: _SolverState) -> dict:
    """Per-block effective degrees of freedom: block traces of H^-1 X'WX."""
    if st.b is None:
        diag = np.diag(cho_solve(st.chol, st.xwx)).copy()
    else:
        core = st.xwx - (st.b / st.s_diag) @ st.b.T
        diag_f = np.diag(cho_solve(st.chol, core)).copy()
        # q_i = b_i' M b_i with M the fixed-block posterior covariance
        mb = cho_solve(st.chol, st.b)
        q = np.einsum("ji,ji->i", st.b, mb)
        diag_u = st.s0_diag / st.s_diag - q / st.s_diag + q * st.s0_diag / st.s_diag**2
        diag = np.concatenate([diag_f, diag_u])
    return {
        name: float(diag[a:b].sum()) for name, (a, b) in model.index_map.items()
    }


def log_pseudo_det_penalty(model: AssembledModel, log_lambdas) -> float:
    """log |S_lambda|_+ over the penalized subspace (blocks are disjoint)."""
    total = 0.0
    for pen, ll in zip(model.penalties, np.asarray(log_lambdas, dtype=float)):
        total += pen.rank * ll + pen.log_pdet
    return total


def _log_det_hessian(st: _SolverState) -> float:
    ld = 2.0 * float(np.sum(np.log(np.diag(st.chol[0]))))
    if st.b is not None:
        ld += float(np.sum(np.log(st.s_diag)))
    return ld


def laml_from_fit(model: AssembledModel, fit: PenalizedFit) -> float:
    """Laplace-approximate restricted marginal log-likelihood at a PIRLS solution."""
    null_dim = model.p - sum(p.rank for p in model.penalties)
    return (
        -0.5 * fit.penalized_deviance
        + 0.5 * log_pseudo_det_penalty(model, fit.log_lambdas)
        - 0.5 * _log_det_hessian(fit.state)
        + 0.5 * null_dim * np.log(2.0 * np.pi)
    )


def laml(model: AssembledModel, log_lambdas, init=None) -> float:
    """Outer criterion at the given log smoothing parameters (larger is better)."""
    return laml_from_fit(model, pirls(model, log_lambdas, init=init))


@dataclass
class FittedModel:
    """A fitted model plus everything needed for prediction and inference.

    ``model`` is the training design; it is dropped on serialization, in
    which case refit-based operations (the tau = 0 test, profile intervals)
    are unavailable but prediction and curve/odds-ratio inference still
    work from the stored pieces.
    """

    spec: object
    index_map: dict
    smooths: dict
    provider_ids: tuple
    years: tuple
    n_obs: int
    theta: np.ndarray
    posterior_cov: np.ndarray = field(repr=False)
    log_lambdas: np.ndarray
    penalty_names: tuple
    tau_hat: float | None
    tau_boundary: bool
    laml: float
    edf: dict
    edf1: dict
    deviance: float
    converged: bool
    iterations: int
    eta_star: float | None
    volume_hist: tuple  # (values, counts) over provider-year volumes
    fit: PenalizedFit | None = field(default=None, repr=False)
    model: AssembledModel | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return len(self.theta)

    @property
    def lambdas(self) -> dict:
        return {
            name: float(np.exp(ll))
            for name, ll in zip(self.penalty_names, self.log_lambdas)
        }

    def smooth_cols(self, term: str) -> tuple:
        key = f"s({term})"
        if key not in self.index_map:
            raise InputError(f"no smooth term {term!r} in this model")
        return self.index_map[key]

    def smooth_block_cov(self, term: str) -> np.ndarray:
        a, b = self.smooth_cols(term)
        return self.posterior_cov[a:b, a:b]

    def support(self, term: str = VOLUME_TERM) -> tuple:
        k = self.smooths[term].knots
        return (k.lo, k.hi)


def _posterior_cov(model: AssembledModel, st: _SolverState) -> np.ndarray:
    """Dense H_p^-1 assembled from the block factorization.

    Symmetrized exactly so that the lower triangle determines the matrix;
    serialization stores only that triangle.
    """
    m = cho_solve(st.chol, np.eye(model.p_fixed))
    m = 0.5 * (m + m.T)
    if st.b is None:
        return m
    bd = st.b / st.s_diag  # B D^-1
    cov_fu = -m @ bd
    cov_uu = np.diag(1.0 / st.s_diag) + bd.T @ m @ bd
    cov_uu = 0.5 * (cov_uu + cov_uu.T)
    p = model.p
    cov = np.empty((p, p))
    pf = model.p_fixed
    cov[:pf, :pf] = m
    cov[:pf, pf:] = cov_fu
    cov[pf:, :pf] = cov_fu.T
    cov[pf:, pf:] = cov_uu
    return cov


def _edf1_smooth_blocks(model: AssembledModel, cov: np.ndarray, lambdas) -> dict:
    """Alternative effective degrees of freedom 2 tr(F) - tr(FF) per smooth block.

    With F = H^-1 X'WX = I - (cov @ S_lambda) the block value reduces to
    |B| - tr_B(A A) for A = cov @ S_lambda. This upper version absorbs part
    of the smoothing-parameter selection effect and drives the reference
    rank of the smooth test.
    """
    out = {}
    p = cov.shape[0]
    for pen_b, lam_b in zip(model.penalties, lambdas):
        if pen_b.matrix is None:
            continue
        a, b = pen_b.cols
        rows = np.zeros((b - a, p))
        for pen_k, lam_k in zip(model.penalties, lambdas):
            ka, kb = pen_k.cols
            if pen_k.matrix is None:
                rows[:, ka:kb] = lam_k * cov[a:b, ka:kb]
            else:
                rows[:, ka:kb] = lam_k * (cov[a:b, ka:kb] @ pen_k.matrix)
        cols = lam_b * (cov[:, a:b] @ pen_b.matrix)
        out[pen_b.name] = float((b - a) - np.einsum("jk,kj->", rows, cols))
    return out


def _eta_star(model: AssembledModel, theta_f: np.ndarray) -> float | None:
    """logit of the mean fitted probability over patients, volume and provider
    effects excluded: the linear-predictor level of an average patient."""
    if not model.spec.has_volume_smooth:
        return None
    a, b = model.smooths[VOLUME_TERM].cols
    keep = np.ones(model.p_fixed, dtype=bool)
    keep[a:b] = False
    eta_pat = model.x_fixed[:, keep] @ theta_f[keep]
    return float(logit(np.mean(expit(eta_pat))))


def _hist_from_values(model: AssembledModel) -> tuple:
    """Distinct provider(-year) volume values with provider counts."""
    vals = model.volume_values
    if model.provider_index is not None:
        # one entry per (provider, volume value) pair; with time-dependent
        # volumes a provider can contribute several values
        pairs = {(int(i), float(v)) for i, v in zip(model.provider_index, vals)}
        values = sorted(v for _, v in pairs)
    else:
        values = sorted(set(float(v) for v in vals))
    uniq: dict[float, int] = {}
    for v in values:
        uniq[v] = uniq.get(v, 0) + 1
    keys = sorted(uniq)
    return (tuple(keys), tuple(uniq[k] for k in keys))


def optimize(
    model: AssembledModel,
    xatol: float = 0.05,
    fatol: float = 5e-3,
    maxfev: int | None = None,
) -> FittedModel:
    """Fit the model, choosing all smoothing parameters by LAML.

    Log smoothing parameters are searched in the box [-15, 15] per
    coordinate with Nelder-Mead started from the best point of the coarse
    grid {-5, 0, 5}^d. The random-intercept standard deviation is reported
    as tau = exp(-log lambda_u / 2); lambda_u pinned at the upper box bound
    is flagged as a boundary estimate (tau effectively zero).
    """
    d = len(model.penalties)
    warm = {"theta": None}
    failures: list[str] = []

    def evaluate(loglams: np.ndarray) -> float:
        try:
            f = pirls(model, loglams, init=warm["theta"])
        except IdentifiabilityError as exc:
            failures.append(f"log-lambda {np.round(loglams, 2)}: {exc}")
            return 1e10
        warm["theta"] = f.theta
        return -laml_from_fit(model, f)

    if d == 0:
        f = pirls(model, np.empty(0))
        return _finalize(model, f, np.empty(0))

    best_x, best_val = None, np.inf
    for point in itertools.product(GRID_START, repeat=d):
        x = np.array(point)
        val = evaluate(x)
        if val < best_val:
            best_x, best_val = x, val
    if best_x is None or best_val >= 1e10:
        raise FitError(
            "no smoothing-parameter start converged; attempts: "
            + "; ".join(failures[:5])
        )

    simplex = np.vstack([best_x] + [best_x + 1.5 * e for e in np.eye(d)])
    simplex = np.clip(simplex, -LOG_LAMBDA_BOX, LOG_LAMBDA_BOX)
    res = minimize(
        evaluate,
        best_x,
        method="Nelder-Mead",
        bounds=[(-LOG_LAMBDA_BOX, LOG_LAMBDA_BOX)] * d,
        options={
            "xatol": xatol,
            "fatol": fatol,
            "maxfev": maxfev or 150 * d,
            "initial_simplex": simplex,
        },
    )
    xopt = np.clip(res.x, -LOG_LAMBDA_BOX, LOG_LAMBDA_BOX)
    final = pirls(model, xopt, init=warm["theta"])
    log.debug(
        "optimize: laml=%.4f at log-lambda=%s after %d evaluations",
        laml_from_fit(model, final),
        np.round(xopt, 3),
        res.nfev,
    )
    return _finalize(model, final, xopt)


def _finalize(model: AssembledModel, f: PenalizedFit, xopt: np.ndarray) -> FittedModel:
    tau_hat = None
    tau_boundary = False
    if model.provider_index is not None:
        (u_pos,) = [i for i, p in enumerate(model.penalties) if p.matrix is None]
        ll_u = float(xopt[u_pos])
        tau_hat = float(np.exp(-0.5 * ll_u))
        tau_boundary = ll_u >= LOG_LAMBDA_BOX - 1e-3
    theta_f = f.theta[: model.p_fixed]
    cov = _posterior_cov(model, f.state)
    return FittedModel(
        spec=model.spec,
        index_map=dict(model.index_map),
        smooths=dict(model.smooths),
        provider_ids=model.provider_ids,
        years=model.years,
        n_obs=model.n_obs,
        theta=f.theta.copy(),
        posterior_cov=cov,
        log_lambdas=xopt.copy(),
        penalty_names=tuple(p.name for p in model.penalties),
        tau_hat=tau_hat,
        tau_boundary=tau_boundary,
        laml=laml_from_fit(model, f),
        edf={k: float(v) for k, v in f.edf.items()},
        edf1=_edf1_smooth_blocks(model, cov, np.exp(xopt) if len(xopt) else []),
        deviance=f.deviance,
        converged=f.converged,
        iterations=f.iterations,
        eta_star=_eta_star(model, theta_f),
        volume_hist=_hist_from_values(model) if model.volume_values is not None else ((), ()),
        fit=f,
        model=model,
    )


def predict_eta(fitted: FittedModel, rows: np.ndarray) -> np.ndarray:
    """Linear predictor for design rows laid out like the training design."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != fitted.p:
        raise InputError(
            f"design rows have {rows.shape[1]} columns, model has {fitted.p}"
        )
    return rows @ fitted.theta


def _require_model(fitted: FittedModel, what: str) -> AssembledModel:
    if fitted.model is None:
        raise InputError(
            f"{what} requires the training data; refit the model (a reloaded "
            "fitted-model file is prediction-only)"
        )
    return fitted.model


def profile_tau_interval(
    fitted: FittedModel,
    level: float = 0.95,
    step: float = 0.5,
    tol: float = 1e-3,
) -> tuple:
    """Profile-likelihood interval for tau from the LAML criterion.

    Profiles over log lambda_u with the remaining smoothing parameters
    re-optimized at every point; the cutoff is the chi-square(1) quantile.
    Returns (tau_lo, tau_hi); an endpoint stuck at the search box returns
    tau_lo = 0.0 (upper lambda bound) so the interval stays conservative.
    """
    model = _require_model(fitted, "profile interval for tau")
    if fitted.tau_hat is None:
        raise InputError("model has no random intercept")
    (u_pos,) = [i for i, p in enumerate(model.penalties) if p.matrix is None]
    others = [i for i in range(len(model.penalties)) if i != u_pos]
    cutoff = float(chi2.ppf(level, 1))
    warm = {"theta": fitted.theta}

    def profile(ll_u: float) -> float:
        def inner(vals: np.ndarray) -> float:
            x = np.empty(len(model.penalties))
            x[u_pos] = ll_u
            x[others] = vals
            f = pirls(model, x, init=warm["theta"])
            warm["theta"] = f.theta
            return -laml_from_fit(model, f)

        if not others:
            return -inner(np.empty(0))
        x0 = fitted.log_lambdas[others]
        res = minimize(
            inner,
            x0,
            method="Nelder-Mead",
            bounds=[(-LOG_LAMBDA_BOX, LOG_LAMBDA_BOX)] * len(others),
            options={"xatol": 0.1, "fatol": 0.01, "maxfev": 60 * len(others)},
        )
        return -res.fun

    ll_hat = float(fitted.log_lambdas[u_pos])
    base = profile(ll_hat)

    def deficit(x: float) -> float:
        return 2.0 * (base - profile(x)) - cutoff

    def search(direction: float) -> float | None:
        a = ll_hat
        bnd = LOG_LAMBDA_BOX if direction > 0 else -LOG_LAMBDA_BOX
        x = ll_hat
        while True:
            x = x + direction * step
            if (direction > 0 and x > bnd) or (direction < 0 and x < bnd):
                x = bnd
            fx = deficit(x)
            if fx > 0:
                return float(brentq(deficit, min(a, x), max(a, x), xtol=tol))
            if x == bnd:
                return None  # still inside the region at the box edge
            a = x

    hi_ll = search(+1.0)  # larger lambda_u -> smaller tau
    lo_ll = search(-1.0)
    tau_lo = 0.0 if hi_ll is None else float(np.exp(-0.5 * hi_ll))
    tau_hi = np.inf if lo_ll is None else float(np.exp(-0.5 * lo_ll))
    return (tau_lo, tau_hi)


def wald_log_tau_se(fitted: FittedModel, h: float = 0.1) -> float | None:
    """Finite-difference standard error of log tau from the LAML curvature.

    Cross-check for the profile interval; returns None when the criterion
    is locally flat or the estimate sits on the boundary.
    """
    model = _require_model(fitted, "Wald standard error for log tau")
    if fitted.tau_hat is None or fitted.tau_boundary:
        return None
    (u_pos,) = [i for i, p in enumerate(model.penalties) if p.matrix is None]

    def value(delta: float) -> float:
        x = fitted.log_lambdas.copy()
        x[u_pos] += delta
        return laml(model, x, init=fitted.theta)

    d2 = (value(h) - 2.0 * value(0.0) + value(-h)) / h**2
    if d2 >= 0:
        return None
    # log tau = -log lambda_u / 2
    return 0.5 / float(np.sqrt(-d2))
