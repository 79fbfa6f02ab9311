import numpy as np
import pytest
from _helpers import (
    linear_only_spec,
    newton_logistic,
    smooth_records,
    two_by_two_records,
    volume_spec,
)
from scipy.special import expit

from volcurve.design import ModelSpec, PatientRecord, assemble, design_row
from volcurve.errors import IdentifiabilityError, InputError
from volcurve.fit import laml, optimize, pirls, predict_eta
from volcurve.sim import SimConfig, generate, model_spec_for


class TestPirls:
    def test_two_by_two_closed_form(self):
        # oracle: logistic MLE for a 2x2 table has slope log(ad / bc)
        a, b, c, d = 13, 29, 17, 41
        model = assemble(two_by_two_records(a, b, c, d), linear_only_spec())
        f = pirls(model, np.empty(0))
        assert f.converged
        slope_cols = model.index_map["x"]
        slope = f.theta[slope_cols[0]]
        intercept = f.theta[model.index_map["intercept"][0]]
        assert slope == pytest.approx(np.log(a * d / (b * c)), abs=1e-7)
        assert intercept == pytest.approx(np.log(c / d), abs=1e-7)

    def test_matches_newton_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            n = int(rng.integers(60, 200))
            x1 = rng.standard_normal(n)
            x2 = (rng.random(n) < 0.5).astype(float)
            eta = -0.5 + 0.8 * x1 - 0.6 * x2
            y = (rng.random(n) < expit(eta)).astype(int)
            if y.sum() in (0, n):
                continue
            recs = [
                PatientRecord("P1", 2014, int(y[i]), {"x1": x1[i], "x2": x2[i]})
                for i in range(n)
            ]
            model = assemble(recs, linear_only_spec(("x1", "x2")))
            f = pirls(model, np.empty(0))
            oracle = newton_logistic(model.x_fixed, model.y)
            np.testing.assert_allclose(f.theta, oracle, atol=1e-8)

    def test_huge_lambda_shrinks_smooth_to_zero(self):
        # order-1 penalty: centering removes the constant, so the centered
        # penalty is full rank and lambda -> inf forces the block to zero
        recs = smooth_records(n_providers=40, base=15, seed=1)
        spec = volume_spec(n_basis=6, penalty_order=1, random_intercept=False)
        model = assemble(recs, spec)
        f = pirls(model, np.log([1e8]))
        a, b = model.index_map["s(volume)"]
        assert f.converged
        assert np.linalg.norm(f.theta[a:b]) < 1e-3

    def test_separation_flagged_not_fatal(self):
        recs = [PatientRecord("P1", 2014, 0, {}) for _ in range(50)]
        model = assemble(recs, ModelSpec(random_intercept=False))
        f = pirls(model, np.empty(0))
        assert not f.converged

    def test_monotone_penalized_deviance(self):
        recs = smooth_records(n_providers=35, base=18, seed=5)
        model = assemble(recs, volume_spec())
        f = pirls(model, np.array([0.0, 0.0]))
        trace = np.array(f.pd_trace)
        assert np.all(np.diff(trace) <= 1e-10 * (np.abs(trace[:-1]) + 0.1))

    def test_wrong_lambda_count(self):
        recs = smooth_records(seed=2)
        model = assemble(recs, volume_spec())
        with pytest.raises(InputError):
            pirls(model, np.array([0.0]))

    def test_gradient_at_solution(self):
        # penalized score X'(y - mu) - S_lambda theta vanishes at theta-hat
        recs = smooth_records(n_providers=30, base=20, seed=7)
        model = assemble(recs, volume_spec())
        loglams = np.array([1.0, -0.5])
        f = pirls(model, loglams)
        assert f.converged
        x = model.X
        s_theta = np.zeros(model.p)
        for pen, ll in zip(model.penalties, loglams):
            a, b = pen.cols
            s_theta[a:b] = np.exp(ll) * (pen.dense() @ f.theta[a:b])
        score = x.T @ (model.y - f.mu) - s_theta
        assert np.max(np.abs(score)) < 1e-6 * model.n_obs

    def test_hessian_and_covariance_match_dense_oracle(self):
        # the Schur-complement path must agree with brute-force dense algebra
        recs = smooth_records(n_providers=25, base=14, seed=11)
        model = assemble(recs, volume_spec(n_basis=6))
        loglams = np.array([0.5, 1.5])
        f = pirls(model, loglams)
        x = model.X
        w = f.mu * (1.0 - f.mu)
        s_lam = np.zeros((model.p, model.p))
        for pen, ll in zip(model.penalties, loglams):
            a, b = pen.cols
            s_lam[a:b, a:b] = np.exp(ll) * pen.dense()
        h_dense = (x * w[:, None]).T @ x + s_lam
        np.testing.assert_allclose(f.penalized_hessian, h_dense, atol=1e-8)

        from volcurve.fit import _posterior_cov

        cov = _posterior_cov(model, f.state)
        np.testing.assert_allclose(cov, np.linalg.inv(h_dense), atol=1e-8)

        edf_dense = np.diag(np.linalg.inv(h_dense) @ ((x * w[:, None]).T @ x))
        for name, (a, b) in model.index_map.items():
            assert f.edf[name] == pytest.approx(edf_dense[a:b].sum(), abs=1e-8)


class TestLaml:
    def test_duplicate_column_raises(self):
        recs = smooth_records(seed=3)
        model = assemble(recs, volume_spec())
        dup = model.x_fixed[:, :1]
        model.x_fixed = np.hstack([model.x_fixed, dup])
        model.index_map = dict(model.index_map)
        pf = model.x_fixed.shape[1]
        model.index_map["dup"] = (pf - 1, pf)
        model.index_map["providers"] = (pf, pf + model.n_providers)
        with pytest.raises(IdentifiabilityError, match="not identifiable"):
            laml(model, np.array([0.0, 0.0]))

    def test_finite_on_box_boundary(self):
        recs = smooth_records(seed=4)
        model = assemble(recs, volume_spec())
        for loglams in ([15.0, 15.0], [-15.0, -15.0], [15.0, -15.0]):
            value = laml(model, np.array(loglams))
            assert np.isfinite(value)

    def test_optimum_beats_random_search(self):
        # oracle: 100 random draws in the box never beat the optimizer
        recs = smooth_records(n_providers=25, base=15, seed=6)
        model = assemble(recs, volume_spec(n_basis=6))
        fitted = optimize(model)
        rng = np.random.default_rng(0)
        draws = rng.uniform(-15.0, 15.0, size=(100, 2))
        values = [laml(model, d) for d in draws]
        assert fitted.laml >= max(values) - 1e-6


class TestOptimize:
    def test_tau_zero_data_hits_boundary(self):
        # under tau = 0 the lambda_u optimum is at the box bound for about
        # half of all realizations (boundary phenomenon); this seed is one
        config = SimConfig(I=150, mu_n=300.0, tau=0.0, shape="none")
        data = generate(config, seed=21)
        model = assemble(data.records, model_spec_for(config, n_basis=8))
        fitted = optimize(model)
        assert fitted.tau_boundary
        assert fitted.tau_hat < 1e-3

    def test_recovers_tau_and_beta_small_study(self):
        config = SimConfig(I=200, mu_n=100.0, tau=0.5, shape="ushape")
        data = generate(config, seed=12)
        model = assemble(data.records, model_spec_for(config))
        fitted = optimize(model)
        assert fitted.converged
        a, _ = model.index_map["x1"]
        assert fitted.theta[a] == pytest.approx(0.3, abs=0.1)
        assert 0.3 < fitted.tau_hat < 0.7
        # edf of the centered smooth stays within the block size
        assert 1.0 <= fitted.edf["s(volume)"] <= 9.0

    def test_single_replicate_i1000_tau_interval(self):
        config = SimConfig(I=1000, mu_n=100.0, tau=0.5, shape="ushape")
        data = generate(config, seed=4)
        model = assemble(data.records, model_spec_for(config))
        fitted = optimize(model)
        assert fitted.converged
        assert 0.4 <= fitted.tau_hat <= 0.6

    def test_posterior_cov_is_spd(self):
        recs = smooth_records(n_providers=25, base=18, seed=8)
        model = assemble(recs, volume_spec())
        fitted = optimize(model)
        cov = fitted.posterior_cov
        np.testing.assert_allclose(cov, cov.T, atol=1e-10)
        eigs = np.linalg.eigvalsh(cov)
        assert eigs.min() > 0

    def test_wald_log_tau_cross_check(self):
        from volcurve.fit import profile_tau_interval, wald_log_tau_se

        recs = smooth_records(n_providers=60, base=25, seed=29, tau=0.5)
        model = assemble(recs, volume_spec())
        fitted = optimize(model)
        assert not fitted.tau_boundary
        se = wald_log_tau_se(fitted)
        assert se is not None and se > 0
        # Wald interval on log tau roughly brackets the profile interval
        lo, hi = profile_tau_interval(fitted)
        wlo = fitted.tau_hat * np.exp(-1.96 * se)
        whi = fitted.tau_hat * np.exp(1.96 * se)
        assert lo == pytest.approx(wlo, rel=0.5)
        assert hi == pytest.approx(whi, rel=0.5)


@pytest.fixture(scope="module")
def predict_fitted():
    recs = smooth_records(n_providers=30, base=20, seed=13)
    model = assemble(recs, volume_spec())
    return optimize(model)


class TestPredict:
    @pytest.fixture()
    def fitted(self, predict_fitted):
        return predict_fitted

    def test_intercept_score_identity(self, fitted):
        # mean fitted probability equals the event rate (intercept unpenalized)
        eta = predict_eta(fitted, fitted.model.X)
        assert np.mean(expit(eta)) == pytest.approx(
            np.mean(fitted.model.y), abs=1e-6
        )

    def test_zero_row_and_linearity(self, fitted):
        p = fitted.p
        assert predict_eta(fitted, np.zeros((1, p)))[0] == 0.0
        model = fitted.model
        r1 = design_row(model, {"x1": 0.0, "x2": 0.0}, volume=25.0, provider="P001")
        r2 = design_row(model, {"x1": 0.0, "x2": 0.0}, volume=25.0, provider="P002")
        d = predict_eta(fitted, r1)[0] - predict_eta(fitted, r2)[0]
        a, _ = model.index_map["providers"]
        i1 = model.provider_ids.index("P001")
        i2 = model.provider_ids.index("P002")
        assert d == pytest.approx(fitted.theta[a + i1] - fitted.theta[a + i2], abs=1e-12)

    def test_dimension_mismatch(self, fitted):
        with pytest.raises(InputError, match="columns"):
            predict_eta(fitted, np.zeros((1, fitted.p + 2)))
