import json

import numpy as np
import pytest

from volcurve import io as vio
from volcurve.cli import main
from volcurve.design import assemble
from volcurve.errors import InputError
from volcurve.fit import optimize, predict_eta
from volcurve.inference import odds_ratio, probability_curve, smooth_curve
from volcurve.sim import SimConfig, generate, model_spec_for


@pytest.fixture(scope="module")
def small_fit():
    config = SimConfig(I=40, mu_n=40.0, tau=0.4, shape="linear")
    data = generate(config, seed=31)
    model = assemble(data.records, model_spec_for(config, n_basis=8))
    return data, model, optimize(model)


class TestIngestPatients:
    def write(self, tmp_path, text):
        p = tmp_path / "patients.csv"
        p.write_text(text, encoding="utf-8")
        return p

    def test_reads_rows(self, tmp_path):
        p = self.write(
            tmp_path,
            "provider_id,year,outcome,x1,x2\n"
            "A,2014,0,1,0.5\n"
            "A,2014,1,0,-0.25\n"
            "B,2015,0,1,2.0\n",
        )
        records = vio.ingest_patients(p)
        assert len(records) == 3
        assert records[0].provider_id == "A"
        assert records[2].year == 2015
        assert records[1].covariates == {"x1": 0.0, "x2": -0.25}

    def test_bad_outcome_names_line(self, tmp_path):
        p = self.write(
            tmp_path,
            "provider_id,year,outcome,x1\nA,2014,0,1\nA,2014,2,0\n",
        )
        with pytest.raises(InputError, match="line 3"):
            vio.ingest_patients(p)

    def test_missing_covariate_cell(self, tmp_path):
        p = self.write(
            tmp_path, "provider_id,year,outcome,x1\nA,2014,0,1\nB,2014,0,\n"
        )
        with pytest.raises(InputError, match="x1"):
            vio.ingest_patients(p)

    def test_wrong_field_count(self, tmp_path):
        p = self.write(tmp_path, "provider_id,year,outcome,x1\nA,2014,0\n")
        with pytest.raises(InputError, match="line 2"):
            vio.ingest_patients(p)

    def test_empty_file(self, tmp_path):
        p = self.write(tmp_path, "")
        with pytest.raises(InputError, match="empty"):
            vio.ingest_patients(p)

    def test_header_check(self, tmp_path):
        p = self.write(tmp_path, "id,year,outcome\nA,2014,0\n")
        with pytest.raises(InputError, match="header"):
            vio.ingest_patients(p)


class TestIngestVolumes:
    def write(self, tmp_path, text):
        p = tmp_path / "volumes.csv"
        p.write_text(text, encoding="utf-8")
        return p

    def test_reads_table(self, tmp_path):
        p = self.write(
            tmp_path, "provider_id,year,volume\nA,2013,10\nA,2014,0\nB,2014,25\n"
        )
        table = vio.ingest_volumes(p)
        assert table.entries[("A", 2013)] == 10
        assert table.entries[("B", 2014)] == 25
        assert len(table.entries) == 3

    def test_duplicate_key(self, tmp_path):
        p = self.write(
            tmp_path, "provider_id,year,volume\nA,2013,10\nA,2013,12\n"
        )
        with pytest.raises(InputError, match="duplicate"):
            vio.ingest_volumes(p)

    def test_negative_volume(self, tmp_path):
        p = self.write(tmp_path, "provider_id,year,volume\nA,2013,-1\n")
        with pytest.raises(InputError, match="negative"):
            vio.ingest_volumes(p)


class TestModelSpecJson:
    def test_round_trip(self):
        spec = model_spec_for(SimConfig(I=10), n_basis=8)
        doc = vio.model_spec_to_json(spec)
        back = vio.model_spec_from_json(doc)
        assert back == spec

    def test_unknown_spline_option(self):
        with pytest.raises(InputError, match="unknown spline"):
            vio.model_spec_from_json(
                {"smooth_terms": [{"name": "volume", "knots": 5}]}
            )


class TestFittedRoundTrip:
    def test_predictions_bit_identical(self, small_fit, tmp_path):
        data, model, fitted = small_fit
        path = tmp_path / "fitted.json"
        vio.save_fitted(fitted, path)
        loaded = vio.load_fitted(path)
        x = model.X
        np.testing.assert_array_equal(predict_eta(fitted, x), predict_eta(loaded, x))
        np.testing.assert_array_equal(loaded.theta, fitted.theta)
        np.testing.assert_array_equal(loaded.posterior_cov, fitted.posterior_cov)
        assert loaded.tau_hat == fitted.tau_hat
        assert loaded.edf == fitted.edf

    def test_inference_reproducible_after_reload(self, small_fit, tmp_path):
        _, _, fitted = small_fit
        path = tmp_path / "fitted.json"
        vio.save_fitted(fitted, path)
        loaded = vio.load_fitted(path)
        lo, hi = fitted.support()
        grid = np.linspace(lo, hi, 25)
        c1 = smooth_curve(fitted, grid=grid, seed=5)
        c2 = smooth_curve(loaded, grid=grid, seed=5)
        np.testing.assert_array_equal(c1.band_lower, c2.band_lower)
        np.testing.assert_array_equal(c1.f_hat, c2.f_hat)
        o1 = odds_ratio(fitted, 35.0, 45.0)
        o2 = odds_ratio(loaded, 35.0, 45.0)
        assert o1 == o2
        p1 = probability_curve(fitted, grid=grid, seed=5)
        p2 = probability_curve(loaded, grid=grid, seed=5)
        np.testing.assert_array_equal(p1.pi_star, p2.pi_star)

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text("{}", encoding="utf-8")
        with pytest.raises(InputError, match="not a fitted-model"):
            vio.load_fitted(path)


class TestCurveCsv:
    def test_headers_and_row_count(self, small_fit, tmp_path):
        _, _, fitted = small_fit
        grid = np.linspace(*fitted.support(), 37)
        curve = smooth_curve(fitted, grid=grid, seed=9)
        path = tmp_path / "curve.csv"
        vio.write_curve_csv(curve, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=9"
        assert lines[1] == "v,f_hat,se,band_lo,band_hi,plus_tau,minus_tau"
        assert len(lines) == 2 + 37
        first = lines[2].split(",")
        assert float(first[0]) == curve.grid[0]
        assert float(first[1]) == curve.f_hat[0]
        # plus/minus tau columns offset by tau-hat
        assert float(first[5]) == pytest.approx(curve.f_hat[0] + fitted.tau_hat)


class CliRunner:
    def __call__(self, *argv):
        return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def cli():
    return CliRunner()


@pytest.fixture(scope="module")
def sim_dir(cli, tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    cfg = out / "sim.json"
    cfg.write_text(
        json.dumps({"I": 40, "mu_n": 40.0, "tau": 0.4, "shape": "linear"}),
        encoding="utf-8",
    )
    assert cli("simulate", "--config", cfg, "--seed", 31, "--out", out) == 0
    spec = out / "spec.json"
    spec.write_text(
        json.dumps(
            {
                "linear_terms": ["x1", "x2"],
                "smooth_terms": [{"name": "volume", "n_basis": 8}],
                "random_intercept": True,
                "volume_mode": "caseload",
            }
        ),
        encoding="utf-8",
    )
    return out


class TestCliPipeline:
    def test_simulate_wrote_patients(self, sim_dir):
        lines = (sim_dir / "patients.csv").read_text().splitlines()
        assert lines[0] == "provider_id,year,outcome,x1,x2"
        assert len(lines) > 1000

    def test_fit_curve_or(self, cli, sim_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("cli_out")
        fitted_path = out / "fitted.json"
        rc = cli(
            "fit",
            "--patients", sim_dir / "patients.csv",
            "--spec", sim_dir / "spec.json",
            "--out", fitted_path,
        )
        assert rc == 0
        doc = json.loads(fitted_path.read_text())
        assert doc["format"] == "volcurve-fitted-model"
        assert doc["inference"]["tau_test"]["p_value"] < 0.05
        assert 0 < doc["inference"]["mor"]["mor_hat"] < 1
        assert doc["tau_hat"] > 0.1

        rc = cli(
            "curve", "--model", fitted_path, "--out", out, "--grid-size", 50,
            "--seed", 3,
        )
        assert rc == 0
        lines = (out / "curve.csv").read_text().splitlines()
        assert len(lines) == 2 + 50
        assert (out / "curve_probability.csv").exists()
        assert (out / "volume_histogram.csv").exists()
        assert (out / "curve.png").exists()
        assert (out / "curve_probability.png").exists()

        or_path = out / "or.json"
        rc = cli(
            "or", "--model", fitted_path,
            "--pairs", "30:35", "30:40", "30:45",
            "--out", or_path,
        )
        assert rc == 0
        ors = json.loads(or_path.read_text())["estimates"]
        assert len(ors) == 3
        # decreasing true risk effect: exp(f(30) - f(v2)) grows with v2
        vals = [e["or_hat"] for e in ors]
        assert vals[0] < vals[1] < vals[2]
        assert all(e["ci_lower"] <= e["or_hat"] <= e["ci_upper"] for e in ors)

    def test_or_strict_flag(self, cli, sim_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("strict")
        fitted_path = out / "fitted.json"
        cli(
            "fit", "--patients", sim_dir / "patients.csv",
            "--spec", sim_dir / "spec.json", "--out", fitted_path,
            "--skip-tests",
        )
        plain_path = out / "plain.json"
        strict_path = out / "strict.json"
        cli("or", "--model", fitted_path, "--pairs", "30:40", "--out", plain_path)
        cli(
            "or", "--model", fitted_path, "--pairs", "30:40",
            "--strict-appendix-a", "--out", strict_path,
        )
        plain = json.loads(plain_path.read_text())["estimates"][0]
        strict = json.loads(strict_path.read_text())["estimates"][0]
        assert strict["se_g"] == pytest.approx(plain["se_g"] ** 2, rel=1e-12)

    def test_no_figures_flag(self, cli, sim_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("nofig")
        fitted_path = out / "fitted.json"
        cli(
            "fit", "--patients", sim_dir / "patients.csv",
            "--spec", sim_dir / "spec.json", "--out", fitted_path, "--skip-tests",
        )
        rc = cli(
            "curve", "--model", fitted_path, "--out", out, "--no-figures",
            "--grid-size", 10,
        )
        assert rc == 0
        assert not (out / "curve.png").exists()
        assert (out / "curve.csv").exists()

    def test_error_json_on_stderr(self, cli, tmp_path_factory, capsys):
        out = tmp_path_factory.mktemp("err")
        rc = cli("fit", "--patients", out / "nope.csv", "--spec", out / "s.json",
                 "--out", out / "f.json")
        assert rc == 2
        err = capsys.readouterr().err
        doc = json.loads(err.strip().splitlines()[-1])
        assert doc["error"] == "file-not-found"

    def test_bad_pair_format(self, cli, sim_dir, tmp_path_factory, capsys):
        out = tmp_path_factory.mktemp("badpair")
        fitted_path = out / "fitted.json"
        cli(
            "fit", "--patients", sim_dir / "patients.csv",
            "--spec", sim_dir / "spec.json", "--out", fitted_path, "--skip-tests",
        )
        rc = cli("or", "--model", fitted_path, "--pairs", "umm")
        assert rc == 2
        doc = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert doc["error"] == "invalid-input"


class TestCliMultiYear:
    def test_simulate_and_fit_time_dependent(self, cli, tmp_path_factory):
        out = tmp_path_factory.mktemp("multi")
        cfg = out / "sim.json"
        cfg.write_text(
            json.dumps(
                {
                    "I": 30,
                    "mu_n": 25.0,
                    "tau": 0.3,
                    "shape": "linear",
                    "n_years": 3,
                    "history_years": 2,
                    "year_effects": [0.0, -0.1, 0.1],
                }
            ),
            encoding="utf-8",
        )
        assert cli("simulate", "--config", cfg, "--seed", 5, "--out", out) == 0
        assert (out / "volumes.csv").exists()
        assert (out / "volume_variability.csv").exists()
        assert (out / "volume_variability.png").exists()

        spec = out / "spec.json"
        spec.write_text(
            json.dumps(
                {
                    "linear_terms": ["x1", "x2"],
                    "smooth_terms": [{"name": "volume", "n_basis": 7}],
                    "year_intercepts": True,
                    "random_intercept": True,
                    "volume_mode": "cumulative_average",
                }
            ),
            encoding="utf-8",
        )
        fitted_path = out / "fitted.json"
        rc = cli(
            "fit",
            "--patients", out / "patients.csv",
            "--volumes", out / "volumes.csv",
            "--spec", spec,
            "--out", fitted_path,
            "--skip-tests",
        )
        assert rc == 0
        doc = json.loads(fitted_path.read_text())
        assert "year" in doc["index_map"]
        assert "intercept" not in doc["index_map"]
        assert len(doc["years"]) == 3

        rc = cli("curve", "--model", fitted_path, "--out", out, "--grid-size", 20)
        assert rc == 0
        assert (out / "curve.csv").exists()


class TestCliStudy:
    def test_study_outputs(self, cli, tmp_path_factory):
        out = tmp_path_factory.mktemp("study")
        cfg = out / "study.json"
        cfg.write_text(
            json.dumps(
                {
                    "configs": [
                        {"I": 25, "mu_n": 25.0, "tau": 0.4, "shape": "linear"}
                    ],
                    "n_reps": 2,
                    "base_seed": 7,
                    "or_pair": [20, 30],
                    "grid_size": 10,
                    "n_basis": 6,
                }
            ),
            encoding="utf-8",
        )
        rc = cli("study", "--config", cfg, "--jobs", 1, "--out", out)
        assert rc == 0
        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0].startswith("config,shape,I,mu_n,tau_true,replicate,seed,")
        assert len(lines) == 3
        assert (out / "curves.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "study_or.png").exists()
        assert (out / "study_tau.png").exists()
        assert (out / "study_p.png").exists()
