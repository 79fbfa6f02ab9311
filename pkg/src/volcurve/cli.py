"""Command-line interface: volcurve fit|curve|or|simulate|study.

Errors print a machine-readable JSON record to stderr ({"error": code,
"message": ...}) and exit nonzero. The VOLCURVE_LOG environment variable
(debug/info/warning) controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import figures, inference
from . import io as vio
from .design import assemble
from .errors import InputError, VolcurveError
from .fit import optimize
from .proxy import volume_variability
from .sim import generate, run_study, summarize

log = logging.getLogger("volcurve.cli")

VOLUME_MODE_ALIASES = {
    "caseload": "caseload",
    "simple": "simple_average",
    "cumulative": "cumulative_average",
}


def _setup_logging():
    level = os.environ.get("VOLCURVE_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _add_fit_inputs(p: argparse.ArgumentParser):
    p.add_argument("--patients", help="patient CSV (provider_id,year,outcome,...)")
    p.add_argument("--volumes", help="yearly volume CSV (provider_id,year,volume)")
    p.add_argument("--spec", help="model spec JSON file")
    p.add_argument(
        "--volume-mode",
        choices=sorted(VOLUME_MODE_ALIASES),
        help="override the model spec's volume definition",
    )
    p.add_argument("--clamp-volume", action="store_true",
                   help="clamp out-of-range volumes to the training range")


def _add_model_source(p: argparse.ArgumentParser):
    p.add_argument("--model", help="fitted-model JSON from 'volcurve fit'")
    _add_fit_inputs(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volcurve",
        description="Volume-outcome curves with penalized splines and "
        "provider random intercepts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the model and write a fitted-model JSON")
    _add_fit_inputs(p_fit)
    p_fit.add_argument("--out", required=True, help="output fitted-model JSON path")
    p_fit.add_argument("--alpha", type=float, default=0.05)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--skip-tests", action="store_true",
                       help="skip the volume-effect/tau tests and MOR interval")

    p_curve = sub.add_parser("curve", help="write curve CSVs and figures")
    _add_model_source(p_curve)
    p_curve.add_argument("--out", required=True, help="output directory")
    p_curve.add_argument("--grid-size", type=int, default=200)
    p_curve.add_argument("--alpha", type=float, default=0.05)
    p_curve.add_argument("--seed", type=int, default=0)
    p_curve.add_argument("--draws", type=int, default=10_000)
    p_curve.add_argument("--no-figures", action="store_true")

    p_or = sub.add_parser("or", help="odds ratios for volume pairs")
    _add_model_source(p_or)
    p_or.add_argument(
        "--pairs",
        nargs="+",
        required=True,
        metavar="V1:V2",
        help="volume pairs, e.g. 20:40 20:70 20:100",
    )
    p_or.add_argument("--strict-appendix-a", action="store_true",
                      help="report the raw delta-method quadratic form as the "
                           "standard error instead of its square root")
    p_or.add_argument("--out", help="output JSON path (default: stdout)")

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    p_sim.add_argument("--config", required=True, help="simulation config JSON")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--beta0-literal", action="store_true",
                       help="use inverse-logit(0.1) as the intercept")
    p_sim.add_argument("--out", required=True, help="output directory")

    p_study = sub.add_parser("study", help="run the simulation study")
    p_study.add_argument("--config", required=True, help="study config JSON")
    p_study.add_argument("--seed", type=int, help="override the config base seed")
    p_study.add_argument("--jobs", type=int, default=1)
    p_study.add_argument("--out", required=True, help="output directory")
    p_study.add_argument("--no-figures", action="store_true")

    return parser


def _load_model(args):
    if getattr(args, "model", None):
        if args.patients or args.spec:
            raise InputError("pass either --model or --patients/--spec, not both")
        return vio.load_fitted(args.model)
    return _fit_from_inputs(args)


def _fit_from_inputs(args):
    import dataclasses

    if not args.patients or not args.spec:
        raise InputError("need --patients and --spec (or --model)")
    records = vio.ingest_patients(args.patients)
    spec = vio.model_spec_from_json(args.spec)
    if args.volume_mode:
        spec = dataclasses.replace(
            spec, volume_mode=VOLUME_MODE_ALIASES[args.volume_mode]
        )
    volumes = vio.ingest_volumes(args.volumes) if args.volumes else None
    model = assemble(records, spec, volumes=volumes)
    return optimize(model)


def cmd_fit(args) -> int:
    fitted = _fit_from_inputs(args)
    inf = None
    if not args.skip_tests:
        inf = {}
        if fitted.spec.has_volume_smooth:
            t = inference.test_smooth(fitted)
            inf["smooth_test"] = {
                "statistic": t.statistic,
                "reference_df": t.reference_df,
                "p_value": t.p_value,
                "kind": t.kind,
            }
        if fitted.tau_hat is not None:
            t = inference.test_tau(fitted.model, full=fitted)
            inf["tau_test"] = {
                "statistic": t.statistic,
                "p_value": t.p_value,
                "kind": t.kind,
            }
            m = inference.mor(fitted, level=1 - args.alpha, with_ci=True)
            from .fit import wald_log_tau_se

            inf["mor"] = {
                "mor_hat": m.mor_hat,
                "ci": list(m.ci) if m.ci else None,
                "tau_hat": m.tau_hat,
                "tau_ci": list(m.tau_ci) if m.tau_ci else None,
                "boundary": m.boundary,
                "log_tau_se_wald": wald_log_tau_se(fitted),
            }
    vio.save_fitted(fitted, args.out, inference=inf)
    log.info("wrote %s", args.out)
    if not fitted.converged:
        print(
            json.dumps({"warning": "fit-not-converged"}),
            file=sys.stderr,
        )
    return 0


def cmd_curve(args) -> int:
    fitted = _load_model(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.grid_size < 2:
        raise InputError("grid size must be at least 2")
    lo, hi = fitted.support()
    grid = np.linspace(lo, hi, args.grid_size)
    curve = inference.smooth_curve(
        fitted, grid=grid, alpha=args.alpha, n_draws=args.draws,
        seed=args.seed, clamp=args.clamp_volume,
    )
    prob = inference.probability_curve(
        fitted, grid=grid, alpha=args.alpha, n_draws=args.draws,
        seed=args.seed, clamp=args.clamp_volume,
    )
    vio.write_curve_csv(curve, outdir / "curve.csv")
    vio.write_probability_csv(prob, outdir / "curve_probability.csv")
    vio.write_histogram_csv(fitted.volume_hist, outdir / "volume_histogram.csv")
    if not args.no_figures:
        figures.render_curve_figure(curve, fitted.volume_hist, outdir / "curve.png")
        figures.render_probability_figure(
            prob, fitted.volume_hist, outdir / "curve_probability.png"
        )
    log.info("wrote curve outputs to %s", outdir)
    return 0


def _parse_pairs(raw) -> list:
    pairs = []
    for item in raw:
        parts = item.replace(",", ":").split(":")
        if len(parts) != 2:
            raise InputError(f"bad volume pair {item!r}; expected V1:V2")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise InputError(f"bad volume pair {item!r}; expected numbers") from None
    return pairs


def cmd_or(args) -> int:
    fitted = _load_model(args)
    pairs = _parse_pairs(args.pairs)
    estimates = [
        inference.odds_ratio(
            fitted, v1, v2, strict_se=args.strict_appendix_a, clamp=args.clamp_volume
        )
        for v1, v2 in pairs
    ]
    doc = vio.or_estimates_to_json(estimates, strict_se=args.strict_appendix_a)
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        log.info("wrote %s", args.out)
    else:
        print(text)
    return 0


def cmd_simulate(args) -> int:
    config = vio.sim_config_from_json(args.config)
    if args.beta0_literal and config.beta0 is None and not config.beta0_literal:
        import dataclasses

        config = dataclasses.replace(config, beta0_literal=True)
    data = generate(config, seed=args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    vio.write_patients_csv(data.records, outdir / "patients.csv", ("x1", "x2"))
    if data.volume_table is not None:
        vio.write_volumes_csv(data.volume_table, outdir / "volumes.csv")
        stats = volume_variability(data.volume_table)
        vio.write_variability_csv(stats, outdir / "volume_variability.csv")
        figures.render_variability_figure(stats, outdir / "volume_variability.png")
    log.info("wrote %d records to %s", len(data.records), outdir)
    return 0


def cmd_study(args) -> int:
    cfg = vio.study_config_from_json(args.config)
    base_seed = args.seed if args.seed is not None else cfg["base_seed"]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    results = run_study(
        cfg["configs"],
        n_reps=cfg["n_reps"],
        base_seed=base_seed,
        parallelism=max(1, args.jobs),
        or_pair=cfg["or_pair"],
        grid_size=cfg["grid_size"],
        with_curve=cfg["with_curve"],
        n_basis=cfg["n_basis"],
    )
    vio.write_study_csv(results, outdir / "results.csv")
    if cfg["with_curve"]:
        vio.write_study_curves_csv(results, outdir / "curves.csv")
    vio.write_summary_csv(summarize(results), outdir / "summary.csv")
    if not args.no_figures:
        figures.render_study_figures(results, outdir)
    n_err = sum(1 for r in results if r.status != "ok")
    log.info(
        "study wrote %d replicates (%d failed) to %s", len(results), n_err, outdir
    )
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "curve": cmd_curve,
    "or": cmd_or,
    "simulate": cmd_simulate,
    "study": cmd_study,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except VolcurveError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(
            json.dumps({"error": "file-not-found", "message": str(exc)}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
