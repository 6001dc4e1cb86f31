"""Command line front end: calibrate, predict, jackknife, sep, baselines, simulate.

Every subcommand is a thin shell over the library, deterministic given its
inputs, flags and seed.  Failures exit nonzero with one machine-parsable
line ``error[<category>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .baselines import MultivariateModel
from .errors import AlignmentError, InvalidParameterError, SpecalError
from .methods import STUDY_METHODS, FitSpec, make_strategy
from .model import CalibrationModel, ConcentrationMatrix, SpectraSet
from .predict import jackknife_sd, prediction_report, sep
from .simulate import (
    SCENARIO_PHI,
    AnalyteCurveSpec,
    SimConfig,
    generate_dataset,
    prediction_spectra,
    run_bias_variance_study,
    run_jackknife_study,
    sample_dirichlet,
    _stream,
)


def _say(message: str) -> None:
    """Informational stdout line; silenced by SPECAL_VERBOSE=0."""
    if os.environ.get("SPECAL_VERBOSE", "1") != "0":
        print(message)


def _parse_lambda(text: str) -> float | None:
    if text.lower() == "gcv":
        return None
    try:
        value = float(text)
    except ValueError:
        raise InvalidParameterError(
            f"--lambda must be a number or 'gcv', got {text!r}"
        ) from None
    if value < 0:
        raise InvalidParameterError("--lambda must be nonnegative")
    return value


def _parse_lambda_grid(text: str | None) -> np.ndarray | None:
    if text is None:
        return None
    parts = text.split(":")
    if len(parts) != 3:
        raise InvalidParameterError("--lambda-grid expects MIN:MAX:COUNT")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    if lo <= 0 or hi <= lo or count < 1:
        raise InvalidParameterError("--lambda-grid bounds must be 0 < MIN < MAX")
    return np.logspace(np.log10(lo), np.log10(hi), count)


def _parse_sum_to(text: str) -> float | str | None:
    lowered = text.lower()
    if lowered == "auto":
        return "auto"
    if lowered == "none":
        return None
    return float(text)


def _add_fit_options(parser: argparse.ArgumentParser, methods: tuple[str, ...]) -> None:
    parser.add_argument("--method", choices=methods, required=True)
    parser.add_argument("--num-basis", type=int, default=14,
                        help="basis dimension for fixed-basis methods")
    parser.add_argument("--lambda", dest="lam", default="gcv",
                        help="smoothing parameter value, or 'gcv' to select")
    parser.add_argument("--lambda-grid", default=None,
                        help="log-spaced selection grid as MIN:MAX:COUNT")
    parser.add_argument("--reselect-lambda", action="store_true",
                        help="reselect the smoothing parameter inside each "
                             "jackknife fold")
    parser.add_argument("--components", type=int, default=None)
    parser.add_argument("--variance-fraction", type=float, default=None)
    parser.add_argument("--sum-to", default="auto",
                        help="pin predicted concentration sums ('auto', "
                             "'none' or a number)")
    parser.add_argument("--constraint-weight", type=float, default=1.0)
    parser.add_argument("--gls-augment", choices=["auto", "yes", "no"],
                        default="auto")
    parser.add_argument("--covariance-per-fold", action="store_true",
                        help="refit the noise covariance inside each fold")


def _fit_spec(args) -> FitSpec:
    method = args.method
    components = args.components
    variance_fraction = args.variance_fraction
    if method in ("pcr", "pls") and components is None and variance_fraction is None:
        variance_fraction = 0.9
    return FitSpec(
        method=method,
        num_basis=args.num_basis,
        lam=_parse_lambda(args.lam),
        lam_grid=_parse_lambda_grid(args.lambda_grid),
        reselect_lambda=args.reselect_lambda,
        components=components,
        variance_fraction=variance_fraction,
        sum_to=_parse_sum_to(args.sum_to),
        constraint_weight=args.constraint_weight,
        gls_augment={"auto": "auto", "yes": True, "no": False}[args.gls_augment],
        covariance_per_fold=args.covariance_per_fold,
    )


def _load_pair(args) -> tuple[SpectraSet, ConcentrationMatrix]:
    spectra = io.load_spectra(args.spectra, transpose=args.transpose)
    conc = io.load_concentrations(args.concentrations, spectra)
    return spectra, conc


def _cmd_calibrate(args) -> int:
    spectra, conc = _load_pair(args)
    spec = _fit_spec(args)
    strategy = make_strategy(spec)
    model = strategy.fit(spectra, conc)
    io.save_model(model, args.model_out)
    if args.curves_out:
        io.save_curves(model, args.curves_out, num_points=args.curve_points)
    diag = model.diagnostics
    if diag is not None:
        _say(f"method={model.method} lambda={model.lam} rss={diag.rss:.6g} "
             f"edf={diag.hat_trace:.3f} "
             f"constraint_max_abs={diag.constraint_max_abs:.3g}")
    return 0


def _cmd_baselines(args) -> int:
    spectra, conc = _load_pair(args)
    spec = _fit_spec(args)
    strategy = make_strategy(spec)
    model = strategy.fit(spectra, conc)
    io.save_model(model, args.model_out)
    _say(f"method={model.method} components={model.components} "
         f"variance_fraction={model.variance_fraction}")
    return 0


def _spec_from_model(model, args) -> FitSpec:
    """Rebuild a fit configuration matching a stored model for jackknifing."""
    if isinstance(model, CalibrationModel):
        method = model.method.lower()
        if method not in ("ols-k", "ols-ss", "gls-k"):
            raise InvalidParameterError(f"cannot jackknife method {model.method!r}")
        lam = model.lam if method == "ols-ss" else None
        return FitSpec(
            method=method,
            num_basis=model.basis.num_basis,
            lam=lam,
            sum_to=_parse_sum_to(args.sum_to),
        )
    if isinstance(model, MultivariateModel):
        return FitSpec(method=model.method.lower(), components=model.components)
    raise InvalidParameterError("unsupported model type")


def _auto_sum_to(model: CalibrationModel) -> float | None:
    # Closed calibration samples leave the analyte curves summing to
    # (near) zero, so the matching prediction needs the sum pinned.
    return 1.0 if model.closed_calibration else None


def _cmd_predict(args) -> int:
    model = io.load_model(args.model)
    spectra = io.load_spectra(args.spectra, transpose=args.transpose,
                              role="prediction")
    s_names = None
    if args.s_file:
        s_names, s = io.load_spread(args.s_file)
    elif args.jackknife:
        if not (args.cal_spectra and args.cal_concentrations):
            raise InvalidParameterError(
                "--jackknife needs --cal-spectra and --cal-concentrations"
            )
        cal_spectra = io.load_spectra(args.cal_spectra)
        cal_conc = io.load_concentrations(args.cal_concentrations, cal_spectra)
        s = jackknife_sd(cal_spectra, cal_conc, _spec_from_model(model, args))
        s_names = cal_conc.analyte_names()
    else:
        raise InvalidParameterError(
            "predict needs --s-file or --jackknife with calibration data"
        )
    ids = spectra.sample_ids or tuple(
        f"s{j + 1}" for j in range(spectra.num_samples)
    )
    if isinstance(model, MultivariateModel):
        from .baselines import predict_multivariate
        from .predict import PredictionReport, confidence_intervals

        y_hat = predict_multivariate(model, spectra.absorbance)
        analytes = tuple(s_names) if s_names else tuple(
            f"analyte_{k + 1}" for k in range(y_hat.shape[1])
        )
        report = PredictionReport(
            y_hat=y_hat,
            s=np.asarray(s, dtype=float),
            intervals=confidence_intervals(y_hat, s, args.c),
            c=args.c,
            residual_norms=np.zeros(y_hat.shape[0]),
            outside_unit_range=np.any((y_hat < 0) | (y_hat > 1), axis=1),
            analytes=analytes,
        )
    else:
        sum_to = _parse_sum_to(args.sum_to)
        if sum_to == "auto":
            sum_to = _auto_sum_to(model)
        report = prediction_report(model, spectra, s, c=args.c, sum_to=sum_to)
    io.save_predictions(report, ids, args.out)
    return 0


def _cmd_jackknife(args) -> int:
    spectra, conc = _load_pair(args)
    spec = _fit_spec(args)
    s = jackknife_sd(spectra, conc, spec)
    io.save_spread(conc.analyte_names(), s, args.out)
    return 0


def _cmd_sep(args) -> int:
    truth_ids, analytes, truth = io.load_value_table(args.truth)
    pred_ids, _, predictions = io.load_value_table(args.predictions,
                                                   columns=analytes)
    row_index = {sid: k for k, sid in enumerate(pred_ids)}
    missing_rows = [sid for sid in truth_ids if sid not in row_index]
    if missing_rows:
        raise AlignmentError(f"prediction table lacks samples {missing_rows}")
    aligned = predictions[[row_index[sid] for sid in truth_ids]]
    report = sep(truth, aligned)
    io.save_sep(report, analytes, args.out)
    _say(f"overall_sep={report.overall!r}")
    return 0


def _scenario_config(args) -> SimConfig:
    phi = args.phi if args.phi is not None else SCENARIO_PHI[args.scenario]
    return SimConfig(
        seed=args.seed,
        num_samples=args.samples,
        sigma2=args.sigma2,
        phi=phi,
        curves=AnalyteCurveSpec(),
    )


def _manifest_payload(cfg: SimConfig, args, extra: dict) -> dict:
    payload = {
        "seed": cfg.seed,
        "num_samples": cfg.num_samples,
        "grid": [cfg.grid_start, cfg.grid_end, cfg.grid_step],
        "alpha": cfg.alpha,
        "sigma2": cfg.sigma2,
        "phi": cfg.phi,
        "scenario": args.scenario,
        "curves": {
            "centers": list(cfg.curves.centers),
            "widths": list(cfg.curves.widths),
            "heights": list(cfg.curves.heights),
            "baseline_level": cfg.curves.baseline_level,
            "num_basis": cfg.curves.num_basis,
            "project_sum_zero": cfg.curves.project_sum_zero,
        },
    }
    payload.update(extra)
    return payload


def _cmd_simulate(args) -> int:
    out_dir = io.ensure_dir(args.out_dir)
    cfg = _scenario_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.study == "dataset":
        spectra, conc, truth = generate_dataset(cfg)
        io.save_spectra(spectra, out_dir / "cal_spectra.csv")
        io.save_concentrations(conc, out_dir / "cal_concentrations.csv")
        pred_y = sample_dirichlet(
            _stream(cfg.seed, 9), args.prediction_samples, cfg.alpha,
            cfg.num_analytes,
        )
        pred_spectra = prediction_spectra(truth, pred_y, 0, 0)
        pred_ids = tuple(f"p{j + 1}" for j in range(args.prediction_samples))
        io.save_spectra(
            SpectraSet(grid=pred_spectra.grid,
                       absorbance=pred_spectra.absorbance,
                       role="prediction", sample_ids=pred_ids),
            out_dir / "pred_spectra.csv",
        )
        io.save_concentrations(
            ConcentrationMatrix(values=pred_y, sample_ids=pred_ids),
            out_dir / "pred_concentrations.csv",
        )
        io.save_study_rows(
            ["wavelength", "baseline",
             *(f"analyte_{k + 1}" for k in range(cfg.num_analytes))],
            [[g, *truth.curve_values[:, n]]
             for n, g in enumerate(cfg.grid)],
            out_dir / "truth_curves.csv",
        )
        io.save_manifest(
            _manifest_payload(cfg, args, {
                "study": "dataset",
                "prediction_samples": args.prediction_samples,
            }),
            out_dir / "manifest.json",
        )
        return 0
    if args.study == "jackknife":
        result = run_jackknife_study(cfg, methods, args.replicates,
                                     jobs=args.jobs)
        io.save_study_rows(["method", "component", "median_sd", "iqr_sd"],
                           result.rows(), out_dir / "jackknife_study.csv")
        io.save_manifest(
            _manifest_payload(cfg, args, {
                "study": "jackknife",
                "methods": methods,
                "replicates": args.replicates,
                "failures": result.failures,
            }),
            out_dir / "manifest.json",
        )
        return 0
    result = run_bias_variance_study(
        cfg, methods, learning_sets=args.learning_sets,
        prediction_reps=args.prediction_reps, jobs=args.jobs,
    )
    io.save_study_rows(["method", "component", "squared_bias", "variability"],
                       result.rows(), out_dir / "bias_variance_study.csv")
    io.save_manifest(
        _manifest_payload(cfg, args, {
            "study": "bias-variance",
            "methods": methods,
            "learning_sets": args.learning_sets,
            "prediction_reps": args.prediction_reps,
            "failures": result.failures,
        }),
        out_dir / "manifest.json",
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specal",
        description="Functional calibration and prediction for absorbance spectra",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="fit analyte curves")
    p_cal.add_argument("--spectra", required=True)
    p_cal.add_argument("--concentrations", required=True)
    p_cal.add_argument("--transpose", action="store_true")
    _add_fit_options(p_cal, ("ols-k", "ols-ss", "gls-k"))
    p_cal.add_argument("--model-out", required=True)
    p_cal.add_argument("--curves-out", default=None)
    p_cal.add_argument("--curve-points", type=int, default=201)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_base = sub.add_parser("baselines", help="fit MLR/PCR/PLS baselines")
    p_base.add_argument("--spectra", required=True)
    p_base.add_argument("--concentrations", required=True)
    p_base.add_argument("--transpose", action="store_true")
    _add_fit_options(p_base, ("mlr", "pcr", "pls"))
    p_base.add_argument("--model-out", required=True)
    p_base.set_defaults(func=_cmd_baselines)

    p_pred = sub.add_parser("predict", help="predict concentrations")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--spectra", required=True)
    p_pred.add_argument("--transpose", action="store_true")
    p_pred.add_argument("--s-file", default=None)
    p_pred.add_argument("--jackknife", action="store_true")
    p_pred.add_argument("--cal-spectra", default=None)
    p_pred.add_argument("--cal-concentrations", default=None)
    p_pred.add_argument("--c", type=float, default=1.96)
    p_pred.add_argument("--sum-to", default="auto")
    p_pred.add_argument("--out", required=True)
    p_pred.set_defaults(func=_cmd_predict)

    p_jack = sub.add_parser("jackknife", help="leave-one-out spread estimates")
    p_jack.add_argument("--spectra", required=True)
    p_jack.add_argument("--concentrations", required=True)
    p_jack.add_argument("--transpose", action="store_true")
    _add_fit_options(p_jack, ("ols-k", "ols-ss", "gls-k", "mlr", "pcr", "pls"))
    p_jack.add_argument("--out", required=True)
    p_jack.set_defaults(func=_cmd_jackknife)

    p_sep = sub.add_parser("sep", help="standard error of prediction")
    p_sep.add_argument("--truth", required=True)
    p_sep.add_argument("--predictions", required=True)
    p_sep.add_argument("--out", required=True)
    p_sep.set_defaults(func=_cmd_sep)

    p_sim = sub.add_parser("simulate", help="synthetic data and studies")
    p_sim.add_argument("--study", choices=["dataset", "jackknife", "bias-variance"],
                       required=True)
    p_sim.add_argument("--scenario", choices=["weak", "strong"], default="weak")
    p_sim.add_argument("--phi", type=float, default=None,
                       help="override the scenario decay rate")
    p_sim.add_argument("--sigma2", type=float, default=4.0)
    p_sim.add_argument("--samples", type=int, default=20)
    p_sim.add_argument("--seed", type=int, default=1)
    p_sim.add_argument("--replicates", type=int, default=200)
    p_sim.add_argument("--learning-sets", type=int, default=40)
    p_sim.add_argument("--prediction-reps", type=int, default=5)
    p_sim.add_argument("--prediction-samples", type=int, default=8)
    p_sim.add_argument("--methods", default="OLS-K,OLS-SS,MLR,PCR-p,PLS-p",
                       help=f"comma list from {sorted(STUDY_METHODS)}")
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--out-dir", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecalError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
