"""Concentration prediction, jackknife spread estimates, SEP metrics.

Prediction inverts a fitted calibration: each new spectrum is regressed on
the fitted analyte curves after subtracting the baseline.  The optional
``sum_to`` closure resolves the direction that closed calibration samples
leave unidentified (fitted analyte curves then sum to zero pointwise, so
the plain normal equations are singular by construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateAnalytesError,
    FoldFailureError,
    InsufficientSamplesError,
    InvalidParameterError,
    ShapeError,
)
from .model import CalibrationModel, ConcentrationMatrix, SpectraSet

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class PredictionReport:
    """Predicted concentrations with jackknife spreads and intervals."""

    y_hat: np.ndarray
    s: np.ndarray
    intervals: np.ndarray
    c: float
    residual_norms: np.ndarray
    outside_unit_range: np.ndarray
    analytes: tuple[str, ...]


@dataclass(frozen=True)
class SepReport:
    """Root-mean-square prediction errors, per component and overall."""

    per_component: np.ndarray
    overall: float
    num_samples: int
    num_analytes: int


def _analyte_matrix(model: CalibrationModel,
                    spectra: SpectraSet) -> tuple[np.ndarray, np.ndarray]:
    curves = model.curve_values(spectra.grid)
    return curves[0], curves[1:].T


def predict_concentrations(model: CalibrationModel, spectra: SpectraSet,
                           sum_to: float | None = None) -> np.ndarray:
    """Per-sample least squares concentrations for new spectra.

    Estimates are unconstrained and may leave [0, 1]; they are reported
    as-is.  With ``sum_to`` given, the component sum of every estimate is
    pinned to that value, which also restores well-posedness when the
    analyte curves sum to zero.
    """
    baseline, a = _analyte_matrix(model, spectra)
    m = a.shape[1]
    resid = spectra.absorbance - baseline[None, :]
    singular = np.linalg.svd(a, compute_uv=False)
    rank_ok = singular[-1] > _RANK_RTOL * singular[0]
    if sum_to is None:
        if not rank_ok:
            raise DegenerateAnalytesError(
                "fitted analyte curves are collinear on this grid (they sum "
                "to zero for closed calibration samples); supply sum_to to "
                "resolve the unidentified direction"
            )
        y_hat, *_ = np.linalg.lstsq(a, resid.T, rcond=None)
        return y_hat.T
    if m == 1:
        return np.full((spectra.num_samples, 1), float(sum_to))
    # Solve on the zero-sum subspace, then shift to the requested total.
    ones = np.ones((m, 1))
    q, _ = np.linalg.qr(ones, mode="complete")
    v = q[:, 1:]
    center = (float(sum_to) / m) * np.ones(m)
    target = resid.T - (a @ center)[:, None]
    u_hat, *_ = np.linalg.lstsq(a @ v, target, rcond=None)
    return (center[:, None] + v @ u_hat).T


def prediction_report(model: CalibrationModel, spectra: SpectraSet,
                      s: np.ndarray, c: float = 1.96,
                      sum_to: float | None = None) -> PredictionReport:
    """Full prediction output: estimates, intervals, residual norms."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size != model.num_analytes:
        raise ShapeError("jackknife spread vector length does not match analytes")
    y_hat = predict_concentrations(model, spectra, sum_to=sum_to)
    intervals = confidence_intervals(y_hat, s, c)
    baseline, a = _analyte_matrix(model, spectra)
    fitted = baseline[None, :] + y_hat @ a.T
    residual_norms = np.linalg.norm(spectra.absorbance - fitted, axis=1)
    outside = np.any((y_hat < 0) | (y_hat > 1), axis=1)
    return PredictionReport(
        y_hat=y_hat,
        s=s,
        intervals=intervals,
        c=float(c),
        residual_norms=residual_norms,
        outside_unit_range=outside,
        analytes=model.analytes,
    )


def confidence_intervals(y_hat: np.ndarray, s: np.ndarray, c: float = 1.96) -> np.ndarray:
    """Elementwise ``y_hat +- c * s`` as a (J, m, 2) array."""
    if c <= 0:
        raise InvalidParameterError(f"interval multiplier must be positive, got {c}")
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=float))
    s = np.asarray(s, dtype=float).ravel()
    if s.size != y_hat.shape[1]:
        raise ShapeError("spread vector length does not match prediction columns")
    if np.any(s < 0):
        raise InvalidParameterError("spreads must be nonnegative")
    half = c * s[None, :]
    return np.stack([y_hat - half, y_hat + half], axis=-1)


def jackknife_sd(spectra: SpectraSet, concentrations: ConcentrationMatrix,
                 fit_config) -> np.ndarray:
    """Leave-one-out spread of the concentration predictor.

    For each calibration sample the model is refitted without it (same
    method and tuning as ``fit_config``), the held-out sample predicted,
    and the squared errors averaged with 1/I normalization.
    """
    if spectra.num_samples != concentrations.num_samples:
        raise ShapeError("spectra and concentrations disagree on sample count")
    if spectra.num_samples < 3:
        raise InvalidParameterError("jackknife needs at least three samples")
    from .methods import resolve_strategy

    strategy = resolve_strategy(fit_config)
    y = concentrations.values
    sq_sum = np.zeros(concentrations.num_analytes)
    for i, fitted in strategy.jackknife_fits(spectra, concentrations):
        held_out = SpectraSet(
            grid=spectra.grid,
            absorbance=spectra.absorbance[i:i + 1],
            role="prediction",
        )
        try:
            y_hat = strategy.predict_fitted(fitted, held_out)
        except Exception as exc:  # noqa: BLE001 - rewrapped with fold context
            raise FoldFailureError(f"prediction failed on fold {i}: {exc}") from exc
        sq_sum += (y[i] - y_hat[0]) ** 2
    return np.sqrt(sq_sum / spectra.num_samples)


def sep(y_true: np.ndarray, y_hat: np.ndarray) -> SepReport:
    """Standard error of prediction from squared residuals.

    Component ``l`` uses ``sqrt(sum_j r_jl^2 / (J - 1))``; the overall
    figure pools all residuals with denominator ``m J - 1``.
    """
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=float))
    if y_true.shape != y_hat.shape:
        raise ShapeError(
            f"shape mismatch: truth {y_true.shape} vs predictions {y_hat.shape}"
        )
    j, m = y_true.shape
    if j < 2:
        raise InsufficientSamplesError("SEP needs at least two prediction samples")
    resid = y_true - y_hat
    per_component = np.sqrt(np.sum(resid ** 2, axis=0) / (j - 1))
    overall = float(np.sqrt(np.sum(resid ** 2) / (m * j - 1)))
    return SepReport(
        per_component=per_component,
        overall=overall,
        num_samples=j,
        num_analytes=m,
    )
