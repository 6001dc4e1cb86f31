"""Method registry: uniform fit/predict strategies for every estimator.

The jackknife harness and the simulation studies treat calibration methods
as interchangeable fit/predict pairs.  Functional methods get dedicated
leave-one-out paths that downdate the factored Gram system instead of
rebuilding the design per fold; a naive refit path remains the reference
behaviour and the two are interchangeable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import baselines
from .basis import knots_from_grid, make_knots, penalty_matrix
from .calibrate import (
    fit_covariance,
    fit_gls,
    fit_ols,
    fit_penalized,
    gls_loo_coefficients,
    loo_coefficients,
    select_lambda,
)
from .errors import FoldFailureError, InvalidParameterError, SpecalError
from .model import (
    CalibrationModel,
    ConcentrationMatrix,
    SpectraSet,
    assemble_design,
    rows_are_closed,
)
from .predict import predict_concentrations

FUNCTIONAL_METHODS = ("ols-k", "ols-ss", "gls-k")
MULTIVARIATE_METHODS = ("mlr", "pcr", "pls")


@dataclass(frozen=True)
class FitSpec:
    """Method name plus every tuning choice needed to refit from scratch.

    ``sum_to`` and ``gls_augment`` default to "auto": closure and the GLS
    constraint block switch on exactly when the calibration concentrations
    are closed (rows summing to one), where the plain estimators are not
    identifiable.
    """

    method: str = "ols-k"
    num_basis: int = 14
    lam: float | None = None
    lam_grid: np.ndarray | None = None
    reselect_lambda: bool = False
    components: int | None = None
    variance_fraction: float | None = None
    sum_to: float | str | None = "auto"
    constraint_weight: float = 1.0
    gls_augment: bool | str = "auto"
    covariance_per_fold: bool = False
    phi_grid: np.ndarray | None = None

    def __post_init__(self) -> None:
        method = self.method.lower()
        if method not in FUNCTIONAL_METHODS + MULTIVARIATE_METHODS:
            raise InvalidParameterError(f"unknown method '{self.method}'")
        object.__setattr__(self, "method", method)


def _subset(spectra: SpectraSet, concentrations: ConcentrationMatrix,
            keep: np.ndarray) -> tuple[SpectraSet, ConcentrationMatrix]:
    sub_spec = SpectraSet(
        grid=spectra.grid,
        absorbance=spectra.absorbance[keep],
        role=spectra.role,
    )
    sub_conc = ConcentrationMatrix(
        values=concentrations.values[keep],
        analytes=concentrations.analytes,
    )
    return sub_spec, sub_conc


class Strategy:
    """Fit/predict pair with an overridable leave-one-out fitting path."""

    def __init__(self, spec: FitSpec):
        self.spec = spec

    def fit(self, spectra: SpectraSet, concentrations: ConcentrationMatrix):
        raise NotImplementedError

    def predict_fitted(self, fitted, spectra: SpectraSet) -> np.ndarray:
        raise NotImplementedError

    def jackknife_fits(self, spectra: SpectraSet,
                       concentrations: ConcentrationMatrix) -> Iterator:
        """Default reference path: rebuild and refit without each sample."""
        n = spectra.num_samples
        for i in range(n):
            keep = np.arange(n) != i
            try:
                fitted = self.fit(*_subset(spectra, concentrations, keep))
            except SpecalError as exc:
                raise FoldFailureError(f"refit failed on fold {i}: {exc}") from exc
            yield i, fitted


class FunctionalStrategy(Strategy):
    """Basis-smoothing, smoothing-spline and GLS calibration methods."""

    def _knots(self, spectra: SpectraSet):
        if self.spec.method == "ols-ss":
            return knots_from_grid(spectra.grid)
        domain = (float(spectra.grid[0]), float(spectra.grid[-1]))
        return make_knots(domain, self.spec.num_basis)

    def _resolve_lambda(self, design, penalty) -> float:
        if self.spec.lam is not None:
            return float(self.spec.lam)
        return select_lambda(design, penalty, self.spec.lam_grid)

    def _resolve_augment(self, concentrations: ConcentrationMatrix) -> bool:
        if self.spec.gls_augment == "auto":
            return rows_are_closed(concentrations.values)
        return bool(self.spec.gls_augment)

    def fit(self, spectra: SpectraSet,
            concentrations: ConcentrationMatrix) -> CalibrationModel:
        spec = self.spec
        kv = self._knots(spectra)
        if spec.method == "gls-k":
            design = assemble_design(spectra, concentrations, kv,
                                     spec.constraint_weight)
            pilot = fit_ols(design, diagnostics=False)
            resid = spectra.absorbance - (
                (design.conc_aug[:-1] @ pilot.coefficients) @ design.b.T
            )
            cov = fit_covariance(resid, concentrations, spectra.grid,
                                 phi_grid=spec.phi_grid)
            return fit_gls(spectra, concentrations, kv, cov,
                           augment=self._resolve_augment(concentrations),
                           constraint_weight=spec.constraint_weight)
        design = assemble_design(spectra, concentrations, kv,
                                 spec.constraint_weight)
        if spec.method == "ols-k":
            return fit_ols(design)
        pen = penalty_matrix(kv)
        lam = self._resolve_lambda(design, pen)
        return fit_penalized(design, pen, lam)

    def predict_fitted(self, fitted: CalibrationModel,
                       spectra: SpectraSet) -> np.ndarray:
        sum_to = self.spec.sum_to
        if sum_to == "auto":
            sum_to = 1.0 if fitted.closed_calibration else None
        return predict_concentrations(fitted, spectra, sum_to=sum_to)

    def jackknife_fits(self, spectra: SpectraSet,
                       concentrations: ConcentrationMatrix) -> Iterator:
        spec = self.spec
        kv = self._knots(spectra)
        if spec.method == "ols-k":
            design = assemble_design(spectra, concentrations, kv,
                                     spec.constraint_weight)
            yield from self._wrap_folds(
                loo_coefficients(design), kv, concentrations, "OLS-K", 0.0
            )
            return
        if spec.method == "ols-ss":
            design = assemble_design(spectra, concentrations, kv,
                                     spec.constraint_weight)
            pen = penalty_matrix(kv)
            if spec.reselect_lambda:
                # Reference path: every fold reselects its own lambda.
                yield from super().jackknife_fits(spectra, concentrations)
                return
            lam = self._resolve_lambda(design, pen)
            yield from self._wrap_folds(
                loo_coefficients(design, pen, lam), kv, concentrations,
                "OLS-SS", lam,
            )
            return
        # gls-k
        if spec.covariance_per_fold:
            yield from super().jackknife_fits(spectra, concentrations)
            return
        design = assemble_design(spectra, concentrations, kv,
                                 spec.constraint_weight)
        pilot = fit_ols(design, diagnostics=False)
        resid = spectra.absorbance - (
            (design.conc_aug[:-1] @ pilot.coefficients) @ design.b.T
        )
        cov = fit_covariance(resid, concentrations, spectra.grid,
                             phi_grid=spec.phi_grid)
        folds = gls_loo_coefficients(
            spectra, concentrations, kv, cov,
            augment=self._resolve_augment(concentrations),
            constraint_weight=spec.constraint_weight,
        )
        yield from self._wrap_folds(folds, kv, concentrations, "GLS-K", 0.0)

    def _wrap_folds(self, folds, kv, concentrations, method, lam):
        analytes = concentrations.analyte_names()
        closed = rows_are_closed(concentrations.values)
        expected = 0  # downdate generators yield folds in index order
        while True:
            try:
                i, coef = next(folds)
            except StopIteration:
                return
            except SpecalError as exc:
                raise FoldFailureError(
                    f"refit failed on fold {expected}: {exc}"
                ) from exc
            expected = i + 1
            yield i, CalibrationModel(
                basis=kv, coefficients=coef, method=method, lam=lam,
                analytes=analytes, closed_calibration=closed,
            )


class MultivariateStrategy(Strategy):
    """Classical chemometric baselines on the raw wavelength matrix."""

    def fit(self, spectra: SpectraSet,
            concentrations: ConcentrationMatrix) -> baselines.MultivariateModel:
        spec = self.spec
        w, y = spectra.absorbance, concentrations.values
        if spec.method == "mlr":
            return baselines.fit_mlr(w, y)
        if spec.method == "pcr":
            return baselines.fit_pcr(w, y, components=spec.components,
                                     variance_fraction=spec.variance_fraction)
        return baselines.fit_pls(w, y, components=spec.components,
                                 variance_fraction=spec.variance_fraction)

    def predict_fitted(self, fitted: baselines.MultivariateModel,
                       spectra: SpectraSet) -> np.ndarray:
        return baselines.predict_multivariate(fitted, spectra.absorbance)


def make_strategy(spec: FitSpec) -> Strategy:
    if spec.method in FUNCTIONAL_METHODS:
        return FunctionalStrategy(spec)
    return MultivariateStrategy(spec)


def resolve_strategy(fit_config) -> Strategy:
    """Accept a ready strategy, a FitSpec, or a method name."""
    if isinstance(fit_config, Strategy):
        return fit_config
    if isinstance(fit_config, FitSpec):
        return make_strategy(fit_config)
    if isinstance(fit_config, str):
        return make_strategy(FitSpec(method=fit_config))
    raise InvalidParameterError(
        f"cannot interpret fit configuration {fit_config!r}"
    )


# Canonical study method table: names as used in the comparison studies.
STUDY_METHODS: dict[str, FitSpec] = {
    "OLS-K": FitSpec(method="ols-k", num_basis=14),
    "GLS-K": FitSpec(method="gls-k", num_basis=14),
    "OLS-SS": FitSpec(method="ols-ss"),
    "MLR": FitSpec(method="mlr"),
    "PCR-o": FitSpec(method="pcr", components=3),
    "PCR-p": FitSpec(method="pcr", variance_fraction=0.9),
    "PLS-o": FitSpec(method="pls", components=3),
    "PLS-p": FitSpec(method="pls", variance_fraction=0.9),
}
