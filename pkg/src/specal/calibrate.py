"""Estimators for the aggregated model: OLS, penalized LS with GCV, GLS.

All solvers work on the Gram form of the stacked system.  Because the
design is a Kronecker product of a small concentration block with the
basis design, the normal equations split into per-eigenvector blocks of
basis dimension; fits, GCV traces and leave-one-out refits all reuse that
structure.  Explicit matrix inversion is never used, only Cholesky
factorizations of the (penalized) Gram blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.linalg as sla
from scipy.optimize import nnls

from .basis import KnotVector, PenaltyMatrix, design_matrix
from .errors import (
    CovarianceConditioningError,
    DegenerateCovarianceError,
    DegenerateGcvError,
    InvalidParameterError,
    ShapeError,
    SingularDesignError,
)
from .model import (
    AggregatedDesign,
    CalibrationModel,
    ConcentrationMatrix,
    SpectraSet,
    rows_are_closed,
)

DEFAULT_PHI_GRID = np.logspace(-4, 1, 50)
DEFAULT_LAMBDA_GRID = np.logspace(-4, 8, 25)


@dataclass(frozen=True)
class FitDiagnostics:
    """Summary numbers recorded with every fit."""

    rss: float
    hat_trace: float
    constraint_max_abs: float
    gcv: float | None = None


@dataclass(frozen=True)
class CovarianceModel:
    """Per-analyte exponential-decay noise covariance parameters."""

    sigma2: np.ndarray
    phi: np.ndarray
    clipped: bool = False

    def __post_init__(self) -> None:
        sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        phi = np.asarray(self.phi, dtype=float).ravel()
        if sigma2.shape != phi.shape:
            raise ShapeError("sigma2 and phi must have one entry per analyte")
        if np.any(sigma2 <= 0) or np.any(phi <= 0):
            raise InvalidParameterError("covariance parameters must be positive")
        sigma2.flags.writeable = False
        phi.flags.writeable = False
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "phi", phi)

    @property
    def num_analytes(self) -> int:
        return self.sigma2.size

    def sample_covariance(self, grid: np.ndarray, y_row: np.ndarray) -> np.ndarray:
        """Noise covariance for one sample with concentrations ``y_row``."""
        grid = np.asarray(grid, dtype=float)
        y_row = np.asarray(y_row, dtype=float).ravel()
        if y_row.size != self.num_analytes:
            raise ShapeError("concentration row length does not match analytes")
        dist = np.abs(grid[:, None] - grid[None, :])
        cov = np.zeros_like(dist)
        for s2, ph, y in zip(self.sigma2, self.phi, y_row):
            cov += (y * y) * s2 * np.exp(-ph * dist)
        return cov


class _FactoredSystem:
    """Gram-side view of an aggregated design.

    Holds ``C = B'B``, the small concentration Gram ``M`` and the
    right-hand-side matrix ``F`` (one row per coefficient block).  Fold
    downdates replace ``M`` and ``F`` only; the basis Gram never changes.
    """

    def __init__(self, design: AggregatedDesign):
        self.design = design
        self.b = design.b
        self.C = design.b.T @ design.b
        self.conc_aug = design.conc_aug
        self.M = design.conc_aug.T @ design.conc_aug
        w = design.spectra.absorbance
        self.bw = design.b.T @ w.T                      # (K, I): B'W_i columns
        self.F = (design.conc_aug[:-1].T @ w) @ design.b  # (m+1, K)
        self.num_rows = design.num_rows

    def downdated(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.conc_aug[i]
        m = self.M - np.outer(a, a)
        f = self.F - np.outer(a, self.bw[:, i])
        return m, f

    def solve(self, lam: float = 0.0, penalty: np.ndarray | None = None,
              m: np.ndarray | None = None, f: np.ndarray | None = None) -> np.ndarray:
        """Coefficient matrix minimizing the (penalized) stacked objective."""
        m = self.M if m is None else m
        f = self.F if f is None else f
        evals, q = np.linalg.eigh(m)
        if evals[0] <= 1e-12 * max(evals[-1], 1.0):
            raise SingularDesignError(
                "concentration block is rank deficient after augmentation"
            )
        f_rot = q.T @ f
        theta_rot = np.empty_like(f_rot)
        for j, d in enumerate(evals):
            block = d * self.C
            if lam > 0 and penalty is not None:
                block = block + lam * penalty
            try:
                chol = sla.cho_factor(block, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                raise SingularDesignError(
                    "basis block is singular; the grid cannot resolve this "
                    "many basis functions (try a penalty or fewer knots)"
                ) from None
            theta_rot[j] = sla.cho_solve(chol, f_rot[j], check_finite=False)
        return q @ theta_rot

    def hat_trace(self, lam: float, penalty: np.ndarray | None) -> float:
        """Trace of the smoother matrix at penalty level ``lam``."""
        evals, _ = np.linalg.eigh(self.M)
        if evals[0] <= 1e-12 * max(evals[-1], 1.0):
            raise SingularDesignError(
                "concentration block is rank deficient after augmentation"
            )
        total = 0.0
        for d in evals:
            block = d * self.C
            if lam > 0 and penalty is not None:
                block = block + lam * penalty
            try:
                chol = sla.cho_factor(block, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                raise SingularDesignError(
                    "basis block is singular at this penalty level"
                ) from None
            total += np.trace(sla.cho_solve(chol, d * self.C, check_finite=False))
        return float(total)

    def residual_sums(self, coef: np.ndarray) -> tuple[float, float]:
        """(data RSS, constraint RSS) for a coefficient matrix."""
        design = self.design
        w = design.spectra.absorbance
        fitted = (design.conc_aug[:-1] @ coef) @ design.b.T
        data = float(np.sum((w - fitted) ** 2))
        constraint_curve = (design.conc_aug[-1] @ coef) @ design.b.T
        return data, float(np.sum(constraint_curve ** 2))


def _diagnostics(system: _FactoredSystem, coef: np.ndarray, lam: float,
                 penalty: np.ndarray | None, hat_trace: float | None) -> FitDiagnostics:
    data_rss, constraint_rss = system.residual_sums(coef)
    rss = data_rss + constraint_rss
    design = system.design
    constraint_curve = coef[1:].sum(axis=0) @ design.b.T
    trace = hat_trace if hat_trace is not None else system.hat_trace(lam, penalty)
    n = system.num_rows
    gcv = n * rss / (n - trace) ** 2 if trace < n else None
    return FitDiagnostics(
        rss=rss,
        hat_trace=trace,
        constraint_max_abs=float(np.max(np.abs(constraint_curve))),
        gcv=gcv,
    )


def fit_ols(design: AggregatedDesign, diagnostics: bool = True) -> CalibrationModel:
    """Ordinary least squares on the augmented system (correlation ignored)."""
    system = _FactoredSystem(design)
    if np.linalg.matrix_rank(design.b) < design.num_basis:
        raise SingularDesignError(
            "basis block of the design is rank deficient: the wavelength grid "
            "cannot support this many basis functions"
        )
    coef = system.solve()
    diag = None
    if diagnostics:
        diag = _diagnostics(system, coef, 0.0, None,
                            hat_trace=float(design.num_coefficients))
    return CalibrationModel(
        basis=design.basis,
        coefficients=coef,
        method="OLS-K",
        lam=0.0,
        analytes=design.concentrations.analyte_names(),
        diagnostics=diag,
        closed_calibration=rows_are_closed(design.concentrations.values),
    )


def fit_penalized(design: AggregatedDesign, penalty: PenaltyMatrix, lam: float,
                  diagnostics: bool = True, method: str = "OLS-SS") -> CalibrationModel:
    """Penalized least squares with curvature penalty on every curve.

    All coefficient blocks, the baseline included, are penalized alike.
    ``lam = 0`` reduces to :func:`fit_ols` when the design has full rank.
    """
    if lam < 0:
        raise InvalidParameterError(f"smoothing parameter must be >= 0, got {lam}")
    system = _FactoredSystem(design)
    r = penalty.entries
    if r.shape != (design.num_basis, design.num_basis):
        raise ShapeError("penalty dimension does not match basis dimension")
    coef = system.solve(lam=lam, penalty=r)
    diag = _diagnostics(system, coef, lam, r, hat_trace=None) if diagnostics else None
    return CalibrationModel(
        basis=design.basis,
        coefficients=coef,
        method=method,
        lam=float(lam),
        analytes=design.concentrations.analyte_names(),
        diagnostics=diag,
        closed_calibration=rows_are_closed(design.concentrations.values),
    )


def gcv_score(design: AggregatedDesign, penalty: PenaltyMatrix, lam: float) -> float:
    """Generalized cross-validation score ``n RSS / (n - tr H)^2``."""
    if lam < 0:
        raise InvalidParameterError(f"smoothing parameter must be >= 0, got {lam}")
    system = _FactoredSystem(design)
    r = penalty.entries
    coef = system.solve(lam=lam, penalty=r)
    data_rss, constraint_rss = system.residual_sums(coef)
    rss = data_rss + constraint_rss
    trace = system.hat_trace(lam, r)
    n = system.num_rows
    if trace >= n:
        raise DegenerateGcvError(
            f"smoother trace {trace:.3f} reaches the number of rows {n}"
        )
    return float(n * rss / (n - trace) ** 2)


def select_lambda(design: AggregatedDesign, penalty: PenaltyMatrix,
                  lam_grid: np.ndarray | None = None) -> float:
    """Grid minimizer of the GCV score; ties go to the smoother fit."""
    grid = DEFAULT_LAMBDA_GRID if lam_grid is None else np.asarray(lam_grid, float)
    if grid.size == 0:
        raise InvalidParameterError("lambda grid is empty")
    if np.any(grid <= 0):
        raise InvalidParameterError("lambda grid entries must be positive")
    grid = np.sort(grid)
    system = _FactoredSystem(design)
    r = penalty.entries
    n = system.num_rows
    best_lam, best_score = None, np.inf
    for lam in grid:
        coef = system.solve(lam=float(lam), penalty=r)
        data_rss, constraint_rss = system.residual_sums(coef)
        trace = system.hat_trace(float(lam), r)
        if trace >= n:
            continue
        score = n * (data_rss + constraint_rss) / (n - trace) ** 2
        if score <= best_score:
            best_lam, best_score = float(lam), score
    if best_lam is None:
        raise DegenerateGcvError("no grid point produced a valid GCV score")
    return best_lam


def loo_coefficients(design: AggregatedDesign, penalty: PenaltyMatrix | None = None,
                     lam: float = 0.0) -> Iterator[tuple[int, np.ndarray]]:
    """Leave-one-out coefficient refits via Gram downdates.

    Yields ``(sample_index, coefficients)`` exactly matching a refit on the
    dataset with that sample removed.
    """
    system = _FactoredSystem(design)
    r = penalty.entries if penalty is not None else None
    for i in range(design.num_samples):
        m, f = system.downdated(i)
        yield i, system.solve(lam=lam, penalty=r, m=m, f=f)


def empirical_covariogram(residuals: np.ndarray, grid: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample average residual products at each distinct site distance.

    Returns ``(lags, covs, counts)`` where ``covs[i, k]`` averages
    ``e_i(t_n) e_i(t_n')`` over the ``counts[k]`` ordered pairs with
    ``|t_n - t_n'| == lags[k]``.
    """
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if residuals.shape[1] != grid.size:
        raise ShapeError("residual columns must match the grid length")
    t = grid.size
    dist = np.abs(grid[:, None] - grid[None, :])
    rounded = np.round(dist, 9)
    lags, inverse = np.unique(rounded.ravel(), return_inverse=True)
    counts = np.bincount(inverse, minlength=lags.size).astype(float)
    products = residuals[:, :, None] * residuals[:, None, :]
    flat = products.reshape(residuals.shape[0], t * t)
    sums = np.zeros((residuals.shape[0], lags.size))
    for i in range(residuals.shape[0]):
        sums[i] = np.bincount(inverse, weights=flat[i], minlength=lags.size)
    return lags, sums / counts, counts


def _covariogram_design(y_sq: np.ndarray, lags: np.ndarray,
                        phi: np.ndarray) -> np.ndarray:
    decay = np.exp(-np.outer(lags, phi))            # (L, m)
    return (y_sq[:, None, :] * decay[None, :, :]).reshape(-1, phi.size)


def fit_covariance(residuals: np.ndarray, concentrations, grid: np.ndarray,
                   phi_grid: np.ndarray | None = None, refine: bool = True,
                   max_lag_fraction: float = 0.5) -> CovarianceModel:
    """Least squares fit of the exponential covariance to lag covariances.

    The decay rates are searched on a log grid (one shared value first,
    then one cyclic per-analyte refinement sweep); at every candidate the
    variance scales solve a nonnegative linear least-squares subproblem.
    Lags beyond ``max_lag_fraction`` of the span are dropped and the rest
    weighted by pair count: long-lag covariogram values average few pairs
    and would otherwise dominate the fit with noise.
    """
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    if residuals.shape[0] < 2:
        raise InvalidParameterError("covariance fitting needs at least two samples")
    if not np.any(residuals):
        raise DegenerateCovarianceError("residual curves are identically zero")
    y = concentrations.values if isinstance(concentrations, ConcentrationMatrix) \
        else np.asarray(concentrations, dtype=float)
    if y.shape[0] != residuals.shape[0]:
        raise ShapeError("concentration rows must match residual rows")
    m = y.shape[1]
    grid_phi = DEFAULT_PHI_GRID if phi_grid is None else np.asarray(phi_grid, float)
    if np.any(grid_phi <= 0):
        raise InvalidParameterError("phi grid entries must be positive")
    lags, covs, counts = empirical_covariogram(residuals, grid)
    keep = lags <= max_lag_fraction * lags[-1]
    lags, covs, counts = lags[keep], covs[:, keep], counts[keep]
    row_weights = np.tile(np.sqrt(counts), covs.shape[0])
    target = covs.ravel() * row_weights
    y_sq = y ** 2

    def objective(phi_vec: np.ndarray) -> tuple[float, np.ndarray]:
        design = _covariogram_design(y_sq, lags, phi_vec)
        sigma2, rnorm = nnls(design * row_weights[:, None], target)
        return rnorm, sigma2

    best_sse = np.inf
    best_phi = None
    best_sigma2 = None
    for phi in grid_phi:
        sse, sigma2 = objective(np.full(m, phi))
        if sse < best_sse:
            best_sse, best_phi, best_sigma2 = sse, np.full(m, phi), sigma2
    if refine and m > 1:
        for ell in range(m):
            for phi in grid_phi:
                candidate = best_phi.copy()
                candidate[ell] = phi
                sse, sigma2 = objective(candidate)
                if sse < best_sse:
                    best_sse, best_phi, best_sigma2 = sse, candidate, sigma2
    clipped = bool(np.any(best_sigma2 < 1e-12))
    sigma2 = np.maximum(best_sigma2, 1e-12)
    return CovarianceModel(sigma2=sigma2, phi=best_phi, clipped=clipped)


def _whitening_factor(cov_matrix: np.ndarray, jitter_scale: float) -> np.ndarray:
    try:
        return sla.cholesky(cov_matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    bumped = cov_matrix + (1e-8 * jitter_scale) * np.eye(cov_matrix.shape[0])
    try:
        return sla.cholesky(bumped, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise CovarianceConditioningError(
            "per-sample covariance block is not positive definite even after "
            "diagonal jitter"
        ) from None


def _gls_pieces(spectra: SpectraSet, concentrations: ConcentrationMatrix,
                b: np.ndarray, cov: CovarianceModel):
    """Per-sample whitened Gram blocks and right-hand sides."""
    y = concentrations.values
    grid = spectra.grid
    w = spectra.absorbance
    jitter_scale = float(np.mean(cov.sigma2))
    rows = np.column_stack([np.ones(y.shape[0]), y])
    grams = []
    rhs = []
    for i in range(y.shape[0]):
        sigma = cov.sample_covariance(grid, y[i])
        chol = _whitening_factor(sigma, jitter_scale)
        zb = sla.solve_triangular(chol, b, lower=True, check_finite=False)
        zw = sla.solve_triangular(chol, w[i], lower=True, check_finite=False)
        grams.append(np.kron(np.outer(rows[i], rows[i]), zb.T @ zb))
        rhs.append(np.kron(rows[i], zb.T @ zw))
    return rows, grams, rhs


def _gls_solve(gram: np.ndarray, rhs: np.ndarray, num_basis: int) -> np.ndarray:
    evals = np.linalg.eigvalsh(gram)
    if evals[0] <= 1e-12 * max(evals[-1], 1.0):
        raise SingularDesignError(
            "whitened system is singular; closed concentration rows need the "
            "augmented constraint block (augment=True)"
        )
    try:
        chol = sla.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularDesignError("whitened system is not positive definite") from None
    beta = sla.cho_solve(chol, rhs, check_finite=False)
    return beta.reshape(-1, num_basis)


def _constraint_block(b: np.ndarray, num_analytes: int,
                      constraint_weight: float) -> tuple[np.ndarray, np.ndarray]:
    e = np.zeros(num_analytes + 1)
    e[1:] = np.sqrt(constraint_weight)
    return np.kron(np.outer(e, e), b.T @ b), np.zeros((num_analytes + 1) * b.shape[1])


def fit_gls(spectra: SpectraSet, concentrations: ConcentrationMatrix,
            kv: KnotVector, cov: CovarianceModel, augment: bool = False,
            constraint_weight: float = 1.0,
            diagnostics: bool = True) -> CalibrationModel:
    """Generalized least squares with per-sample covariance blocks.

    Follows the unaugmented estimator by default (no constraint rows).
    ``augment=True`` appends the sum-to-zero block with identity noise
    weight, which is required when the concentration rows are closed.
    """
    if concentrations.num_analytes != cov.num_analytes:
        raise ShapeError("covariance model analyte count does not match Y")
    b = design_matrix(kv, spectra.grid)
    _, grams, rhs_parts = _gls_pieces(spectra, concentrations, b, cov)
    gram = np.sum(grams, axis=0)
    rhs = np.sum(rhs_parts, axis=0)
    if augment:
        extra_gram, _ = _constraint_block(b, concentrations.num_analytes,
                                          constraint_weight)
        gram = gram + extra_gram
    coef = _gls_solve(gram, rhs, kv.num_basis)
    diag = None
    if diagnostics:
        w = spectra.absorbance
        rows = np.column_stack(
            [np.ones(concentrations.num_samples), concentrations.values]
        )
        fitted = (rows @ coef) @ b.T
        constraint_curve = coef[1:].sum(axis=0) @ b.T
        diag = FitDiagnostics(
            rss=float(np.sum((w - fitted) ** 2)),
            hat_trace=float(coef.size),
            constraint_max_abs=float(np.max(np.abs(constraint_curve))),
            gcv=None,
        )
    return CalibrationModel(
        basis=kv,
        coefficients=coef,
        method="GLS-K",
        lam=0.0,
        analytes=concentrations.analyte_names(),
        diagnostics=diag,
        closed_calibration=rows_are_closed(concentrations.values),
    )


def gls_loo_coefficients(spectra: SpectraSet, concentrations: ConcentrationMatrix,
                         kv: KnotVector, cov: CovarianceModel, augment: bool = False,
                         constraint_weight: float = 1.0
                         ) -> Iterator[tuple[int, np.ndarray]]:
    """Leave-one-out GLS refits sharing the per-sample whitened blocks."""
    b = design_matrix(kv, spectra.grid)
    _, grams, rhs_parts = _gls_pieces(spectra, concentrations, b, cov)
    gram = np.sum(grams, axis=0)
    rhs = np.sum(rhs_parts, axis=0)
    if augment:
        extra_gram, _ = _constraint_block(b, concentrations.num_analytes,
                                          constraint_weight)
        gram = gram + extra_gram
    for i in range(concentrations.num_samples):
        yield i, _gls_solve(gram - grams[i], rhs - rhs_parts[i], kv.num_basis)
