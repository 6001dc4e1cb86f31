"""Classical multivariate calibration baselines: MLR, PCR, NIPALS PLS2.

All three regress mean-centered concentrations on mean-centered spectra
treated as unordered wavelength variables.  With more wavelengths than
samples the MLR solution is the minimum-norm one, so PCR and PLS with a
full set of components reproduce its training predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateSpectraError,
    GridMismatchError,
    InvalidParameterError,
    InvalidComponentsError,
    ShapeError,
)

NIPALS_MAX_ITER = 500
NIPALS_TOL = 1e-10


@dataclass(frozen=True)
class MultivariateModel:
    """Linear predictor ``y = intercept + w @ coefficients``."""

    method: str
    intercept: np.ndarray
    coefficients: np.ndarray
    components: int | None = None
    variance_fraction: float | None = None
    scores: np.ndarray | None = None

    def __post_init__(self) -> None:
        intercept = np.asarray(self.intercept, dtype=float).ravel()
        coefficients = np.asarray(self.coefficients, dtype=float)
        if coefficients.ndim != 2 or coefficients.shape[1] != intercept.size:
            raise ShapeError("coefficient matrix must be wavelengths x analytes")
        if not (np.all(np.isfinite(intercept)) and np.all(np.isfinite(coefficients))):
            raise ShapeError("model parameters contain non-finite values")
        if self.components is not None and self.components < 1:
            raise InvalidComponentsError("component count must be at least one")
        object.__setattr__(self, "intercept", intercept)
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def num_features(self) -> int:
        return self.coefficients.shape[0]


def _centered(w: np.ndarray, y: np.ndarray):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if w.shape[0] != y.shape[0]:
        raise ShapeError("spectra and concentrations disagree on sample count")
    if w.shape[0] < 2:
        raise InvalidParameterError("baseline fits need at least two samples")
    w_mean = w.mean(axis=0)
    y_mean = y.mean(axis=0)
    wc = w - w_mean
    if not np.any(wc):
        raise DegenerateSpectraError("spectra are constant across samples")
    return wc, y - y_mean, w_mean, y_mean


def fit_mlr(w: np.ndarray, y: np.ndarray) -> MultivariateModel:
    """Multiple linear regression, minimum-norm when rank deficient."""
    wc, yc, w_mean, y_mean = _centered(w, y)
    coef, *_ = np.linalg.lstsq(wc, yc, rcond=None)
    return MultivariateModel(
        method="MLR",
        intercept=y_mean - w_mean @ coef,
        coefficients=coef,
    )


def _pca(wc: np.ndarray):
    u, s, vt = np.linalg.svd(wc, full_matrices=False)
    tol = s[0] * max(wc.shape) * np.finfo(float).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    return u, s, vt, rank


def _component_count(s: np.ndarray, rank: int, components: int | None,
                     variance_fraction: float | None) -> int:
    if (components is None) == (variance_fraction is None):
        raise InvalidParameterError(
            "select components with exactly one of a fixed count or a "
            "variance fraction"
        )
    if components is not None:
        if not 1 <= components <= rank:
            raise InvalidComponentsError(
                f"component count {components} outside [1, rank={rank}]"
            )
        return components
    if not 0 < variance_fraction < 1:
        raise InvalidParameterError("variance fraction must lie in (0, 1)")
    var = s[:rank] ** 2
    cumulative = np.cumsum(var) / var.sum()
    return int(np.searchsorted(cumulative, variance_fraction - 1e-12) + 1)


def fit_pcr(w: np.ndarray, y: np.ndarray, components: int | None = None,
            variance_fraction: float | None = None) -> MultivariateModel:
    """Principal components regression on the top directions of the spectra."""
    wc, yc, w_mean, y_mean = _centered(w, y)
    u, s, vt, rank = _pca(wc)
    p = _component_count(s, rank, components, variance_fraction)
    coef = vt[:p].T @ ((u[:, :p].T @ yc) / s[:p, None])
    explained = float(np.sum(s[:p] ** 2) / np.sum(s[:rank] ** 2))
    return MultivariateModel(
        method="PCR",
        intercept=y_mean - w_mean @ coef,
        coefficients=coef,
        components=p,
        variance_fraction=explained,
        scores=u[:, :p] * s[:p],
    )


def fit_pls(w: np.ndarray, y: np.ndarray, components: int | None = None,
            variance_fraction: float | None = None) -> MultivariateModel:
    """NIPALS PLS2 with deflation of both blocks.

    The variance-fraction selector counts components exactly as PCR does
    (from the principal value spectrum of the centered data), so the two
    methods stay comparable when run side by side.
    """
    wc, yc, w_mean, y_mean = _centered(w, y)
    _, s, _, rank = _pca(wc)
    p = _component_count(s, rank, components, variance_fraction)
    e, f = wc.copy(), yc.copy()
    weights = np.zeros((wc.shape[1], p))
    loadings = np.zeros((wc.shape[1], p))
    y_loadings = np.zeros((yc.shape[1], p))
    scores = np.zeros((wc.shape[0], p))
    for a in range(p):
        cross = f.T @ e
        cross_scale = np.linalg.norm(cross)
        if cross_scale < 1e-14 * max(np.linalg.norm(e), 1.0):
            raise ConvergenceError(
                f"NIPALS weight vector vanished on component {a + 1}"
            )
        # The iteration's fixed point is the dominant right singular
        # direction of the cross block; seeding there avoids the slow
        # power-iteration phase when noise directions are nearly tied.
        w_vec = np.linalg.svd(cross, full_matrices=False)[2][0]
        for _ in range(NIPALS_MAX_ITER):
            t_vec = e @ w_vec
            c_vec = f.T @ t_vec / (t_vec @ t_vec)
            if yc.shape[1] == 1:
                break
            u_vec = f @ c_vec / (c_vec @ c_vec)
            w_new = e.T @ u_vec
            norm = np.linalg.norm(w_new)
            if norm == 0:
                raise ConvergenceError(
                    f"NIPALS weight vector vanished on component {a + 1}"
                )
            w_new /= norm
            if np.linalg.norm(w_new - w_vec) < NIPALS_TOL:
                w_vec = w_new
                break
            w_vec = w_new
        else:
            raise ConvergenceError(
                f"NIPALS did not converge within {NIPALS_MAX_ITER} iterations "
                f"on component {a + 1}"
            )
        t_vec = e @ w_vec
        t_norm_sq = t_vec @ t_vec
        p_vec = e.T @ t_vec / t_norm_sq
        c_vec = f.T @ t_vec / t_norm_sq
        e = e - np.outer(t_vec, p_vec)
        f = f - np.outer(t_vec, c_vec)
        weights[:, a] = w_vec
        loadings[:, a] = p_vec
        y_loadings[:, a] = c_vec
        scores[:, a] = t_vec
    rotation = weights @ np.linalg.solve(loadings.T @ weights, np.eye(p))
    coef = rotation @ y_loadings.T
    explained = float(np.sum(s[:p] ** 2) / np.sum(s[:rank] ** 2))
    return MultivariateModel(
        method="PLS",
        intercept=y_mean - w_mean @ coef,
        coefficients=coef,
        components=p,
        variance_fraction=explained,
        scores=scores,
    )


def predict_multivariate(model: MultivariateModel, w_new: np.ndarray) -> np.ndarray:
    """Apply the linear predictor; the wavelength grid must match training."""
    w_new = np.atleast_2d(np.asarray(w_new, dtype=float))
    if w_new.shape[1] != model.num_features:
        raise GridMismatchError(
            f"prediction spectra have {w_new.shape[1]} wavelengths, model was "
            f"trained on {model.num_features}; multivariate baselines cannot "
            "interpolate across grids"
        )
    return model.intercept[None, :] + w_new @ model.coefficients
