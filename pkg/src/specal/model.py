"""Aggregated absorbance model: data containers and design assembly.

A measured spectrum is modelled as a baseline curve plus a concentration-
weighted sum of per-analyte curves, every curve expanded in a shared
B-spline basis.  The least-squares system stacks all samples (sample-major,
wavelength-minor) and appends one block of zero-response rows that softly
push the analyte curves to sum to zero at every grid site.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .basis import KnotVector, design_matrix
from .errors import CollinearConcentrationsError, ShapeError

ROLE_CALIBRATION = "calibration"
ROLE_PREDICTION = "prediction"


def rows_are_closed(values, atol: float = 1e-9) -> bool:
    """True when every concentration row sums to one (closed samples)."""
    sums = np.asarray(values, dtype=float).sum(axis=1)
    return bool(np.allclose(sums, 1.0, atol=atol))


def _frozen_array(values, dtype=float, ndim=None, name="array") -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SpectraSet:
    """Wavelength grid plus one absorbance curve per sample."""

    grid: np.ndarray
    absorbance: np.ndarray
    role: str = ROLE_CALIBRATION
    sample_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        grid = _frozen_array(self.grid, ndim=1, name="grid")
        absorbance = _frozen_array(self.absorbance, ndim=2, name="absorbance")
        if grid.size < 2:
            raise ShapeError("grid needs at least two wavelengths")
        if np.any(np.diff(grid) <= 0):
            raise ShapeError("grid must be strictly increasing")
        if absorbance.shape[0] < 1 or absorbance.shape[1] != grid.size:
            raise ShapeError(
                f"absorbance shape {absorbance.shape} does not match grid "
                f"length {grid.size}"
            )
        if not np.all(np.isfinite(absorbance)):
            raise ShapeError("absorbance contains non-finite values")
        if self.sample_ids is not None and len(self.sample_ids) != absorbance.shape[0]:
            raise ShapeError("sample_ids length does not match sample count")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "absorbance", absorbance)

    @property
    def num_samples(self) -> int:
        return self.absorbance.shape[0]

    @property
    def num_wavelengths(self) -> int:
        return self.grid.size


@dataclass(frozen=True)
class ConcentrationMatrix:
    """Known analyte concentrations for the calibration samples."""

    values: np.ndarray
    analytes: tuple[str, ...] | None = None
    sample_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        values = _frozen_array(self.values, ndim=2, name="concentrations")
        if not np.all(np.isfinite(values)):
            raise ShapeError("concentrations contain non-finite values")
        if np.any(values < 0):
            # Negative reference concentrations are physically suspect but
            # occur in practice (unit quirks); flag rather than reject.
            warnings.warn("negative concentration values present", stacklevel=2)
        if self.analytes is not None and len(self.analytes) != values.shape[1]:
            raise ShapeError("analyte label count does not match column count")
        if self.sample_ids is not None and len(self.sample_ids) != values.shape[0]:
            raise ShapeError("sample_ids length does not match row count")
        object.__setattr__(self, "values", values)

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_analytes(self) -> int:
        return self.values.shape[1]

    def analyte_names(self) -> tuple[str, ...]:
        if self.analytes is not None:
            return self.analytes
        return tuple(f"analyte_{j + 1}" for j in range(self.num_analytes))


@dataclass(frozen=True)
class CalibrationModel:
    """Fitted coefficient matrix: row 0 is the baseline, rows 1..m analytes.

    ``closed_calibration`` records whether the calibration concentrations
    summed to one; predictions from such a model need the matching sum
    closure because the fitted analyte curves sum to (near) zero.
    """

    basis: KnotVector
    coefficients: np.ndarray
    method: str
    lam: float = 0.0
    analytes: tuple[str, ...] = ()
    diagnostics: "FitDiagnostics | None" = None
    closed_calibration: bool = False

    def __post_init__(self) -> None:
        coef = _frozen_array(self.coefficients, ndim=2, name="coefficients")
        if not np.all(np.isfinite(coef)):
            raise ShapeError("coefficients contain non-finite values")
        if coef.shape[1] != self.basis.num_basis:
            raise ShapeError(
                f"coefficient columns ({coef.shape[1]}) do not match basis "
                f"dimension ({self.basis.num_basis})"
            )
        if self.lam < 0:
            raise ShapeError("smoothing parameter must be nonnegative")
        object.__setattr__(self, "coefficients", coef)
        if not self.analytes:
            object.__setattr__(
                self,
                "analytes",
                tuple(f"analyte_{j + 1}" for j in range(coef.shape[0] - 1)),
            )

    @property
    def num_analytes(self) -> int:
        return self.coefficients.shape[0] - 1

    def curve_values(self, grid: np.ndarray) -> np.ndarray:
        """(m+1, T) matrix of baseline and analyte curves on ``grid``."""
        b = design_matrix(self.basis, np.asarray(grid, dtype=float))
        return self.coefficients @ b.T


@dataclass(frozen=True)
class AggregatedDesign:
    """Stacked least-squares system for all calibration samples.

    ``conc_aug`` holds the intercept-plus-concentration rows with the
    appended constraint row, so the full design is its Kronecker product
    with the basis design ``b``.  The dense matrix is materialised on
    demand; fitting code works on the factored form.
    """

    b: np.ndarray
    conc_aug: np.ndarray
    spectra: SpectraSet
    concentrations: ConcentrationMatrix
    basis: KnotVector
    constraint_weight: float = 1.0

    @property
    def num_samples(self) -> int:
        return self.spectra.num_samples

    @property
    def num_wavelengths(self) -> int:
        return self.spectra.num_wavelengths

    @property
    def num_basis(self) -> int:
        return self.b.shape[1]

    @property
    def num_analytes(self) -> int:
        return self.concentrations.num_analytes

    @property
    def num_rows(self) -> int:
        return (self.num_samples + 1) * self.num_wavelengths

    @property
    def num_coefficients(self) -> int:
        return (self.num_analytes + 1) * self.num_basis

    @property
    def x_plus(self) -> np.ndarray:
        return np.kron(self.conc_aug, self.b)

    @property
    def w_plus(self) -> np.ndarray:
        return np.concatenate(
            [stack_samples(self.spectra.absorbance), np.zeros(self.num_wavelengths)]
        )


def stack_samples(curves: np.ndarray) -> np.ndarray:
    """Sample-major, wavelength-minor stacking of an (I, T) curve matrix."""
    return np.asarray(curves).ravel(order="C")


def unstack_samples(stacked: np.ndarray, num_wavelengths: int) -> np.ndarray:
    stacked = np.asarray(stacked)
    if stacked.size % num_wavelengths:
        raise ShapeError("stacked length is not a multiple of the grid size")
    return stacked.reshape(-1, num_wavelengths)


def assemble_design(spectra: SpectraSet, concentrations: ConcentrationMatrix,
                    kv: KnotVector, constraint_weight: float = 1.0) -> AggregatedDesign:
    """Build the augmented system from spectra, concentrations and a basis.

    The constraint block only enters through the augmented concentration
    rows: scaling that row by ``sqrt(constraint_weight)`` scales the
    sum-to-zero residual's contribution to the objective by the weight.
    Identifiability is checked on the augmented rows: for closed samples
    (rows of Y summing to one) the plain intercept-plus-Y rows are always
    collinear and only the constraint row pins the decomposition.
    """
    if spectra.num_samples != concentrations.num_samples:
        raise ShapeError(
            f"{spectra.num_samples} spectra but "
            f"{concentrations.num_samples} concentration rows"
        )
    if constraint_weight < 0:
        raise ShapeError("constraint weight must be nonnegative")
    y = concentrations.values
    m = concentrations.num_analytes
    b = design_matrix(kv, spectra.grid)
    if np.linalg.matrix_rank(y) < m:
        raise CollinearConcentrationsError(
            f"analyte concentration columns are linearly dependent "
            f"(rank {np.linalg.matrix_rank(y)} < {m})"
        )
    conc_aug = np.zeros((spectra.num_samples + 1, m + 1))
    conc_aug[:-1, 0] = 1.0
    conc_aug[:-1, 1:] = y
    conc_aug[-1, 1:] = np.sqrt(constraint_weight)
    if np.linalg.matrix_rank(conc_aug) < m + 1:
        raise CollinearConcentrationsError(
            "concentration rows (with the constraint row) do not have full "
            f"rank {m + 1}"
        )
    conc_aug.flags.writeable = False
    return AggregatedDesign(
        b=b,
        conc_aug=conc_aug,
        spectra=spectra,
        concentrations=concentrations,
        basis=kv,
        constraint_weight=float(constraint_weight),
    )


def eval_model(model: CalibrationModel, y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Predicted spectrum for concentrations ``y`` on ``grid``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (model.num_analytes,):
        raise ShapeError(
            f"expected {model.num_analytes} concentrations, got shape {y.shape}"
        )
    curves = model.curve_values(grid)
    return curves[0] + y @ curves[1:]


def constraint_residual(model: CalibrationModel, grid: np.ndarray) -> np.ndarray:
    """Pointwise sum of the fitted analyte curves (zero under the restriction)."""
    curves = model.curve_values(grid)
    return curves[1:].sum(axis=0)
