"""Cubic B-spline bases: knot construction, evaluation, curvature penalty.

Evaluation uses the standard stable recurrence (triangular scheme over the
nonzero functions of the containing knot span).  Derivatives come from the
knot-difference formula applied to lower-order values.  The curvature
penalty integrates products of second derivatives exactly with two-point
Gauss quadrature per span (the integrand is piecewise quadratic for
cubics).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    InvalidBasisError,
    InvalidDomainError,
    InvalidGridError,
    UnsupportedOrderError,
)

DEFAULT_ORDER = 4


@dataclass(frozen=True)
class KnotVector:
    """Nondecreasing knot sequence defining ``num_basis`` splines of ``order``."""

    knots: np.ndarray
    order: int = DEFAULT_ORDER

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1:
            raise InvalidBasisError("knots must be a one-dimensional sequence")
        if self.order < 1:
            raise InvalidBasisError("order must be a positive integer")
        if knots.size < 2 * self.order:
            raise InvalidBasisError(
                f"need at least {2 * self.order} knots for order {self.order}, "
                f"got {knots.size}"
            )
        if np.any(np.diff(knots) < 0):
            raise InvalidBasisError("knots must be nondecreasing")
        _, counts = np.unique(knots, return_counts=True)
        if np.any(counts > self.order):
            raise InvalidBasisError("knot multiplicity may not exceed the order")
        if knots[self.order - 1] >= knots[-self.order]:
            raise InvalidDomainError("knot vector has an empty evaluation domain")
        knots = knots.copy()
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    @property
    def num_basis(self) -> int:
        return self.knots.size - self.order

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.order - 1]), float(self.knots[-self.order])


@dataclass(frozen=True)
class PenaltyMatrix:
    """Symmetric PSD matrix of pairwise second-derivative inner products."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidBasisError("penalty entries must form a square matrix")
        entries = entries.copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)


def make_knots(domain: tuple[float, float], num_basis: int,
               order: int = DEFAULT_ORDER) -> KnotVector:
    """Clamped knot vector on ``domain`` with uniform interior knots.

    Boundary knots get multiplicity ``order``; the remaining
    ``num_basis - order`` knots are spaced evenly inside the domain.
    """
    a, b = float(domain[0]), float(domain[1])
    if a >= b:
        raise InvalidDomainError(f"domain must satisfy A < B, got [{a}, {b}]")
    if num_basis < order:
        raise InvalidBasisError(
            f"num_basis must be at least order ({order}), got {num_basis}"
        )
    interior = np.linspace(a, b, num_basis - order + 2)[1:-1]
    knots = np.concatenate([np.full(order, a), interior, np.full(order, b)])
    return KnotVector(knots, order)


def knots_from_grid(grid: np.ndarray, order: int = DEFAULT_ORDER) -> KnotVector:
    """Smoothing-spline knots: every observation site is a knot.

    The first and last sites become boundary knots of multiplicity
    ``order``, so the dimension is ``len(grid) - 2 + order``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise InvalidGridError("grid must hold at least two sites")
    if np.any(np.diff(grid) <= 0):
        raise InvalidGridError("grid sites must be strictly increasing")
    knots = np.concatenate(
        [np.full(order, grid[0]), grid[1:-1], np.full(order, grid[-1])]
    )
    return KnotVector(knots, order)


def _padded(knots: np.ndarray, order: int) -> tuple[np.ndarray, int]:
    # Extra end copies give the recurrence room near the boundary without
    # changing any original function (each spline only sees its own knots).
    pad = order - 1
    padded = np.concatenate(
        [np.full(pad, knots[0]), knots, np.full(pad, knots[-1])]
    )
    return padded, pad


def _span_indices(knots_p: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Nonempty span containing each x; exact right endpoints map to the
    # last nonempty span so endpoint values come out right.
    lo = np.searchsorted(knots_p, knots_p[0], side="right") - 1
    hi = np.searchsorted(knots_p, knots_p[-1], side="left") - 1
    return np.clip(np.searchsorted(knots_p, x, side="right") - 1, lo, hi)


def _nonzero_triangle(knots_p: np.ndarray, order: int, span: np.ndarray,
                      x: np.ndarray) -> np.ndarray:
    """Values of the ``order`` possibly-nonzero splines at each x."""
    n = x.size
    values = np.zeros((n, order))
    values[:, 0] = 1.0
    left = np.zeros((n, order))
    right = np.zeros((n, order))
    for q in range(1, order):
        left[:, q] = x - knots_p[span + 1 - q]
        right[:, q] = knots_p[span + q] - x
        saved = np.zeros(n)
        for i in range(q):
            term = values[:, i] / (right[:, i + 1] + left[:, q - i])
            values[:, i] = saved + right[:, i + 1] * term
            saved = left[:, q - i] * term
        values[:, q] = saved
    return values


def _all_values(knots: np.ndarray, order: int, x: np.ndarray,
                deriv: int = 0) -> np.ndarray:
    """Dense (len(x), num_basis) matrix of basis (derivative) values."""
    if not 0 <= deriv < order:
        raise UnsupportedOrderError(
            f"derivative order {deriv} not available for splines of order {order}"
        )
    knots_p, pad = _padded(knots, order)
    span = _span_indices(knots_p, x)
    base_order = order - deriv
    triangle = _nonzero_triangle(knots_p, base_order, span, x)
    dense = np.zeros((x.size, knots_p.size - base_order))
    cols = span[:, None] - base_order + 1 + np.arange(base_order)[None, :]
    np.put_along_axis(dense, cols, triangle, axis=1)
    for q in range(base_order, order):
        width = knots_p[q:] - knots_p[:-q]
        scale = np.divide(1.0, width, out=np.zeros_like(width), where=width > 0)
        scaled = dense * scale[None, :]
        dense = q * (scaled[:, :-1] - scaled[:, 1:])
    return dense[:, pad:pad + (knots.size - order)]


def eval_basis(kv: KnotVector, t: float) -> np.ndarray:
    """All ``num_basis`` spline values at a single wavelength ``t``."""
    a, b = kv.domain
    t = float(t)
    if not a <= t <= b:
        raise DomainError(f"t={t} outside basis domain [{a}, {b}]")
    return _all_values(kv.knots, kv.order, np.array([t]))[0]


def design_matrix(kv: KnotVector, grid: np.ndarray) -> np.ndarray:
    """Row n holds the basis values at grid site n; rows sum to one."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidGridError("grid must be a nonempty one-dimensional array")
    if np.any(np.diff(grid) <= 0):
        raise InvalidGridError("grid must be strictly increasing without duplicates")
    a, b = kv.domain
    if grid[0] < a or grid[-1] > b:
        raise DomainError(
            f"grid range [{grid[0]}, {grid[-1]}] outside basis domain [{a}, {b}]"
        )
    return _all_values(kv.knots, kv.order, grid)


def derivative_matrix(kv: KnotVector, grid: np.ndarray, deriv: int = 2) -> np.ndarray:
    """Like :func:`design_matrix` but for derivative values of order ``deriv``."""
    grid = np.asarray(grid, dtype=float)
    a, b = kv.domain
    if grid.size == 0 or np.min(grid) < a or np.max(grid) > b:
        raise DomainError("derivative grid outside basis domain")
    return _all_values(kv.knots, kv.order, grid, deriv=deriv)


def greville_points(kv: KnotVector) -> np.ndarray:
    """Knot averages; using them as coefficients reproduces the identity."""
    r = kv.order
    k = kv.num_basis
    knots = kv.knots
    return np.array([knots[i + 1:i + r].mean() for i in range(k)])


def penalty_matrix(kv: KnotVector) -> PenaltyMatrix:
    """Integrated products of second derivatives over the domain.

    Only cubic bases are supported: their second derivatives are piecewise
    linear, so two Gauss nodes per span integrate the products exactly.
    """
    if kv.order != 4:
        raise UnsupportedOrderError(
            f"curvature penalty requires cubic splines (order 4), got {kv.order}"
        )
    a, b = kv.domain
    breaks = np.unique(kv.knots)
    breaks = breaks[(breaks >= a) & (breaks <= b)]
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    offset = half / np.sqrt(3.0)
    nodes = np.concatenate([mid - offset, mid + offset])
    weights = np.concatenate([half, half])
    d2 = _all_values(kv.knots, kv.order, nodes, deriv=2)
    entries = (d2 * weights[:, None]).T @ d2
    entries = 0.5 * (entries + entries.T)
    return PenaltyMatrix(entries)
