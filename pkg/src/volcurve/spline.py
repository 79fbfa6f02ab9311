"""Penalized B-spline building blocks.

Clamped (boundary-replicated) B-spline bases with quantile or uniform
interior knots, discrete difference penalties on the coefficients, and the
sum-to-zero centering transform that makes a smooth identifiable next to an
intercept. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, InputError, SupportError


@dataclass(frozen=True)
class SplineConfig:
    """Basis/penalty configuration for one smooth term.

    ``n_basis`` counts basis functions before centering. ``penalty_order``
    is the order of the difference penalty on adjacent coefficients.
    """

    n_basis: int = 10
    degree: int = 3
    penalty_order: int = 2
    knot_rule: str = "quantile"

    def __post_init__(self):
        if self.degree < 1:
            raise InputError(f"spline degree must be >= 1, got {self.degree}")
        if self.n_basis < self.degree + 1:
            raise InputError(
                f"n_basis={self.n_basis} too small for degree {self.degree} "
                f"(need at least degree + 1)"
            )
        if not 1 <= self.penalty_order < self.n_basis:
            raise InputError(
                f"penalty_order={self.penalty_order} must be in [1, n_basis)"
            )
        if self.knot_rule not in ("quantile", "uniform"):
            raise InputError(f"unknown knot rule {self.knot_rule!r}")


@dataclass(frozen=True)
class KnotVector:
    """Nondecreasing knot sequence with boundary knots replicated degree+1 times."""

    knots: np.ndarray
    degree: int

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])


@dataclass(frozen=True)
class PenaltyMatrix:
    """Symmetric positive semi-definite penalty with known rank."""

    matrix: np.ndarray
    rank: int


@dataclass(frozen=True)
class CenteringTransform:
    """Orthonormal map Z from unconstrained coefficients to the sum-to-zero subspace.

    For the training basis matrix B, every column of B @ Z sums to zero, so
    the reparameterized smooth carries no constant component over the
    training sample.
    """

    transform: np.ndarray = field(repr=False)


def make_knots(values, config: SplineConfig) -> KnotVector:
    """Build a clamped knot vector for the given data.

    Interior knots sit at equally spaced quantiles of the *distinct* data
    values (rule "quantile") or equally spaced positions (rule "uniform");
    boundary knots at the data min/max are replicated degree+1 times.
    Duplicate or boundary-touching interior knots are collapsed with a
    warning, shrinking the effective basis size.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InputError("cannot place knots on empty data")
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        raise DegenerateDataError("no spread in covariate")

    n_interior = config.n_basis - config.degree - 1
    if n_interior > 0:
        if config.knot_rule == "quantile":
            distinct = np.unique(values)
            probs = np.arange(1, n_interior + 1) / (n_interior + 1)
            interior = np.quantile(distinct, probs)
        else:
            interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
        keep = np.concatenate(([True], np.diff(interior) > 0))
        keep &= (interior > lo) & (interior < hi)
        if not np.all(keep):
            warnings.warn(
                "collapsed duplicate interior knots; effective basis size "
                f"reduced from {config.n_basis} to "
                f"{config.degree + 1 + int(keep.sum())}",
                stacklevel=2,
            )
            interior = interior[keep]
    else:
        interior = np.empty(0)

    knots = np.concatenate(
        (np.full(config.degree + 1, lo), interior, np.full(config.degree + 1, hi))
    )
    return KnotVector(knots=knots, degree=config.degree)


def basis_matrix(knots: KnotVector, xs, clamp: bool = False) -> np.ndarray:
    """Evaluate all B-spline basis functions at ``xs`` via the Cox-de Boor recursion.

    Returns an array of shape (len(xs), n_basis); each row is nonnegative
    and sums to one. Points outside [knot min, knot max] raise unless
    ``clamp`` pins them to the boundary.
    """
    t = knots.knots
    d = knots.degree
    nb = knots.n_basis
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    if clamp:
        x = np.clip(x, t[0], t[-1])
    elif np.any(x < t[0]) or np.any(x > t[-1]):
        raise SupportError(
            f"volume outside basis support [{t[0]:g}, {t[-1]:g}]"
        )

    # Interval index per point; the right boundary belongs to the last
    # nonempty interval so clamped bases interpolate both ends.
    j = np.searchsorted(t, x, side="right") - 1
    j = np.clip(j, d, nb - 1)

    m = len(t) - 1
    b = np.zeros((x.size, m))
    b[np.arange(x.size), j] = 1.0
    for r in range(1, d + 1):
        nxt = np.zeros_like(b)
        for k in range(m - r):
            left_den = t[k + r] - t[k]
            if left_den > 0:
                nxt[:, k] += (x - t[k]) / left_den * b[:, k]
            right_den = t[k + r + 1] - t[k + 1]
            if right_den > 0:
                nxt[:, k] += (t[k + r + 1] - x) / right_den * b[:, k + 1]
        b = nxt
    return b[:, :nb]


def difference_penalty(n_basis: int, order: int) -> PenaltyMatrix:
    """Difference penalty S = D'D with D the order-th difference operator.

    S has rank n_basis - order; its null space holds exactly the coefficient
    sequences that are polynomials of degree < order.
    """
    if not 1 <= order < n_basis:
        raise InputError(
            f"penalty order {order} must satisfy 1 <= order < n_basis={n_basis}"
        )
    d = np.diff(np.eye(n_basis), n=order, axis=0)
    return PenaltyMatrix(matrix=d.T @ d, rank=n_basis - order)


def centering_transform(basis: np.ndarray) -> CenteringTransform:
    """Orthonormal basis of the subspace where the smooth sums to zero.

    The constraint is c'beta = 0 with c the column sums of the training
    basis; Z spans its orthogonal complement, so B @ Z has zero column sums
    and Z'Z = I.
    """
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[1] < 2 or basis.shape[0] < 2:
        raise InputError("centering needs a basis matrix with >= 2 rows and columns")
    c = basis.sum(axis=0)
    _, _, vt = np.linalg.svd(c[None, :], full_matrices=True)
    return CenteringTransform(transform=vt[1:].T.copy())


def centered_penalty(penalty: PenaltyMatrix, z: np.ndarray) -> PenaltyMatrix:
    """Push a penalty through the centering transform: Z'SZ with its rank."""
    m = z.T @ penalty.matrix @ z
    m = 0.5 * (m + m.T)
    eigs = np.linalg.eigvalsh(m)
    tol = max(1e-10 * max(eigs[-1], 0.0), 1e-14)
    rank = int(np.sum(eigs > tol))
    return PenaltyMatrix(matrix=m, rank=rank)
