"""Discrete fractional p-energy, its gradient operator and the scheme residual.

Conventions (``W = grid.weights``, ``T = grid.tail``)::

    seminorm_p(u) = sum_{i != j} |u_i - u_j|^p K_ij + h * sum_i |u_i|^p T_i
    G_i(u)        = sum_j W_ij jp(u_i - u_j) + jp(u_i) T_i

so that ``h * G`` is exactly the gradient of ``seminorm_p / p``. The ``*_values``
helpers take raw arrays and are what the solvers call in their inner loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, ParameterRangeError, ZeroFieldError
from .grid import Grid1D


@dataclass(frozen=True, eq=False)
class Field:
    """Cell values on ``grid``; implicitly zero outside the domain."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid1D) -> "Field":
        return cls(grid, np.zeros(grid.n))

    @classmethod
    def from_function(cls, grid: Grid1D, fn) -> "Field":
        return cls(grid, fn(grid.centers))

    def _check(self, other: "Field"):
        if not self.grid.same_as(other.grid):
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, c * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_zero(self) -> bool:
        return not np.any(self.values)


def jp(t, p: float):
    """``|t|**(p-2) * t``, with ``jp(0) = 0`` for every ``p > 1``."""
    if not p > 1:
        raise ParameterRangeError(f"p must be > 1, got {p}")
    t = np.asarray(t, dtype=float)
    if p == 2.0:
        return t.copy() if t.ndim else float(t)
    a = np.abs(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a > 0, np.sign(t) * a ** (p - 1.0), 0.0)
    return out if out.ndim else float(out)


# -- array-level kernels ---------------------------------------------------


def pair_differences(u: np.ndarray) -> np.ndarray:
    return u[:, None] - u[None, :]


def seminorm_values(grid: Grid1D, u: np.ndarray) -> float:
    d = np.abs(pair_differences(u))
    return float(np.sum(grid.kernel * d**grid.p) + grid.h * np.dot(grid.tail, np.abs(u) ** grid.p))


def lp_values(grid: Grid1D, u: np.ndarray, p: float | None = None) -> float:
    p = grid.p if p is None else p
    return float(grid.h * np.sum(np.abs(u) ** p))


def operator_values(grid: Grid1D, u: np.ndarray) -> np.ndarray:
    p = grid.p
    jd = jp(pair_differences(u), p)
    return np.sum(grid.weights * jd, axis=1) + grid.tail * jp(u, p)


def operator_jacobian(grid: Grid1D, u: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Jacobian ``dG_i/du_j`` (symmetric, positive semidefinite).

    For ``p < 2`` the factor ``|t|**(p-2)`` is infinite at zero; ``floor``
    bounds ``|t|`` from below so the matrix stays finite.
    """
    p = grid.p
    d = np.abs(pair_differences(u))
    a = np.abs(u)
    if p != 2.0:
        if floor > 0:
            d = np.maximum(d, floor)
            a = np.maximum(a, floor)
        pair = (p - 1.0) * grid.weights * d ** (p - 2.0)
        diag_tail = (p - 1.0) * grid.tail * a ** (p - 2.0)
    else:
        pair = grid.weights.copy()
        diag_tail = grid.tail.copy()
    np.fill_diagonal(pair, 0.0)
    jac = -pair
    jac[np.diag_indices_from(jac)] = pair.sum(axis=1) + diag_tail
    return jac


# -- Field-level API -------------------------------------------------------


def seminorm_p(u: Field) -> float:
    """Discrete ``[u]^p``: interior pair sum plus the exact exterior tail."""
    return seminorm_values(u.grid, u.values)


def lp_norm_p(u: Field) -> float:
    return lp_values(u.grid, u.values)


def rayleigh(u: Field) -> float:
    m = lp_norm_p(u)
    if m == 0.0:
        raise ZeroFieldError("Rayleigh quotient of the zero field")
    return seminorm_p(u) / m


def apply_operator(u: Field) -> Field:
    """Discrete ``(-Delta_p)^s u`` at the cell centers."""
    return Field(u.grid, operator_values(u.grid, u.values))


def residual_values(grid: Grid1D, w: np.ndarray, v_old: np.ndarray, tau: float) -> np.ndarray:
    return jp((w - v_old) / tau, grid.p) + operator_values(grid, w)


def weak_residual(v_new: Field, v_old: Field, tau: float) -> Field:
    """Pointwise residual of one implicit step; zero iff ``v_new`` solves it."""
    if not tau > 0:
        raise ParameterRangeError(f"tau must be positive, got {tau}")
    if not v_new.grid.same_as(v_old.grid):
        raise GridMismatchError("v_new and v_old live on different grids")
    return Field(v_new.grid, residual_values(v_new.grid, v_new.values, v_old.values, tau))


def pairing(u: Field, phi: Field) -> float:
    """Weak-form pairing ``sum_{i!=j} jp(u_i-u_j)(phi_i-phi_j) K_ij + h sum jp(u_i) phi_i T_i``."""
    grid = u.grid
    jd = jp(pair_differences(u.values), grid.p)
    dphi = pair_differences(phi.values)
    return float(
        np.sum(grid.kernel * jd * dphi) + grid.h * np.dot(grid.tail, jp(u.values, grid.p) * phi.values)
    )
