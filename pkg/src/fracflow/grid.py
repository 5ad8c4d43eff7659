"""Cell-centered discretization of an interval and its singular-kernel weights.

The field is extended by zero outside ``(a, b)``. That extension is never
stored: interactions between interior cells go through the pair weights, and
interactions with the exterior are summed in closed form into the tail weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainEmptyError, IndexRangeError, ParameterRangeError


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Uniform cell-centered grid on ``(a, b)`` with precomputed weights.

    ``kernel[i, j] = h**2 * |x_i - x_j|**(-1 - s*p)`` for ``i != j`` (zero on the
    diagonal, which is never used), ``tail[i] = 2 * int_{R minus (a,b)} |x_i - y|**(-1-s*p) dy``
    and ``weights = 2 * kernel / h`` is the form the operator uses.
    """

    a: float
    b: float
    n: int
    s: float
    p: float
    h: float = field(init=False)
    centers: np.ndarray = field(init=False, repr=False)
    kernel: np.ndarray = field(init=False, repr=False)
    tail: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _validate(self.a, self.b, self.n, self.s, self.p)
        h = (self.b - self.a) / self.n
        x = self.a + (np.arange(self.n) + 0.5) * h
        sp = self.s * self.p
        dist = np.abs(x[:, None] - x[None, :])
        np.fill_diagonal(dist, 1.0)
        kernel = h * h * dist ** (-1.0 - sp)
        np.fill_diagonal(kernel, 0.0)
        tail = (2.0 / sp) * ((x - self.a) ** (-sp) + (self.b - x) ** (-sp))
        for arr in (x, kernel, tail):
            arr.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "centers", x)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "tail", tail)
        # pair weights as they enter the operator: 2 * h * |x_i - x_j|^(-1-sp)
        weights = 2.0 * kernel / h
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def low_p(self) -> bool:
        """True when ``p < 2``; convergence guarantees only cover ``p >= 2``."""
        return self.p < 2.0

    @property
    def length(self) -> float:
        return self.b - self.a

    def same_as(self, other: "Grid1D") -> bool:
        return self is other or (
            self.a == other.a
            and self.b == other.b
            and self.n == other.n
            and self.s == other.s
            and self.p == other.p
        )

    def with_p(self, p: float) -> "Grid1D":
        return Grid1D(self.a, self.b, self.n, self.s, p)


def _validate(a, b, n, s, p):
    if not (math.isfinite(a) and math.isfinite(b)) or a >= b:
        raise DomainEmptyError(f"domain ({a}, {b}) is empty")
    problems = []
    if int(n) != n or n < 3:
        problems.append(f"n must be an integer >= 3, got {n}")
    if not 0.0 < s < 1.0:
        problems.append(f"s must lie in (0,1), got {s}")
    if not p > 1.0 or not math.isfinite(p):
        problems.append(f"p must be > 1, got {p}")
    if problems:
        raise ParameterRangeError("; ".join(problems))


def build_grid(a: float, b: float, n: int, s: float, p: float) -> Grid1D:
    """Build the grid, warning (not failing) when ``1 < p < 2``."""
    _validate(a, b, n, s, p)
    if p < 2.0:
        warnings.warn(
            f"p={p} < 2: the scheme runs but convergence guarantees assume p >= 2",
            RuntimeWarning,
            stacklevel=2,
        )
    return Grid1D(float(a), float(b), int(n), float(s), float(p))


def tail_weight(grid: Grid1D, i: int) -> float:
    if not 0 <= i < grid.n:
        raise IndexRangeError(f"cell index {i} outside [0, {grid.n})")
    return float(grid.tail[i])


@dataclass(frozen=True)
class Cylinder:
    """Backward parabolic cylinder ``B_r(x0) x (t0 - r**gamma, t0]``."""

    x0: float
    t0: float
    r: float
    gamma: float

    def __post_init__(self):
        if not self.r > 0:
            raise ParameterRangeError(f"cylinder radius must be positive, got {self.r}")
        if not self.gamma > 0:
            raise ParameterRangeError(f"gamma must be positive, got {self.gamma}")

    @classmethod
    def scaled(cls, x0: float, t0: float, r: float, s: float, p: float) -> "Cylinder":
        """Cylinder with the equation's own time scaling ``gamma = s*p/(p-1)``."""
        return cls(x0, t0, r, s * p / (p - 1.0))

    @property
    def t_start(self) -> float:
        return self.t0 - self.r**self.gamma

    def shrink(self, j: int) -> "Cylinder":
        """The cylinder of radius ``r * 2**-j`` with the same top point."""
        return Cylinder(self.x0, self.t0, self.r * 2.0**-j, self.gamma)
