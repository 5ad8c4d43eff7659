"""Discrete ground states of the fractional p-Laplacian.

Three independent routes to the smallest Rayleigh value ``lambda_h``:

* ``ground_state_flow``: implicit step, renormalize, repeat (nonlinear
  inverse iteration driven by the flow itself);
* ``ground_state_direct``: preconditioned descent on the Rayleigh quotient
  with backtracking, renormalizing after each step;
* ``dense_p2_oracle``: for ``p = 2`` the operator is a symmetric matrix and
  inverse power iteration with a dense factorization applies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    FactorizationError,
    NonConvergenceError,
    ParameterRangeError,
    ZeroCollapseError,
)
from .grid import Grid1D
from .operator import Field, jp, lp_values, operator_jacobian, operator_values, seminorm_values
from .stepper import FlowParams, implicit_step

METHODS = ("flow", "direct", "oracle-p2")
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class GroundState:
    """Unit ``L^p`` ground state ``psi >= 0`` with ``lam = rayleigh(psi)``."""

    psi: Field
    lam: float
    mu: float
    method: str
    residual: float
    iterations: int = 0


def mu_from_lambda(lam: float, p: float) -> float:
    """Decay rate ``lam ** (1/(p-1))``."""
    if not lam > 0:
        raise ParameterRangeError(f"lambda must be positive, got {lam}")
    if not p > 1:
        raise ParameterRangeError(f"p must be > 1, got {p}")
    return float(lam ** (1.0 / (p - 1.0)))


def eigen_residual(psi: Field, lam: float) -> float:
    """``max_i |G(psi)_i - lam * jp(psi_i)|``."""
    g = psi.grid
    return float(np.max(np.abs(operator_values(g, psi.values) - lam * jp(psi.values, g.p))))


def _normalize(grid: Grid1D, u: np.ndarray) -> np.ndarray:
    m = lp_values(grid, u)
    if not m > 0 or not np.isfinite(m):
        raise ZeroCollapseError("cannot normalize a numerically zero field")
    return u / m ** (1.0 / grid.p)


def _finalize(grid: Grid1D, u: np.ndarray, method: str, iterations: int) -> GroundState:
    """Normalize, fix the sign and clamp round-off negatives."""
    u = _normalize(grid, u)
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    lam = seminorm_values(grid, u) / lp_values(grid, u)
    residual = eigen_residual(Field(grid, u), lam)
    clamp = max(residual, 1e-14 * float(np.max(np.abs(u))))
    small_neg = (u < 0) & (u >= -clamp)
    if np.any(small_neg):
        u = u.copy()
        u[small_neg] = 0.0
        u = _normalize(grid, u)
        lam = seminorm_values(grid, u) / lp_values(grid, u)
        residual = eigen_residual(Field(grid, u), lam)
    psi = Field(grid, u)
    return GroundState(psi, lam, mu_from_lambda(lam, grid.p), method, residual, iterations)


def ground_state_flow(g: Field, params: FlowParams, conv_tol: float, max_iter: int = 2000) -> GroundState:
    """Iterate one implicit step of size ``params.tau`` followed by renormalization.

    Converged once the Rayleigh value changes by less than ``conv_tol`` and
    the eigen residual is below ``conv_tol``. ``flow_rayleigh_sequence``
    replays the iteration and returns its (nonincreasing) Rayleigh values.
    """
    grid = g.grid
    u = _normalize(grid, np.asarray(g.values, dtype=float))
    lam_prev = seminorm_values(grid, u) / lp_values(grid, u)
    for it in range(1, max_iter + 1):
        step = implicit_step(Field(grid, u), params)
        u = _normalize(grid, step.field.values)
        lam = seminorm_values(grid, u) / lp_values(grid, u)
        res = eigen_residual(Field(grid, u), lam)
        if abs(lam - lam_prev) < conv_tol and res < conv_tol:
            return _finalize(grid, u, "flow", it)
        lam_prev = lam
    best = _finalize(grid, u, "flow", max_iter)
    raise NonConvergenceError(
        f"normalized flow did not converge in {max_iter} iterations (residual {best.residual:.3e})",
        best=best,
    )


def flow_rayleigh_sequence(g: Field, params: FlowParams, iterations: int) -> np.ndarray:
    """Rayleigh values of the normalized-flow iterates ``0..iterations``."""
    grid = g.grid
    u = _normalize(grid, np.asarray(g.values, dtype=float))
    out = [seminorm_values(grid, u) / lp_values(grid, u)]
    for _ in range(iterations):
        u = _normalize(grid, implicit_step(Field(grid, u), params).field.values)
        out.append(seminorm_values(grid, u) / lp_values(grid, u))
    return np.array(out)


def _rayleigh_values(grid, u):
    return seminorm_values(grid, u) / lp_values(grid, u)


def ground_state_direct(grid: Grid1D, seed: Field, tol: float, max_iter: int = 500) -> GroundState:
    """Minimize the Rayleigh quotient by projected, preconditioned descent.

    The step direction is the quotient's gradient preconditioned by the
    Jacobian of the operator; the step length backtracks until the Rayleigh
    value decreases, then the iterate is renormalized to unit ``L^p`` norm.
    For ``p = 2`` a unit step is exactly one inverse-iteration sweep.
    Stops when the eigen residual is below ``tol``.
    """
    p = grid.p
    u = _normalize(grid, np.asarray(seed.values, dtype=float))
    lam = _rayleigh_values(grid, u)
    for it in range(max_iter + 1):
        g = operator_values(grid, u)
        r = g - lam * jp(u, p)
        if np.max(np.abs(r)) < tol:
            return _finalize(grid, u, "direct", it)
        if it == max_iter:
            break
        jac = operator_jacobian(grid, u, floor=1e-10 * float(np.max(np.abs(u))) if p < 2 else 0.0)
        jac[np.diag_indices_from(jac)] += 1e-14 * float(np.max(np.diag(jac)))
        try:
            d = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(jac), r)
        except np.linalg.LinAlgError:
            d = -r
        # gradient of the quotient at unit mass is p*h*r; keep d a descent direction
        if np.dot(r, d) >= 0:
            d = -r
        step = p - 1.0
        accepted = False
        rn = float(np.max(np.abs(r)))
        for _ in range(60):
            trial = u + step * d
            if lp_values(grid, trial) > 0:
                lam_trial = _rayleigh_values(grid, trial)
                if lam_trial < lam * (1.0 - 16 * _EPS):
                    accepted = True
                    # keep halving while that still lowers the quotient
                    while True:
                        half = u + 0.5 * step * d
                        lam_half = _rayleigh_values(grid, half)
                        if not lam_half < lam_trial:
                            break
                        step, trial, lam_trial = 0.5 * step, half, lam_half
                    break
                # near the minimum the decrease drops below round-off in lam;
                # fall back to the residual as the progress measure
                if lam_trial <= lam * (1.0 + 16 * _EPS):
                    t_unit = _normalize(grid, trial)
                    r_trial = operator_values(grid, t_unit) - lam_trial * jp(t_unit, p)
                    if np.max(np.abs(r_trial)) < rn:
                        accepted = True
                        break
            step *= 0.5
        if not accepted:
            # no decrease left at working precision
            best = _finalize(grid, u, "direct", it)
            if best.residual < tol:
                return best
            raise NonConvergenceError(
                f"Rayleigh descent stalled at residual {best.residual:.3e}", best=best
            )
        u = _normalize(grid, trial)
        lam = _rayleigh_values(grid, u)
    best = _finalize(grid, u, "direct", max_iter)
    raise NonConvergenceError(
        f"Rayleigh descent did not converge in {max_iter} iterations (residual {best.residual:.3e})",
        best=best,
    )


def p2_matrix(grid: Grid1D) -> np.ndarray:
    """Matrix ``A`` with ``A @ u == apply_operator(u)`` for ``p = 2``."""
    if grid.p != 2.0:
        raise ParameterRangeError(f"the linear oracle needs p = 2, got {grid.p}")
    return operator_jacobian(grid, np.zeros(grid.n))


def dense_p2_oracle(grid: Grid1D, tol: float = 1e-12, max_iter: int = 500) -> GroundState:
    """Smallest eigenpair of the ``p = 2`` matrix by inverse power iteration."""
    a = p2_matrix(grid)
    try:
        fac = scipy.linalg.cho_factor(a)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"Cholesky factorization failed: {exc}") from exc
    u = np.ones(grid.n)
    lam_prev = np.inf
    res_prev = np.inf
    for it in range(1, max_iter + 1):
        u = scipy.linalg.cho_solve(fac, u)
        u /= np.linalg.norm(u)
        lam = float(u @ a @ u)
        res = float(np.max(np.abs(a @ u - lam * u)))
        # stop once lam has settled and the residual no longer improves
        if abs(lam - lam_prev) <= tol * lam and (res <= 1e-3 * tol * lam or res > 0.9 * res_prev):
            break
        lam_prev, res_prev = lam, res
    return _finalize(grid, u, "oracle-p2", it)
