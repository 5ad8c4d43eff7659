"""Implicit Euler stepping of ``jp(v_t) + (-Delta_p)^s v = 0``.

Each step minimizes the strictly convex functional

    F(w) = (tau/p) * sum_i h |(w_i - v_i)/tau|^p + seminorm_p(w)/p

whose gradient divided by ``h`` is the scheme residual. ``p = 2`` is a linear
SPD solve; otherwise a damped Newton descent with Armijo backtracking is run
until the max-norm residual is below ``step_tol``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import (
    GridMismatchError,
    InnerSolverStall,
    ParameterRangeError,
    TimeRangeError,
)
from .grid import Grid1D
from .operator import (
    Field,
    jp,
    lp_values,
    operator_jacobian,
    operator_values,
    seminorm_values,
)

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class FlowParams:
    """Time discretization and inner-solver settings. ``tau = T / N``."""

    p: float
    s: float
    T: float
    N: int
    step_tol: float = 1e-10
    max_inner_iter: int = 200

    def __post_init__(self):
        problems = []
        if not self.p > 1:
            problems.append(f"p must be > 1, got {self.p}")
        if not 0 < self.s < 1:
            problems.append(f"s must lie in (0,1), got {self.s}")
        if not (self.T > 0 and math.isfinite(self.T)):
            problems.append(f"T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            problems.append(f"N must be a positive integer, got {self.N}")
        if not self.step_tol > 0:
            problems.append(f"step_tol must be positive, got {self.step_tol}")
        if int(self.max_inner_iter) != self.max_inner_iter or self.max_inner_iter < 1:
            problems.append(f"max_inner_iter must be a positive integer, got {self.max_inner_iter}")
        if problems:
            raise ParameterRangeError("; ".join(problems))
        object.__setattr__(self, "N", int(self.N))

    @classmethod
    def from_tau(cls, p, s, tau, T, **kw) -> "FlowParams":
        """Params with step ``tau``; ``T`` must be a whole number of steps."""
        if not tau > 0:
            raise ParameterRangeError(f"tau must be positive, got {tau}")
        N = round(T / tau)
        if N < 1 or not math.isclose(N * tau, T, rel_tol=1e-9):
            raise ParameterRangeError(f"T={T} is not a whole number of steps tau={tau}")
        return cls(p, s, T, N, **kw)

    @property
    def tau(self) -> float:
        return self.T / self.N

    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)


@dataclass(frozen=True)
class StepResult:
    field: Field
    residual: float
    iterations: int
    converged: bool


@dataclass
class FlowTrace:
    """Per-step record of a flow; index ``k`` runs over ``0..N``.

    ``dissipation[k] = sum_i h |v^k_i - v^{k-1}_i|^p / tau^(p-1)`` with
    ``dissipation[0] = 0``; ``rayleigh`` is NaN where the mass vanishes.
    """

    t: np.ndarray
    energy: np.ndarray
    mass: np.ndarray
    rayleigh: np.ndarray
    dissipation: np.ndarray
    inner_residual: np.ndarray
    sup_norm: np.ndarray
    p: float
    s: float
    tau: float
    n: int
    step_tol: float
    state_steps: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.state_steps is None:
            self.state_steps = np.arange(len(self.t))

    def __len__(self):
        return len(self.t)

    @property
    def g_sup(self) -> float:
        return float(self.sup_norm[0])

    def energy_slack(self) -> float:
        """Per-step allowance for inexact solves: ``n * step_tol * (1 + |g|_inf)``."""
        return self.n * self.step_tol * (1.0 + self.g_sup)


def _check_compatible(grid: Grid1D, params: FlowParams):
    if grid.p != params.p or grid.s != params.s:
        raise GridMismatchError(
            f"grid has (p, s)=({grid.p}, {grid.s}) but params have ({params.p}, {params.s})"
        )


@functools.lru_cache(maxsize=16)
def _p2_factor(grid: Grid1D, tau: float):
    mat = operator_jacobian(grid, np.zeros(grid.n))
    mat[np.diag_indices_from(mat)] += 1.0 / tau
    return scipy.linalg.cho_factor(mat), mat


def _objective(grid: Grid1D, w, v, tau):
    p = grid.p
    time_part = tau / p * np.sum(np.abs((w - v) / tau) ** p)
    return time_part + seminorm_values(grid, w) / (p * grid.h)


def ray_factor(lam: float, tau: float, p: float) -> float:
    """Root ``c`` in (0, 1) of ``jp((c-1)/tau) = -lam * jp(c)``.

    One implicit step maps ``c0 * psi`` to ``c * c0 * psi`` when ``psi`` is an
    eigenfunction with eigenvalue ``lam``.
    """
    if lam <= 0:
        return 1.0
    f = lambda c: jp((c - 1.0) / tau, p) + lam * jp(c, p)
    return scipy.optimize.brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * _EPS)


def _initial_guess(grid: Grid1D, v, tau, guess):
    """Pick the better of the caller's guess and the scaled-ray guess."""
    mass = lp_values(grid, v)
    candidates = [v]
    if mass > 0:
        lam = seminorm_values(grid, v) / mass
        candidates.append(ray_factor(lam, tau, grid.p) * v)
    if guess is not None:
        candidates.append(np.asarray(guess, dtype=float))
    norms = [np.max(np.abs(jp((w - v) / tau, grid.p) + operator_values(grid, w))) for w in candidates]
    return candidates[int(np.argmin(norms))]


def _solve_p2(grid: Grid1D, v, tau, tol, max_iter):
    factor, mat = _p2_factor(grid, tau)
    rhs = v / tau
    w = scipy.linalg.cho_solve(factor, rhs)
    it = 1
    res = mat @ w - rhs
    rn = float(np.max(np.abs(res)))
    # iterative refinement for badly scaled right-hand sides
    while rn > tol and it < max_iter:
        w_new = w - scipy.linalg.cho_solve(factor, res)
        res_new = mat @ w_new - rhs
        rn_new = float(np.max(np.abs(res_new)))
        it += 1
        if rn_new >= rn:
            break
        w, res, rn = w_new, res_new, rn_new
    # report the residual in the same form as every other path
    rn = float(np.max(np.abs(jp((w - v) / tau, 2.0) + operator_values(grid, w))))
    return w, rn, it


def _newton_direction(grid: Grid1D, w, v, tau, res, floor):
    p = grid.p
    hess = operator_jacobian(grid, w, floor=floor)
    dt = np.abs((w - v) / tau)
    if floor > 0:
        dt = np.maximum(dt, floor)
    hess[np.diag_indices_from(hess)] += (p - 1.0) * dt ** (p - 2.0) / tau
    scale = float(np.max(np.diag(hess)))
    ridge = 1e-13 * scale if scale > 0 else 1e-300
    for _ in range(12):
        try:
            fac = scipy.linalg.cho_factor(hess + ridge * np.eye(grid.n))
            d = -scipy.linalg.cho_solve(fac, res)
            if np.all(np.isfinite(d)):
                return d
        except (np.linalg.LinAlgError, ValueError):
            pass
        ridge *= 100.0
    return -res


def _solve_newton(grid: Grid1D, v, tau, tol, max_iter, guess=None):
    p = grid.p
    w = _initial_guess(grid, v, tau, guess)
    f = _objective(grid, w, v, tau)
    best_w, best_rn = w, math.inf
    prev_rn = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        time_term = jp((w - v) / tau, p)
        op = operator_values(grid, w)
        res = time_term + op
        rn = float(np.max(np.abs(res)))
        if rn < best_rn:
            best_w, best_rn = w, rn
        if rn <= tol:
            # keep polishing while Newton still makes real progress
            scale = max(float(np.max(np.abs(time_term))), float(np.max(np.abs(op))), 1e-300)
            if rn <= 64 * _EPS * scale or rn > 0.25 * prev_rn:
                break
        prev_rn = rn
        floor = 0.0
        if p < 2.0:
            floor = 1e-8 * max(float(np.max(np.abs(w))), float(np.max(np.abs(w - v))) / tau, 1e-300)
        d = _newton_direction(grid, w, v, tau, res, floor)
        slope = float(np.dot(res, d))
        if slope >= 0:
            d = -res
            slope = -float(np.dot(res, res))
        t = 1.0
        allowance = 16 * _EPS * (abs(f) + 1e-300)
        for _ in range(60):
            w_try = w + t * d
            f_try = _objective(grid, w_try, v, tau)
            if f_try <= f + 1e-4 * t * slope + allowance:
                break
            t *= 0.5
        else:
            break
        w, f = w_try, f_try
    else:
        res = jp((w - v) / tau, p) + operator_values(grid, w)
        rn = float(np.max(np.abs(res)))
        if rn < best_rn:
            best_w, best_rn = w, rn
    return best_w, best_rn, it


def implicit_step(v_prev: Field, params: FlowParams, guess=None) -> StepResult:
    """One step of the scheme from ``v_prev``.

    The result is flagged ``converged=False`` (never silently) when the
    residual stays above ``params.step_tol``; ``field`` is then the best
    iterate. ``guess`` is an optional starting point for the inner solve.
    """
    grid = v_prev.grid
    _check_compatible(grid, params)
    v = v_prev.values
    tau = params.tau
    if not np.any(v):
        return StepResult(Field.zeros(grid), 0.0, 0, True)
    if grid.p == 2.0:
        w, rn, it = _solve_p2(grid, v, tau, params.step_tol, params.max_inner_iter)
    else:
        w, rn, it = _solve_newton(grid, v, tau, params.step_tol, params.max_inner_iter, guess)
    return StepResult(Field(grid, w), rn, it, rn <= params.step_tol)


def _trace_from(grid, params, values, residuals, state_steps):
    p = grid.p
    tau = params.tau
    arr = np.asarray(values)
    k = len(arr)
    energy = np.array([seminorm_values(grid, u) for u in arr]) / p
    mass = np.array([lp_values(grid, u) for u in arr])
    with np.errstate(divide="ignore", invalid="ignore"):
        ray = np.where(mass > 0, p * energy / np.where(mass > 0, mass, 1.0), np.nan)
    diss = np.zeros(k)
    if k > 1:
        diss[1:] = grid.h * np.sum(np.abs(np.diff(arr, axis=0)) ** p, axis=1) / tau ** (p - 1.0)
    return FlowTrace(
        t=tau * np.arange(k),
        energy=energy,
        mass=mass,
        rayleigh=ray,
        dissipation=diss,
        inner_residual=np.asarray(residuals, dtype=float),
        sup_norm=np.max(np.abs(arr), axis=1),
        p=p,
        s=grid.s,
        tau=tau,
        n=grid.n,
        step_tol=params.step_tol,
        state_steps=np.asarray(state_steps, dtype=int),
    )


def run_flow(g: Field, params: FlowParams, max_states: int | None = None, stride: int = 1):
    """Run ``N`` implicit steps from ``g``; returns ``(states, trace)``.

    All states are kept unless ``N + 1 > max_states``, in which case only every
    ``stride``-th state (and the last) is kept; ``trace.state_steps`` lists
    the step index of every kept state.
    """
    grid = g.grid
    _check_compatible(grid, params)
    N = params.N
    keep_all = max_states is None or N + 1 <= max_states
    if not keep_all and stride < 1:
        raise ParameterRangeError("stride must be >= 1")

    values = [g.values]
    residuals = [0.0]
    states = [g]
    kept = [0]
    v = g
    prev_values = None
    for k in range(1, N + 1):
        guess = None
        if prev_values is not None:
            guess = 2.0 * v.values - prev_values
        step = implicit_step(v, params, guess=guess)
        if not step.converged:
            trace = _trace_from(grid, params, values + [step.field.values], residuals + [step.residual], kept)
            raise InnerSolverStall(
                f"step {k}: residual {step.residual:.3e} above step_tol {params.step_tol:.1e}"
                f" after {step.iterations} iterations",
                best=step.field,
                residual=step.residual,
                step=k,
                states=states,
                trace=trace,
            )
        prev_values = v.values
        v = step.field
        values.append(v.values)
        residuals.append(step.residual)
        if keep_all or k % stride == 0 or k == N:
            states.append(v)
            kept.append(k)
    logger.debug("flow finished: N=%d, max inner residual %.3e", N, max(residuals))
    return states, _trace_from(grid, params, values, residuals, kept)


def interpolate(states: list, t: float, mode: str, tau: float) -> Field:
    """Evaluate the step (``mode="step"``) or piecewise-linear interpolant at ``t``.

    ``states`` must be the full sequence ``v^0..v^N`` with spacing ``tau``.
    """
    N = len(states) - 1
    T = N * tau
    if not (0.0 <= t <= T * (1 + 1e-12)):
        raise TimeRangeError(f"t={t} outside [0, {T}]")
    if mode not in ("step", "linear"):
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if t <= 0.0:
        return states[0]
    x = t / tau
    if abs(x - round(x)) < 1e-9:
        x = float(round(x))
    k = min(max(math.ceil(x), 1), N)
    if mode == "step":
        return states[k]
    theta = min(max(x - (k - 1), 0.0), 1.0)
    lo, hi = states[k - 1], states[k]
    return Field(lo.grid, lo.values + theta * (hi.values - lo.values))
