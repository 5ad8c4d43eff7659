"""Checks of the monotonicity, decay and comparison properties along computed flows.

Every check returns a :class:`CheckReport` with ``passed == (worst_violation
<= slack_budget)``. Slack budgets come from the formulas in this module
(``energy_slack``, ``exp_decay_slack``, ``weighted_slack``) or are passed in
explicitly; none is tuned per run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CylinderDomainError,
    InsufficientPointsError,
    PreconditionError,
    SpatialResolutionError,
    TimeResolutionError,
    ZeroMassError,
)
from .grid import Cylinder
from .operator import Field, lp_values, seminorm_values
from .stepper import FlowParams, FlowTrace, interpolate


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_violation: float
    slack_budget: float
    location: object = None
    informational: bool = False
    note: str = ""
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.informational:
            status = "INFO"
        return (
            f"{status} {self.name}: worst={self.worst_violation:.3e} "
            f"budget={self.slack_budget:.3e} at={self.location} {self.note}".rstrip()
        )


def _report(name, violations, slack, locations=None, **kw):
    violations = np.asarray(violations, dtype=float)
    if violations.size == 0:
        return CheckReport(name, True, -math.inf, slack, None, **kw)
    idx = int(np.argmax(violations))
    worst = float(violations[idx])
    loc = idx if locations is None else locations[idx]
    return CheckReport(name, worst <= slack, worst, slack, loc, **kw)


# -- slack formulas --------------------------------------------------------


def energy_slack(trace: FlowTrace, step_tol: float | None = None) -> float:
    """``n * step_tol * (1 + |g|_inf)`` per step."""
    tol = trace.step_tol if step_tol is None else step_tol
    return trace.n * tol * (1.0 + trace.g_sup)


def exp_decay_slack(trace: FlowTrace, mu: float) -> float:
    """Budget for ``p E_k <= exp(-p mu t_k) p E_0``.

    The scheme itself guarantees ``E_k <= (1 + p mu tau)^-k E_0``; the gap to the
    continuous exponential is first order in ``tau``.
    """
    p, tau = trace.p, trace.tau
    k = np.arange(len(trace))
    gap = (1.0 + p * mu * tau) ** (-k) - np.exp(-p * mu * trace.t)
    return p * trace.energy[0] * float(np.max(gap)) + energy_slack(trace)


def weighted_slack(trace: FlowTrace, mu: float) -> float:
    """Budget for monotonicity of ``exp(p mu t_k) p E_k``.

    With ``rho = exp(p mu tau) / (1 + p mu tau)`` the discrete decay bound
    gives ``W_k - W_j <= W_j (rho^(k-j) - 1)`` and ``W_j <= p E_0 rho^j``.
    """
    p, tau = trace.p, trace.tau
    N = len(trace) - 1
    log_rho = p * mu * tau - math.log1p(p * mu * tau)
    growth = math.exp(N * log_rho)
    return p * trace.energy[0] * growth * (growth - 1.0) + energy_slack(trace)


# -- checks ----------------------------------------------------------------


def check_energy_identity(trace: FlowTrace, step_tol: float | None = None) -> CheckReport:
    """Discrete energy inequality for every prefix, plus ``D_k >= 0``.

    Violation at prefix ``j`` is ``(sum_{k<=j} D_k + E_j - E_0) / j``, compared
    with the per-step slack; a negative dissipation is a violation of size
    ``-D_k``.
    """
    slack = energy_slack(trace, step_tol)
    D = trace.dissipation
    E = trace.energy
    j = np.arange(1, len(trace))
    if j.size == 0:
        return CheckReport("energy_identity", True, -math.inf, slack, None)
    excess = (np.cumsum(D[1:]) + E[1:] - E[0]) / j
    negative = -D[1:]
    v = np.maximum(excess, negative)
    rep = _report("energy_identity", v, slack, locations=list(j))
    gap = E[0] - (np.cumsum(D[1:]) + E[1:])
    rep.details["min_gap"] = float(np.min(gap))
    rep.details["max_gap"] = float(np.max(gap))
    if np.any(negative > slack):
        k = int(j[np.argmax(negative)])
        rep.note = f"negative dissipation at step {k}"
    return rep


def check_rayleigh_monotone(trace: FlowTrace, slack: float) -> CheckReport:
    """``R_k <= R_{k-1} + slack``; stops (and says so) at the first zero-mass step."""
    M = trace.mass
    R = trace.rayleigh
    zero = np.flatnonzero(~(M > 0))
    stop = len(trace) if zero.size == 0 else int(zero[0])
    inc = R[1:stop] - R[: stop - 1] if stop > 1 else np.array([])
    rep = _report("rayleigh_monotone", inc, slack, locations=list(range(1, stop)))
    if stop < len(trace):
        rep.note = f"zero mass from step {stop}; later steps skipped"
    return rep


def weighted_energy(trace: FlowTrace, mu: float) -> np.ndarray:
    p = trace.p
    pE = p * trace.energy
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(pE > 0, np.exp(p * mu * trace.t + np.log(np.where(pE > 0, pE, 1.0))), 0.0)


def check_weighted_seminorm(trace: FlowTrace, mu: float, slack: float) -> CheckReport:
    """``exp(p mu t_k) p E_k`` nonincreasing and ``p E_k <= exp(-p mu t_k) p E_0``.

    Monotonicity is checked against the running minimum, so slow drift over
    many steps counts, not just single-step increases.
    """
    p = trace.p
    W = weighted_energy(trace, mu)
    running_min = np.minimum.accumulate(W)
    drift = W[1:] - running_min[:-1]
    pE = p * trace.energy
    bound_excess = pE[1:] - np.exp(-p * mu * trace.t[1:]) * pE[0]
    v = np.maximum(drift, bound_excess)
    rep = _report("weighted_seminorm", v, slack, locations=list(range(1, len(trace))))
    rep.details["worst_drift"] = float(np.max(drift)) if drift.size else -math.inf
    rep.details["worst_exp_excess"] = float(np.max(bound_excess)) if drift.size else -math.inf
    return rep


def richardson_slack(coarse: FlowTrace, fine: FlowTrace, mu: float) -> tuple:
    """Slack ``C * tau`` for the weighted check, calibrated from runs at ``tau`` and ``tau / 2``.

    Richardson extrapolation of a first-order quantity ``Q`` gives the bias
    estimates ``2 (Q_tau - Q_tau/2)`` at ``tau`` and ``Q_tau - Q_tau/2`` at
    ``tau / 2``; ``C`` is the largest of these over the shared time nodes and
    over both monitored quantities (the weighted energy and ``p E``).
    Returns ``(slack_coarse, slack_fine, C)``.
    """
    if not math.isclose(coarse.tau, 2.0 * fine.tau, rel_tol=1e-9):
        raise ValueError(f"fine run must halve tau: {coarse.tau} vs {fine.tau}")
    if len(fine) != 2 * len(coarse) - 1:
        raise ValueError("runs must cover the same horizon")
    bias = 0.0
    for q in (weighted_energy, lambda tr, m: tr.p * tr.energy):
        qc, qf = q(coarse, mu), q(fine, mu)[::2]
        bias = max(bias, float(np.max(np.abs(qc - qf))))
    C = 2.0 * bias / coarse.tau
    return C * coarse.tau, C * fine.tau, C


def check_discrete_decay(trace: FlowTrace, mu: float, slack: float | None = None) -> CheckReport:
    """Exact discrete counterpart: ``(1 + p mu tau)^k E_k`` is nonincreasing."""
    p, tau = trace.p, trace.tau
    slack = energy_slack(trace) if slack is None else slack
    E = trace.energy
    factor = 1.0 + p * mu * tau
    # E_k (1 + p mu tau) <= E_{k-1}, scaled back to the size of E_{k-1}
    v = E[1:] * factor - E[:-1]
    return _report("discrete_decay", v, slack, locations=list(range(1, len(trace))))


def check_max_principle(trace: FlowTrace, slack: float) -> CheckReport:
    """``sup|v^k|`` nonincreasing in ``k``."""
    S = trace.sup_norm
    return _report("max_principle", S[1:] - S[:-1], slack, locations=list(range(1, len(trace))))


def fit_decay_rate(trace: FlowTrace, window: tuple) -> float:
    """Least-squares slope of ``log M_k`` against ``t_k`` on ``window``, divided by ``-p``."""
    lo, hi = window
    sel = (trace.t >= lo) & (trace.t <= hi)
    if np.count_nonzero(sel) < 5:
        raise InsufficientPointsError(f"only {np.count_nonzero(sel)} samples in window {window}; need 5")
    M = trace.mass[sel]
    if np.any(~(M > 0)):
        raise ZeroMassError("zero mass inside the fitting window")
    slope = np.polyfit(trace.t[sel], np.log(M), 1)[0]
    return float(-slope / trace.p)


def check_large_time_limit(states, trace: FlowTrace, gs, tol: float, zero_tol: float = 1e-8) -> CheckReport:
    """Distance between the normalized rescaled final state and ``gs.psi``.

    ``u = exp(mu t) v`` at the last stored state is normalized to unit
    ``L^p`` norm and compared with ``+psi`` or ``-psi``, whichever is closer.
    Passes iff the ``L^p`` distance is at most ``tol``; the max-norm distance is
    reported in ``details``. A vanishing limit is reported, not failed.
    """
    grid = gs.psi.grid
    p = grid.p
    k_last = int(trace.state_steps[-1])
    t_last = float(trace.t[k_last])
    v = states[-1].values
    g_norm = lp_values(grid, states[0].values) ** (1.0 / p)
    u = math.exp(gs.mu * t_last) * v
    u_norm = lp_values(grid, u) ** (1.0 / p)
    if not u_norm > zero_tol * max(g_norm, 1e-300):
        return CheckReport(
            "large_time_limit",
            True,
            0.0,
            tol,
            k_last,
            informational=True,
            note="limit-is-zero: rescaled solution vanishes",
            details={"rescaled_norm": u_norm},
        )
    u_hat = u / u_norm
    psi = gs.psi.values
    sign = 1.0 if np.dot(u_hat, psi) >= 0 else -1.0
    diff = u_hat - sign * psi
    dist = lp_values(grid, diff) ** (1.0 / p)
    sup = float(np.max(np.abs(diff)))
    R = trace.rayleigh[np.isfinite(trace.rayleigh)]
    tail = R[-max(len(R) // 10, 2):] if R.size >= 2 else R
    stagnation = float(np.max(tail) - np.min(tail)) if tail.size else math.nan
    rep = CheckReport("large_time_limit", dist <= tol, dist, tol, k_last)
    rep.details.update(sup_distance=sup, sign=sign, rayleigh_spread_last_decade=stagnation)
    rep.note = f"sup distance {sup:.3e}, limit sign {'+' if sign > 0 else '-'}"
    return rep


def check_comparison(states_a, states_b, slack: float) -> CheckReport:
    """Pointwise ordering ``v_A^k <= v_B^k + slack`` for every step."""
    if np.any(states_a[0].values > states_b[0].values):
        raise PreconditionError("initial data are not ordered: g_A > g_B somewhere")
    if len(states_a) != len(states_b):
        raise PreconditionError("flows have different numbers of states")
    v = [float(np.max(a.values - b.values)) for a, b in zip(states_a, states_b)]
    rep = _report("comparison", v, slack)
    rep.note = "discrete analogue"
    return rep


def check_barrier(states, psi: Field, slack: float) -> CheckReport:
    """``|v^k_i| <= psi_i + slack`` for every step and cell."""
    if np.any(np.abs(states[0].values) > psi.values):
        raise PreconditionError("|g| <= psi fails for the initial data")
    v = [float(np.max(np.abs(s.values) - psi.values)) for s in states]
    rep = _report("barrier", v, slack)
    rep.note = "discrete analogue"
    return rep


def check_interpolant_gap(states, tau: float, times=None) -> CheckReport:
    """``lp_norm_p(step - linear interpolant) <= tau^(p-1) seminorm_p(g) / p`` at sampled times.

    ``states`` must be the full sequence ``v^0..v^N``. By default 50 steps are
    spread evenly over the run and each is sampled a quarter of the way in,
    where the two interpolants differ (they agree at the nodes).
    """
    grid = states[0].grid
    p = grid.p
    N = len(states) - 1
    if times is None:
        steps = np.unique(np.linspace(1, N, 50).round().astype(int))
        times = tau * (steps - 0.75)
    bound = tau ** (p - 1.0) * seminorm_values(grid, states[0].values) / p
    gaps = [
        lp_values(grid, interpolate(states, t, "step", tau).values - interpolate(states, t, "linear", tau).values)
        for t in times
    ]
    rep = _report("interpolant_gap", np.array(gaps) - bound, 0.0, locations=[float(t) for t in times])
    rep.details["bound"] = bound
    return rep


@dataclass
class HolderEstimate:
    """Fitted exponent and the oscillation table ``osc[point, level]``."""

    alpha_fit: float
    oscillations: np.ndarray
    cylinders: list

    @property
    def applicable(self) -> bool:
        return math.isfinite(self.alpha_fit)


def _cylinder_osc(states, steps, grid, tau, cyl: Cylinder):
    x = grid.centers
    if cyl.x0 - cyl.r < grid.a or cyl.x0 + cyl.r > grid.b:
        raise CylinderDomainError(f"ball B_{cyl.r:g}({cyl.x0:g}) leaves the domain")
    if cyl.t_start < 0 or cyl.t0 > steps[-1] * tau * (1 + 1e-12):
        raise CylinderDomainError(f"time window ({cyl.t_start:g}, {cyl.t0:g}] leaves the computed range")
    cells = np.abs(x - cyl.x0) < cyl.r
    if not np.any(cells):
        raise SpatialResolutionError(f"no cell center within {cyl.r:g} of {cyl.x0:g}")
    # step interpolant: v^k is the value on (tau_{k-1}, tau_k]
    k_lo = math.floor(cyl.t_start / tau + 1e-9) + 1
    k_hi = math.ceil(cyl.t0 / tau - 1e-9)
    inside = [i for i, k in enumerate(steps) if k_lo <= k <= k_hi]
    if len(inside) < 3:
        raise TimeResolutionError(
            f"only {len(inside)} stored steps in ({cyl.t_start:g}, {cyl.t0:g}]; need 3"
        )
    block = np.array([states[i].values[cells] for i in inside])
    return float(block.max() - block.min())


def estimate_holder(states, params: FlowParams, cylinders, levels: int = 4, state_steps=None) -> HolderEstimate:
    """Oscillation over dyadic cylinders ``Q^-_{r 2^-j}`` for ``j = 0..levels``.

    ``alpha_fit`` is the pooled least-squares slope of ``log2 osc`` against
    ``-j`` (one intercept per base point); NaN when every oscillation is zero.
    """
    steps = list(range(len(states))) if state_steps is None else [int(k) for k in state_steps]
    grid = states[0].grid
    tau = params.tau
    table = np.array(
        [[_cylinder_osc(states, steps, grid, tau, c.shrink(j)) for j in range(levels + 1)] for c in cylinders]
    )
    xs, ys = [], []
    for row in table:
        ok = row > 0
        if np.count_nonzero(ok) >= 2:
            j = -np.arange(levels + 1)[ok].astype(float)
            y = np.log2(row[ok])
            xs.append(j - j.mean())
            ys.append(y - y.mean())
    if not xs:
        return HolderEstimate(math.nan, table, list(cylinders))
    xc = np.concatenate(xs)
    yc = np.concatenate(ys)
    alpha = float(np.dot(xc, yc) / np.dot(xc, xc))
    return HolderEstimate(alpha, table, list(cylinders))
