"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Tolerances are fixed here and never adjusted per run. Run with ``pytest -v``;
the verdict lines appear in the terminal summary under "acceptance criteria".
"""

import functools
import itertools
import math

import numpy as np
import pytest

from fracflow import diagnostics as dg
from fracflow.eigen import dense_p2_oracle, ground_state_direct, ground_state_flow
from fracflow.grid import Cylinder, Grid1D
from fracflow.io import box, bump
from fracflow.operator import Field, apply_operator, seminorm_p
from fracflow.stepper import FlowParams, run_flow

from conftest import random_field, step_tol_for

CI_P = (2.0, 3.0)
CI_S = (0.3, 0.5, 0.8)
CI_N_CELLS = (32, 64)
CI_STEPS = (100, 400)
CI_SEEDS = range(5)
RAYLEIGH_SLACK = 1e-8


@functools.lru_cache(maxsize=None)
def ground_state(p, s, n):
    g = Grid1D(0.0, 1.0, n, s, p)
    if p == 2.0:
        return dense_p2_oracle(g)
    return ground_state_direct(g, Field(g, np.sin(np.pi * g.centers)), 1e-12)


@functools.lru_cache(maxsize=None)
def ci_flow(p, s, n, N, seed):
    g = Grid1D(0.0, 1.0, n, s, p)
    return run_flow(random_field(g, 1000 * seed + n), FlowParams(p, s, 1.0, N, step_tol_for(p)))


@functools.lru_cache(maxsize=None)
def gs_flow(p, N, n=64, s=0.5):
    gs = ground_state(p, s, n)
    return run_flow(gs.psi, FlowParams(p, s, 1.0, N, step_tol_for(p)))


def ci_matrix():
    return itertools.product(CI_P, CI_S, CI_N_CELLS, CI_STEPS, CI_SEEDS)


def test_criterion_01_oracle_equivalence(verdict):
    worst = 0.0
    for s in (0.3, 0.5, 0.8):
        g = Grid1D(0.0, 1.0, 64, s, 2.0)
        oracle = dense_p2_oracle(g)
        seed = Field(g, np.sin(np.pi * g.centers))
        flow = ground_state_flow(seed, FlowParams(2.0, s, 10.0, 1, 1e-12), 1e-11)
        direct = ground_state_direct(g, seed, 1e-11)
        for gs in (flow, direct):
            worst = max(worst, abs(gs.lam - oracle.lam) / oracle.lam)
    ok = worst <= 1e-6
    verdict(1, ok, f"max relative lambda error {worst:.2e} (tol 1e-6)")
    assert ok


def test_criterion_02_gradient_consistency(verdict):
    worst = 0.0
    rng = np.random.default_rng(2024)
    for p in (2.0, 2.5, 3.0):
        for _ in range(100):
            n = int(rng.integers(4, 17))
            s = float(rng.uniform(0.1, 0.9))
            g = Grid1D(0.0, 1.0, n, s, p)
            u = rng.normal(size=n)
            grad = g.h * apply_operator(Field(g, u)).values
            eps = 1e-5 * max(1.0, float(np.max(np.abs(u))))
            fd = np.empty(n)
            for i in range(n):
                e = np.zeros(n)
                e[i] = eps
                fd[i] = (seminorm_p(Field(g, u + e)) - seminorm_p(Field(g, u - e))) / (2 * eps * p)
            worst = max(worst, float(np.linalg.norm(fd - grad) / np.linalg.norm(grad)))
    ok = worst <= 1e-6
    verdict(2, ok, f"max relative gradient error {worst:.2e} over 300 fields (tol 1e-6)")
    assert ok


def test_criterion_03_discrete_energy_inequality(verdict):
    failures = []
    for p, s, n, N, seed in ci_matrix():
        _, trace = ci_flow(p, s, n, N, seed)
        rep = dg.check_energy_identity(trace, step_tol_for(p))
        if not rep.passed:
            failures.append(((p, s, n, N, seed), rep.line()))
    ok = not failures
    verdict(3, ok, f"{120 - len(failures)}/120 CI flows within n*stepTol*(1+|g|_inf)")
    assert ok, failures


def test_criterion_04_rayleigh_monotone(verdict):
    failures = []
    worst = -math.inf
    for p, s, n, N, seed in ci_matrix():
        _, trace = ci_flow(p, s, n, N, seed)
        rep = dg.check_rayleigh_monotone(trace, RAYLEIGH_SLACK)
        worst = max(worst, rep.worst_violation)
        if not rep.passed:
            failures.append(((p, s, n, N, seed), rep.line()))
    # targeted sign-changing two-bump data
    for p in CI_P:
        g = Grid1D(0.0, 1.0, 64, 0.5, p)
        x = g.centers
        two = Field(g, bump(x, 0.3, 0.15, 1.0) + bump(x, 0.7, 0.15, -0.8))
        _, trace = run_flow(two, FlowParams(p, 0.5, 1.0, 400, step_tol_for(p)))
        rep = dg.check_rayleigh_monotone(trace, RAYLEIGH_SLACK)
        worst = max(worst, rep.worst_violation)
        if not rep.passed:
            failures.append((("two-bump", p), rep.line()))
    ok = not failures
    verdict(4, ok, f"largest per-step increase {worst:.2e} (slack 1e-8), 120 CI flows + 2 two-bump flows")
    assert ok, failures


def explicit_solution_error(p, N):
    gs = ground_state(p, 0.5, 64)
    states, trace = gs_flow(p, N)
    psi = gs.psi.values
    errs = [np.max(np.abs(v.values - math.exp(-gs.mu * t) * psi)) for v, t in zip(states, trace.t)]
    return max(errs) / np.max(np.abs(psi)), errs[-1] / np.max(np.abs(psi))


def test_criterion_05_explicit_solution(verdict):
    ok = True
    parts = []
    for p in CI_P:
        e200, _ = explicit_solution_error(p, 200)
        e400, end400 = explicit_solution_error(p, 400)
        ratio = e200 / e400
        halves = 1.8 <= ratio <= 2.2
        small = e400 <= 1e-3
        ok = ok and halves and small
        parts.append(
            f"p={p:g}: max err N=200 {e200:.2e}, N=400 {e400:.2e} (ratio {ratio:.2f}, C={e400 * 400:.3f}), "
            f"err at t=1 {end400:.2e}"
        )
    verdict(5, ok, "; ".join(parts) + " (tol: ratio in [1.8, 2.2], N=400 max err <= 1e-3)")
    assert ok, parts


def test_criterion_06_decay_rate(verdict):
    parts, ok = [], True
    for p in CI_P:
        gs = ground_state(p, 0.5, 64)
        _, trace = gs_flow(p, 400)
        mu_fit = dg.fit_decay_rate(trace, (0.5, 1.0))
        rel = abs(mu_fit - gs.mu) / gs.mu
        ok = ok and rel <= 0.02
        parts.append(f"p={p:g}: rel err {rel:.2e}")
    verdict(6, ok, "; ".join(parts) + " at N=400 (tol 0.02)")
    assert ok


def test_criterion_07_large_time_limit(verdict):
    g = Grid1D(0.0, 1.0, 64, 0.5, 2.0)
    gs = dense_p2_oracle(g)
    # run until exp(-mu t) is about 1e-3
    T = round(math.log(1e3) / gs.mu, 2)
    N = int(round(T / 0.001))
    g0 = Field(g, bump(g.centers, 0.4, 0.3, 1.0))
    states, trace = run_flow(g0, FlowParams(2.0, 0.5, T, N, 1e-10), max_states=2, stride=N)
    rep = dg.check_large_time_limit(states, trace, gs, 1e-2)
    sup = rep.details["sup_distance"]
    ok = rep.passed and sup <= 5e-2 and not rep.informational
    verdict(7, ok, f"L^p distance {rep.worst_violation:.2e} (tol 1e-2), max-norm {sup:.2e} (tol 5e-2) at T={T}")
    assert ok


def test_criterion_08_max_principle_and_comparison(verdict):
    rng = np.random.default_rng(8)
    failures = []
    worst = -math.inf
    for i in range(20):
        p = CI_P[i % 2]
        s = CI_S[i % 3]
        tol = step_tol_for(p)
        g = Grid1D(0.0, 1.0, 32, s, p)
        gb = rng.uniform(-1, 1, g.n)
        kind = i % 3
        if kind == 0:
            ga = gb - rng.uniform(0.0, 0.5, g.n)
        elif kind == 1:
            ga = gb - 0.3
        else:
            gb = np.abs(gb)
            ga = 0.5 * gb
        params = FlowParams(p, s, 0.5, 100, tol)
        sa, ta = run_flow(Field(g, ga), params)
        sb, tb = run_flow(Field(g, gb), params)
        reps = [
            dg.check_comparison(sa, sb, 10 * tol),
            dg.check_max_principle(ta, 10 * tol),
            dg.check_max_principle(tb, 10 * tol),
        ]
        worst = max(worst, max(r.worst_violation for r in reps))
        failures += [(i, r.line()) for r in reps if not r.passed]
    ok = not failures
    verdict(8, ok, f"20 ordered pairs, worst violation {worst:.2e} (slack 10*stepTol)")
    assert ok, failures


def test_criterion_09_barrier(verdict):
    rng = np.random.default_rng(9)
    failures = []
    worst = -math.inf
    for p in CI_P:
        for s in CI_S:
            gs = ground_state(p, s, 64)
            tol = step_tol_for(p)
            params = FlowParams(p, s, 1.0, 200, tol)
            for g0 in (gs.psi, 0.5 * gs.psi, Field(gs.psi.grid, gs.psi.values * rng.uniform(-1, 1, 64))):
                states, _ = run_flow(g0, params)
                rep = dg.check_barrier(states, gs.psi, 10 * tol)
                worst = max(worst, rep.worst_violation)
                if not rep.passed:
                    failures.append(((p, s), rep.line()))
    ok = not failures
    verdict(9, ok, f"18 flows with |g| <= psi, worst excess {worst:.2e} (slack 10*stepTol)")
    assert ok, failures


def test_criterion_10_interpolant_gap(verdict):
    failures = []
    worst = -math.inf
    for p, s, n, N, seed in itertools.product(CI_P, CI_S, (32,), (100,), range(2)):
        states, trace = ci_flow(p, s, n, N, seed)
        rep = dg.check_interpolant_gap(states, trace.tau)
        worst = max(worst, rep.worst_violation / rep.details["bound"] + 1.0)
        if not rep.passed:
            failures.append(((p, s, seed), rep.line()))
    ok = not failures
    verdict(10, ok, f"12 flows x 50 times, max gap/bound {worst:.3e} (exact inequality, must be <= 1)")
    assert ok, failures


def test_criterion_11_holder_oscillation(verdict):
    parts, ok = [], True
    for p, T, N in ((2.0, 0.25, 250), (3.0, 0.4, 400)):
        g = Grid1D(0.0, 1.0, 128, 0.5, p)
        rough = Field(g, box(g.centers, 0.5, 0.2, 1.0))
        params = FlowParams(p, 0.5, T, N, step_tol_for(p))
        states, _ = run_flow(rough, params)
        cyl = [Cylinder.scaled(x, T, 0.2, 0.5, p) for x in (0.3, 0.4, 0.5, 0.6, 0.7)]
        est = dg.estimate_holder(states, params, cyl, levels=4)
        monotone = bool(np.all(np.diff(est.oscillations, axis=1) <= 0))
        ok = ok and est.alpha_fit > 0 and monotone
        parts.append(f"p={p:g}: alpha_fit {est.alpha_fit:.3f}, table nonincreasing {monotone}")
    verdict(11, ok, "; ".join(parts))
    assert ok


def test_criterion_12_exp_bound_and_weighted_monotone(verdict):
    parts, ok = [], True
    for p in CI_P:
        gs = ground_state(p, 0.5, 64)
        g = gs.psi.grid
        flows = {
            "ground-state": (gs_flow(p, 200)[1], gs_flow(p, 400)[1]),
            "random": tuple(
                run_flow(random_field(g, 12), FlowParams(p, 0.5, 1.0, N, step_tol_for(p)))[1] for N in (200, 400)
            ),
        }
        for name, (coarse, fine) in flows.items():
            sc, sf, C = dg.richardson_slack(coarse, fine, gs.mu)
            rc = dg.check_weighted_seminorm(coarse, gs.mu, sc)
            rf = dg.check_weighted_seminorm(fine, gs.mu, sf)
            ok = ok and rc.passed and rf.passed
            parts.append(
                f"p={p:g} {name}: C={C:.3g}, worst/slack {rc.worst_violation:.2e}/{sc:.2e} (N=200), "
                f"{rf.worst_violation:.2e}/{sf:.2e} (N=400)"
            )
    verdict(12, ok, "; ".join(parts))
    assert ok
