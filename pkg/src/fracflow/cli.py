"""``fracflow`` command line: ``flow``, ``eigen`` and ``diagnose`` subcommands.

Exit codes: 0 success, 1 a diagnose check failed, 2 usage or config error,
3 solver failure, 4 I/O failure. Every error path writes ``ERROR <code>`` as
the first line on stderr, followed by prose.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .eigen import METHODS, GroundState, dense_p2_oracle, ground_state_direct, ground_state_flow
from .errors import (
    ConfigError,
    FactorizationError,
    FracFlowError,
    InnerSolverStall,
    InsufficientPointsError,
    MissingArtifactError,
    NonConvergenceError,
    PreconditionError,
    VersionMismatchError,
    ZeroCollapseError,
    ZeroMassError,
)
from .io import (
    RunConfig,
    atomic_write,
    box,
    bump,
    fmt,
    parse_config,
    read_manifest,
    read_snapshot,
    read_trace,
    reports_csv,
    write_manifest,
    write_snapshot,
    write_trace,
)
from .operator import Field
from .stepper import run_flow

THREADS_ENV = "FRACFLOW_THREADS"
EXIT_OK, EXIT_CHECKS, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("fracflow")


class UsageError(FracFlowError):
    code = "usage"


def _fail(code: str, message: str, exit_code: int) -> int:
    print(f"ERROR {code}", file=sys.stderr)
    print(message, file=sys.stderr)
    return exit_code


def _exit_for(exc: Exception) -> int:
    if isinstance(exc, (InnerSolverStall, NonConvergenceError, ZeroCollapseError, FactorizationError)):
        return EXIT_SOLVER
    if isinstance(exc, (MissingArtifactError, VersionMismatchError)):
        return EXIT_IO
    return EXIT_USAGE


# -- initial data ------------------------------------------------------------


def ground_state(config: RunConfig, tol: float = 1e-11) -> GroundState:
    grid = config.grid()
    if grid.p == 2.0:
        return dense_p2_oracle(grid)
    seed = Field(grid, np.sin(np.pi * (grid.centers - grid.a) / grid.length))
    return ground_state_direct(grid, seed, tol)


def initial_field(config: RunConfig) -> Field:
    grid = config.grid()
    x = grid.centers
    ic = config.initial
    shape = ic["shape"]
    if shape == "zero":
        return Field.zeros(grid)
    if shape == "bump":
        return Field(grid, bump(x, ic["center"], ic["width"], ic["height"]))
    if shape == "box":
        return Field(grid, box(x, ic["center"], ic["width"], ic["height"]))
    if shape == "two-bump":
        vals = sum(bump(x, c, w, a) for c, w, a in zip(ic["centers"], ic["widths"], ic["heights"]))
        return Field(grid, vals)
    if shape in ("ground-state", "scaled-ground-state"):
        psi = ground_state(config).psi
        return psi * float(ic.get("scale", 1.0)) if shape == "scaled-ground-state" else psi
    if shape == "file":
        u, _ = read_snapshot(ic["path"])
        if u.grid.n != grid.n or u.grid.a != grid.a or u.grid.b != grid.b:
            raise ConfigError([f"initial.path: snapshot grid (n={u.grid.n}) does not match domain"])
        return Field(grid, u.values)
    raise ConfigError([f"initial.shape: unknown shape {shape!r}"])


# -- commands ----------------------------------------------------------------


def _base_manifest(command: str, config: RunConfig, deterministic: bool) -> dict:
    m = {
        "command": command,
        "config": config.as_dict(),
        "version": __version__,
        "deterministic": deterministic,
    }
    if not deterministic:
        m["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return m


def cmd_flow(config: RunConfig, out: Path, deterministic: bool = False) -> int:
    g = initial_field(config)
    params = config.params()
    status, error = "complete", None
    try:
        states, trace = run_flow(g, params, max_states=config.max_states, stride=config.stride)
    except InnerSolverStall as exc:
        states, trace = exc.states, exc.trace
        status, error = "partial", {"code": exc.code, "message": str(exc), "step": exc.step}
    artifacts = []
    if "csv" in config.formats:
        write_trace(out / "trace.csv", trace)
        artifacts.append({"path": "trace.csv", "kind": "trace", "steps": len(trace)})
    steps = [int(k) for k in trace.state_steps]
    if config.stride > 1:
        keep = [i for i, k in enumerate(steps) if k % config.stride == 0 or i == len(steps) - 1]
        states = [states[i] for i in keep]
        steps = [steps[i] for i in keep]
    if "txt" in config.formats:
        for k, v in zip(steps, states):
            name = f"states/state_{k:06d}.txt"
            write_snapshot(out / name, v, float(trace.t[k]))
            artifacts.append({"path": name, "kind": "state", "step": k, "t": float(trace.t[k])})
    manifest = _base_manifest("flow", config, deterministic)
    manifest.update(
        status=status,
        error=error,
        grid={"a": config.a, "b": config.b, "n": config.n, "p": config.p, "s": config.s},
        params={"T": config.T, "N": config.N, "tau": params.tau, "step_tol": config.step_tol},
        state_steps=steps,
        artifacts=artifacts,
    )
    write_manifest(out / "manifest.json", manifest)
    if error is not None:
        return _fail(error["code"], error["message"] + " (partial outputs written)", EXIT_SOLVER)
    return EXIT_OK


def cmd_eigen(config: RunConfig, out: Path, method: str, deterministic: bool = False) -> int:
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    if method == "oracle-p2" and config.p != 2.0:
        raise UsageError(f"method oracle-p2 requires p = 2, got p = {config.p:g}")
    grid = config.grid()
    seed = Field(grid, np.sin(np.pi * (grid.centers - grid.a) / grid.length))
    error = None
    try:
        if method == "oracle-p2":
            gs = dense_p2_oracle(grid)
        elif method == "direct":
            gs = ground_state_direct(grid, seed, config.eigen_conv_tol)
        else:
            gs = ground_state_flow(seed, config.eigen_params(), config.eigen_conv_tol, config.eigen_max_iter)
    except NonConvergenceError as exc:
        gs, error = exc.best, exc
    write_snapshot(out / "ground_state.txt", gs.psi, 0.0)
    summary = (
        "method,lambda,mu,residual,iterations,converged\n"
        f"{gs.method},{fmt(gs.lam)},{fmt(gs.mu)},{fmt(gs.residual)},{gs.iterations},{str(error is None).lower()}\n"
    )
    atomic_write(out / "eigen_summary.csv", summary)
    manifest = _base_manifest("eigen", config, deterministic)
    manifest.update(
        status="complete" if error is None else "partial",
        method=method,
        error=None if error is None else {"code": error.code, "message": str(error)},
        artifacts=[
            {"path": "ground_state.txt", "kind": "ground-state"},
            {"path": "eigen_summary.csv", "kind": "summary"},
        ],
    )
    write_manifest(out / "manifest.json", manifest)
    if error is not None:
        return _fail(error.code, f"{error} (best iterate saved)", EXIT_SOLVER)
    return EXIT_OK


def load_flow(artifacts: Path):
    """Read a flow directory back: ``(manifest, states, trace)``."""
    manifest = read_manifest(artifacts)
    if manifest.get("command") != "flow":
        raise MissingArtifactError(f"{artifacts} does not hold flow output")
    grid_meta, params = manifest["grid"], manifest["params"]
    meta = {
        "p": grid_meta["p"],
        "s": grid_meta["s"],
        "n": grid_meta["n"],
        "tau": params["tau"],
        "step_tol": params["step_tol"],
        "state_steps": manifest["state_steps"],
    }
    trace = read_trace(artifacts / "trace.csv", meta)
    if len(trace) == 0:
        raise MissingArtifactError(f"{artifacts / 'trace.csv'} has no rows")
    # a truncated trace only vouches for the states it still covers
    kept = [k for k in meta["state_steps"] if k < len(trace)]
    if len(kept) < len(meta["state_steps"]):
        log.warning("trace has %d rows; ignoring states past step %d", len(trace), len(trace) - 1)
        trace.state_steps = np.asarray(kept, dtype=int)
    states = []
    grid = None
    for art in manifest["artifacts"]:
        if art["kind"] == "state" and art["step"] < len(trace):
            u, _ = read_snapshot(artifacts / art["path"], grid)
            grid = u.grid
            states.append(u)
    return manifest, states, trace


def _guarded(name, fn):
    try:
        return fn()
    except (InsufficientPointsError, ZeroMassError, PreconditionError) as exc:
        # not evaluated: informational, and ``passed`` stays consistent with a NaN violation
        return dg.CheckReport(name, False, math.nan, math.nan, None, informational=True, note=f"{exc.code}: {exc}")


def run_checks(config: RunConfig, states, trace) -> list:
    gs = ground_state(config)
    mu = gs.mu
    step_tol = trace.step_tol
    N = len(trace) - 1
    reports = [
        dg.check_energy_identity(trace, step_tol),
        dg.check_rayleigh_monotone(trace, config.rayleigh_slack),
        dg.check_max_principle(trace, 10 * step_tol),
        dg.check_discrete_decay(trace, mu),
        dg.check_weighted_seminorm(trace, mu, max(dg.weighted_slack(trace, mu), dg.exp_decay_slack(trace, mu))),
    ]
    full = len(states) == N + 1 and list(trace.state_steps) == list(range(N + 1))
    if full and states:
        reports.append(dg.check_interpolant_gap(states, trace.tau))
        reports.append(_guarded("barrier", lambda: _barrier(states, gs, step_tol)))

    def decay():
        T = float(trace.t[-1])
        window = config.decay_window or (0.5 * T, T)
        mu_fit = dg.fit_decay_rate(trace, window)
        rel = abs(mu_fit - mu) / mu
        return dg.CheckReport(
            "decay_rate", True, rel, 0.02, None, informational=True,
            note=f"mu_fit={mu_fit:.6g} mu={mu:.6g}",
        )

    reports.append(_guarded("decay_rate", decay))
    if states:
        lt = dg.check_large_time_limit(states, trace, gs, config.limit_tol)
        lt.informational = True
        reports.append(lt)
    return reports


def _barrier(states, gs, step_tol):
    """Barrier against the smallest multiple of the ground state above ``|g|``."""
    psi = gs.psi.values
    g = np.abs(states[0].values)
    if np.any((psi <= 0) & (g > 0)):
        raise PreconditionError("initial data nonzero where the ground state vanishes")
    pos = psi > 0
    c = float(np.max(g[pos] / psi[pos])) if np.any(pos) else 0.0
    return dg.check_barrier(states, gs.psi * max(c, 0.0), 10 * step_tol)


def cmd_diagnose(config: RunConfig, artifacts: Path, out: Path, deterministic: bool = False) -> int:
    _, states, trace = load_flow(artifacts)
    reports = run_checks(config, states, trace)
    atomic_write(out / "checks.csv", reports_csv(reports))
    ok = all(r.passed for r in reports if not r.informational)
    lines = [r.line() for r in reports]
    lines.append(f"overall: {'PASS' if ok else 'FAIL'}")
    atomic_write(out / "summary.txt", "\n".join(lines) + "\n")
    manifest = _base_manifest("diagnose", config, deterministic)
    manifest.update(
        status="complete",
        source=str(artifacts) if not deterministic else None,
        passed=ok,
        artifacts=[{"path": "checks.csv", "kind": "checks"}, {"path": "summary.txt", "kind": "summary"}],
    )
    write_manifest(out / "manifest.json", manifest)
    print("\n".join(lines))
    if not ok:
        failed = ", ".join(r.name for r in reports if not r.informational and not r.passed)
        return _fail("check-failed", f"failed checks: {failed}", EXIT_CHECKS)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fracflow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("flow", "eigen", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (default: output.directory)")
        p.add_argument("--deterministic", action="store_true", help="single thread, no timestamps")
        if name == "eigen":
            p.add_argument("--method", default="direct", help=f"one of {', '.join(METHODS)}")
        if name == "diagnose":
            p.add_argument("--artifacts", type=Path, required=True, help="directory written by 'flow'")
    return parser


def _thread_limit(deterministic: bool):
    raw = os.environ.get(THREADS_ENV)
    limit = 1 if deterministic else None
    if raw:
        try:
            limit = max(1, int(raw))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if limit is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=limit)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc.code, str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = parse_config(args.config)
        out = args.out if args.out is not None else Path(config.output_dir)
        with _thread_limit(args.deterministic):
            if args.command == "flow":
                return cmd_flow(config, out, args.deterministic)
            if args.command == "eigen":
                return cmd_eigen(config, out, args.method, args.deterministic)
            return cmd_diagnose(config, args.artifacts, out, args.deterministic)
    except ConfigError as exc:
        return _fail(exc.code, "\n".join(exc.errors), EXIT_USAGE)
    except FracFlowError as exc:
        return _fail(exc.code, str(exc), _exit_for(exc))
    except OSError as exc:
        return _fail("io-error", str(exc), EXIT_IO)
    except ValueError as exc:
        return _fail("io-error", f"malformed artifact: {exc}", EXIT_IO)
