"""Run configuration and on-disk formats (snapshots, trace CSV, manifest, reports).

Config files are line oriented::

    # comment
    domain.a = 0
    domain.b = 1
    domain.n = 64
    physics.p = 2
    physics.s = 0.5
    time.T = 1
    time.N = 400          # or time.tau, never both

Everything else has a default; see ``KEYS``. All floats are written with 17
significant digits so that a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingArtifactError, VersionMismatchError
from .grid import Grid1D
from .operator import Field
from .stepper import FlowParams, FlowTrace

SCHEMA = "fracflow-run"
SCHEMA_VERSION = 1

SHAPES = ("zero", "bump", "box", "ground-state", "scaled-ground-state", "two-bump", "file")
TRACE_COLUMNS = ("k", "t", "energy", "mass", "rayleigh", "dissipation", "inner_residual", "sup_norm")

# key -> (parser, required)
KEYS = {
    "domain.a": (float, True),
    "domain.b": (float, True),
    "domain.n": (int, True),
    "physics.p": (float, True),
    "physics.s": (float, True),
    "time.T": (float, True),
    "time.N": (int, False),
    "time.tau": (float, False),
    "solver.step_tol": (float, False),
    "solver.max_inner_iter": (int, False),
    "initial.shape": (str, False),
    "initial.center": (float, False),
    "initial.width": (float, False),
    "initial.height": (float, False),
    "initial.scale": (float, False),
    "initial.centers": ("floats", False),
    "initial.widths": ("floats", False),
    "initial.heights": ("floats", False),
    "initial.path": (str, False),
    "output.directory": (str, False),
    "output.stride": (int, False),
    "output.max_states": (int, False),
    "output.formats": ("strings", False),
    "eigen.tau": (float, False),
    "eigen.conv_tol": (float, False),
    "eigen.max_iter": (int, False),
    "diagnose.rayleigh_slack": (float, False),
    "diagnose.decay_window": ("floats", False),
    "diagnose.limit_tol": (float, False),
}


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RunConfig:
    a: float
    b: float
    n: int
    p: float
    s: float
    T: float
    N: int
    step_tol: float
    max_inner_iter: int = 200
    initial: dict = field(default_factory=lambda: {"shape": "bump"})
    output_dir: str = "out"
    stride: int = 1
    max_states: int | None = None
    formats: tuple = ("csv", "txt")
    eigen_tau: float = 10.0
    eigen_conv_tol: float = 1e-9
    eigen_max_iter: int = 2000
    rayleigh_slack: float = 1e-8
    decay_window: tuple | None = None
    limit_tol: float = 1e-2
    source: str | None = None

    def grid(self) -> Grid1D:
        return Grid1D(self.a, self.b, self.n, self.s, self.p)

    def params(self) -> FlowParams:
        return FlowParams(self.p, self.s, self.T, self.N, self.step_tol, self.max_inner_iter)

    def eigen_params(self) -> FlowParams:
        return FlowParams(self.p, self.s, self.eigen_tau, 1, self.step_tol, self.max_inner_iter)

    def as_dict(self) -> dict:
        d = {
            "domain": {"a": self.a, "b": self.b, "n": self.n},
            "physics": {"p": self.p, "s": self.s},
            "time": {"T": self.T, "N": self.N},
            "solver": {"step_tol": self.step_tol, "max_inner_iter": self.max_inner_iter},
            "initial": dict(self.initial),
            "output": {"stride": self.stride, "max_states": self.max_states, "formats": list(self.formats)},
        }
        return d


def _parse_value(kind, raw):
    if kind == "floats":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if kind == "strings":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if kind is int:
        v = float(raw)
        if v != int(v):
            raise ValueError(f"{raw!r} is not an integer")
        return int(v)
    return kind(raw)


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    """Parse and validate config text; every problem is reported at once."""
    raw = {}
    parse_errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            parse_errors.append(f"line {lineno}: expected 'section.key = value'")
            continue
        key, value = (x.strip() for x in body.split("=", 1))
        if key not in KEYS:
            parse_errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in raw:
            parse_errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            raw[key] = _parse_value(KEYS[key][0], value)
        except ValueError:
            parse_errors.append(f"line {lineno}: bad value {value!r} for {key}")
    if parse_errors:
        raise ConfigError(parse_errors, code="parse-error")
    return _validate(raw, source)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MissingArtifactError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def _validate(raw: dict, source) -> RunConfig:
    errors = []
    for key, (_, required) in KEYS.items():
        if required and key not in raw:
            errors.append(f"{key}: missing")
    a, b = raw.get("domain.a"), raw.get("domain.b")
    if a is not None and b is not None and not a < b:
        errors.append("domain: a must be < b")
    n = raw.get("domain.n")
    if n is not None and n < 3:
        errors.append("domain.n: must be >= 3")
    s = raw.get("physics.s")
    if s is not None and not 0 < s < 1:
        errors.append("physics.s: s must lie in (0,1)")
    p = raw.get("physics.p")
    if p is not None and not p > 1:
        errors.append("physics.p: p must be > 1")
    T = raw.get("time.T")
    if T is not None and not T > 0:
        errors.append("time.T: must be positive")
    has_N, has_tau = "time.N" in raw, "time.tau" in raw
    N = None
    if has_N and has_tau:
        errors.append("time: give exactly one of time.N and time.tau, not both")
    elif not has_N and not has_tau:
        errors.append("time: one of time.N or time.tau is required")
    elif has_N:
        N = raw["time.N"]
        if N < 1:
            errors.append("time.N: must be >= 1")
    elif T is not None:
        tau = raw["time.tau"]
        if not tau > 0:
            errors.append("time.tau: must be positive")
        else:
            N = round(T / tau)
            if N < 1 or not math.isclose(N * tau, T, rel_tol=1e-9):
                errors.append("time.tau: T must be a whole number of steps")
    step_tol = raw.get("solver.step_tol")
    if step_tol is None and p is not None:
        step_tol = 1e-10 if p == 2 else 1e-8
    if step_tol is not None and not step_tol > 0:
        errors.append("solver.step_tol: must be positive")
    max_inner = raw.get("solver.max_inner_iter", 200)
    if max_inner < 1:
        errors.append("solver.max_inner_iter: must be >= 1")

    initial = {k.split(".", 1)[1]: v for k, v in raw.items() if k.startswith("initial.")}
    initial.setdefault("shape", "bump")
    errors.extend(_validate_initial(initial, a, b, source))

    stride = raw.get("output.stride", 1)
    if stride < 1:
        errors.append("output.stride: must be >= 1")
    max_states = raw.get("output.max_states")
    if max_states is not None and max_states < 2:
        errors.append("output.max_states: must be >= 2")
    formats = raw.get("output.formats", ("csv", "txt"))
    bad = [f for f in formats if f not in ("csv", "txt")]
    if bad:
        errors.append(f"output.formats: unknown formats {bad}")
    window = raw.get("diagnose.decay_window")
    if window is not None and (len(window) != 2 or not window[0] < window[1]):
        errors.append("diagnose.decay_window: expected 'lo, hi' with lo < hi")
    for key in ("eigen.tau", "eigen.conv_tol", "diagnose.rayleigh_slack", "diagnose.limit_tol"):
        if key in raw and not raw[key] > 0:
            errors.append(f"{key}: must be positive")
    if errors:
        raise ConfigError(errors, code="validation-error")
    return RunConfig(
        a=a,
        b=b,
        n=n,
        p=p,
        s=s,
        T=T,
        N=N,
        step_tol=step_tol,
        max_inner_iter=max_inner,
        initial=initial,
        output_dir=raw.get("output.directory", "out"),
        stride=stride,
        max_states=max_states,
        formats=tuple(formats),
        eigen_tau=raw.get("eigen.tau", 10.0),
        eigen_conv_tol=raw.get("eigen.conv_tol", 1e-9),
        eigen_max_iter=raw.get("eigen.max_iter", 2000),
        rayleigh_slack=raw.get("diagnose.rayleigh_slack", 1e-8),
        decay_window=window,
        limit_tol=raw.get("diagnose.limit_tol", 1e-2),
        source=source,
    )


def _validate_initial(initial, a, b, source):
    errors = []
    shape = initial["shape"]
    if shape not in SHAPES:
        return [f"initial.shape: unknown shape {shape!r}; expected one of {', '.join(SHAPES)}"]
    if shape in ("bump", "box"):
        if a is not None and b is not None:
            initial.setdefault("center", 0.5 * (a + b))
            initial.setdefault("width", 0.25 * (b - a))
        initial.setdefault("height", 1.0)
        if "width" in initial and not initial["width"] > 0:
            errors.append("initial.width: must be positive")
    elif shape == "scaled-ground-state":
        if "scale" not in initial:
            errors.append("initial.scale: required for scaled-ground-state")
    elif shape == "two-bump":
        lens = {len(initial.get(k, ())) for k in ("centers", "widths", "heights")}
        if lens != {2}:
            errors.append("initial.centers/widths/heights: two-bump needs exactly two values each")
        elif any(w <= 0 for w in initial["widths"]):
            errors.append("initial.widths: must be positive")
    elif shape == "file":
        if "path" not in initial:
            errors.append("initial.path: required for shape 'file'")
        elif source is not None and not os.path.isabs(initial["path"]):
            initial["path"] = str(Path(source).parent / initial["path"])
    return errors


def bump(x, center, width, height):
    """Smooth compactly supported bump of the given half-width."""
    z = (x - center) / width
    out = np.zeros_like(x)
    inside = np.abs(z) < 1
    out[inside] = height * np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
    return out


def box(x, center, width, height):
    return np.where(np.abs(x - center) < width, height, 0.0)


# -- atomic writes -----------------------------------------------------------


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- snapshots ---------------------------------------------------------------


def snapshot_text(u: Field, t: float) -> str:
    g = u.grid
    head = " ".join([str(g.n), fmt(g.a), fmt(g.b), fmt(g.p), fmt(g.s), fmt(t)])
    return head + "\n" + "\n".join(fmt(v) for v in u.values) + "\n"


def write_snapshot(path, u: Field, t: float = 0.0):
    atomic_write(path, snapshot_text(u, t))


def read_snapshot(path, grid: Grid1D | None = None):
    """Read a snapshot; returns ``(field, t)``. Reuses ``grid`` when it matches."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing snapshot {path}")
    tokens = path.read_text().split()
    if len(tokens) < 6:
        raise ValueError(f"{path}: truncated header")
    n = int(tokens[0])
    a, b, p, s, t = (float(x) for x in tokens[1:6])
    values = np.array([float(x) for x in tokens[6:]])
    if values.size != n:
        raise ValueError(f"{path}: expected {n} values, found {values.size}")
    if grid is None or not (grid.n == n and grid.a == a and grid.b == b and grid.p == p and grid.s == s):
        grid = Grid1D(a, b, n, s, p)
    return Field(grid, values), t


# -- traces ------------------------------------------------------------------


def trace_csv(trace: FlowTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for k in range(len(trace)):
        w.writerow(
            [k]
            + [
                fmt(x)
                for x in (
                    trace.t[k],
                    trace.energy[k],
                    trace.mass[k],
                    trace.rayleigh[k],
                    trace.dissipation[k],
                    trace.inner_residual[k],
                    trace.sup_norm[k],
                )
            ]
        )
    return buf.getvalue()


def write_trace(path, trace: FlowTrace):
    atomic_write(path, trace_csv(trace))


def read_trace(path, meta: dict) -> FlowTrace:
    """Read a trace CSV; ``meta`` supplies p, s, tau, n, step_tol, state_steps."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing trace {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else None}")
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(TRACE_COLUMNS))
    cols = {name: data[:, i] for i, name in enumerate(TRACE_COLUMNS)}
    return FlowTrace(
        t=cols["t"],
        energy=cols["energy"],
        mass=cols["mass"],
        rayleigh=cols["rayleigh"],
        dissipation=cols["dissipation"],
        inner_residual=cols["inner_residual"],
        sup_norm=cols["sup_norm"],
        p=meta["p"],
        s=meta["s"],
        tau=meta["tau"],
        n=meta["n"],
        step_tol=meta["step_tol"],
        state_steps=np.asarray(meta.get("state_steps", np.arange(len(data))), dtype=int),
    )


# -- manifest and reports ---------------------------------------------------


def write_manifest(path, manifest: dict):
    manifest = {"schema": SCHEMA, "schema_version": SCHEMA_VERSION, **manifest}
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise MissingArtifactError(f"no manifest.json in {directory}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema") != SCHEMA or manifest.get("schema_version") != SCHEMA_VERSION:
        raise VersionMismatchError(
            f"manifest schema {manifest.get('schema')!r} v{manifest.get('schema_version')}; "
            f"expected {SCHEMA!r} v{SCHEMA_VERSION}"
        )
    return manifest


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("name", "passed", "informational", "worst_violation", "slack_budget", "location", "note"))
    for r in reports:
        w.writerow(
            (
                r.name,
                str(bool(r.passed)).lower(),
                str(bool(r.informational)).lower(),
                fmt(r.worst_violation),
                fmt(r.slack_budget),
                "" if r.location is None else r.location,
                r.note,
            )
        )
    return buf.getvalue()
