"""Implicit time stepping, ground states and property checks for the fractional p-Laplacian flow on an interval."""

__version__ = "0.1.0"

from .eigen import GroundState, dense_p2_oracle, ground_state_direct, ground_state_flow, mu_from_lambda
from .grid import Cylinder, Grid1D, build_grid, tail_weight
from .operator import Field, apply_operator, jp, lp_norm_p, pairing, rayleigh, seminorm_p, weak_residual
from .stepper import FlowParams, FlowTrace, implicit_step, interpolate, run_flow

__all__ = [
    "Cylinder",
    "Field",
    "FlowParams",
    "FlowTrace",
    "Grid1D",
    "GroundState",
    "apply_operator",
    "build_grid",
    "dense_p2_oracle",
    "ground_state_direct",
    "ground_state_flow",
    "implicit_step",
    "interpolate",
    "jp",
    "lp_norm_p",
    "mu_from_lambda",
    "pairing",
    "rayleigh",
    "run_flow",
    "seminorm_p",
    "tail_weight",
    "weak_residual",
]
