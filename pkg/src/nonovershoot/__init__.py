"""Adaptive nonovershooting override control of strict-feedback systems.

Modules
-------
exprlang       expression parser, simplifier and symbolic derivative
plant          scenario types and TOML loader
controller     backstepping override law, error system, gain floor, bounds
lyap           Lyapunov solver for the error-system gain matrix
identifiers    the four parameter identifiers
safety_filter  nominal tracking controller and max-override
sim            closed-loop integrator, traces and metrics
cli            command-line front end
"""

from .controller import BoundMode, ci_floor, compile, violation_bound
from .errors import (BoundViolated, CompileError, InvalidMode, NonFinite, NonovershootError,
                     NotPositiveDefinite, ParseError, ValidationError)
from .lyap import solve_P
from .plant import Identifier, Scenario, load_scenario, scenario_from_dict
from .sim import ClosedLoop, Metrics, Trace, compare_bound, run
from .tape import DEFAULT_BACKEND, available_backends

__version__ = "0.1.0"

__all__ = [
    "BoundMode", "BoundViolated", "ClosedLoop", "CompileError", "DEFAULT_BACKEND", "Identifier",
    "InvalidMode", "Metrics", "NonFinite", "NonovershootError", "NotPositiveDefinite", "ParseError",
    "Scenario", "Trace", "ValidationError", "available_backends", "ci_floor", "compare_bound",
    "compile", "load_scenario", "run", "scenario_from_dict", "solve_P", "violation_bound",
]
