"""Finite-difference simulator for norm-preserving non-local heat flows on flat tori."""

from .errors import NlheatError
from .flow import FlowSpec, ForcingSpec, Variant
from .integrators import TimeControls, Trajectory, run
from .manifold import ScalarField, TorusGrid

__version__ = "0.1.0"

__all__ = [
    "FlowSpec",
    "ForcingSpec",
    "NlheatError",
    "ScalarField",
    "TimeControls",
    "TorusGrid",
    "Trajectory",
    "Variant",
    "run",
    "__version__",
]
