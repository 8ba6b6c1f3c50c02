"""The two norm-preserving non-local flows and their multipliers.

Linear-forced flow::

    u_t = lap(u) + lam(t) u + A(x, t),     lam = int(|grad u|^2 - u A)

Nonlinear power flow::

    u_t = lap(u) + lam(t) u - u^p,         lam = int(|grad u|^2 + u^(p+1))

Both multipliers are the values that make ``int(u * u_t) = 0`` when
``int(u^2) = 1``; with the compatible operators of :mod:`nlheat.manifold`
that orthogonality is exact on the grid.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .manifold import (
    ScalarField,
    TorusGrid,
    check_same_grid,
    grad_sq_values,
    l2_norm,
    laplacian_values,
    renormalized_values,
)

__all__ = [
    "Variant",
    "ForcingSpec",
    "FlowSpec",
    "LambdaValue",
    "power",
    "lambda_linear",
    "lambda_nonlinear",
    "flow_lambda",
    "rhs",
    "renormalize",
]


class Variant(str, enum.Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


def power_values(values: np.ndarray, p: float) -> np.ndarray:
    # integer exponents by repeated multiplication; real ones need u > 0
    if float(p).is_integer():
        return values ** int(p)
    if np.any(values <= 0):
        raise DomainError(f"u^{p} for non-integer p requires u > 0 (min u = {values.min():.3e})")
    return np.exp(p * np.log(values))


def power(u: ScalarField, p: float) -> ScalarField:
    return ScalarField(u.grid, power_values(u.values, p))


@dataclass(frozen=True)
class ForcingSpec:
    """Separable non-negative forcing ``A(x, t) = alpha(t) * a(x)``.

    ``profile`` is ``"constant"`` (alpha = 1) or ``"exp_decay"``
    (alpha = exp(-rate * t)).
    """

    spatial: ScalarField
    profile: str = "constant"
    rate: float = 0.0

    def __post_init__(self):
        if self.profile not in ("constant", "exp_decay"):
            raise DomainError(f"unknown temporal profile {self.profile!r}")
        if self.spatial.min() < 0:
            raise DomainError("forcing must be non-negative")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise DomainError(f"decay rate must be >= 0, got {self.rate}")

    @classmethod
    def zero(cls, grid: TorusGrid) -> "ForcingSpec":
        return cls(grid.zeros())

    @property
    def grid(self) -> TorusGrid:
        return self.spatial.grid

    @property
    def is_zero(self) -> bool:
        return not np.any(self.spatial.values)

    def alpha(self, t: float) -> float:
        if self.profile == "exp_decay":
            return math.exp(-self.rate * t)
        return 1.0

    def at(self, t: float) -> ScalarField:
        return self.spatial * self.alpha(t)

    def values_at(self, t: float) -> np.ndarray:
        return self.spatial.values * self.alpha(t)


@dataclass(frozen=True)
class LambdaValue:
    t: float
    value: float


@dataclass(frozen=True, init=False)
class FlowSpec:
    """Which flow to run, with unit-norm initial data.

    Use :meth:`linear` or :meth:`nonlinear`; both rescale ``g`` to unit
    L2 norm.
    """

    variant: Variant
    g: ScalarField
    forcing: ForcingSpec | None
    p: float | None

    def __init__(self, variant, g, forcing=None, p=None):
        variant = Variant(variant)
        if variant is Variant.LINEAR:
            if forcing is None:
                forcing = ForcingSpec.zero(g.grid)
            check_same_grid(g, forcing.spatial)
            if g.min() < 0:
                raise DomainError("linear flow needs g >= 0")
            p = None
        else:
            if p is None or not (float(p) > 1 and math.isfinite(p)):
                raise DomainError(f"nonlinear flow needs p > 1, got {p}")
            if g.min() <= 0:
                raise DomainError("nonlinear flow needs g > 0")
            p = float(p)
            forcing = None
        g = ScalarField(g.grid, renormalized_values(g.values, g.grid))
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "forcing", forcing)
        object.__setattr__(self, "p", p)

    @classmethod
    def linear(cls, g: ScalarField, forcing: ForcingSpec | None = None) -> "FlowSpec":
        return cls(Variant.LINEAR, g, forcing=forcing)

    @classmethod
    def nonlinear(cls, g: ScalarField, p: float) -> "FlowSpec":
        return cls(Variant.NONLINEAR, g, p=p)

    @property
    def grid(self) -> TorusGrid:
        return self.g.grid

    @property
    def is_linear(self) -> bool:
        return self.variant is Variant.LINEAR

    def with_initial(self, g: ScalarField) -> "FlowSpec":
        return FlowSpec(self.variant, g, forcing=self.forcing, p=self.p)

    def forcing_values(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.grid.shape)
        return self.forcing.values_at(t)

    def to_dict(self) -> dict:
        d = {"variant": self.variant.value}
        if self.is_linear:
            d["forcing_profile"] = self.forcing.profile
            d["forcing_rate"] = self.forcing.rate
        else:
            d["p"] = self.p
        return d


# -- array kernels (used in the hot loops of the integrators) ---------------

def lambda_linear_values(u: np.ndarray, A: np.ndarray, grid: TorusGrid) -> float:
    return float(np.sum(grad_sq_values(u, grid)) * grid.cell_volume - np.sum(u * A) * grid.cell_volume)


def lambda_nonlinear_values(u: np.ndarray, p: float, grid: TorusGrid) -> float:
    if np.any(u <= 0):
        raise DomainError(f"lambda_nonlinear needs u > 0 (min u = {u.min():.3e})")
    dv = grid.cell_volume
    return float(np.sum(grad_sq_values(u, grid)) * dv + np.sum(power_values(u, p + 1)) * dv)


def flow_lambda_values(u: np.ndarray, t: float, spec: FlowSpec) -> float:
    if spec.is_linear:
        return lambda_linear_values(u, spec.forcing_values(t), spec.grid)
    return lambda_nonlinear_values(u, spec.p, spec.grid)


def source_values(u: np.ndarray, t: float, spec: FlowSpec) -> np.ndarray:
    """The non-multiplier reaction term: ``A(., t)`` or ``-u^p``."""
    if spec.is_linear:
        return spec.forcing_values(t)
    return -power_values(u, spec.p)


def rhs_values(u: np.ndarray, t: float, spec: FlowSpec, lam: float | None = None) -> np.ndarray:
    if lam is None:
        lam = flow_lambda_values(u, t, spec)
    return laplacian_values(u, spec.grid) + lam * u + source_values(u, t, spec)


# -- public field-level API -------------------------------------------------

def lambda_linear(u: ScalarField, A: ScalarField) -> float:
    """``int |grad u|^2 - int u A`` (the unit-norm multiplier of the linear flow)."""
    grid = check_same_grid(u, A)
    return lambda_linear_values(u.values, A.values, grid)


def lambda_nonlinear(u: ScalarField, p: float) -> float:
    """``int |grad u|^2 + int u^(p+1)``; requires ``u > 0``."""
    return lambda_nonlinear_values(u.values, p, u.grid)


def flow_lambda(u: ScalarField, t: float, spec: FlowSpec) -> float:
    check_same_grid(u, spec.g)
    return flow_lambda_values(u.values, t, spec)


def rhs(u: ScalarField, t: float, spec: FlowSpec) -> ScalarField:
    check_same_grid(u, spec.g)
    return ScalarField(u.grid, rhs_values(u.values, t, spec))


def renormalize(u: ScalarField) -> ScalarField:
    """Rescale to unit L2 norm. Raises DegenerateStateError on the zero field."""
    return ScalarField(u.grid, renormalized_values(u.values, u.grid))


def is_unit(u: ScalarField, tol: float = 1e-12) -> bool:
    return abs(l2_norm(u) - 1.0) <= tol
