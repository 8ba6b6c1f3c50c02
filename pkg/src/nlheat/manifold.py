"""Flat periodic tori with a compatible gradient/Laplacian pair.

The discrete gradient is the forward difference ``D``; the Laplacian is
``-D^T D``, assembled in flux form so that summation by parts

    sum(u * laplacian(u)) * dV == -sum(grad_sq(u)) * dV

holds as an algebraic identity (up to floating-point rounding only).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateStateError, DomainError, GridMismatchError

__all__ = [
    "TorusGrid",
    "ScalarField",
    "laplacian",
    "grad_sq",
    "integrate",
    "l2_norm",
    "format_snapshot",
    "parse_snapshot",
    "write_snapshot",
    "read_snapshot",
]


def _as_axis_tuple(value, dim, name, cast):
    if np.ndim(value) == 0:
        return (cast(value),) * dim
    out = tuple(cast(v) for v in value)
    if len(out) != dim:
        raise DomainError(f"{name} has {len(out)} entries, grid has dim={dim}")
    return out


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on ``[0, L_1) x ... x [0, L_d)``, d in {1, 2}."""

    n_per_axis: tuple[int, ...]
    period: tuple[float, ...] = ()
    spacing: tuple[float, ...] = field(init=False)
    cell_volume: float = field(init=False)

    def __post_init__(self):
        n = tuple(int(k) for k in np.atleast_1d(self.n_per_axis))
        dim = len(n)
        if dim not in (1, 2):
            raise DomainError(f"only 1-D and 2-D tori are supported, got dim={dim}")
        if any(k < 4 for k in n):
            raise DomainError(f"need at least 4 nodes per axis, got {n}")
        period = _as_axis_tuple(self.period if self.period != () else 1.0, dim, "period", float)
        if any(not (L > 0 and math.isfinite(L)) for L in period):
            raise DomainError(f"periods must be positive and finite, got {period}")
        spacing = tuple(L / k for L, k in zip(period, n))
        object.__setattr__(self, "n_per_axis", n)
        object.__setattr__(self, "period", period)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "cell_volume", math.prod(spacing))

    @classmethod
    def line(cls, n: int, L: float = 1.0) -> "TorusGrid":
        return cls((n,), (L,))

    @classmethod
    def square(cls, n: int, L: float = 1.0) -> "TorusGrid":
        return cls((n, n), (L, L))

    @property
    def dim(self) -> int:
        return len(self.n_per_axis)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_per_axis

    @property
    def size(self) -> int:
        return math.prod(self.n_per_axis)

    @property
    def volume(self) -> float:
        return math.prod(self.period)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, one array per axis, each of shape ``self.shape``."""
        axes = [np.arange(k) * h for k, h in zip(self.n_per_axis, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def sample(self, func: Callable[..., np.ndarray]) -> "ScalarField":
        """Evaluate ``func(x0[, x1])`` at the nodes."""
        return ScalarField(self, np.broadcast_to(func(*self.coords()), self.shape))

    def constant(self, c: float) -> "ScalarField":
        return ScalarField(self, np.full(self.shape, float(c)))

    def zeros(self) -> "ScalarField":
        return self.constant(0.0)


class ScalarField:
    """Immutable real-valued nodal field on a :class:`TorusGrid`."""

    __slots__ = ("grid", "values")
    __array_priority__ = 100

    def __init__(self, grid: TorusGrid, values):
        arr = np.array(values, dtype=float)
        if arr.size != grid.size:
            raise DomainError(f"{arr.size} values for a grid of {grid.size} nodes")
        if not np.all(np.isfinite(arr)):
            raise DomainError("field values must be finite")
        arr = arr.reshape(grid.shape)
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    def __repr__(self):
        return f"ScalarField(grid={self.grid!r}, min={self.min():.6g}, max={self.max():.6g})"

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridMismatchError(f"fields on different grids: {self.grid} vs {other.grid}")
            return other.values
        return other

    def _wrap(self, values):
        return ScalarField(self.grid, values)

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __rtruediv__(self, other):
        return self._wrap(self._other(other) / self.values)

    def __neg__(self):
        return self._wrap(-self.values)

    def __pow__(self, p):
        return self._wrap(self.values**p)

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return self._wrap(func(self.values))

    def roll(self, shift: int | Sequence[int], axis: int | Sequence[int] = 0) -> "ScalarField":
        return self._wrap(np.roll(self.values, shift, axis=axis))

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def mean(self) -> float:
        return float(self.values.mean())

    def allclose(self, other, atol=0.0, rtol=0.0) -> bool:
        return bool(np.allclose(self.values, self._other(other), atol=atol, rtol=rtol))


def check_same_grid(*fields: ScalarField) -> TorusGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"fields on different grids: {grid} vs {f.grid}")
    return grid


def forward_diff(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    return (np.roll(values, -1, axis=axis) - values) / h


def laplacian_values(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    # flux form: -D^T D applied axis by axis
    out = np.zeros_like(values)
    for axis, h in enumerate(grid.spacing):
        flux = forward_diff(values, h, axis)
        out += (flux - np.roll(flux, 1, axis=axis)) / h
    return out


def grad_sq_values(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    out = np.zeros_like(values)
    for axis, h in enumerate(grid.spacing):
        out += forward_diff(values, h, axis) ** 2
    return out


def laplacian(u: ScalarField) -> ScalarField:
    """Periodic 3-point (1-D) / 5-point (2-D) Laplacian, equal to ``-D^T D``."""
    return ScalarField(u.grid, laplacian_values(u.values, u.grid))


def grad_sq(u: ScalarField) -> ScalarField:
    """Squared forward-difference gradient, summed over axes, per node."""
    return ScalarField(u.grid, grad_sq_values(u.values, u.grid))


def integrate(u: ScalarField) -> float:
    """Rectangle rule; exact for trigonometric polynomials resolved by the grid."""
    return float(np.sum(u.values) * u.grid.cell_volume)


def l2_norm(u: ScalarField) -> float:
    return math.sqrt(float(np.sum(u.values * u.values)) * u.grid.cell_volume)


def renormalized_values(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    norm = math.sqrt(float(np.sum(values * values)) * grid.cell_volume)
    if not norm > 0 or not math.isfinite(norm):
        raise DegenerateStateError(f"cannot normalize a field with L2 norm {norm}")
    return values / norm


# -- snapshot files ---------------------------------------------------------

_HEADER_RE = re.compile(r"^torus dim=(\d) n=([\d,]+) L=([^\s]+)\s*$")


def _fmt_axis(values, fmt):
    return ",".join(fmt(v) for v in values)


def format_snapshot(u: ScalarField) -> str:
    g = u.grid
    header = f"torus dim={g.dim} n={_fmt_axis(g.n_per_axis, str)} L={_fmt_axis(g.period, repr)}"
    body = "\n".join(f"{v:.17g}" for v in u.values.ravel(order="C"))
    return f"{header}\n{body}\n"


def parse_snapshot(text: str) -> ScalarField:
    lines = text.splitlines()
    if not lines:
        raise DomainError("empty snapshot")
    m = _HEADER_RE.match(lines[0].strip())
    if m is None:
        raise DomainError(f"bad snapshot header: {lines[0]!r}")
    dim = int(m.group(1))
    n = tuple(int(k) for k in m.group(2).split(","))
    L = tuple(float(x) for x in m.group(3).split(","))
    if len(n) != dim or len(L) != dim:
        raise DomainError(f"snapshot header axis count does not match dim={dim}")
    grid = TorusGrid(n, L)
    data = [float(s) for s in lines[1:] if s.strip()]
    if len(data) != grid.size:
        raise DomainError(f"snapshot has {len(data)} values, grid needs {grid.size}")
    values = np.array(data)
    if not np.all(np.isfinite(values)):
        raise DomainError("snapshot contains non-finite values")
    return ScalarField(grid, values)


def write_snapshot(u: ScalarField, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(format_snapshot(u))
    return path


def read_snapshot(path) -> ScalarField:
    return parse_snapshot(Path(path).read_text())
