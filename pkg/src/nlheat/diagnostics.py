"""Checkable quantities for recorded trajectories.

* energy ledger: running dissipation ``int_0^t int u_t^2`` and the
  conservation identities it must satisfy,
* Li-Yau type Harnack quantity ``F`` and the log-substitution identity,
* steady-state extraction plus an independent constrained elliptic solve,
* Gronwall-type comparison of two runs started from nearby data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import (
    ConfigurationError,
    DegenerateStateError,
    DomainError,
    GridMismatchError,
    NotConvergedError,
    OracleError,
    PositivityLossError,
)
from .flow import FlowSpec, power_values, rhs_values
from .integrators import Trajectory
from .manifold import ScalarField, TorusGrid, grad_sq_values, laplacian_values

__all__ = [
    "EnergyLedger",
    "HarnackParams",
    "HarnackReport",
    "StabilityReport",
    "SteadyReport",
    "build_ledger",
    "harnack_field",
    "harnack_monitor",
    "log_identity_residual",
    "steady_extract",
    "steady_oracle",
    "steady_residual",
    "stability_compare",
    "deviation_decay_rate",
    "discrete_spectral_gap",
]

MAX_LEDGER_SPACING = 1e-2
GAP_FLOOR = 1e-14
GRONWALL_MARGIN = 0.5


def _cumtrapz(y, t):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def _integrate(values, grid):
    return float(np.sum(values) * grid.cell_volume)


# -- energy ledger ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnergyLedger:
    """Per-stamp energy bookkeeping.

    ``extra`` is ``int u^(p+1)`` for the power flow and ``int u A`` for the
    forced flow. ``u_dot_ut`` is ``int u u_t``, zero for unit-norm states.
    """

    variant: str
    t: np.ndarray
    lam: np.ndarray
    mass: np.ndarray
    dirichlet: np.ndarray
    extra: np.ndarray
    cum_ut_sq: np.ndarray
    u_dot_ut: np.ndarray
    identity_residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(self.identity_residual))

    def rows(self):
        cols = (self.t, self.lam, self.mass, self.dirichlet, self.extra,
                self.cum_ut_sq, self.u_dot_ut, self.identity_residual)
        return zip(*cols)

    header = ("t", "lambda", "mass", "dirichlet_energy", "extra_integral",
              "cum_ut_sq", "u_dot_ut", "identity_residual")


def build_ledger(traj: Trajectory, spec: FlowSpec) -> EnergyLedger:
    """Fill the ledger from recorded states, with ``u_t`` taken from the PDE.

    Identity residuals:

    * power flow: ``|lam + 2 D(t) - int(|grad g|^2 + 2/(p+1) g^(p+1))
      - (p-1)/(p+1) int u^(p+1)|``
    * forced flow: ``|int |grad u|^2 - int |grad g|^2 + 2 D(t)
      - 2 int_0^t int u_t A|``

    where ``D(t)`` is the trapezoid-accumulated ``int_0^t int u_t^2``.
    """
    if traj.grid != spec.grid:
        raise GridMismatchError("trajectory and flow live on different grids")
    if len(traj) > 1 and np.max(np.diff(traj.times)) > MAX_LEDGER_SPACING * (1 + 1e-9):
        raise ConfigurationError(
            f"stamps too coarse for the ledger (max spacing {np.max(np.diff(traj.times)):.3g} "
            f"> {MAX_LEDGER_SPACING:g}); lower record_every")
    grid = spec.grid
    n = len(traj)
    lam, mass, dirichlet, extra = (np.empty(n) for _ in range(4))
    ut_sq, u_dot_ut, ut_A = (np.empty(n) for _ in range(3))
    for i, (t, u) in enumerate(zip(traj.times, traj.values)):
        lam[i] = traj.lambdas[i]
        ut = rhs_values(u, t, spec, lam=lam[i])
        mass[i] = _integrate(u * u, grid)
        dirichlet[i] = _integrate(grad_sq_values(u, grid), grid)
        ut_sq[i] = _integrate(ut * ut, grid)
        u_dot_ut[i] = _integrate(u * ut, grid)
        if spec.is_linear:
            A = spec.forcing_values(t)
            extra[i] = _integrate(u * A, grid)
            ut_A[i] = _integrate(ut * A, grid)
        else:
            extra[i] = _integrate(power_values(u, spec.p + 1), grid)
    cum = _cumtrapz(ut_sq, traj.times)
    g = traj.values[0]
    if spec.is_linear:
        cum_A = _cumtrapz(ut_A, traj.times)
        resid = np.abs(dirichlet - dirichlet[0] + 2 * cum - 2 * cum_A)
    else:
        p = spec.p
        e0 = _integrate(grad_sq_values(g, grid) + 2 / (p + 1) * power_values(g, p + 1), grid)
        resid = np.abs(lam + 2 * cum - e0 - (p - 1) / (p + 1) * extra)
    return EnergyLedger(spec.variant.value, np.asarray(traj.times), lam, mass, dirichlet, extra,
                        cum, u_dot_ut, resid)


# -- Harnack quantity -------------------------------------------------------

@dataclass(frozen=True)
class HarnackParams:
    a: float = 2.0
    K: float = 0.0
    t_floor: float = 0.1

    def __post_init__(self):
        if not self.a > 1:
            raise DomainError(f"Harnack parameter a must exceed 1, got {self.a}")
        if self.K < 0:
            raise DomainError(f"curvature bound K must be >= 0, got {self.K}")
        if not self.t_floor > 0:
            raise DomainError(f"t_floor must be positive, got {self.t_floor}")


def _reaction_potential(u, t, spec):
    # lam-free part of (d_t - lap) w - |grad w|^2:  A/u  or  -u^(p-1)
    if spec.is_linear:
        return spec.forcing_values(t) / u
    return -power_values(u, spec.p - 1)


def _harnack_values(u, t, lam, spec, a):
    w = np.log(u)
    wt = rhs_values(u, t, spec, lam=lam) / u
    return t * (grad_sq_values(w, spec.grid) - a * wt + a * (lam + _reaction_potential(u, t, spec)))


def harnack_field(traj: Trajectory, stamp_index: int, spec: FlowSpec,
                  params: HarnackParams = HarnackParams()) -> ScalarField:
    """``F = t (|grad w|^2 - a w_t + a (lam + A/u))`` (forced flow) or
    ``t (|grad w|^2 - a w_t + a (lam - u^(p-1)))`` (power flow), ``w = log u``.

    ``w_t`` is obtained by substituting the PDE, ``w_t = rhs(u) / u``.
    """
    if params.K != 0:
        raise DomainError("flat tori have zero Ricci curvature; K must be 0")
    t = float(traj.times[stamp_index])
    if t < params.t_floor:
        raise DomainError(f"t={t:g} is below t_floor={params.t_floor:g}")
    u = traj.values[stamp_index]
    if u.min() <= 0:
        raise PositivityLossError(t, float(u.min()))
    lam = float(traj.lambdas[stamp_index])
    return ScalarField(spec.grid, _harnack_values(u, t, lam, spec, params.a))


@dataclass(frozen=True, eq=False)
class HarnackReport:
    t: np.ndarray
    sup_F: np.ndarray
    argmax: np.ndarray
    min_u: np.ndarray

    @property
    def global_sup(self) -> float:
        return float(np.max(self.sup_F)) if len(self.sup_F) else float("nan")

    @property
    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.sup_F)))

    header = ("t", "sup_F", "argmax", "min_u")

    def rows(self):
        return zip(self.t, self.sup_F, self.argmax, self.min_u)


def harnack_monitor(traj: Trajectory, spec: FlowSpec,
                    params: HarnackParams = HarnackParams()) -> HarnackReport:
    """Track ``sup_x F(., t)`` over every stamp with ``t >= t_floor``."""
    idx = [i for i, t in enumerate(traj.times) if t >= params.t_floor]
    ts, sups, args, mins = [], [], [], []
    for i in idx:
        F = harnack_field(traj, i, spec, params).values
        k = int(np.argmax(F))
        ts.append(traj.times[i])
        sups.append(F.flat[k])
        args.append(k)
        mins.append(traj.values[i].min())
    return HarnackReport(np.array(ts), np.array(sups), np.array(args, dtype=int), np.array(mins))


def log_identity_residual(traj: Trajectory, stamp_index: int, spec: FlowSpec) -> float:
    """Max-norm defect of ``(d_t - lap) w = |grad w|^2 + lam + A/u`` (or ``lam - u^(p-1)``).

    ``d_t w`` is a centered difference of ``log u`` across the neighbouring
    stamps, so this is a consistency check of the recorded solution rather
    than of the PDE substitution used by :func:`harnack_field`.
    """
    n = len(traj)
    i = stamp_index % n if stamp_index < 0 else stamp_index
    if not 0 < i < n - 1:
        raise DomainError(f"stamp {stamp_index} has no neighbours on both sides")
    for j in (i - 1, i, i + 1):
        if traj.values[j].min() <= 0:
            raise PositivityLossError(float(traj.times[j]), float(traj.values[j].min()))
    grid = spec.grid
    t = float(traj.times[i])
    u = traj.values[i]
    w = np.log(u)
    wt = (np.log(traj.values[i + 1]) - np.log(traj.values[i - 1])) / (traj.times[i + 1] - traj.times[i - 1])
    lam = float(traj.lambdas[i])
    defect = wt - laplacian_values(w, grid) - grad_sq_values(w, grid) - (lam + _reaction_potential(u, t, spec))
    return float(np.max(np.abs(defect)))


# -- steady states ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SteadyReport:
    u_inf: ScalarField
    lambda_inf: float
    residual_l2: float
    norm_check: float
    tail_variation: float


def steady_residual(u: ScalarField, lam: float, spec: FlowSpec, t: float = 0.0) -> float:
    """L2 norm of ``lap u + lam u + A(., t)`` or ``lap u + lam u - u^p``."""
    grid = spec.grid
    v = u.values
    if spec.is_linear:
        r = laplacian_values(v, grid) + lam * v + spec.forcing_values(t)
    else:
        r = laplacian_values(v, grid) + lam * v - power_values(v, spec.p)
    return math.sqrt(_integrate(r * r, grid))


def steady_extract(traj: Trajectory, spec: FlowSpec, tail_tol: float = 1e-6) -> SteadyReport:
    """Take the final state as the limit once ``lambda`` has settled over the last unit of time."""
    t_end = float(traj.times[-1])
    if t_end < 1.0:
        raise NotConvergedError(f"trajectory ends at t={t_end:g}; need at least one unit of tail",
                                tail_variation=float("inf"))
    lam_prev = float(np.interp(t_end - 1.0, traj.times, traj.lambdas))
    lam_inf = float(traj.lambdas[-1])
    variation = abs(lam_inf - lam_prev)
    if variation > tail_tol:
        raise NotConvergedError(f"lambda still moving: |lam(T) - lam(T-1)| = {variation:.3e} > {tail_tol:g}",
                                tail_variation=variation)
    u = traj.final
    norm = math.sqrt(_integrate(u.values**2, spec.grid))
    return SteadyReport(u, lam_inf, steady_residual(u, lam_inf, spec, t=t_end), abs(norm - 1.0), variation)


def _laplacian_matrix(grid: TorusGrid):
    mats = []
    for n, h in zip(grid.n_per_axis, grid.spacing):
        m = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
        m[0, n - 1] = 1.0
        m[n - 1, 0] = 1.0
        mats.append(m.tocsr() / h**2)
    if grid.dim == 1:
        return mats[0]
    i0 = sp.identity(grid.n_per_axis[0], format="csr")
    i1 = sp.identity(grid.n_per_axis[1], format="csr")
    return (sp.kron(mats[0], i1) + sp.kron(i0, mats[1])).tocsr()


def steady_oracle(A: ScalarField, grid: TorusGrid | None = None, tol: float = 1e-10,
                  max_iter: int = 400) -> tuple[ScalarField, float]:
    """Solve ``lap u + lam u + A = 0``, ``|u|_2 = 1``, ``u >= 0`` by bisection on ``lam < 0``.

    For ``lam < 0`` the matrix ``-(lap + lam I)`` is a nonsingular M-matrix,
    so ``u(lam) = (-(lap + lam I))^{-1} A`` is non-negative and ``|u(lam)|``
    decreases monotonically from ``+inf`` (``lam -> 0-``) to 0.
    """
    grid = grid or A.grid
    if A.grid != grid:
        raise GridMismatchError("forcing lives on a different grid")
    a = A.values.ravel()
    if a.min() < 0 or not np.any(a):
        raise DomainError("oracle needs A >= 0, not identically zero")
    L = _laplacian_matrix(grid)
    I = sp.identity(grid.size, format="csr")
    dv = grid.cell_volume

    def solve(lam):
        u = spsolve((L + lam * I).tocsc(), -a)
        return u, math.sqrt(float(np.sum(u * u)) * dv)

    # bracket: norm(lo) < 1 < norm(hi)
    lo = hi = -1.0
    _, nrm = solve(lo)
    for _ in range(200):
        if nrm < 1:
            break
        hi = lo
        lo *= 2
        _, nrm = solve(lo)
    else:
        raise OracleError("could not bracket lambda from below")
    if hi == lo:
        for _ in range(200):
            hi = hi / 2
            _, nrm = solve(hi)
            if nrm > 1:
                break
        else:
            raise OracleError("could not bracket lambda from above")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        u, nrm = solve(mid)
        if abs(nrm - 1) <= tol:
            break
        if nrm > 1:
            hi = mid
        else:
            lo = mid
    else:
        raise OracleError(f"bisection stalled at |u| - 1 = {nrm - 1:.3e}")
    return ScalarField(grid, u), float(mid)


# -- stability --------------------------------------------------------------

def _fit_rate(t, gap):
    # least-squares slope through the origin of log(gap/gap0) against t
    mask = (gap > GAP_FLOOR) & (t > 0)
    if not np.any(mask):
        return float("nan")
    y = np.log(gap[mask] / gap[0])
    x = t[mask]
    return float(np.dot(x, y) / np.dot(x, x))


@dataclass(frozen=True, eq=False)
class StabilityReport:
    t: np.ndarray
    gap_l2: np.ndarray
    gap_h1: np.ndarray
    fitted_C_l2: float
    fitted_C_h1: float
    bound_holds_l2: bool
    bound_holds_h1: bool
    margin: float = GRONWALL_MARGIN

    @property
    def initial_gap_l2(self) -> float:
        return float(self.gap_l2[0])

    @property
    def initial_gap_h1(self) -> float:
        return float(self.gap_h1[0])

    @property
    def bound_holds(self) -> bool:
        return self.bound_holds_l2 and self.bound_holds_h1

    header = ("t", "gap_l2", "gap_h1")

    def rows(self):
        return zip(self.t, self.gap_l2, self.gap_h1)


def stability_compare(traj_u: Trajectory, traj_v: Trajectory,
                      margin: float = GRONWALL_MARGIN) -> StabilityReport:
    """Squared L2 and Dirichlet gaps between two runs, with fitted Gronwall rates.

    The bound is declared to hold when ``gap(t) <= gap(0) exp((C + margin) t)``
    at every stamp, ``C`` being the fitted rate.
    """
    if traj_u.grid != traj_v.grid:
        raise GridMismatchError("trajectories live on different grids")
    if len(traj_u) != len(traj_v) or not np.array_equal(traj_u.times, traj_v.times):
        raise GridMismatchError("trajectories are recorded at different stamps")
    grid = traj_u.grid
    diff = traj_u.values - traj_v.values
    axes = tuple(range(1, diff.ndim))
    gap_l2 = np.sum(diff * diff, axis=axes) * grid.cell_volume
    gap_h1 = np.array([_integrate(grad_sq_values(d, grid), grid) for d in diff])
    if gap_l2[0] <= 0 or gap_h1[0] <= 0:
        raise DegenerateStateError("initial data coincide (zero initial gap)")
    t = np.asarray(traj_u.times)
    c_l2 = _fit_rate(t, gap_l2)
    c_h1 = _fit_rate(t, gap_h1)

    def holds(gap, c):
        return bool(math.isfinite(c) and np.all(gap <= gap[0] * np.exp((c + margin) * t)))

    return StabilityReport(t, gap_l2, gap_h1, c_l2, c_h1, holds(gap_l2, c_l2), holds(gap_h1, c_h1), margin)


# -- spectral helpers -------------------------------------------------------

def discrete_spectral_gap(grid: TorusGrid) -> float:
    """Smallest nonzero eigenvalue of ``-lap`` on the grid: ``min_a (2/h^2)(1 - cos(2 pi h / L))``."""
    return min(2 / h**2 * (1 - math.cos(2 * math.pi * h / L)) for h, L in zip(grid.spacing, grid.period))


def deviation_decay_rate(traj: Trajectory, floor: float = 1e-10) -> float:
    """Fitted exponential decay rate of ``|u - mean(u)|_2`` over stamps above ``floor``."""
    axes = tuple(range(1, traj.values.ndim))
    mean = traj.values.mean(axis=axes, keepdims=True)
    dev = np.sqrt(np.sum((traj.values - mean) ** 2, axis=axes) * traj.grid.cell_volume)
    mask = dev > floor
    if mask.sum() < 2:
        raise DegenerateStateError("not enough stamps above the floor to fit a rate")
    slope, _ = np.polyfit(traj.times[mask], np.log(dev[mask]), 1)
    return float(-slope)
