"""Time integration of the non-local flows.

Two schemes are provided:

* ``imex`` -- one linearly implicit step per ``dt``: diffusion implicit,
  multiplier frozen at the step start, reaction explicit, followed by exact
  projection back onto the unit L2 sphere.
* ``picard`` -- the successive-linearization construction: on each time
  window the multiplier is computed from the previous iterate and a purely
  linear parabolic problem is solved for the next one, until the iterates
  stop moving. Windows are chained to reach ``t_end``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lapack

from .errors import (
    ConfigurationError,
    DomainError,
    GridMismatchError,
    NlheatError,
    NonConvergenceError,
    PositivityLossError,
    SolverError,
)
from .flow import FlowSpec, LambdaValue, flow_lambda_values, power_values, source_values
from .manifold import ScalarField, TorusGrid, laplacian_values, renormalized_values

__all__ = [
    "TimeControls",
    "Trajectory",
    "ImplicitDiffusionSolver",
    "conjugate_gradient",
    "imex_step",
    "run_direct",
    "picard_solve_window",
    "run_picard",
    "run",
]

logger = logging.getLogger(__name__)

SCHEMES = ("imex", "picard")
SOLVE_RTOL = 1e-10


def _n_steps(length, dt, what):
    n = int(round(length / dt))
    if n < 1 or abs(n * dt - length) > 1e-9 * max(length, dt):
        raise ConfigurationError(f"{what}={length!r} is not an integer multiple of dt={dt!r}")
    return n


@dataclass(frozen=True)
class TimeControls:
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "imex"
    picard_window: float = 0.05
    picard_tol: float = 1e-8
    picard_max_iter: int = 50
    record_every: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not (self.dt > 0 and self.t_end > 0):
            raise ConfigurationError("dt and t_end must be positive")
        if not (self.picard_tol > 0 and self.picard_window > 0):
            raise ConfigurationError("picard_tol and picard_window must be positive")
        if self.picard_max_iter < 1 or self.record_every < 1:
            raise ConfigurationError("picard_max_iter and record_every must be >= 1")
        if self.scheme == "picard" and not (self.dt < self.picard_window <= self.t_end + 1e-12):
            raise ConfigurationError("picard needs dt < picard_window <= t_end")

    @property
    def n_steps(self) -> int:
        return _n_steps(self.t_end, self.dt, "t_end")

    @property
    def steps_per_window(self) -> int:
        return _n_steps(self.picard_window, self.dt, "picard_window")

    @property
    def n_windows(self) -> int:
        return -(-self.n_steps // self.steps_per_window)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded stamps of one run.

    ``values`` has shape ``(n_stamps, *grid.shape)``. ``drift`` holds the
    pre-projection norm defect ``| ||u*|| - 1 |`` of the step that produced
    each stamp (0 at ``t = 0`` and for unprojected schemes).
    """

    grid: TorusGrid
    times: np.ndarray
    values: np.ndarray
    lambdas: np.ndarray
    dt: float
    scheme: str = "imex"
    drift: np.ndarray | None = None
    max_drift: float = 0.0
    window_iterations: tuple[int, ...] = ()
    window_distances: tuple[tuple[float, ...], ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("times", "values", "lambdas", "drift"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if len(self.times) != len(self.values) or len(self.times) != len(self.lambdas):
            raise ValueError("times, values and lambdas must have the same length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i])

    @property
    def states(self) -> list[ScalarField]:
        return [self.state(i) for i in range(len(self))]

    @property
    def lambda_trace(self) -> list[LambdaValue]:
        return [LambdaValue(float(t), float(v)) for t, v in zip(self.times, self.lambdas)]

    @property
    def final(self) -> ScalarField:
        return self.state(-1)

    def index_of(self, t: float) -> int:
        """Index of the stamp closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def masses(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return np.sum(self.values**2, axis=axes) * self.grid.cell_volume

    def normalized(self) -> "Trajectory":
        vals = np.stack([renormalized_values(v, self.grid) for v in self.values])
        return replace(self, values=vals)


# -- linear algebra ---------------------------------------------------------

def conjugate_gradient(matvec, b, x0=None, rtol=1e-12, maxiter=None):
    """Plain CG for a symmetric positive-definite operator.

    Returns ``(x, iterations)``; raises SolverError when ``maxiter`` is hit.
    """
    b = np.asarray(b, dtype=float)
    x = np.array(b if x0 is None else x0, dtype=float)
    r = b - matvec(x)
    p = r.copy()
    rr = float(np.vdot(r, r))
    target = (rtol * float(np.linalg.norm(b))) ** 2
    maxiter = maxiter or 10 * b.size
    for it in range(maxiter + 1):
        if rr <= target:
            return x, it
        Ap = matvec(p)
        alpha = rr / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise SolverError(f"CG did not reach rtol={rtol:g} in {maxiter} iterations")


class ImplicitDiffusionSolver:
    """Solves ``(I - dt * lap) x = b`` on a torus.

    1-D: cyclic tridiagonal system, Sherman-Morrison on top of a LAPACK
    tridiagonal factorization computed once. 2-D: matrix-free CG.
    Every solution is checked against ``SOLVE_RTOL``.
    """

    def __init__(self, grid: TorusGrid, dt: float):
        self.grid = grid
        self.dt = float(dt)
        if grid.dim == 1:
            self._setup_cyclic()

    def _setup_cyclic(self):
        n = self.grid.n_per_axis[0]
        r = self.dt / self.grid.spacing[0] ** 2
        diag = np.full(n, 1.0 + 2.0 * r)
        off = np.full(n - 1, -r)
        # corners M[0, n-1] = M[n-1, 0] = -r
        gamma = -diag[0]
        self._beta = self._alpha = -r
        self._gamma = gamma
        diag = diag.copy()
        diag[0] -= gamma
        diag[-1] -= self._alpha * self._beta / gamma
        dl, d, du, du2, ipiv, info = lapack.dgttrf(off, diag, off)
        if info != 0:
            raise SolverError(f"tridiagonal factorization failed (info={info})")
        self._lu = (dl, d, du, du2, ipiv)
        corr = np.zeros(n)
        corr[0] = gamma
        corr[-1] = self._alpha
        self._z = self._tri_solve(corr)
        self._denom = 1.0 + self._z[0] + self._beta * self._z[-1] / gamma

    def _tri_solve(self, b):
        x, info = lapack.dgttrs(*self._lu, b)
        if info != 0:
            raise SolverError(f"tridiagonal solve failed (info={info})")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x - self.dt * laplacian_values(x, self.grid)

    def solve(self, b: np.ndarray) -> np.ndarray:
        # constants are fixed by (I - dt lap); solving only the mean-free part
        # keeps constant states bit-exact
        mean = b.mean()
        bt = b - mean
        if not np.any(bt):
            xt = bt
        elif self.grid.dim == 1:
            y = self._tri_solve(bt)
            fact = (y[0] + self._beta * y[-1] / self._gamma) / self._denom
            xt = y - fact * self._z
        else:
            shape = b.shape
            xt, _ = conjugate_gradient(
                lambda v: self.apply(v.reshape(shape)).ravel(), bt.ravel(), rtol=1e-12
            )
            xt = xt.reshape(shape)
        x = xt + mean
        res = np.linalg.norm(b - self.apply(x))
        bnorm = np.linalg.norm(b)
        if res > SOLVE_RTOL * max(bnorm, np.finfo(float).tiny):
            raise SolverError(f"implicit solve residual {res / bnorm:.2e} exceeds {SOLVE_RTOL:g}")
        return x


# -- projected IMEX ---------------------------------------------------------

def _annotate(exc, prefix):
    if exc.args:
        exc.args = (f"{prefix}: {exc.args[0]}",) + exc.args[1:]
    return exc


def _imex_values(u, t, dt, spec, solver):
    lam = flow_lambda_values(u, t, spec)
    b = u + dt * (lam * u + source_values(u, t, spec))
    ustar = solver.solve(b)
    if not spec.is_linear and ustar.min() <= 0:
        raise PositivityLossError(t + dt, float(ustar.min()))
    norm = math.sqrt(float(np.sum(ustar * ustar)) * spec.grid.cell_volume)
    return ustar / norm, lam, abs(norm - 1.0)


def imex_step(u: ScalarField, t: float, dt: float, spec: FlowSpec,
              solver: ImplicitDiffusionSolver | None = None) -> ScalarField:
    """One projected step ``(I - dt lap) u* = u + dt (lam u + S)``, then ``u*/|u*|``."""
    if u.grid != spec.grid:
        raise GridMismatchError("state and flow live on different grids")
    norm = math.sqrt(float(np.sum(u.values**2)) * u.grid.cell_volume)
    if abs(norm - 1.0) > 1e-8:
        raise DomainError(f"imex_step needs a unit-norm state, got |u| = {norm!r}")
    if not spec.is_linear and u.min() <= 0:
        raise DomainError("nonlinear flow needs u > 0")
    if solver is None:
        solver = ImplicitDiffusionSolver(spec.grid, dt)
    unew, _, _ = _imex_values(u.values, t, dt, spec, solver)
    return ScalarField(u.grid, unew)


def run_direct(spec: FlowSpec, controls: TimeControls) -> Trajectory:
    """Iterate :func:`imex_step` from ``spec.g`` to ``controls.t_end``."""
    if controls.scheme != "imex":
        raise ConfigurationError("run_direct needs scheme='imex'")
    dt, n = controls.dt, controls.n_steps
    solver = ImplicitDiffusionSolver(spec.grid, dt)
    u = spec.g.values.copy()
    times, vals, lams, drifts = [0.0], [u], [flow_lambda_values(u, 0.0, spec)], [0.0]
    max_drift = 0.0
    for i in range(n):
        t = i * dt
        try:
            u, _, drift = _imex_values(u, t, dt, spec, solver)
        except NlheatError as exc:
            raise _annotate(exc, f"step {i} (t={t:.6g})")
        max_drift = max(max_drift, drift)
        if (i + 1) % controls.record_every == 0 or i + 1 == n:
            t1 = (i + 1) * dt
            times.append(t1)
            vals.append(u)
            lams.append(flow_lambda_values(u, t1, spec))
            drifts.append(drift)
    return Trajectory(spec.grid, np.array(times), np.stack(vals), np.array(lams), dt,
                      scheme="imex", drift=np.array(drifts), max_drift=max_drift)


# -- successive linearization -----------------------------------------------

def _picard_sweep(g, times, lam, lagged, spec, solver, dt):
    """March one linear sub-problem with the multiplier sequence ``lam``."""
    V = np.empty((len(times),) + g.shape)
    V[0] = g
    for k in range(len(times) - 1):
        v = V[k]
        if spec.is_linear:
            b = v + dt * (lam[k] * v + spec.forcing_values(times[k]))
        else:
            b = v + dt * (lam[k] * v - v * lagged[k])
        V[k + 1] = solver.solve(b)
        if not spec.is_linear and V[k + 1].min() <= 0:
            raise PositivityLossError(times[k + 1], float(V[k + 1].min()))
    return V


def picard_solve_window(g_window: ScalarField, t0: float, spec: FlowSpec, controls: TimeControls,
                        length: float | None = None,
                        solver: ImplicitDiffusionSolver | None = None) -> tuple[Trajectory, int]:
    """Successive linearization on ``[t0, t0 + length]``.

    The seed iterate is ``g_window`` held constant in time. Each iterate's
    multiplier ``lam_k(t)`` is evaluated node by node from the previous
    iterate, and the linear problem for the next iterate is marched with
    the same implicit-diffusion discretization as the direct scheme, without
    projection. For the power flow the reaction is lagged as
    ``u_{k+1} * u_k^(p-1)``. Returns every time node of the window and the
    number of iterations performed.
    """
    if controls.scheme != "picard":
        raise ConfigurationError("picard_solve_window needs scheme='picard'")
    g = g_window.values
    norm = math.sqrt(float(np.sum(g * g)) * spec.grid.cell_volume)
    if abs(norm - 1.0) > 1e-8:
        raise DomainError(f"window data must have unit norm, got {norm!r}")
    dt = controls.dt
    length = controls.picard_window if length is None else length
    steps = _n_steps(length, dt, "window length")
    times = t0 + dt * np.arange(steps + 1)
    solver = solver or ImplicitDiffusionSolver(spec.grid, dt)
    dv = spec.grid.cell_volume

    U = np.broadcast_to(g, (steps + 1,) + g.shape)
    distances = []
    for k in range(1, controls.picard_max_iter + 1):
        lam = np.array([flow_lambda_values(U[j], times[j], spec) for j in range(steps + 1)])
        lagged = None if spec.is_linear else power_values(U, spec.p - 1)
        V = _picard_sweep(g, times, lam, lagged, spec, solver, dt)
        diff = (V - U).reshape(steps + 1, -1)
        dist = float(np.sqrt(np.max(np.sum(diff * diff, axis=1)) * dv))
        distances.append(dist)
        U = V
        logger.debug("picard window t0=%g iter %d distance %.3e", t0, k, dist)
        if dist <= controls.picard_tol:
            lams = np.array([flow_lambda_values(U[j], times[j], spec) for j in range(steps + 1)])
            traj = Trajectory(spec.grid, times, U, lams, dt, scheme="picard",
                              window_iterations=(k,), window_distances=(tuple(distances),))
            return traj, k
    last = distances[-1] / distances[-2] if len(distances) > 1 and distances[-2] > 0 else float("nan")
    raise NonConvergenceError(
        f"picard did not reach tol={controls.picard_tol:g} in {controls.picard_max_iter} "
        f"iterations (last distance {distances[-1]:.3e}, contraction {last:.3g})",
        last_factor=last, distances=distances)


def run_picard(spec: FlowSpec, controls: TimeControls) -> Trajectory:
    """Chain Picard windows ``[0, d], [d, 2d], ...`` up to ``t_end``.

    Each window restarts from the renormalized terminal state of the
    previous one; at window boundaries the restart state is what gets
    recorded.
    """
    if controls.scheme != "picard":
        raise ConfigurationError("run_picard needs scheme='picard'")
    dt, n_total, spw = controls.dt, controls.n_steps, controls.steps_per_window
    solver = ImplicitDiffusionSolver(spec.grid, dt)
    g = spec.g
    vals, lams, iters, dists = [], [], [], []
    node = 0
    w = 0
    while node < n_total:
        steps = min(spw, n_total - node)
        try:
            win, k = picard_solve_window(g, node * dt, spec, controls, length=steps * dt, solver=solver)
        except NlheatError as exc:
            raise _annotate(exc, f"window {w} (t0={node * dt:.6g})")
        iters.append(k)
        dists.extend(win.window_distances)
        start = 0 if node == 0 else 1
        vals.append(win.values[start:])
        lams.append(win.lambdas[start:])
        node += steps
        w += 1
        if node < n_total:
            g = ScalarField(spec.grid, renormalized_values(win.values[-1], spec.grid))
            # the restart state replaces the raw terminal state at the boundary
            vals[-1] = np.concatenate([vals[-1][:-1], g.values[None]])
            lams[-1] = np.concatenate([lams[-1][:-1], [flow_lambda_values(g.values, node * dt, spec)]])
    all_vals = np.concatenate(vals)
    all_lams = np.concatenate(lams)
    idx = [i for i in range(n_total + 1) if i % controls.record_every == 0 or i == n_total]
    times = dt * np.array(idx, dtype=float)
    return Trajectory(spec.grid, times, all_vals[idx], all_lams[idx], dt, scheme="picard",
                      window_iterations=tuple(iters), window_distances=tuple(dists))


def run(spec: FlowSpec, controls: TimeControls) -> Trajectory:
    """Dispatch on ``controls.scheme``."""
    if controls.scheme == "picard":
        return run_picard(spec, controls)
    return run_direct(spec, controls)
