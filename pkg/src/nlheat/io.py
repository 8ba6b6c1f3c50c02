"""CSV writers. Floats use 17 significant digits, LF line endings."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .flow import FlowSpec, power_values
from .integrators import Trajectory
from .manifold import grad_sq_values

TRAJECTORY_HEADER = ("t", "lambda", "mass", "dirichlet_energy", "extra_integral", "min_u")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def trajectory_rows(traj: Trajectory, spec: FlowSpec):
    """One row per stamp: t, lambda, mass, Dirichlet energy, extra integral, min u.

    The extra integral is ``int u^(p+1)`` (power flow) or ``int u A`` (forced flow).
    """
    grid = traj.grid
    dv = grid.cell_volume
    for t, lam, u in zip(traj.times, traj.lambdas, traj.values):
        if spec.is_linear:
            extra = np.sum(u * spec.forcing_values(t)) * dv
        else:
            extra = np.sum(power_values(u, spec.p + 1)) * dv
        yield (t, lam, np.sum(u * u) * dv, np.sum(grad_sq_values(u, grid)) * dv, extra, u.min())


def write_trajectory_csv(path, traj: Trajectory, spec: FlowSpec) -> Path:
    return write_csv(path, TRAJECTORY_HEADER, trajectory_rows(traj, spec))
