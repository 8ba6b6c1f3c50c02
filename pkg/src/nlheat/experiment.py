"""Turn an :class:`ExperimentConfig` into runs, diagnostics, files and a verdict."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import ExperimentConfig, InitialConfig, serialize_config
from .errors import GridMismatchError, NlheatError
from .flow import FlowSpec, ForcingSpec
from .integrators import TimeControls, Trajectory, run
from .io import TRAJECTORY_HEADER, trajectory_rows, write_csv
from .manifold import ScalarField, TorusGrid, format_snapshot, read_snapshot

__all__ = [
    "Check",
    "RunSummary",
    "build_grid",
    "initial_field",
    "build_forcing",
    "build_flow",
    "build_controls",
    "run_experiment",
]

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


@dataclass(frozen=True)
class Check:
    """One thresholded diagnostic. ``threshold`` is None for yes/no checks."""

    name: str
    value: float
    threshold: float | None
    passed: bool

    def line(self) -> str:
        thr = "" if self.threshold is None else f" (threshold {self.threshold:.3g})"
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name} = {self.value:.6g}{thr}"


@dataclass
class RunSummary:
    status: str
    exit_code: int
    checks: list[Check] = field(default_factory=list)
    wall_time: float = 0.0
    manifest: list[str] = field(default_factory=list)
    error: str | None = None
    preset: str | None = None
    out_dir: str = ""
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.exit_code == EXIT_OK

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = [asdict(c) for c in self.checks]
        return d

    def report(self) -> str:
        lines = [c.line() for c in self.checks]
        if self.error:
            lines.append(f"ERROR {self.error}")
        lines.append(f"{self.status} in {self.wall_time:.2f}s, {len(self.manifest)} files in {self.out_dir}")
        return "\n".join(lines) + "\n"


# -- building blocks ----------------------------------------------------------

def _per_axis(values, dim):
    return tuple(values) * dim if len(values) == 1 else tuple(values)


def build_grid(cfg: ExperimentConfig, refine: int = 1) -> TorusGrid:
    g = cfg.grid
    return TorusGrid(tuple(k * refine for k in _per_axis(g.n, g.dim)), _per_axis(g.L, g.dim))


def _axis_mean(grid, func):
    return sum(func(x, L) for x, L in zip(grid.coords(), grid.period)) / grid.dim


def initial_field(ini: InitialConfig, grid: TorusGrid, seed: int = 0) -> ScalarField:
    """Positive initial data before normalization."""
    if ini.preset == "constant":
        return grid.constant(1.0)
    if ini.preset == "sine":
        vals = 1.0 + ini.amplitude * _axis_mean(grid, lambda x, L: np.sin(2 * np.pi * ini.mode * x / L))
        if ini.amplitude2:
            vals = vals + ini.amplitude2 * _axis_mean(grid, lambda x, L: np.cos(2 * np.pi * ini.mode2 * x / L))
        return ScalarField(grid, vals)
    if ini.preset == "random":
        pert = np.random.default_rng(seed).standard_normal(grid.shape)
        pert *= ini.amplitude / np.max(np.abs(pert))
        return ScalarField(grid, 1.0 + pert)
    if ini.preset == "file":
        u = read_snapshot(ini.path)
        if u.grid != grid:
            raise GridMismatchError(f"snapshot {ini.path} does not match the configured grid")
        return u
    raise ValueError(f"unknown initial preset {ini.preset!r}")


def build_forcing(cfg: ExperimentConfig, grid: TorusGrid) -> ForcingSpec | None:
    fo = cfg.forcing
    if fo.shape == "zero":
        return None
    vals = np.full(grid.shape, float(fo.mean))
    if fo.shape == "cosine":
        vals = vals + fo.amplitude * _axis_mean(grid, lambda x, L: np.cos(2 * np.pi * fo.mode * x / L))
    return ForcingSpec(ScalarField(grid, np.maximum(vals, 0.0)), profile=fo.profile, rate=fo.rate)


def build_flow(cfg: ExperimentConfig, g: ScalarField) -> FlowSpec:
    if cfg.flow.variant == "linear":
        return FlowSpec.linear(g, build_forcing(cfg, g.grid))
    return FlowSpec.nonlinear(g, cfg.flow.p)


def build_controls(cfg: ExperimentConfig, **changes) -> TimeControls:
    c = cfg.controls
    tc = TimeControls(dt=c.dt, t_end=c.t_end, scheme=c.scheme, picard_window=c.window,
                      picard_tol=c.picard_tol, picard_max_iter=c.picard_max_iter,
                      record_every=c.record_every)
    return replace(tc, **changes) if changes else tc


def _l2(values, grid):
    return math.sqrt(float(np.sum(values * values)) * grid.cell_volume)


# -- the run ------------------------------------------------------------------

class _Collector:
    """Accumulates checks and pending file writes for one experiment."""

    def __init__(self):
        self.checks: list[Check] = []
        self.files: dict[str, object] = {}
        self.values: dict = {}

    def le(self, name, value, threshold):
        if threshold is not None:
            self.checks.append(Check(name, float(value), float(threshold), bool(value <= threshold)))

    def lt(self, name, value, threshold):
        if threshold is not None:
            self.checks.append(Check(name, float(value), float(threshold), bool(value < threshold)))

    def flag(self, name, ok):
        self.checks.append(Check(name, 1.0 if ok else 0.0, None, bool(ok)))

    def csv(self, name, header, rows):
        self.files[name] = ("csv", header, [tuple(r) for r in rows])

    def text(self, name, content):
        self.files[name] = ("text", content)


def _trajectory_checks(col, cfg, traj, spec):
    ch = cfg.checks
    dev_mass = float(np.max(np.abs(traj.masses() - 1.0)))
    col.values["max_mass_error"] = dev_mass
    col.values["max_drift"] = traj.max_drift
    col.le("mass_error", dev_mass, ch.mass_tol)
    lam_end = float(traj.lambdas[-1])
    col.values["lambda_end"] = lam_end
    col.le("lambda_end", lam_end, ch.lambda_end_max)
    if ch.lambda_end_target is not None:
        tol = 0.0 if ch.lambda_end_tol is None else ch.lambda_end_tol
        col.le("lambda_end_error", abs(lam_end - ch.lambda_end_target), tol)
    u_end = traj.values[-1]
    const = 1.0 / math.sqrt(traj.grid.volume)
    deviation = float(np.max(np.abs(u_end - const)))
    col.values["deviation_end"] = deviation
    col.le("deviation_end", deviation, ch.deviation_max)


def _ledger(col, cfg, traj, spec):
    led = dg.build_ledger(traj, spec)
    col.csv("ledger.csv", led.header, led.rows())
    col.values["ledger_max_residual"] = led.max_residual
    col.le("ledger_max_residual", led.max_residual, cfg.checks.ledger_max_residual)


def _harnack(col, cfg, traj, spec):
    d = cfg.diagnostics
    params = dg.HarnackParams(a=d.harnack_a, t_floor=d.harnack_t_floor)
    rep = dg.harnack_monitor(traj, spec, params)
    col.csv("harnack.csv", rep.header, rep.rows())
    col.values["harnack_sup"] = rep.global_sup
    col.values["harnack_min_u"] = float(np.min(rep.min_u)) if len(rep.min_u) else float("nan")
    col.flag("harnack_finite", rep.all_finite and len(rep.sup_F) > 0)
    col.flag("harnack_positive", bool(np.all(rep.min_u > 0)))
    if d.harnack_refine:
        fine_grid = build_grid(cfg, refine=2)
        fine_spec = build_flow(cfg, initial_field(cfg.initial, fine_grid, cfg.seed))
        fine = run(fine_spec, build_controls(cfg))
        rep2 = dg.harnack_monitor(fine, fine_spec, params)
        col.csv("harnack_refined.csv", rep2.header, rep2.rows())
        rel = abs(rep.global_sup - rep2.global_sup) / max(abs(rep2.global_sup), 1e-300)
        col.values["harnack_sup_refined"] = rep2.global_sup
        col.values["harnack_refine_rel"] = rel
        col.le("harnack_refine_rel", rel, cfg.checks.harnack_refine_rel)


def _steady(col, cfg, traj, spec):
    d = cfg.diagnostics
    rep = dg.steady_extract(traj, spec, tail_tol=d.steady_tail_tol)
    col.values["lambda_inf"] = rep.lambda_inf
    col.values["steady_residual"] = rep.residual_l2
    col.le("steady_residual", rep.residual_l2, cfg.checks.steady_residual_max)
    if d.steady_oracle:
        u_or, lam_or = dg.steady_oracle(spec.forcing.at(float(traj.times[-1])))
        du = _l2(rep.u_inf.values - u_or.values, spec.grid)
        dl = abs(rep.lambda_inf - lam_or)
        col.text("u_oracle.txt", format_snapshot(u_or))
        col.values.update(lambda_oracle=lam_or, oracle_u_l2=du, oracle_lambda_abs=dl)
        col.le("oracle_u_l2", du, cfg.checks.oracle_tol)
        col.le("oracle_lambda_abs", dl, cfg.checks.oracle_tol)


def _stability(col, cfg, traj, partner):
    rep = dg.stability_compare(traj, partner)
    col.csv("stability.csv", rep.header, rep.rows())
    col.values.update(fitted_C_l2=rep.fitted_C_l2, fitted_C_h1=rep.fitted_C_h1,
                      bound_holds_l2=rep.bound_holds_l2, bound_holds_h1=rep.bound_holds_h1)
    col.flag("stability_bound_holds", rep.bound_holds)
    col.lt("stability_C_l2", rep.fitted_C_l2, cfg.checks.stability_C_l2_max)


def _picard(col, cfg, traj, spec):
    rows = [(w, k, d[-1]) for w, (k, d) in enumerate(zip(traj.window_iterations, traj.window_distances))]
    col.csv("picard_windows.csv", ("window", "iterations", "final_distance"), rows)
    worst = max(traj.window_iterations)
    monotone = all(all(b < a for a, b in zip(d[1:], d[2:])) for d in traj.window_distances)
    col.values.update(picard_iterations=list(traj.window_iterations), picard_monotone=monotone)
    col.le("picard_iterations", worst, cfg.checks.picard_iter_max)
    col.flag("picard_monotone", monotone)
    if cfg.diagnostics.compare_direct:
        direct = run(spec, build_controls(cfg, scheme="imex"))
        # window iterates are unprojected; compare on the unit sphere
        normed = traj.normalized()
        diff = np.array([_l2(a - b, spec.grid) for a, b in zip(normed.values, direct.values)])
        raw = np.array([_l2(a - b, spec.grid) for a, b in zip(traj.values, direct.values)])
        col.csv("picard_vs_direct.csv", ("t", "l2_difference", "l2_difference_unprojected"),
                zip(traj.times, diff, raw))
        col.values["picard_direct_max"] = float(np.max(diff))
        col.values["picard_direct_max_unprojected"] = float(np.max(raw))
        col.le("picard_direct_max", float(np.max(diff)), cfg.checks.picard_direct_max)


def _decay(col, cfg, traj):
    rate = dg.deviation_decay_rate(traj)
    gap = dg.discrete_spectral_gap(traj.grid)
    rel = abs(rate - gap) / gap
    col.values.update(decay_rate=rate, spectral_gap=gap)
    col.le("decay_rate_rel", rel, cfg.checks.decay_rate_rel)


def _snapshots(col, cfg, traj):
    col.text("u_initial.txt", format_snapshot(traj.state(0)))
    col.text("u_final.txt", format_snapshot(traj.final))
    for t in cfg.output.snapshots:
        i = traj.index_of(t)
        col.text(f"u_t{traj.times[i]:.6g}.txt", format_snapshot(traj.state(i)))


def _execute(cfg: ExperimentConfig, col: _Collector):
    grid = build_grid(cfg)
    spec = build_flow(cfg, initial_field(cfg.initial, grid, cfg.seed))
    controls = build_controls(cfg)
    d = cfg.diagnostics
    if d.stability:
        partner_spec = spec.with_initial(initial_field(cfg.partner, grid, cfg.seed + 1))
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_u = pool.submit(run, spec, controls)
            fut_v = pool.submit(run, partner_spec, controls)
            traj, partner = fut_u.result(), fut_v.result()
    else:
        traj, partner = run(spec, controls), None

    col.csv("trajectory.csv", *_trajectory_table(traj, spec))
    _snapshots(col, cfg, traj)
    _trajectory_checks(col, cfg, traj, spec)
    if d.ledger:
        _ledger(col, cfg, traj, spec)
    if d.harnack:
        _harnack(col, cfg, traj, spec)
    if d.steady:
        _steady(col, cfg, traj, spec)
    if partner is not None:
        col.csv("partner_trajectory.csv", *_trajectory_table(partner, partner_spec))
        _stability(col, cfg, traj, partner)
    if traj.scheme == "picard":
        _picard(col, cfg, traj, spec)
    if d.decay_rate:
        _decay(col, cfg, traj)
    return traj


def _trajectory_table(traj: Trajectory, spec: FlowSpec):
    return TRAJECTORY_HEADER, trajectory_rows(traj, spec)


def _flush(out: Path, files: dict) -> list[str]:
    written = []
    for name, item in files.items():
        path = out / name
        if item[0] == "csv":
            write_csv(path, item[1], item[2])
        else:
            with open(path, "w", newline="") as fh:
                fh.write(item[1])
        written.append(name)
    return written


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunSummary:
    """Run ``cfg``, write every output under ``out_dir`` (default ``cfg.output.dir``).

    Exit code 0 when every enabled check passes, 1 when a check fails and
    2 when a run or diagnostic raised.
    """
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    col = _Collector()
    col.text("config.txt", serialize_config(cfg))
    error = None
    try:
        _execute(cfg, col)
    except NlheatError as exc:
        error = f"{type(exc).__name__}: {exc}"
        logger.error("experiment failed: %s", error)
    if error is not None:
        status, code = "error", EXIT_ERROR
    elif all(c.passed for c in col.checks):
        status, code = "pass", EXIT_OK
    else:
        status, code = "fail", EXIT_FAILED
    manifest = _flush(out, col.files) + ["summary.json"]
    summary = RunSummary(status, code, col.checks, time.perf_counter() - start, manifest, error,
                         cfg.preset, str(out), col.values)
    with open(out / "summary.json", "w", newline="") as fh:
        json.dump(_jsonable(summary.to_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
