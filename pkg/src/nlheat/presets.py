"""Named experiments with every numeric parameter pinned."""

from __future__ import annotations

from dataclasses import replace

from .config import ExperimentConfig, apply_overrides, format_value

__all__ = ["PRESETS", "preset_config", "list_presets"]

# name -> (description, overrides); catalog order is the listing order
PRESETS: dict[str, tuple[str, dict]] = {
    "linear_ground_state": (
        "forced-free linear flow (A = 0) from 1 + 0.1 sin 2pi x relaxes to the constant ground state",
        {
            "flow.variant": "linear",
            "initial.preset": "sine", "initial.amplitude": 0.1,
            "controls.dt": 1e-3, "controls.t_end": 2.0,
            "diagnostics.ledger": True, "diagnostics.steady": True, "diagnostics.decay_rate": True,
            "checks.lambda_end_max": 1e-6, "checks.deviation_max": 1e-4,
            "checks.steady_residual_max": 1e-4, "checks.decay_rate_rel": 0.05,
        },
    ),
    "linear_forced_steady": (
        "linear flow forced by A = 1 + cos 2pi x converges to the constrained elliptic solution",
        {
            "flow.variant": "linear",
            "forcing.shape": "cosine", "forcing.mean": 1.0, "forcing.amplitude": 1.0,
            "initial.preset": "constant",
            "controls.dt": 1e-3, "controls.t_end": 10.0, "controls.record_every": 10,
            "diagnostics.steady": True, "diagnostics.steady_oracle": True,
            "checks.steady_residual_max": 1e-3, "checks.oracle_tol": 1e-3,
        },
    ),
    "nonlinear_ground_state": (
        "power flow p = 3 from 1 + 0.3 sin 2pi x converges to u = 1, lambda = 1",
        {
            "flow.variant": "nonlinear", "flow.p": 3.0,
            "initial.preset": "sine", "initial.amplitude": 0.3,
            "controls.dt": 1e-3, "controls.t_end": 5.0,
            "diagnostics.ledger": True, "diagnostics.steady": True,
            "checks.lambda_end_target": 1.0, "checks.lambda_end_tol": 1e-4,
            "checks.steady_residual_max": 1e-6,
        },
    ),
    "nonlinear_fixed_point": (
        "power flow p = 3 started at its fixed point g = 1 stays there exactly",
        {
            "flow.variant": "nonlinear", "flow.p": 3.0,
            "initial.preset": "constant",
            "controls.dt": 1e-3, "controls.t_end": 1.0,
            "diagnostics.ledger": True, "diagnostics.harnack": True, "diagnostics.steady": True,
            "checks.lambda_end_target": 1.0, "checks.lambda_end_tol": 1e-12,
            "checks.deviation_max": 1e-12, "checks.ledger_max_residual": 1e-12,
            "checks.steady_residual_max": 1e-10,
        },
    ),
    "nonlinear_energy_identity": (
        "power flow p = 3 from 1 + 0.04 sin 2pi x, dense ledger for the dissipation identity",
        {
            "flow.variant": "nonlinear", "flow.p": 3.0,
            "initial.preset": "sine", "initial.amplitude": 0.04,
            "controls.dt": 1e-3, "controls.t_end": 5.0,
            "diagnostics.ledger": True,
            "checks.ledger_max_residual": 1e-3,
        },
    ),
    "stability_pair_linear": (
        "two nearby A = 0 linear runs; squared gaps and fitted Gronwall rates",
        {
            "flow.variant": "linear",
            "initial.preset": "sine", "initial.amplitude": 0.1,
            "partner.preset": "sine", "partner.amplitude": 0.1,
            "partner.amplitude2": 0.05, "partner.mode2": 1,
            "controls.dt": 1e-3, "controls.t_end": 0.25,
            "diagnostics.stability": True,
            "checks.stability_C_l2_max": 0.0,
        },
    ),
    "stability_pair_nonlinear": (
        "two nearby p = 3 power-flow runs; squared gaps and fitted Gronwall rates",
        {
            "flow.variant": "nonlinear", "flow.p": 3.0,
            "initial.preset": "sine", "initial.amplitude": 0.1,
            "partner.preset": "sine", "partner.amplitude": 0.1,
            "partner.amplitude2": 0.05, "partner.mode2": 1,
            "controls.dt": 1e-3, "controls.t_end": 0.25,
            "diagnostics.stability": True,
        },
    ),
    "harnack_monitor": (
        "power flow p = 2 from 1 + 0.5 sin 2pi x; sup F on [0.1, 2] with a = 2 at n and 2n",
        {
            "flow.variant": "nonlinear", "flow.p": 2.0,
            "initial.preset": "sine", "initial.amplitude": 0.5,
            "controls.dt": 1e-3, "controls.t_end": 2.0,
            "diagnostics.harnack": True, "diagnostics.harnack_a": 2.0,
            "diagnostics.harnack_t_floor": 0.1, "diagnostics.harnack_refine": True,
            "checks.harnack_refine_rel": 0.1,
        },
    ),
    "picard_vs_direct": (
        "successive linearization on windows of 0.05 against the projected direct scheme",
        {
            "flow.variant": "linear",
            "grid.n": (64,),
            "initial.preset": "sine", "initial.amplitude": 0.1,
            "controls.scheme": "picard", "controls.dt": 1e-4, "controls.t_end": 0.2,
            "controls.window": 0.05, "controls.picard_tol": 1e-8, "controls.picard_max_iter": 50,
            "controls.record_every": 10,
            "diagnostics.compare_direct": True,
            "checks.mass_tol": None,
            "checks.picard_direct_max": 1e-6, "checks.picard_iter_max": 10,
        },
    ),
}


def preset_config(name: str) -> ExperimentConfig:
    """Full config for ``name``; raises KeyError for unknown names."""
    _, overrides = PRESETS[name]
    entries = [(k, format_value(v), None) for k, v in overrides.items()]
    cfg = apply_overrides(ExperimentConfig(), entries)
    return replace(cfg, preset=name, output=replace(cfg.output, dir=f"nlheat_out/{name}"))


def list_presets() -> str:
    width = max(len(n) for n in PRESETS)
    return "\n".join(f"{name:<{width}}  {desc}" for name, (desc, _) in PRESETS.items()) + "\n"
