"""Experiment configuration: a flat, sectioned key-value document.

Grammar (one entry per line)::

    # comment
    [section]            # optional; prefixes following bare keys
    key = value          # inside a section
    section.key = value  # fully qualified, anywhere

Values are numbers, booleans (``true``/``false``), ``none``, bare or
double-quoted strings, or comma-separated lists. A top-level
``preset = <name>`` starts from that preset; every other key overrides it.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import ConfigParseError

__all__ = [
    "GridConfig",
    "FlowConfig",
    "ForcingConfig",
    "InitialConfig",
    "ControlsConfig",
    "DiagnosticsConfig",
    "ChecksConfig",
    "OutputConfig",
    "ExperimentConfig",
    "parse_config",
    "serialize_config",
    "apply_overrides",
]


@dataclass(frozen=True)
class GridConfig:
    dim: int = 1
    n: tuple[int, ...] = (128,)
    L: tuple[float, ...] = (1.0,)


@dataclass(frozen=True)
class FlowConfig:
    variant: str = "linear"
    p: float = 3.0


@dataclass(frozen=True)
class ForcingConfig:
    shape: str = "zero"          # zero | constant | cosine
    mean: float = 1.0
    amplitude: float = 1.0
    mode: int = 1
    profile: str = "constant"    # constant | exp_decay
    rate: float = 0.0


@dataclass(frozen=True)
class InitialConfig:
    preset: str = "sine"         # constant | sine | random | file
    amplitude: float = 0.1
    mode: int = 1
    amplitude2: float = 0.0
    mode2: int = 1
    path: str = ""


@dataclass(frozen=True)
class ControlsConfig:
    scheme: str = "imex"
    dt: float = 1e-3
    t_end: float = 1.0
    window: float = 0.05
    picard_tol: float = 1e-8
    picard_max_iter: int = 50
    record_every: int = 1


@dataclass(frozen=True)
class DiagnosticsConfig:
    ledger: bool = False
    harnack: bool = False
    harnack_a: float = 2.0
    harnack_t_floor: float = 0.1
    harnack_refine: bool = False
    steady: bool = False
    steady_tail_tol: float = 1e-6
    steady_oracle: bool = False
    stability: bool = False
    compare_direct: bool = False
    decay_rate: bool = False


@dataclass(frozen=True)
class ChecksConfig:
    """Pass/fail thresholds; ``None`` disables a check."""

    mass_tol: Optional[float] = 1e-10
    lambda_end_max: Optional[float] = None
    lambda_end_target: Optional[float] = None
    lambda_end_tol: Optional[float] = None
    deviation_max: Optional[float] = None
    ledger_max_residual: Optional[float] = None
    steady_residual_max: Optional[float] = None
    oracle_tol: Optional[float] = None
    harnack_refine_rel: Optional[float] = None
    stability_C_l2_max: Optional[float] = None
    picard_direct_max: Optional[float] = None
    picard_iter_max: Optional[float] = None
    decay_rate_rel: Optional[float] = None


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "nlheat_out"
    snapshots: tuple[float, ...] = ()


SECTIONS = {
    "grid": GridConfig,
    "flow": FlowConfig,
    "forcing": ForcingConfig,
    "initial": InitialConfig,
    "partner": InitialConfig,
    "controls": ControlsConfig,
    "diagnostics": DiagnosticsConfig,
    "checks": ChecksConfig,
    "output": OutputConfig,
}
TOP_LEVEL = ("preset", "seed")


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    partner: InitialConfig = field(default_factory=lambda: InitialConfig(amplitude2=0.05))
    controls: ControlsConfig = field(default_factory=ControlsConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    preset: Optional[str] = None


# -- value parsing ----------------------------------------------------------

def _hints(cls):
    return typing.get_type_hints(cls)


def _parse_scalar(raw, typ, key, line):
    s = raw.strip()
    try:
        if typ is bool:
            if s.lower() in ("true", "yes", "on", "1"):
                return True
            if s.lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if typ is int:
            v = float(s)
            if not v.is_integer():
                raise ValueError
            return int(v)
        if typ is float:
            v = float(s)
            if not math.isfinite(v):
                raise ValueError
            return v
        if typ is str:
            if len(s) >= 2 and s[0] == s[-1] == '"':
                return s[1:-1]
            return s
    except ValueError:
        pass
    raise ConfigParseError(f"expected {typ.__name__}, got {raw.strip()!r}", key, line)


def parse_value(raw: str, typ, key=None, line=None):
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(typ) if a is not type(None)][0]
        if raw.strip().lower() in ("none", "null", ""):
            return None
        return parse_value(raw, inner, key, line)
    if origin is tuple:
        inner = typing.get_args(typ)[0]
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(_parse_scalar(p, inner, key, line) for p in parts)
    return _parse_scalar(raw, typ, key, line)


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, str):
        return f'"{v}"' if (v == "" or v != v.strip() or "#" in v) else v
    return str(v)


# -- documents --------------------------------------------------------------

def _tokenize(text):
    """Yield ``(qualified_key, raw_value, line_number)``."""
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(line)
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigParseError(f"unknown section [{section}]", section, lineno)
            continue
        if "=" not in stripped:
            raise ConfigParseError(f"expected 'key = value', got {stripped!r}", None, lineno)
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if "." not in key and section is not None:
            key = f"{section}.{key}"
        yield key, raw, lineno


def _strip_comment(line):
    out, quoted = [], False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).strip()


def _field_type(key, line):
    if key == "seed":
        return int
    if key == "preset":
        return str
    sect, _, name = key.partition(".")
    cls = SECTIONS.get(sect)
    if cls is None or name not in {f.name for f in fields(cls)}:
        raise ConfigParseError("unknown key", key, line)
    return _hints(cls)[name]


def _set(cfg: ExperimentConfig, key: str, value) -> ExperimentConfig:
    if "." not in key:
        return dataclasses.replace(cfg, **{key: value})
    sect, _, name = key.partition(".")
    sub = dataclasses.replace(getattr(cfg, sect), **{name: value})
    return dataclasses.replace(cfg, **{sect: sub})


def apply_overrides(cfg: ExperimentConfig, entries) -> ExperimentConfig:
    """Apply ``(key, raw_value, line)`` triples to ``cfg``."""
    for key, raw, line in entries:
        cfg = _set(cfg, key, parse_value(raw, _field_type(key, line), key, line))
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config document; defaults fill every missing key."""
    entries = list(_tokenize(text))
    seen = {}
    for key, _, line in entries:
        _field_type(key, line)
        if key in seen:
            raise ConfigParseError(f"duplicate key (first set on line {seen[key]})", key, line)
        seen[key] = line
    base = ExperimentConfig()
    preset = next(((raw, line) for key, raw, line in entries if key == "preset"), None)
    if preset is not None:
        from .presets import preset_config

        name = parse_value(preset[0], str, "preset", preset[1])
        try:
            base = preset_config(name)
        except KeyError:
            raise ConfigParseError(f"unknown preset {name!r}", "preset", preset[1]) from None
    cfg = apply_overrides(base, [e for e in entries if e[0] != "preset"])
    validate(cfg, seen)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Render every key explicitly; ``parse_config`` inverts this exactly."""
    lines = [f"seed = {cfg.seed}"]
    if cfg.preset is not None:
        lines.insert(0, f"preset = {format_value(cfg.preset)}")
    for sect in SECTIONS:
        sub = getattr(cfg, sect)
        lines.append("")
        lines.append(f"[{sect}]")
        for f in fields(sub):
            lines.append(f"{f.name} = {format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


# -- validation -------------------------------------------------------------

def _problems(cfg: ExperimentConfig):
    g, fl, fo, c, d = cfg.grid, cfg.flow, cfg.forcing, cfg.controls, cfg.diagnostics
    if g.dim not in (1, 2):
        yield "grid.dim", "must be 1 or 2"
    if len(g.n) not in (1, g.dim) or any(k < 4 for k in g.n):
        yield "grid.n", "need one entry (or one per axis), each >= 4"
    if len(g.L) not in (1, g.dim) or any(not L > 0 for L in g.L):
        yield "grid.L", "need one positive entry (or one per axis)"
    if fl.variant not in ("linear", "nonlinear"):
        yield "flow.variant", "must be 'linear' or 'nonlinear'"
    if not fl.p > 1:
        yield "flow.p", "p > 1 required"
    if fo.shape not in ("zero", "constant", "cosine"):
        yield "forcing.shape", "must be zero, constant or cosine"
    if fo.profile not in ("constant", "exp_decay"):
        yield "forcing.profile", "must be constant or exp_decay"
    if fo.rate < 0:
        yield "forcing.rate", "must be >= 0"
    if fo.shape != "zero" and (fo.mean < 0 or (fo.shape == "cosine" and abs(fo.amplitude) > fo.mean)):
        yield "forcing.mean", "forcing must be non-negative (mean >= |amplitude|)"
    for sect in ("initial", "partner"):
        ini = getattr(cfg, sect)
        if ini.preset not in ("constant", "sine", "random", "file"):
            yield f"{sect}.preset", "must be constant, sine, random or file"
        if ini.preset in ("sine", "random") and abs(ini.amplitude) + abs(ini.amplitude2) >= 1:
            yield f"{sect}.amplitude", "|amplitude| + |amplitude2| must be < 1 to keep data positive"
        if ini.preset == "file" and not ini.path:
            yield f"{sect}.path", "required when preset = file"
        if ini.mode < 1 or ini.mode2 < 1:
            yield f"{sect}.mode", "modes must be >= 1"
    if c.scheme not in ("imex", "picard"):
        yield "controls.scheme", "must be imex or picard"
    if not c.dt > 0:
        yield "controls.dt", "must be > 0"
    if not c.t_end > 0:
        yield "controls.t_end", "must be > 0"
    elif c.dt > 0 and abs(round(c.t_end / c.dt) * c.dt - c.t_end) > 1e-9 * c.t_end:
        yield "controls.t_end", "must be an integer multiple of dt"
    if c.scheme == "picard" and not (c.dt < c.window <= c.t_end):
        yield "controls.window", "need dt < window <= t_end"
    if not c.picard_tol > 0:
        yield "controls.picard_tol", "must be > 0"
    if c.picard_max_iter < 1:
        yield "controls.picard_max_iter", "must be >= 1"
    if c.record_every < 1:
        yield "controls.record_every", "must be >= 1"
    if not d.harnack_a > 1:
        yield "diagnostics.harnack_a", "a > 1 required"
    if not d.harnack_t_floor > 0:
        yield "diagnostics.harnack_t_floor", "must be > 0"
    if d.steady_oracle and (fl.variant != "linear" or fo.shape == "zero"):
        yield "diagnostics.steady_oracle", "needs the linear flow with non-zero forcing"
    for f in fields(cfg.checks):
        v = getattr(cfg.checks, f.name)
        if v is not None and not v >= 0 and f.name != "stability_C_l2_max":
            yield f"checks.{f.name}", "thresholds must be >= 0"


def validate(cfg: ExperimentConfig, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    for key, msg in _problems(cfg):
        raise ConfigParseError(msg, key, lines.get(key))
    return cfg
