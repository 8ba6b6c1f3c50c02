"""Command line entry point.

::

    nlheat run CONFIG [--out DIR]
    nlheat preset NAME [--out DIR] [--override key=value ...]
    nlheat list-presets
    nlheat version

The output directory is taken from ``--out``, then ``$NLHEAT_OUT``, then
the config's ``output.dir``. The exit status is 0 when every enabled check
passes, 1 when one fails and 2 on errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import apply_overrides, parse_config, validate
from .errors import ConfigParseError, NlheatError
from .experiment import EXIT_ERROR, run_experiment
from .presets import PRESETS, list_presets, preset_config

ENV_OUT = "NLHEAT_OUT"


def _parse_override(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip(), None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlheat", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment described by a config file")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, help="output directory")

    p_pre = sub.add_parser("preset", help="run a named preset")
    p_pre.add_argument("name", choices=list(PRESETS))
    p_pre.add_argument("--out", type=Path, help="output directory")
    p_pre.add_argument("--override", type=_parse_override, action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key (repeatable)")

    sub.add_parser("list-presets", help="print the preset catalog")
    sub.add_parser("version", help="print the package version")
    return parser


def _out_dir(args, cfg):
    if args.out is not None:
        return args.out
    if os.environ.get(ENV_OUT):
        return Path(os.environ[ENV_OUT])
    return Path(cfg.output.dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "version":
        print(__version__)
        return 0
    if args.command == "list-presets":
        sys.stdout.write(list_presets())
        return 0
    try:
        if args.command == "run":
            cfg = parse_config(args.config.read_text())
        else:
            cfg = validate(apply_overrides(preset_config(args.name), args.override))
    except (ConfigParseError, OSError) as exc:
        print(f"nlheat: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = _out_dir(args, cfg)
    cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
    try:
        summary = run_experiment(cfg, out)
    except (NlheatError, OSError) as exc:
        print(f"nlheat: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(summary.report())
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
