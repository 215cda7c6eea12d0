"""Command line entry point: ``roughmckv <subcommand> [flags]``.

Exit codes: 0 on success, 1 for an unreadable or invalid config, 2 for an
unknown experiment id.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path as FsPath

import yaml

from . import corpus
from .corpus import ExperimentConfig
from .io import write_manifest

EXIT_CONFIG = 1
EXIT_EXPERIMENT = 2

_LIST_FIELDS = {"levels", "fp_levels"}


class ConfigError(Exception):
    pass


def _field_types() -> dict:
    out = {}
    for f in dataclasses.fields(ExperimentConfig):
        default = f.default
        if f.name in _LIST_FIELDS:
            out[f.name] = "list"
        elif f.name == "sigma":
            out[f.name] = float
        else:
            out[f.name] = type(default)
    return out


def _coerce(name: str, value, kind, where: str):
    if value is None and name == "sigma":
        return None
    if kind == "list":
        if isinstance(value, str):
            return parse_levels(value)
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: '{name}' must be a list of integers")
        return tuple(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: '{name}' must be a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: '{name}' must be an integer")
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{where}: '{name}' must be a string")
    return value


def load_config(path) -> dict:
    """Parse a YAML mapping into config fields; errors name ``file:line``."""
    p = FsPath(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc.strerror}") from None
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{p}:{line}: malformed YAML ({getattr(exc, 'problem', exc)})") from None
    if node is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{p}:{node.start_mark.line + 1}: config must be a mapping")
    types = _field_types()
    out = {}
    for key_node, val_node in node.value:
        where = f"{p}:{key_node.start_mark.line + 1}"
        key = key_node.value
        if key not in types:
            raise ConfigError(f"{where}: unknown key '{key}'")
        value = yaml.safe_load(yaml.serialize(val_node))
        out[key] = _coerce(key, value, types[key], where)
    try:
        ExperimentConfig(**out)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{p}:1: {exc}") from None
    return out


def parse_levels(text: str) -> tuple:
    """``"4,5,6"`` or ``"4:8"`` (inclusive)."""
    text = text.strip()
    try:
        if ":" in text:
            a, b = text.split(":")
            return tuple(range(int(a), int(b) + 1))
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"invalid levels specification {text!r}") from None


def thread_cap() -> int | None:
    raw = os.environ.get("ROUGHMCKV_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ROUGHMCKV_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"ROUGHMCKV_THREADS must be a positive integer, got {raw!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughmckv", description="Rough McKean-Vlasov experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    from .experiments import RUNNERS

    for name in RUNNERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--experiment", help="corpus id")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--streams", type=int, help="first Brownian stream id")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--N", type=int, dest="N", help="particle count")
        sp.add_argument("--levels", help="dyadic levels, e.g. 4:10 or 4,6,8")
    sub.add_parser("list", help="list experiment ids")
    return parser


def resolve_config(args) -> ExperimentConfig:
    fields = load_config(args.config) if args.config else {}
    for name in ("experiment", "seed", "streams", "out", "N"):
        v = getattr(args, name)
        if v is not None:
            fields[name] = v
    if args.levels is not None:
        fields["levels"] = parse_levels(args.levels)
    try:
        return ExperimentConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for k, v in corpus.CORPORA.items():
            print(f"{k}\t{v}")
        return 0
    from .experiments import RUNNERS, UnsupportedExperiment

    try:
        cap = thread_cap()
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.experiment not in corpus.CORPORA:
        print(f"error: unknown experiment '{cfg.experiment}'", file=sys.stderr)
        return EXIT_EXPERIMENT
    limiter = None
    if cap is not None:
        try:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(cap)
        except ImportError:
            pass
    try:
        summary = RUNNERS[args.command](cfg)
    except UnsupportedExperiment:
        print(f"error: experiment '{cfg.experiment}' does not support '{args.command}'", file=sys.stderr)
        return EXIT_EXPERIMENT
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    entries = {"command": args.command, "config": dataclasses.asdict(cfg), "threads": cap or 1, **summary}
    write_manifest(cfg.out, entries)
    for k, v in summary.items():
        if k != "provenance":
            print(f"{k}={v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
