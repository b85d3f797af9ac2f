"""Command-line driver: ``stirk <command> --config <path> [--out DIR] [--workers N] [--force]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from .errors import ConfigError
from .experiments import COMMANDS, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

HELP = {
    "generate": "simulate and write noisy trajectory datasets",
    "train": "train roll-out Koopman models for every (seed, noise) cell",
    "evaluate": "normalized errors and MSE curves for the configured methods",
    "mpc": "closed-loop MPC episodes with a trained model",
    "iterate": "closed-loop data augmentation rounds",
    "ablation": "2x2x2x2 training-component grid",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stirk", description="Koopman roll-out training, evaluation and MPC experiments.")
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        s = sub.add_parser(name, help=HELP[name])
        s.add_argument("--config", required=True, help="experiment config (JSON)")
        s.add_argument("--out", help="output directory (default: the config's output_dir)")
        s.add_argument("--workers", type=int, default=1, help="worker processes for independent cells")
        s.add_argument("--force", action="store_true", help="replace an existing output directory")
        s.add_argument("--noise-index", type=int, action="append", dest="noise_index",
                       help="restrict to noise level(s) by grid position 0-9")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _seed_override():
    raw = os.environ.get("STIRK_SEED")
    if raw is None or raw == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError("STIRK_SEED", f"must be an integer, got {raw!r}") from None
    if value < 0:
        raise ConfigError("STIRK_SEED", "must be non-negative")
    return value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _seed_override())
        if args.noise_index:
            for k in args.noise_index:
                if not 0 <= k < 10:
                    raise ConfigError("--noise-index", f"must be in 0..9, got {k}")
            cfg.dataset.noise_indices = list(args.noise_index)
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        out = Path(args.out or cfg.output_dir)
        if (out / f"{args.command}_result.json").exists() and not args.force:
            raise ConfigError("--out", f"{out} already holds {args.command} output (use --force)")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    # build into a staging directory so an abort leaves no partial output behind
    staging = out.with_name(out.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    if out.exists():
        # later commands read what earlier ones wrote (data, models)
        shutil.copytree(out, staging)
    staging.mkdir(parents=True, exist_ok=True)
    try:
        result = COMMANDS[args.command](cfg, staging, workers=args.workers)
        (staging / "config.json").write_text(json.dumps({"config_hash": cfg.digest(), "seed": cfg.seed,
                                                         "config": cfg.to_dict()}, indent=1, sort_keys=True))
        (staging / f"{args.command}_result.json").write_text(json.dumps(result, indent=1, sort_keys=True, default=str))
    except ConfigError as exc:
        shutil.rmtree(staging, ignore_errors=True)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        shutil.rmtree(staging, ignore_errors=True)
        logging.getLogger("stirk").exception("%s failed", args.command)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if out.exists():
        shutil.rmtree(out)
    staging.rename(out)
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
