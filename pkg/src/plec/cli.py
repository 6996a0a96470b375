"""Command-line entry point: ``plec learn|mitigate|ising|gamma|bases``.

Exit codes: 0 on success, 1 for user errors (bad or missing config, missing
files), 2 for internal failures.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from typing import Sequence

from .pipeline import COMMANDS, ConfigError, ExperimentConfig, run_command

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plec", description="Noise learning and error cancellation experiments on simulated devices.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the config's master seed")
    p.add_argument("--out", help="root directory for run outputs")
    p.add_argument("--backend", choices=("clifford", "state"), help="simulator backend")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = ExperimentConfig.load(args.config, seed=args.seed, out=args.out, backend=args.backend)
        path = run_command(args.command, cfg, args.jobs)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"plec: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        traceback.print_exc()
        print("plec: internal error", file=sys.stderr)
        return EXIT_INTERNAL
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
