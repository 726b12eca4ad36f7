"""Command line entry point: ``ulamstab run|validate|schema``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import CONFIG_SCHEMA, ConfigError, parse_config

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return None
    try:
        return parse_config(text)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return None


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ulamstab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="validate a config without running it")
    p_val.add_argument("config")
    sub.add_parser("schema", help="print the config JSON schema")
    args = parser.parse_args(argv)

    if args.command == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_OK
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_INVALID
    if args.command == "validate":
        print(f"ok: {cfg.experiment} on {cfg.group}")
        return EXIT_OK

    from .experiments import failure_record, run_experiment

    result = run_experiment(cfg)
    led = result.manifest["ledger"]
    print(f"{cfg.experiment}: {len(result.artifacts)} files in {result.output_dir}; "
          f"ledger pass={led['pass']} fail={led['fail']} na={led['na']}")
    if result.exit_status != EXIT_OK:
        print(failure_record(result), file=sys.stderr)
    return result.exit_status


if __name__ == "__main__":
    sys.exit(main())
