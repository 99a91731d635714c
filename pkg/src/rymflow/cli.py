"""Command line: run, sweep, verify, preset."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, load_config, preset_config
from .experiment import EXIT_AUDIT, EXIT_CONFIG, EXIT_OK, run_experiment

log = logging.getLogger("rymflow")


def _run_path(path: str, out_root: str | None) -> int:
    try:
        return run_experiment(load_config(path), out_root)
    except ConfigError as exc:
        log.error("%s: %s", path, exc)
        return EXIT_CONFIG


def cmd_run(args) -> int:
    return _run_path(args.config, args.out)


def cmd_sweep(args) -> int:
    configs = sorted(Path(args.directory).glob("*.json"))
    if not configs:
        log.error("no *.json configs in %s", args.directory)
        return EXIT_CONFIG
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        codes = list(pool.map(_run_path, map(str, configs), [args.out] * len(configs)))
    for path, code in zip(configs, codes):
        print(f"{path.name}: exit {code}")
    return max(codes)


def cmd_preset(args) -> int:
    try:
        cfg = preset_config(args.case)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(cfg.echo())
        return EXIT_OK
    try:
        return run_experiment(cfg, args.out)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


def cmd_verify(args) -> int:
    from .acceptance import run_all

    numbers = [int(n) for n in args.only.split(",")] if args.only else None
    results = run_all(numbers)
    if args.json:
        payload = [{"criterion": r.number, "title": r.title, "passed": r.passed, "elapsed": r.elapsed,
                    "checks": {k: {"passed": ok, "value": repr(v)} for k, (ok, v) in r.checks.items()}}
                   for r in results]
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_AUDIT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rymflow", description="Ricci-Yang-Mills flow on torus bundles over surfaces.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one JSON config")
    r.add_argument("config")
    r.add_argument("--out", help="output root (overrides RYM_OUT_DIR and outputs.dir)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every *.json config in a directory")
    s.add_argument("directory")
    s.add_argument("--jobs", type=int, default=None)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--only", help="comma-separated criterion numbers")
    v.add_argument("--json", help="also write results to this file")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("preset", help="run a curvature-case preset")
    c.add_argument("case", choices=["case1", "case2", "case3", "case4"])
    c.add_argument("--out")
    c.add_argument("--print-config", action="store_true", help="print the preset config and exit")
    c.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
