"""Command line entry point: ``bhdimer {run,validate,cache-gc,describe}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, OPTION_DEFAULTS, ConfigError, load_config
from .eigensolver import NonConvergenceError
from .liouvillian import SymmetryViolationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_SYMMETRY = 4


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("config", help="YAML experiment file")
    p.add_argument(
        "-s",
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config leaf by dotted path, e.g. solver.n_pairs=8 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bhdimer", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment and write data files + manifest")
    _add_config_args(p_run)
    p_run.add_argument("-o", "--output", help="output directory (overrides config 'output')")

    p_val = sub.add_parser("validate", help="static checks without solving anything")
    _add_config_args(p_val)

    p_gc = sub.add_parser("cache-gc", help="prune the eigensystem cache")
    p_gc.add_argument("--max-age-days", type=float, default=30.0)
    p_gc.add_argument("--all", action="store_true", help="remove every entry")
    p_gc.add_argument("--dry-run", action="store_true")

    sub.add_parser("describe", help="print presets, the cutoff ladder and experiment kinds")
    return parser


def describe(out=None):
    out = out or sys.stdout
    from .experiments import CACHE_ENV, cache_root, memory_estimate
    from .model import CUTOFF_LADDER, K_A_DEFAULT, PRESETS

    print("presets:", file=out)
    for name, p in PRESETS.items():
        fields = "  ".join(f"{k}={v}" for k, v in p.as_dict().items())
        print(f"  {name}: {fields}", file=out)
    print(f"\ncutoff ladder (K_A = {K_A_DEFAULT}):", file=out)
    print(f"  {'N':>3} {'K_B':>5} {'dim':>6} {'dim^2':>9}", file=out)
    for n, kb in CUTOFF_LADDER.items():
        est = memory_estimate(kb, K_A_DEFAULT)
        print(f"  {n:>3} {kb:>5} {est['dim']:>6} {est['vectorized_dim']:>9}", file=out)
    print("\nexperiments:", file=out)
    for k in KINDS:
        print(f"  {k}: options {sorted(OPTION_DEFAULTS[k])}", file=out)
    print(f"\ncache root: {cache_root()} (set {CACHE_ENV} to change)", file=out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    from . import experiments

    try:
        if args.command == "describe":
            describe()
            return EXIT_OK
        if args.command == "cache-gc":
            removed = experiments.cache_gc(None if args.all else args.max_age_days, args.dry_run)
            verb = "would remove" if args.dry_run else "removed"
            print(f"{verb} {len(removed)} cache entries")
            return EXIT_OK
        cfg = load_config(args.config, args.overrides)
        if args.command == "validate":
            diags = experiments.validate(cfg)
            for d in diags:
                print(d)
            return EXIT_CONFIG if any(d.level == "error" for d in diags) else EXIT_OK
        errors = [d for d in experiments.validate(cfg) if d.level == "error"]
        if errors:
            for d in errors:
                print(d, file=sys.stderr)
            return EXIT_CONFIG
        man = experiments.run(cfg, args.output)
        print(f"{cfg.kind}: {len(man.files)} files, {man.wall_seconds:.1f}s, config {man.config_hash[:12]}")
        for f in man.files:
            print(f"  {f['path']}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except SymmetryViolationError as exc:
        print(f"symmetry violation: {exc}", file=sys.stderr)
        return EXIT_SYMMETRY


if __name__ == "__main__":
    sys.exit(main())
