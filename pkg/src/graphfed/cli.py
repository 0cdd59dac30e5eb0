"""Command-line entry point: ``graphfed run | summarize | preset``."""
from __future__ import annotations

import argparse
import logging
import sys

import yaml

from .exceptions import ParseError
from .experiments import OUT_DIR_ENV, PRESETS, ExperimentConfig, preset, run_experiment, summarize


def _parse_value(text):
    return yaml.safe_load(text)


def apply_overrides(cfg: ExperimentConfig, assignments) -> ExperimentConfig:
    """Apply ``key=value`` overrides; ``grid.<key>`` addresses grid lists."""
    raw = cfg.to_dict()
    for item in assignments or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        value = _parse_value(value)
        parts = key.split(".")
        if parts[0] == "grid":
            raw["grid"][parts[1]] = value if isinstance(value, list) else [value]
            continue
        for section in ("model", "data", "run"):
            if parts[-1] in raw[section]:
                raw[section][parts[-1]] = value
                break
        else:
            if parts[-1] not in raw:
                raise SystemExit(f"unknown config key {key!r}")
            raw[parts[-1]] = value
    return ExperimentConfig.from_dict(raw)


def build_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = ExperimentConfig()
    cfg = apply_overrides(cfg, args.set)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.repeats is not None:
        changes["repeats"] = args.repeats
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.trace:
        changes["trace"] = True
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="graphfed", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid and write results.csv")
    run.add_argument("--config", help="YAML experiment config")
    run.add_argument("--preset", choices=PRESETS)
    run.add_argument("--seed", type=int)
    run.add_argument("--repeats", type=int)
    run.add_argument("--out-dir", help=f"output directory (default: ${OUT_DIR_ENV} or ./results)")
    run.add_argument("--workers", type=int)
    run.add_argument("--trace", action="store_true", help="write per-round training traces")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config value, e.g. grid.d=[10] or n_components=4")

    summ = sub.add_parser("summarize", help="mean and standard error per cell and method")
    summ.add_argument("results")
    summ.add_argument("-o", "--output", help="summary CSV path (default: <results>_summary.csv)")

    pre = sub.add_parser("preset", help="print a preset as a YAML config")
    pre.add_argument("name", choices=PRESETS)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "preset":
        sys.stdout.write(preset(args.name).dump())
        return 0
    if args.command == "summarize":
        out = args.output or str(args.results).removesuffix(".csv") + "_summary.csv"
        try:
            summarize(args.results, out)
        except (OSError, ParseError) as exc:
            print(f"graphfed: {exc}", file=sys.stderr)
            return 2
        print(out)
        return 0

    if args.config and args.preset:
        parser.error("--config and --preset are mutually exclusive")
    try:
        cfg = build_config(args)
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        print(f"graphfed: invalid configuration: {exc}", file=sys.stderr)
        return 2
    outcome = run_experiment(cfg)
    print(outcome.results_path)
    if outcome.n_errors:
        print(f"{outcome.n_errors} result rows carry errors", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
