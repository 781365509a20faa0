"""Command-line entry point: ``annealboost <command> [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline

COMMANDS = ("synth",) + pipeline.STAGES[1:] + ("run",)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="annealboost",
                                description="Annealing-tuned boosted trees for LBTC prediction.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", type=Path, help="output directory (overrides config)")
    p.add_argument("--algorithm", choices=sorted(pipeline.ALGORITHM_LABELS),
                   help="restrict optimize/evaluate to one annealer")
    p.add_argument("--group", choices=pipeline.GROUPS, help="restrict optimize/evaluate to one data group")
    p.add_argument("--threshold", type=float, help="decision threshold for evaluation")
    p.add_argument("--profile", choices=sorted(pipeline.PROFILES), help="annealer budget profile")
    p.add_argument("--n", type=int, help="rows to synthesise")
    p.add_argument("--prevalence", type=float, help="LBTC prevalence of synthesised data")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> pipeline.RunConfig:
    d = pipeline.load_config(args.config).to_dict() if args.config else {}
    if args.profile is not None:
        # budgets come from the profile unless the config pins them explicitly
        if args.config is None or d.get("profile") != args.profile:
            d["annealers"] = {}
        d["profile"] = args.profile
    for key in ("seed", "threshold"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    if args.out is not None:
        d["out"] = str(args.out)
    data = d.setdefault("data", {})
    if args.n is not None:
        data["synth_n"] = args.n
    if args.prevalence is not None:
        data["prevalence"] = args.prevalence
    return pipeline.RunConfig.from_dict(d)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    try:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            manifest = pipeline.run_all(cfg)
            print(manifest)
            return 0
        selector = {"group": args.group, "alg": args.algorithm}
        paths = pipeline.run_stage(args.command, cfg, **selector)
        pipeline.write_manifest(cfg)
    except pipeline.StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error [manifest] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
