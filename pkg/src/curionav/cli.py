"""Command-line entry point: ``curionav <command> [flags]``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import RunConfig, parse_config, with_overrides
from .errors import ContractError, CurionavError

COMMANDS = ("explore-train", "caption-train", "run", "eval", "render-map")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curionav", description="Curiosity-driven explorer with a captioning speaker.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="TOML run configuration (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--episodes", type=int, help="number of test episodes for run")
    p.add_argument("--workers", type=int, default=1, help="episode-level worker processes for run")
    p.add_argument("--out", type=Path, help=f"output directory (default: ${pipeline.OUT_ENV} or ./curionav-out)")
    p.add_argument("--policy", choices=("object", "depth", "curiosity"), help="speaker policy for run")
    p.add_argument("--threshold", type=float, help="speaker threshold for run")
    p.add_argument("--layers", type=int, choices=(1, 2, 3, 6), help="captioner layers")
    return p


def resolve_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    top = {}
    if args.seed is not None:
        top["seed"] = args.seed
    if args.episodes is not None:
        top["episodes"] = args.episodes
    if top:
        cfg = replace(cfg, **top)
    over = {}
    speaker = {}
    if args.policy is not None:
        speaker["kind"] = args.policy
    if args.threshold is not None:
        speaker["threshold"] = args.threshold
    if speaker:
        over["speaker"] = speaker
    if args.layers is not None:
        over["captioner"] = {"layers": args.layers}
    cfg = with_overrides(cfg, **over)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = args.out or pipeline.default_out()
        if args.workers < 1:
            raise ContractError("--workers must be >= 1")
        if args.command == "explore-train":
            curve = pipeline.explore_train(cfg, out)
            print(f"trained {len(curve)} updates -> {out / pipeline.EXPLORER_FILE}")
        elif args.command == "caption-train":
            report = pipeline.caption_train(cfg, out)
            print(f"held-out token accuracy {report.heldout_accuracy:.4f} -> {out / pipeline.CAPTIONER_FILE}")
        elif args.command == "run":
            paths = pipeline.run_episodes(cfg, out, workers=args.workers)
            print(f"wrote {len(paths)} episode logs to {out / pipeline.LOG_DIR}")
        elif args.command == "eval":
            vocab = pipeline.load_vocabulary(out)
            report = pipeline.evaluate(cfg, out / pipeline.LOG_DIR, vocab)
            pipeline.write_report(report, out)
            print(report.to_table(), end="")
        elif args.command == "render-map":
            paths = pipeline.render_maps(cfg, out / pipeline.LOG_DIR, out / pipeline.MAP_DIR)
            print(f"wrote {len(paths)} maps to {out / pipeline.MAP_DIR}")
    except CurionavError as exc:
        print(f"curionav: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
