"""Command-line entry point: train, eval, extract, plot.

Exit codes: 0 success, 2 configuration error, 3 runtime abort (e.g. a
non-finite loss). Every command is deterministic given its config and
seeds, and writes only inside its output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_keys, load_config, save_config
from .frames import extract_blobs, blobs_to_features, write_entity_csv
from .image_io import read_image
from .playground import Playground, ScenarioSpec, write_event_csv
from .plot import plot_metrics_files
from .ppo import TrainAbort, evaluate, load_policy, run_episode, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entityrl",
                                     description="Entity-based RL workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy on a playground scenario")
    p_train.add_argument("--scenario", choices=("candy_poison", "candy_fireballs",
                                                "dispenser_fireballs"))
    p_train.add_argument("--encoder", choices=("cnn", "slot", "gnn"))
    p_train.add_argument("--config", type=Path, help="flat key-value config file")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--steps", type=int, help="total environment steps")
    p_train.add_argument("--out", type=Path, required=True)
    p_train.add_argument("--large", action="store_true", help="1000x1000 room variant")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=123456)
    p_eval.add_argument("--render", type=Path, help="write PPM frames of episode 0 here")

    p_extract = sub.add_parser("extract", help="segment image frames into entity CSV rows")
    p_extract.add_argument("frames", nargs="+", type=Path, help="PPM/PNG frames, stack order")
    p_extract.add_argument("--out", type=Path, required=True, help="output CSV path")
    p_extract.add_argument("--min-area", type=int, default=1)
    p_extract.add_argument("--background", help="fixed background color 'r,g,b' (default: modal)")

    p_plot = sub.add_parser("plot", help="render training curves from metrics CSVs")
    p_plot.add_argument("csvs", nargs="+", type=Path)
    p_plot.add_argument("--out", type=Path, required=True, help="output SVG path")
    p_plot.add_argument("--title", default="Training reward")
    return parser


def _resolve_train_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.scenario:
        overrides["scenario"] = args.scenario
    if args.large:
        overrides["scenario.large"] = True
    if args.encoder:
        overrides["encoder"] = args.encoder
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    cfg = apply_keys(cfg, overrides)
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    result = train(cfg, args.out, log=log)
    print(f"trained {result.env_steps} steps; final eval reward "
          f"{result.mean_reward:.2f}; checkpoint {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    policy, cfg = load_policy(args.checkpoint)
    if args.render is not None:
        spec = ScenarioSpec.from_config(cfg)
        pg = Playground(spec, args.seed)
        events: list = []
        reward = run_episode(policy, pg, cfg, greedy=True,
                             render_dir=args.render, event_rows=events)
        write_event_csv(Path(args.render) / "events.csv", events)
        print(f"rendered episode reward {reward:.2f} -> {args.render}")
    mean_reward, rewards = evaluate(policy, cfg, args.episodes, args.seed)
    if not np.isfinite(mean_reward):
        raise TrainAbort(f"evaluation produced non-finite reward {mean_reward}")
    print(f"episodes {args.episodes} mean_reward {mean_reward:.3f} "
          f"min {min(rewards):.2f} max {max(rewards):.2f}")
    return EXIT_OK


def cmd_extract(args) -> int:
    background = None
    if args.background:
        parts = args.background.split(",")
        if len(parts) != 3:
            raise ConfigError(f"--background expects 'r,g,b', got {args.background!r}")
        background = tuple(int(p) for p in parts)
    stack_count = len(args.frames)
    rows = []
    for s, frame_path in enumerate(args.frames):
        frame = read_image(frame_path)
        blobs = extract_blobs(frame, min_area=args.min_area, background=background)
        feats = blobs_to_features(blobs, (frame.shape[1], frame.shape[0]), s, stack_count)
        rows.append((s, feats))
    write_entity_csv(args.out, rows)
    total = sum(len(feats) for _, feats in rows)
    print(f"extracted {total} entities from {stack_count} frame(s) -> {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    plot_metrics_files(args.csvs, args.out, title=args.title)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"train": cmd_train, "eval": cmd_eval,
               "extract": cmd_extract, "plot": cmd_plot}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainAbort as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
