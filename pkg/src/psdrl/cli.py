"""Command-line entry point: ``psdrl run | eval | dump-rollout``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .agent import MODES
from .config import ConfigError, load_config
from .experiment import dump_rollout, evaluate, resolve_out_dir, run_experiment, run_seed, summarize


def _progress(seed: int, row: dict) -> None:
    print(
        f"seed {seed} step {row['step']}: eval {row['eval_return']:.4f} train {row['train_return']:.4f} "
        f"model {row['model_id']}",
        file=sys.stderr,
        flush=True,
    )


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.mode is not None:
        overrides["run.mode"] = args.mode
    if args.seed is not None:
        overrides["run.seeds"] = (args.seed,)
    if args.steps is not None:
        overrides["run.steps"] = args.steps
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    progress = None if args.quiet else _progress
    if args.resume is not None:
        out = resolve_out_dir(cfg, args.out)
        sr = run_seed(cfg, cfg.run.seeds[0], out, resume=args.resume, progress=progress)
        last = sr.rows[-1].split(",")[2] if sr.rows else "nan"
        (out / "summary.csv").write_text(summarize({sr.seed: float(last)}))
        return 0
    return run_experiment(cfg, args.out, progress=progress)


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint

    if args.episodes < 1:
        raise ValueError("--episodes must be >= 1")
    sr = load_checkpoint(args.checkpoint)
    ret = evaluate(sr.agent, sr.runner.env, args.episodes)
    print(repr(ret))
    return 0


def cmd_dump_rollout(args) -> int:
    from .checkpoint import load_checkpoint

    sr = load_checkpoint(args.checkpoint)
    ckpt = Path(args.checkpoint)
    out = Path(args.out) if args.out else ckpt.parent / f"{ckpt.stem}_rollout"
    mses = dump_rollout(sr.agent, sr.runner.env, args.horizon, out)
    print(f"wrote {len(mses)} steps to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psdrl", description="Posterior-sampling model-based RL experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="key = value config file")
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--seed", type=int, help="run this single seed instead of run.seeds")
    run.add_argument("--steps", type=int, help="override run.steps")
    run.add_argument("--out", help="output directory (else $PSDRL_OUT_DIR, else run.out_dir)")
    run.add_argument("--resume", help="continue from a checkpoint written by an earlier run")
    run.add_argument("--quiet", action="store_true", help="no per-row progress on stderr")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=3)
    ev.set_defaults(func=cmd_eval)

    dump = sub.add_parser("dump-rollout", help="export decoded open-loop predictions as PGM images")
    dump.add_argument("--checkpoint", required=True)
    dump.add_argument("--horizon", type=int, required=True)
    dump.add_argument("--out", help="output directory (default: next to the checkpoint)")
    dump.set_defaults(func=cmd_dump_rollout)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"psdrl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
