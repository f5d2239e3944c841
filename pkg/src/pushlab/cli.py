"""Command-line entry point: train / eval / compare over JSON run configs.

Exit codes: 0 success, 1 usage error (usage text on stderr), 2 runtime
failure (diagnostic on stderr). The default output root comes from the
PUSHLAB_OUT environment variable (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import harness
from .config import (
    VARIANTS,
    RunConfig,
    apply_override,
    config_from_dict,
    config_to_dict,
    describe_config_keys,
    load_config,
)


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_out_root() -> str:
    return os.environ.get("PUSHLAB_OUT", "runs")


def parse_seed_list(text: str):
    """Seed spec: '3', '0,2,5' or an inclusive range '0..4'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        start, stop = int(lo), int(hi)
        if stop < start:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(start, stop + 1))
    return [int(part) for part in text.split(",") if part != ""]


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="pushlab",
        description="Planar pushing RL lab: reward-hierarchy variants, PPO training, evaluation.",
        epilog="Config keys and defaults (override with --set key=value):\n"
        + describe_config_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser(
        "train",
        help="train one or more runs",
        epilog="Config keys and defaults:\n" + describe_config_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    tr.add_argument("--config", type=Path, help="JSON run config (defaults used when omitted)")
    tr.add_argument("--variant", choices=VARIANTS, help="reward mechanism variant")
    tr.add_argument("--seed", default=None, help="seed, list '0,1,2' or range '0..4'")
    tr.add_argument("--episodes", type=int, help="training episodes per run")
    tr.add_argument("--out", type=Path, help="output root (default $PUSHLAB_OUT or ./runs)")
    tr.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. --set ppo.lr=0.0005",
    )
    tr.add_argument("--jobs", type=int, default=1, help="concurrent runs (default 1)")
    tr.add_argument("--quiet", action="store_true", help="suppress per-episode progress")
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained checkpoint")
    ev.add_argument("--run", type=Path, help="run directory (uses its checkpoint and config)")
    ev.add_argument("--checkpoint", type=Path, help="explicit checkpoint path")
    ev.add_argument("--config", type=Path, help="JSON run config for the environment")
    ev.add_argument("--n", type=int, default=40, help="evaluation episodes (default 40)")
    ev.add_argument("--seed", type=int, default=10_000, help="base seed for eval resets")
    ev.add_argument("--out", type=Path, help="where to write eval.json (default: run dir)")
    ev.set_defaults(func=_cmd_eval)

    cp = sub.add_parser("compare", help="summarize completed runs (CSV + SVG curves)")
    cp.add_argument("runs", nargs="+", type=Path, help="run directories (need eval.json)")
    cp.add_argument("--out", type=Path, help="output directory for compare.csv / curves.svg")
    cp.set_defaults(func=_cmd_compare)
    return parser


def _resolve_train_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.variant:
        cfg.variant = args.variant
    if args.episodes is not None:
        cfg.episodes = args.episodes
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        apply_override(cfg, key, value)
    cfg.validate()
    return cfg


def _train_worker(cfg_dict: dict, verbose: bool):
    cfg = config_from_dict(cfg_dict)
    result = harness.train(cfg, verbose=verbose)
    return {
        "out_dir": str(result.out_dir),
        "variant": cfg.variant,
        "seed": cfg.seed,
        "successes": result.success_count,
        "constraint_terminations": result.constraint_terminations,
        "updates": result.updates,
    }


def _cmd_train(args) -> int:
    base = _resolve_train_config(args)
    seeds = parse_seed_list(str(args.seed)) if args.seed is not None else [base.seed]
    out_root = Path(args.out) if args.out else Path(_default_out_root())
    jobs = []
    for seed in seeds:
        cfg_dict = config_to_dict(base)
        cfg_dict["seed"] = seed
        cfg_dict["out_dir"] = str(out_root / f"{base.variant}_seed{seed}")
        jobs.append(cfg_dict)

    verbose = not args.quiet
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_worker, jobs, [False] * len(jobs)))
    else:
        results = [_train_worker(job, verbose) for job in jobs]
    for res in results:
        print(
            f"{res['variant']} seed={res['seed']}: {res['successes']} training successes, "
            f"{res['constraint_terminations']} gate terminations, {res['updates']} updates "
            f"-> {res['out_dir']}"
        )
    return 0


def _cmd_eval(args) -> int:
    if args.run:
        checkpoint = args.checkpoint or args.run / "checkpoint.bin"
        cfg = load_config(args.run / "config.json")
        env_cfg = cfg.env
        out_dir = args.out or args.run
    elif args.checkpoint:
        checkpoint = args.checkpoint
        env_cfg = (load_config(args.config).env if args.config else RunConfig().env)
        out_dir = args.out or checkpoint.parent
    else:
        raise ValueError("eval needs --run or --checkpoint")
    report = harness.evaluate(checkpoint, env_cfg, n=args.n, seed=args.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "eval.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(
        f"evaluated {checkpoint}: success_rate={report.success_rate:.3f} "
        f"({report.successes}/{report.n_evals}), obstacle_touches={report.obstacle_touches} "
        f"-> {path}"
    )
    return 0


def _cmd_compare(args) -> int:
    out_dir = args.out or Path(_default_out_root()) / "compare"
    result = harness.compare(args.runs, out_dir)
    for row in result["rows"]:
        print(
            f"{row['variant']}: mean_success_rate={row['mean_success_rate']:.3f} "
            f"mean_obstacle_touches={row['mean_obstacle_touches']:.1f} "
            f"final_smoothed_return={row['final_smoothed_return']:.2f}"
        )
    print(f"wrote {result['csv']} and {result['svg']}")
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except Exception as exc:  # runtime failures -> exit 2 with a diagnostic
        print(f"pushlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
