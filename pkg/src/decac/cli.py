"""Command-line entry point.

Subcommands: train (one configuration, all replicas), ablate (one sweep
axis), verify (independent math checks), plotdata (tidy CSV from run
logs).  Invalid configurations exit with status 2 and a field-level
message; runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from pathlib import Path

from .config import apply_paper_scale, config_hash, load_config
from .errors import ConfigError, DecacError
from .harness import (SWEEP_AXES, collect_plot_rows, run_sweep, run_training,
                      verify_checks, write_plot_csv)


def _resolve_out(cfg_out: str, flag_out: str | None) -> Path:
    if flag_out:
        return Path(flag_out)
    env_out = os.environ.get("DECAC_OUT")
    if env_out:
        return Path(env_out)
    return Path(cfg_out)


def _load(args) -> "RunConfig":
    cfg = load_config(args.config)
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.paper_scale:
        cfg = apply_paper_scale(cfg)
    return cfg


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _resolve_out(cfg.out_dir, args.out) / config_hash(cfg)[:12]
    rows = run_training(cfg, out, jobs=args.jobs)
    finals = [r["final_window_mean"] for r in rows]
    mean_final = sum(finals) / len(finals)
    print(f"run {config_hash(cfg)[:12]}: {len(rows)} replicas, "
          f"{rows[0]['episodes']} episodes each, "
          f"final-window mean reward {mean_final:.4f}, wrote {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    out = _resolve_out(cfg.out_dir, args.out) / f"sweep_{args.axis}"
    rows = run_sweep(cfg, args.axis, out, jobs=args.jobs)
    cells: dict[str, list[float]] = {}
    for row in rows:
        cells.setdefault(row["cell"], []).append(row["final_window_mean"])
    for cell in cells:
        vals = cells[cell]
        print(f"{cell}: final-window mean {sum(vals) / len(vals):.4f} "
              f"over {len(vals)} replicas")
    print(f"wrote {out}")
    return 0


def cmd_verify(args) -> int:
    checks = verify_checks(corrupt_gradient=args.corrupt_gradient)
    failed = [name for name, ok, _ in checks if not ok]
    for name, ok, detail in checks:
        print(f"[{'pass' if ok else 'FAIL'}] {name}: {detail}")
    if failed:
        print(f"failed: {', '.join(failed)}")
        return 1
    print("all checks passed")
    return 0


def cmd_plotdata(args) -> int:
    paths = sorted(glob.glob(args.logs, recursive=True))
    if not paths:
        print(f"no run logs match {args.logs!r}", file=sys.stderr)
        return 1
    rows = collect_plot_rows(paths, window=args.window)
    write_plot_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decac",
        description="Decentralized actor-critic training and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the config's master seed")
    common.add_argument("--paper-scale", action="store_true",
                        help="full-size run: 20000 rounds, 100 replicas")
    common.add_argument("--out", default=None,
                        help="output directory (overrides config and DECAC_OUT)")
    common.add_argument("--jobs", type=int, default=1,
                        help="worker processes for replicas")

    p_train = sub.add_parser("train", parents=[common],
                             help="run all replicas of one configuration")
    p_train.add_argument("config", help="TOML or JSON configuration file")
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", parents=[common],
                              help="run one ablation axis of a configuration")
    p_ablate.add_argument("config", help="TOML or JSON configuration file")
    p_ablate.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES),
                          help="the single axis to vary")
    p_ablate.set_defaults(func=cmd_ablate)

    p_verify = sub.add_parser("verify", help="run the independent math checks")
    p_verify.add_argument("--corrupt-gradient", action="store_true",
                          help="negative control: breaks the gradient check")
    p_verify.set_defaults(func=cmd_verify)

    p_plot = sub.add_parser("plotdata", help="tidy CSV from run logs")
    p_plot.add_argument("logs", help="glob for runlog.jsonl files")
    p_plot.add_argument("--out", default="plotdata.csv", help="output CSV path")
    p_plot.add_argument("--window", type=int, default=5,
                        help="trailing moving-average window")
    p_plot.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DecacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
