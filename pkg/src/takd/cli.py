"""Command-line surface for the distillation workbench.

Subcommands: train, distill, chain, path-search, bounds, landscape, sweep,
report, run.  Configs are single JSON documents; run records are JSON
lines; tables are CSV.  Exit codes: 0 success, 2 config problems
(malformed JSON or invalid fields), 1 runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import TakdError


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigExit(f"cannot read config {path}: {exc}")
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigExit(f"{path}: malformed JSON at line {exc.lineno}, "
                         f"column {exc.colno}: {exc.msg}")
    if not isinstance(config, dict):
        raise ConfigExit(f"{path}: top-level JSON value must be an object")
    return config


class ConfigExit(Exception):
    """Raised for anything that should terminate with exit code 2."""


def _parse_ladder(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise ConfigExit(f"--ladder expects comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="takd",
        description="Teacher-assistant knowledge distillation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="root seed")
        p.add_argument("--out", default="runs", help="output directory")

    p = sub.add_parser("train", help="train one network from scratch")
    common(p)
    p.add_argument("--size", type=int, default=None, help="network size")

    p = sub.add_parser("distill", help="one teacher-to-student distillation")
    common(p)
    p.add_argument("--ladder", help="teacher,student sizes (e.g. 5,1)")

    p = sub.add_parser("chain", help="train along a multi-step path")
    common(p)
    p.add_argument("--path", help="comma-separated path sizes (e.g. 5,3,1)")

    p = sub.add_parser("path-search", help="best length-k distillation path")
    common(p)
    p.add_argument("--ladder", help="comma-separated ladder, e.g. 10,8,6,4,2")
    p.add_argument("--k", type=int, default=2, help="distillation steps")
    p.add_argument("--mode", choices=("surrogate", "train"),
                   default="surrogate")

    p = sub.add_parser("bounds", help="evaluate the generalization-bound chain")
    common(p)
    p.add_argument("--params", help="JSON file with bound parameters")
    p.add_argument("--crossover", action="store_true",
                   help="search the smallest n where TAKD <= BLKD")

    p = sub.add_parser("landscape", help="scan a loss surface around a model")
    common(p)
    p.add_argument("--model", help="trained model container file")
    p.add_argument("--steps", type=int, default=41)
    p.add_argument("--radius", type=float, default=1.0)

    p = sub.add_parser("sweep", help="capacity-gap sweep over one endpoint")
    common(p)
    p.add_argument("--fixed", choices=("student", "teacher"),
                   default="student")
    p.add_argument("--ladder", help="comma-separated ladder sizes")

    p = sub.add_parser("report", help="summaries and figures from run records")
    common(p)
    p.add_argument("--records", help="records JSONL (default <out>/records.jsonl)")

    p = sub.add_parser("run", help="dispatch a task config file")
    common(p)
    return parser


def _dispatch(args: argparse.Namespace) -> dict:
    from .experiments import run_experiment

    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    out_dir = Path(args.out)

    if args.command == "train":
        config.setdefault("task", "nokd")
        if args.size is not None:
            config.setdefault("model", {})["size"] = args.size
    elif args.command == "distill":
        config.setdefault("task", "blkd")
        if args.ladder:
            config["ladder"] = _parse_ladder(args.ladder)
    elif args.command == "chain":
        config.setdefault("task", "chain")
        if args.path:
            config["path"] = _parse_ladder(args.path)
    elif args.command == "path-search":
        config.setdefault("task", "path-search")
        if args.ladder:
            config["ladder"] = _parse_ladder(args.ladder)
        config.setdefault("k", args.k)
        config.setdefault("mode", args.mode)
    elif args.command == "bounds":
        config.setdefault("task", "bounds")
        if args.params:
            config["params"] = args.params
        if args.crossover:
            config["crossover"] = True
    elif args.command == "landscape":
        config.setdefault("task", "landscape")
        if args.model:
            config["model_file"] = args.model
        config.setdefault("steps", args.steps)
        config.setdefault("radius", args.radius)
    elif args.command == "sweep":
        config.setdefault("task", "gap-sweep")
        config.setdefault("fixed", args.fixed)
        if args.ladder:
            config["ladder"] = _parse_ladder(args.ladder)
    elif args.command == "report":
        from .report import render_report

        records = args.records or str(out_dir / "records.jsonl")
        written = render_report(records, out_dir)
        return {"task": "report", "written": [str(p) for p in written]}
    return run_experiment(config, out_dir)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = _dispatch(args)
    except ConfigExit as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TakdError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = {k: v for k, v in result.items()
               if k in ("task", "student_acc", "accs", "crossover_n", "csv",
                        "json", "written", "center_loss", "flatness",
                        "non_monotone")}
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
