"""Command-line entry points.

`feedsim run` executes an experiment from a JSON config; `gen-flow` and
`gen-feed` materialize the synthetic inputs so later runs can replay them
from files; `stats` recomputes summary statistics from an existing
results.csv. Exit codes: 0 on success, 2 on configuration errors, 3 on
data errors (missing/malformed files, unreachable backends).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys

import numpy as np

from .config import ConfigError, DataError, ExperimentConfig, load_config
from .experiment import (
    make_text_backend,
    prepare_day,
    run_experiment,
    write_outputs,
    write_summary_csv,
)
from .stats import descriptive_stats
from .synthflow import generate_flow, write_lobster_file
from ..socialfeed import BackendError, pregenerate_feed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

log = logging.getLogger(__name__)


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    for field in ("mode", "trials", "seed"):
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if overrides:
        try:
            cfg = dataclasses.replace(cfg, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    rows = run_experiment(cfg)
    paths = write_outputs(rows, cfg.out_dir)
    print(f"{len(rows)} result rows -> {paths['results']}")
    return EXIT_OK


def cmd_gen_flow(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if cfg.flow.file is not None:
        out_path = cfg.flow.file
    else:
        out_path = os.path.join(cfg.out_dir, "flow.csv")
    msgs = generate_flow(cfg.flow, cfg.seed, cfg.premarket_open_ns, cfg.oos_end_ns)
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    write_lobster_file(msgs, out_path)
    print(f"{len(msgs)} messages -> {out_path}")
    return EXIT_OK


def cmd_gen_feed(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if cfg.mode == "rl_solo":
        raise ConfigError("rl_solo mode has no social feed to generate")
    out_path = cfg.feed.feed_file or os.path.join(cfg.out_dir, "feed.jsonl")
    msgs, _ = prepare_day(dataclasses.replace(cfg, mode="rl_solo"))
    try:
        store = pregenerate_feed(
            msgs,
            cfg.symbol,
            make_text_backend(cfg.feed),
            np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xFEED))),
            open_ns=cfg.open_ns,
            close_ns=cfg.oos_end_ns,
            rate_per_minute=cfg.feed.rate_per_minute,
            predecessors=cfg.feed.predecessors,
        )
    except BackendError as exc:
        raise DataError(f"feed generation failed: {exc}") from None
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    store.save_jsonl(out_path)
    print(f"{len(store)} posts -> {out_path}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        with open(args.infile, "r", encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            groups: dict[tuple[str, str, str], list[float]] = {}
            for rec in reader:
                key = (rec["symbol"], rec["agent"], rec["phase"])
                groups.setdefault(key, []).append(float(rec["dollars"]))
    except FileNotFoundError:
        raise DataError(f"results file not found: {args.infile}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{args.infile}: malformed results file: {exc}") from None
    if not groups:
        raise DataError(f"{args.infile}: no result rows")
    writer = csv.writer(sys.stdout)
    writer.writerow(
        ["symbol", "agent", "phase", "mean", "std", "min", "q25", "median", "q75", "max", "count"]
    )
    for key in sorted(groups):
        s = descriptive_stats(groups[key])
        writer.writerow(
            list(key)
            + [repr(v) for v in (s.mean, s.std, s.min, s.q25, s.median, s.q75, s.max)]
            + [s.count]
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feedsim", description="Market/feed simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--mode", choices=("rl_solo", "sentiment_solo", "indirect", "direct"))
    run_p.add_argument("--trials", type=int)
    run_p.add_argument("--out")
    run_p.add_argument("--seed", type=int)
    run_p.set_defaults(func=cmd_run)

    flow_p = sub.add_parser("gen-flow", help="write a synthetic order-flow file")
    flow_p.add_argument("--config", required=True)
    flow_p.set_defaults(func=cmd_gen_flow)

    feed_p = sub.add_parser("gen-feed", help="pre-generate a social feed file")
    feed_p.add_argument("--config", required=True)
    feed_p.set_defaults(func=cmd_gen_feed)

    stats_p = sub.add_parser("stats", help="summarize an existing results.csv")
    stats_p.add_argument("--in", dest="infile", required=True)
    stats_p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
