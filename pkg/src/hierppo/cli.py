"""Command line entry point: ``hierppo train|eval|compare|tree``.

Failures exit with status 1 and print a single JSON line to stderr:
``{"error": "<ExceptionType>", "message": "..."}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from hierppo import reward_graph
from hierppo.compare import run_compare
from hierppo.config import ExperimentConfig, field_types
from hierppo.errors import CheckpointError, ConfigurationError, InputError, StructureError
from hierppo.experiment import SUMMARY_COLUMNS, run_eval, run_train, summary_rows, write_csv


def _parse_bool(text):
    return text.lower() in ("1", "true", "yes", "on")


def _converter(type_name):
    type_name = str(type_name)
    if type_name.startswith("list"):
        return lambda s: [int(x) for x in s.split(",") if x.strip()]
    if type_name.startswith("float"):
        return lambda s: None if s.lower() == "none" else float(s)
    if type_name.startswith("int"):
        return int
    if type_name.startswith("bool"):
        return _parse_bool
    return str


def _add_config_flags(parser):
    for name, type_name in field_types().items():
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=f"cfg_{name}", type=_converter(type_name), default=None,
                            metavar=str(type_name).split(" ")[0].upper())


def _config_from_args(args):
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.config:
        return ExperimentConfig.load(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def cmd_train(args):
    config = _config_from_args(args)
    summaries = run_train(config)
    for seed, s in summaries.items():
        if s is not None:
            print(f"seed {seed}: mean return {s.mean:.2f} +/- {s.std:.2f} over {s.episodes} episodes")
    print(f"wrote {config.output_dir}")


def cmd_eval(args):
    summaries = []
    for i, path in enumerate(args.checkpoint):
        out = None
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            out = os.path.join(args.out, f"eval_{i}.csv")
        s = run_eval(path, args.episodes, args.seed, out, label=i)
        summaries.append(s)
        print(f"{path}: mean {s.mean:.4f} std {s.std:.4f} sum {s.total:.4f} ({s.episodes} episodes)")
    if args.out:
        write_csv(os.path.join(args.out, "eval_summary.csv"), SUMMARY_COLUMNS, summary_rows(summaries))


def cmd_compare(args):
    series = run_compare(args.run_dirs, args.out)
    for s in series:
        print(f"{s.name}: final moving average {s.mean[-1]:.2f} +/- {s.std[-1]:.2f} "
              f"({s.n_seeds} seeds)")
    print(f"wrote {os.path.join(args.out, 'comparison.csv')} and comparison.svg")


def cmd_tree(args):
    try:
        with open(args.tree_file) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {args.tree_file}: {exc}") from None
    tree = reward_graph.parse_tree(text)
    print(repr(reward_graph.evaluate(tree)))
    for trace in reward_graph.leaf_traces(tree):
        print(" ".join(repr(v) for v in trace))


def build_parser():
    parser = argparse.ArgumentParser(prog="hierppo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant over several seeds")
    p.add_argument("--config", help="JSON config file; flags override its keys")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="deterministic evaluation of checkpoints")
    p.add_argument("checkpoint", nargs="+")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=10_000)
    p.add_argument("--out", help="directory for per-checkpoint CSVs and eval_summary.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="plot moving-average curves of several runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="comparison")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tree", help="evaluate a reward tree file")
    p.add_argument("tree_file")
    p.set_defaults(func=cmd_tree)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigurationError, InputError, StructureError, CheckpointError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
