"""Command line entry point.

Each subcommand runs the pipeline up to one stage for one seed, sharing the
artifact layout (and cache) with ``experiment``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness


def _load_spec(args) -> harness.ExperimentSpec:
    spec = harness.ExperimentSpec.from_json(Path(args.config).read_text()) if args.config else harness.ExperimentSpec()
    if args.scale is not None:
        spec.scale = args.scale
    if args.seed is not None:
        spec.seeds = list(args.seed)
    return spec


def _embed_for(spec, seed, method, data, out):
    if method == "onehot-baseline":
        return None
    return harness.stage_embed(spec, seed, harness.EMBED_VARIANT[method], data, out)


def _train_data(spec, seed, method, data, embed, out):
    if method in harness.AUGMENTATION:
        return harness.stage_augment(spec, seed, harness.AUGMENTATION[method], data, embed, out)
    return data


def cmd_gen_data(spec, args, out):
    for seed in spec.seeds:
        print(harness.stage_data(spec, seed, out))


def cmd_train_embed(spec, args, out):
    for seed in spec.seeds:
        data = harness.stage_data(spec, seed, out)
        print(harness.stage_embed(spec, seed, args.variant, data, out))


def cmd_augment(spec, args, out):
    for seed in spec.seeds:
        data = harness.stage_data(spec, seed, out)
        embed = harness.stage_embed(spec, seed, "SRTD", data, out) if args.method == "imagined" else None
        print(harness.stage_augment(spec, seed, args.method, data, embed, out))


def cmd_train_agent(spec, args, out):
    for seed in spec.seeds:
        data = harness.stage_data(spec, seed, out)
        embed = _embed_for(spec, seed, args.method, data, out)
        print(harness.stage_agent(spec, seed, args.method, _train_data(spec, seed, args.method, data, embed, out), embed, out))


def cmd_eval(spec, args, out):
    for seed in spec.seeds:
        data = harness.stage_data(spec, seed, out)
        embed = _embed_for(spec, seed, args.method, data, out)
        agent = harness.stage_agent(spec, seed, args.method, _train_data(spec, seed, args.method, data, embed, out), embed, out)
        metrics = harness.stage_eval(spec, seed, args.method, agent, embed, out)
        print(json.dumps({"seed": seed, "method": args.method, **{k: metrics[k] for k in harness.RESULT_COLUMNS[3:]}}))


def cmd_experiment(spec, args, out):
    rows = harness.run_experiment(spec, out, jobs=args.jobs)
    text, table_csv = harness.tabulate(rows)
    (out / "table.csv").write_text(table_csv)
    print(text)


def cmd_plot(spec, args, out):
    results = Path(args.results) if args.results else out / "results.csv"
    rows = harness.rows_from_records(harness.read_results_csv(results))
    path = harness.plot(rows, out / "plots")
    if path is not None:
        print(path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment spec as JSON")
    common.add_argument("--seed", type=int, nargs="+", help="seed(s); overrides the config")
    common.add_argument("--out", help="output root (default: $SRTD_LAB_OUT or ./srtd_runs)")
    common.add_argument("--jobs", type=int, default=1, help="parallel seed jobs")
    common.add_argument("--scale", type=float, help="episode-count factor, e.g. 0.2 for 30/20/10")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="srtd-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate and relabel datasets").set_defaults(fn=cmd_gen_data)
    s = sub.add_parser("train-embed", parents=[common], help="train skill and task embeddings")
    s.add_argument("--variant", choices=["SRTD", "SRTD-Q", "TE"], default="SRTD")
    s.set_defaults(fn=cmd_train_embed)
    s = sub.add_parser("augment", parents=[common], help="add imagined or noise-perturbed trajectories")
    s.add_argument("--method", choices=["imagined", "gaussian"], default="imagined")
    s.set_defaults(fn=cmd_augment)
    for name, fn, text in (("train-agent", cmd_train_agent, "train an offline agent"),
                           ("eval", cmd_eval, "evaluate a trained agent")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--method", choices=harness.METHODS, default="SRTD")
        s.set_defaults(fn=fn)
    sub.add_parser("experiment", parents=[common], help="full sweep over methods and seeds").set_defaults(fn=cmd_experiment)
    s = sub.add_parser("plot", parents=[common], help="bar chart and CSV sidecar from a results CSV")
    s.add_argument("--results", help="results CSV (default: <out>/results.csv)")
    s.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = harness.output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec = _load_spec(args)
        args.fn(spec, args, out)
    except (harness.StageError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0
