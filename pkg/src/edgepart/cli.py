"""Command-line entry point: run a trace, the mix suite or a node sweep and write CSV."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .cluster import default_cluster, load_cluster_file
from .errors import ConfigError, EdgePartError
from .harness import (DEFAULT_HORIZON, MIXES, Strategy, bundled_trace, load_models, parse_strategy,
                      random_trace, report_csv, run_mix_suite, run_scenario, sweep_csv, sweep_nodes)
from .simnet import load_trace


def _strategies(name: str):
    return tuple(Strategy) if name.lower() == "all" else (parse_strategy(name),)


def _node_range(text: str):
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise ConfigError(f"--sweep-nodes expects MIN..MAX, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad node range {text!r}")
    return range(lo, hi + 1)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgepart", description=__doc__)
    p.add_argument("--cluster", type=Path, help="cluster-spec JSON (default: bundled 5-node cluster)")
    p.add_argument("--models", type=Path, help="directory of model-spec JSON files (default: bundled)")
    p.add_argument("--trace", type=Path, help="workload trace JSON (default: bundled progressive trace)")
    p.add_argument("--strategy", default="all", help="strategy name or 'all'")
    p.add_argument("--seed", type=int, default=0, help="seed for synthetic traces (--requests)")
    p.add_argument("--requests", type=int, help="generate a random trace of this many requests")
    p.add_argument("--horizon", type=float, default=DEFAULT_HORIZON, help="simulated seconds")
    p.add_argument("--out", type=Path, help="CSV output path (default: stdout)")
    p.add_argument("--sweep-nodes", metavar="MIN..MAX", help="node-scaling sweep over cluster prefixes")
    p.add_argument("--mixes", action="store_true", help="run the eight workload mixes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cluster = default_cluster() if args.cluster is None else load_cluster_file(args.cluster)
        models = load_models(args.models)
        strategies = _strategies(args.strategy)
        if args.sweep_nodes:
            text = sweep_csv(sweep_nodes(cluster, models, _node_range(args.sweep_nodes), strategies))
        elif args.mixes:
            text = report_csv(run_mix_suite(cluster, models, MIXES, strategies, args.horizon))
        else:
            if args.requests is not None:
                trace = random_trace(sorted(models), args.requests, args.seed,
                                     nodes=[n.id for n in cluster.nodes])
            elif args.trace is not None:
                trace = load_trace(args.trace)
            else:
                trace = bundled_trace()
            text = report_csv(run_scenario(cluster, models, trace, strategies, args.horizon))
        if args.out is None:
            sys.stdout.write(text)
        else:
            args.out.write_text(text)
    except (EdgePartError, OSError) as exc:
        print(f"edgepart: error: {exc}", file=sys.stderr)
        return 1
    return 0
