"""Command-line driver.

Verbs:
  train   one experiment from a JSON config
  sweep   a k x index-tier grid of experiments
  lemma   expected-max analysis report (closed form vs Monte Carlo)
  recall  approximate-nearest-neighbor recall benchmark
  eval    load a finished run's checkpoint and play greedy episodes

Exit status is 0 only when every run completes and every embedded assertion
(MC agreement, recall medians present, evaluation purity) holds.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

from ..action_index import IndexTier
from .config import ExperimentConfig
from . import runner


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment JSON file")
    p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key by dotted path, e.g. trainer.gamma=0.95",
    )


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    if args.set:
        config = config.with_overrides(args.set)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    return config


def _parse_k_token(token: str):
    token = token.strip()
    if "." in token or "e" in token.lower():
        return float(token)
    return int(token)


def cmd_train(args) -> int:
    config = _load_config(args)
    result = runner.run_experiment(config)
    print(f"run complete: {result.env_steps} env steps, {result.episodes} episodes")
    print(f"final mean greedy return: {result.final_return:.3f}")
    print(f"outputs in {result.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    out = args.out or config.out_dir
    if out is None:
        print("sweep requires --out or config.out_dir", file=sys.stderr)
        return 2
    k_list = [_parse_k_token(t) for t in args.k_list.split(",") if t.strip()]
    tier_list = [IndexTier(t.strip()) for t in args.tier_list.split(",") if t.strip()]
    result = runner.run_sweep(config, k_list, tier_list, out)
    print(f"sweep complete: {len(result.rows)} rows, {len(result.failures)} failed cells")
    for f in result.failures:
        print(f"  FAILED k={f['k']} tier={f['tier']}: {f['error']}", file=sys.stderr)
    print(f"outputs in {result.out_dir}")
    return 0 if result.ok else 1


def cmd_lemma(args) -> int:
    grid = None
    if args.grid:
        with open(args.grid) as fh:
            grid = json.load(fh)
    report = runner.run_lemma_report(args.out, samples=args.samples, grid=grid, seed=args.seed)
    status = "PASS" if report.all_pass else "FAIL"
    print(f"lemma report: {len(report.rows)} cells, 4-sigma agreement {status}")
    print(f"outputs in {report.out_dir}")
    return 0 if report.all_pass else 1


def cmd_recall(args) -> int:
    report = runner.run_recall_report(
        args.out,
        num_points=args.points,
        dim=args.dim,
        k=args.k,
        num_queries=args.queries,
        num_seeds=args.seeds,
        base_seed=args.seed,
    )
    for tier, med in sorted(report.medians.items()):
        print(f"  {tier:>6}: median recall@{args.k} = {med:.3f}")
    print(f"outputs in {report.out_dir}")
    return 0


def cmd_eval(args) -> int:
    mean_return = runner.run_eval(args.run, episodes=args.episodes, seed=args.seed)
    print(f"mean greedy return over {args.episodes} episodes: {mean_return:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wolpertinger", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="run one experiment")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a k x tier grid")
    _add_common(p)
    p.add_argument("--k-list", default="1,0.005,0.01,0.05,0.1,1.0",
                   help="comma-separated k values; integers are absolute, decimals are fractions")
    p.add_argument("--tier-list", default="exact",
                   help="comma-separated index tiers (exact,slow,medium,fast)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lemma", help="expected-max analysis report")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", default=None, help='JSON file {"p": [...], "bc": [[b,c],...], "k": [...]}')
    p.set_defaults(func=cmd_lemma)

    p = sub.add_parser("recall", help="ANN recall benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=13138)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("eval", help="greedy episodes from a checkpoint")
    p.add_argument("--run", required=True, help="output directory of a finished run")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
