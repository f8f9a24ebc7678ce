"""Command line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import apply_overrides, load_config
from .numeric import ConfigurationError


def _common(p):
    p.add_argument("--config", help="run config JSON (defaults when omitted)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. scm.T=5; repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="causalhrl", description="causal subgoal discovery runs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="pretraining then adaptation"))
    _common(sub.add_parser("ablate-random-intervention", help="policy vs random-action sampling"))
    p = sub.add_parser("ablate-ev-dropout", help="hide a share of the effective variables")
    _common(p)
    p.add_argument("--ratio", type=float, required=True)
    p = sub.add_parser("export-graph", help="export a run's graph")
    p.add_argument("--run", "--out", dest="run_dir", required=True, help="run directory")
    p.add_argument("--which", choices=("truth", "learned"), default="learned")
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--dest", help="output file (default inside the run directory)")
    p = sub.add_parser("eval-milestones", help="greedy milestone counts of a trained run")
    p.add_argument("--run", "--out", dest="run_dir", required=True, help="run directory")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=("task_policy", "flat_policy"), default="task_policy")
    return ap


def _config(args):
    cfg = load_config(args.config)
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={json.dumps(args.out)}")
    return apply_overrides(cfg, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export-graph":
            print(harness.cli_export_graph(args.run_dir, args.which, args.format, args.dest))
            return 0
        if args.command == "eval-milestones":
            counts = harness.cli_eval_milestones(args.run_dir, args.episodes, args.seed, args.policy)
            print(" ".join(f"m{k}={c}" for k, c in enumerate(counts)))
            return 0
        cfg = _config(args)
        if args.command == "run":
            s = harness.cli_run(cfg)
            print(f"{s.out_dir}: {len(s.rows)} iterations, stop={s.pretrain.state.stop_reason}")
        elif args.command == "ablate-random-intervention":
            _, _, rows = harness.cli_ablate_random_intervention(cfg)
            print(f"{cfg.out_dir}/ablation.csv: {len(rows)} rows")
        elif args.command == "ablate-ev-dropout":
            s = harness.cli_ablate_ev_dropout(cfg, args.ratio)
            print(f"{s.out_dir}: dropped {s.dropped or 'nothing'}, stop={s.pretrain.state.stop_reason}")
        return 0
    except ConfigurationError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return 2
    except (harness.ArtifactError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
