"""Command-line entry point.

Subcommands: train, precision-sweep, pipeline-compare, parallelism-sweep,
cost-report.  Each reads an optional flat key=value config file; the
flags below override individual fields.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ExperimentConfig, load_config
from . import experiments


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="memgan",
        description="Desk-scale simulator of a crossbar in-memory GAN accelerator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "train": "train one GAN through the crossbar datapath",
        "precision-sweep": "train at several bit widths and probe feature quality",
        "pipeline-compare": "basic vs cross-parallel schedule comparison",
        "parallelism-sweep": "modeled time and area across parallelism sizes",
        "cost-report": "area/energy/time report for a workload descriptor",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--bits", type=int, help="data precision (4, 8, 16, or 32 for float)")
        p.add_argument("--bits-list", help="comma-separated bit widths for the sweep")
        p.add_argument("--parallelism", type=int, help="forward-flow parallelism s")
        p.add_argument("--parallelism-list", help="comma-separated s values for the sweep")
        p.add_argument("--iters", type=int, help="training iterations")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dataset", help="dataset name (mnist, cifar10, digits)")
        p.add_argument("--dataset-path", help="directory holding the dataset files")
        p.add_argument("--workload", help="cost workload (imagenet, lsun_bedroom)")
    return parser


def _configure(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.bits is not None:
        overrides["bits"] = args.bits
    if args.bits_list:
        overrides["bits_list"] = tuple(int(t) for t in args.bits_list.split(","))
    if args.parallelism is not None:
        overrides["parallelism"] = args.parallelism
    if args.parallelism_list:
        overrides["parallelism_list"] = tuple(int(t) for t in args.parallelism_list.split(","))
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    if args.dataset:
        overrides["dataset_name"] = args.dataset
    if args.dataset_path:
        overrides["dataset_path"] = args.dataset_path
    if args.workload:
        overrides["workload"] = args.workload
    return replace(cfg, **overrides).validate()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _configure(args)
        out = cfg.out_dir
        if args.command == "train":
            _, rows = experiments.run_training(cfg, out_dir=out)
            last = rows[-1] if rows else {}
            print(f"trained {cfg.iterations} iterations "
                  f"(final objective_d={last.get('objective_d', float('nan')):.4f}); "
                  f"outputs in {out}")
        elif args.command == "precision-sweep":
            rows = experiments.run_precision_sweep(cfg, out_dir=out)
            for row in rows:
                print(f"bits={row['bits']:<3} accuracy={row['accuracy']:.4f} "
                      f"normalized={row['normalized_accuracy']:.4f}")
        elif args.command == "pipeline-compare":
            result = experiments.run_pipeline_compare(cfg, out_dir=out)
            b, c = result["iteration_s"]["basic"], result["iteration_s"]["cross_parallel"]
            print(f"basic {b:.4f} s/iter, cross-parallel {c:.4f} s/iter, "
                  f"speedup {result['speedup']:.2f}x")
        elif args.command == "parallelism-sweep":
            rows = experiments.run_parallelism_sweep(cfg, out_dir=out)
            for row in rows:
                print(f"s={row['parallelism']:<3} time={row['iteration_time_s']:.4f} s "
                      f"area={row['area_mm2']:.1f} mm^2")
        elif args.command == "cost-report":
            report = experiments.run_cost_report(cfg, out_dir=out)
            print(f"{report.workload}: area {report.area_mm2:.1f} mm^2, "
                  f"{report.energy_per_epoch_kwh:.2f} kWh/epoch")
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
