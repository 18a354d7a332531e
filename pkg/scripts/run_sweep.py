"""Run a penetration sweep from a JSON config and export the result tables.

    python3 scripts/run_sweep.py scripts/sweep_small.json [--out DIR] [--grid-sizes 15 59 99]

``--grid-sizes`` replaces the config's grids with radial feeders of the given sizes.
GRIDMP_SEED overrides the master seed.
"""
import argparse
import logging
import sys

from gridmp.harness import ExperimentConfig, GridSpec, export_results, master_seed_from_env, run_sweep


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--grid-sizes", type=int, nargs="+")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.grid_sizes:
        cfg.grids = [GridSpec("radial", n, 0) for n in args.grid_sizes]
    cfg.master_seed = master_seed_from_env(cfg.master_seed)

    reports = run_sweep(cfg)
    paths = export_results(reports, cfg.out_dir)
    bad = [r for r in reports if r.status != "ok"]
    print(f"{len(reports) - len(bad)}/{len(reports)} legs ok; tables in {paths['csv'].parent}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
