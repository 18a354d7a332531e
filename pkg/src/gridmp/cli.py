"""Command-line entry point: ``gridmp <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import build_dataset, load_dataset, save_dataset
from .diagnostics import extract_distance_curve, trace_layers
from .grid import build_synthetic_grid, load_grid, save_grid
from .harness import (DIAGNOSTICS_PLOT_SCRIPT, Checkpoint, ExperimentConfig, TrainConfig, batches_for,
                      default_model_config, evaluate_rmse, export_results, master_seed_from_env, run_sweep, train)
from .models import MODEL_KINDS, ModelConfig, build_model
from .powerflow import solve_power_flow

log = logging.getLogger("gridmp")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_loads(path, n_buses: int) -> tuple[np.ndarray, np.ndarray]:
    """CSV with columns bus_id, p_pu, q_pu (consumption); unlisted buses carry no load."""
    p, q = np.zeros(n_buses), np.zeros(n_buses)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["bus_id"])
            if not 0 <= i < n_buses:
                raise ValueError(f"load for unknown bus {i}")
            p[i], q[i] = float(row["p_pu"]), float(row.get("q_pu") or 0.0)
    return p, q


def cmd_generate(args) -> int:
    grid = build_synthetic_grid(args.kind, args.buses, args.seed)
    save_grid(grid, args.out)
    print(f"wrote {grid.name}: {grid.n_buses} buses, {len(grid.branches)} branches -> {args.out}")
    return 0


def cmd_powerflow(args) -> int:
    grid = load_grid(args.grid)
    p, q = read_loads(args.loads, grid.n_buses)
    sol = solve_power_flow(grid, p, q)
    _write_csv(Path(args.out), ("bus_id", "v_mag_pu", "v_ang_rad", "p_pu", "q_pu"),
               [(b.id, sol.v_mag[i], sol.v_ang[i], sol.p_inj[i], sol.q_inj[i]) for i, b in enumerate(grid.buses)])
    if not sol.converged:
        print(f"power flow did not converge: {sol.message}", file=sys.stderr)
        return 1
    print(f"converged in {sol.iterations} iterations, max mismatch {sol.max_mismatch:.3e}")
    return 0


def cmd_dataset(args) -> int:
    ds = build_dataset(load_grid(args.grid), args.timesteps, args.penetration, args.seed, noiseless=args.noiseless)
    save_dataset(ds, args.out)
    print(f"{len(ds)} samples over {len(ds.topologies)} topologies ({len(ds.rejected)} rejected) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    seed = master_seed_from_env(args.seed)
    if args.config:
        cfg = ModelConfig.load(args.config)
    else:
        cfg = default_model_config(args.model, ds, seed=seed)
    if cfg.kind != args.model:
        raise ValueError(f"config is for {cfg.kind!r}, --model says {args.model!r}")
    tc = TrainConfig(lr=args.lr, max_epochs=args.max_epochs, batch_size=args.batch_size, seed=seed)
    ckpt, history = train(build_model(cfg), ds, ds.split, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "checkpoint.ckpt")
    cfg.save(out / "model.json")
    _write_csv(out / "history.csv", ("epoch", "train_loss", "val_loss", "lr"),
               [(h["epoch"], h["train_loss"], h["val_loss"], h["lr"]) for h in history])
    print(f"{cfg.kind}: {len(history)} epochs, best {ckpt.best_epoch}, status {ckpt.status} -> {out}")
    return 0 if ckpt.status == "ok" else 1


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    mag, ang = evaluate_rmse(ckpt, ds, ds.split.test)
    print(f"rmse_mag_pu={mag!r} rmse_ang_deg={ang!r}")
    return 0


def cmd_diagnose(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    model = ckpt.model()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    idx = list(ds.split.test) or list(range(len(ds)))
    wrote = []
    if model.has_layers:
        batch = next(batches_for(ds, idx[:1], ckpt.standardizer, 1))
        tr = trace_layers(model, batch)
        _write_csv(out / "layer_trace.csv", ("layer", "dirichlet_energy", "rayleigh_quotient"), tr.rows())
        wrote.append("layer_trace.csv")
    if model.has_distance:
        batch = next(batches_for(ds, idx, ckpt.standardizer, None))
        max_hop = int(min(model.config.max_hop, max(np.max(ds.distance(t).hops[np.isfinite(ds.distance(t).hops)])
                                                    for t in ds.topologies)))
        curve = extract_distance_curve(model, max_hop, batch)
        for c, weights in enumerate(curve.weights):
            _write_csv(out / f"distance_curve_c{c}.csv", ("hop", "s", "weight"),
                       zip(curve.hops.tolist(), curve.scaled, weights))
            wrote.append(f"distance_curve_c{c}.csv")
    if not wrote:
        print(f"{model.kind} has neither layer embeddings nor a distance function", file=sys.stderr)
        return 1
    (out / "plot_diagnostics.py").write_text(DIAGNOSTICS_PLOT_SCRIPT)
    print("wrote " + ", ".join(wrote) + f" -> {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.out_dir = args.out
    cfg.master_seed = master_seed_from_env(cfg.master_seed)
    reports = run_sweep(cfg)
    export_results(reports, cfg.out_dir)
    failed = [r for r in reports if r.status != "ok"]
    for r in reports:
        print(f"{r.grid:>18} rate={r.rate:.2f} {r.model:>9}  mag={r.rmse_mag_pu:.3e} ang={r.rmse_ang_deg:.3e}  "
              f"{r.status}")
    print(f"{len(reports) - len(failed)}/{len(reports)} legs ok -> {cfg.out_dir}")
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridmp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a synthetic grid")
    p.add_argument("--kind", choices=("radial", "meshed"), required=True)
    p.add_argument("--buses", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("powerflow", help="solve one AC power flow")
    p.add_argument("--grid", required=True)
    p.add_argument("--loads", required=True, help="CSV with bus_id,p_pu,q_pu")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("dataset", help="simulate measurements over a switching scenario")
    p.add_argument("--grid", required=True)
    p.add_argument("--timesteps", type=int, required=True)
    p.add_argument("--penetration", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train one model on a saved dataset")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="model config JSON (defaults otherwise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--max-epochs", type=int, default=TrainConfig.max_epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test-split RMSE of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="layer DE/RQ traces and learned distance curves")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="grids x rates x models experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output directory")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"gridmp {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
