"""Train one model on a fresh dataset, then dump and plot its diagnostics.

    python3 scripts/diagnose_checkpoint.py --model skp_gnan --buses 15 --out results/diag
"""
import argparse
import subprocess
import sys
from pathlib import Path

from gridmp.cli import main as gridmp


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default="gat")
    ap.add_argument("--kind", default="radial")
    ap.add_argument("--buses", type=int, default=15)
    ap.add_argument("--timesteps", type=int, default=300)
    ap.add_argument("--penetration", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/diag")
    args = ap.parse_args()
    out = Path(args.out)
    steps = [
        ["generate", "--kind", args.kind, "--buses", str(args.buses), "--seed", str(args.seed),
         "--out", str(out / "grid.json")],
        ["dataset", "--grid", str(out / "grid.json"), "--timesteps", str(args.timesteps),
         "--penetration", str(args.penetration), "--seed", str(args.seed), "--out", str(out / "dataset")],
        ["train", "--model", args.model, "--dataset", str(out / "dataset"), "--out", str(out / args.model)],
        ["evaluate", "--checkpoint", str(out / args.model / "checkpoint.ckpt"), "--dataset", str(out / "dataset")],
        ["diagnose", "--checkpoint", str(out / args.model / "checkpoint.ckpt"), "--dataset", str(out / "dataset"),
         "--out", str(out / "diagnostics")],
    ]
    out.mkdir(parents=True, exist_ok=True)
    for argv in steps:
        code = gridmp(argv)
        if code:
            return code
    try:
        subprocess.run([sys.executable, str(out / "diagnostics" / "plot_diagnostics.py")], check=True)
    except subprocess.CalledProcessError:
        print("plotting failed (is matplotlib installed?)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
