"""Training loop, evaluation, penetration sweeps and result export."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .dataset import Dataset, build_dataset
from .grid import build_synthetic_grid
from .measurements import Standardizer
from .models import Model, ModelConfig, NumericError, build_model, loss, make_batch
from .optim import adamax_step, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

FULL_BATCH_KINDS = ("gnan", "skp_gnan")
DEFAULT_GRID_SIZES = (15, 59, 99, 144, 248)


class EmptySplitError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    patience: int = 3
    lr_patience: int = 2
    lr_factor: float = 0.5
    min_delta: float = 1e-6
    max_epochs: int = 200
    batch_size: int = 32
    full_batch_kinds: tuple[str, ...] = FULL_BATCH_KINDS
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.full_batch_kinds = tuple(self.full_batch_kinds)


class EarlyStopping:
    """Validation bookkeeping for early stopping and the plateau scheduler.

    Any strict improvement of the best validation loss resets the stopping
    counter; the scheduler only counts improvements larger than
    ``min_delta`` relative to its reference loss.
    """

    def __init__(self, patience: int = 3, lr_patience: int = 2, min_delta: float = 1e-6):
        self.patience = patience
        self.lr_patience = lr_patience
        self.min_delta = min_delta
        self.best = np.inf
        self.plateau_ref = np.inf
        self.bad_epochs = 0
        self.flat_epochs = 0

    def update(self, val_loss: float) -> tuple[bool, bool, bool]:
        """Returns ``(improved, reduce_lr, stop)``."""
        improved = val_loss < self.best
        if improved:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if val_loss < self.plateau_ref * (1.0 - self.min_delta):
            self.plateau_ref = val_loss
            self.flat_epochs = 0
        else:
            self.flat_epochs += 1
        reduce = self.flat_epochs >= self.lr_patience
        if reduce:
            self.flat_epochs = 0
        return improved, reduce, self.bad_epochs >= self.patience


@dataclass
class Checkpoint:
    config: ModelConfig
    values: dict
    standardizer: Standardizer
    step: int = 0
    best_epoch: int = 0
    status: str = "ok"

    def model(self) -> Model:
        m = build_model(self.config)
        m.params.load_snapshot(self.values)
        m.params.step = self.step
        return m

    def n_params(self) -> int:
        return int(sum(np.asarray(v).size for v in self.values.values()))

    def save(self, path) -> None:
        meta = {"model": self.config.to_dict(), "standardizer": self.standardizer.to_dict(),
                "best_epoch": self.best_epoch, "status": self.status}
        save_checkpoint(path, self.values, self.step, meta)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        values, step, meta = load_checkpoint(path)
        return cls(ModelConfig.from_dict(meta["model"]), values, Standardizer.from_dict(meta["standardizer"]),
                   step, int(meta.get("best_epoch", 0)), meta.get("status", "ok"))


def batches_for(dataset: Dataset, indices: Sequence[int], standardizer: Standardizer, size: int | None):
    indices = list(indices)
    size = size or max(1, len(indices))
    for lo in range(0, len(indices), size):
        chunk = indices[lo:lo + size]
        samples = dataset.subset(chunk)
        yield make_batch(samples, [dataset.distance(s.topology_id) for s in samples], standardizer)


def batch_loss(model: Model, b) -> ad.Tensor:
    return loss(model.forward(b), b.targets, model_name=model.kind, weights=b.loss_weights)


def _mean_loss(model: Model, batches) -> float:
    total, rows = 0.0, 0
    for b in batches:
        total += float(batch_loss(model, b).data) * b.n_rows
        rows += b.n_rows
    return total / rows


def default_model_config(kind: str, dataset: Dataset, seed: int = 0, **overrides) -> ModelConfig:
    return ModelConfig(kind=kind, max_nodes=dataset.grid.n_buses, seed=seed, **overrides)


def train(model: Model, dataset: Dataset, split=None, config: TrainConfig | None = None,
          standardizer: Standardizer | None = None) -> tuple[Checkpoint, list[dict]]:
    """Adamax with plateau halving and early stopping; returns the best-validation checkpoint."""
    config = config or TrainConfig()
    split = split or dataset.split
    if not split.train or not split.val:
        raise EmptySplitError("training needs non-empty train and validation splits")
    st = standardizer or Standardizer.fit(dataset.subset(split.train))
    rng = np.random.default_rng(config.seed)
    full = model.kind in config.full_batch_kinds
    val_batches = list(batches_for(dataset, split.val, st, 256))
    fixed_train = list(batches_for(dataset, split.train, st, None)) if full else None

    best = Checkpoint(model.config, model.params.snapshot(), st, model.params.step, 0, "ok")
    history: list[dict] = []
    if config.max_epochs <= 0:
        return best, history
    stopper = EarlyStopping(config.patience, config.lr_patience, config.min_delta)
    lr = config.lr
    for epoch in range(1, config.max_epochs + 1):
        if full:
            train_batches = fixed_train
        else:
            order = rng.permutation(np.array(split.train))
            train_batches = batches_for(dataset, order, st, config.batch_size)
        total, rows = 0.0, 0
        try:
            for b in train_batches:
                L = batch_loss(model, b)
                if not np.isfinite(L.data):
                    raise NumericError(f"{model.kind}: loss became non-finite")
                ad.backward(L)
                # a batch may leave a branch unused (e.g. no non-adjacent pairs)
                adamax_step(model.params, lr, allow_missing=True)
                total += float(L.data) * b.n_rows
                rows += b.n_rows
            val = _mean_loss(model, val_batches)
            if not np.isfinite(val):
                raise NumericError(f"{model.kind}: validation loss became non-finite")
        except NumericError as exc:
            log.warning("training diverged at epoch %d: %s", epoch, exc)
            best.status = "diverged"
            history.append({"epoch": epoch, "train_loss": float("nan"), "val_loss": float("nan"), "lr": lr})
            break
        improved, reduce, stop = stopper.update(val)
        history.append({"epoch": epoch, "train_loss": total / rows, "val_loss": val, "lr": lr})
        if improved:
            best = Checkpoint(model.config, model.params.snapshot(), st, model.params.step, epoch, "ok")
        if stop:
            break
        if reduce:
            lr *= config.lr_factor
    model.params.load_snapshot(best.values)
    return best, history


def evaluate_rmse(checkpoint, dataset: Dataset, indices: Sequence[int]) -> tuple[float, float]:
    """Test RMSE as (magnitude p.u., angle degrees)."""
    indices = list(indices)
    if not indices:
        raise EmptySplitError("cannot evaluate on an empty split")
    if isinstance(checkpoint, Checkpoint):
        model, st = checkpoint.model(), checkpoint.standardizer
    else:
        model, st = checkpoint
    preds, labels = [], []
    for b in batches_for(dataset, indices, st, 256):
        preds.append(model.predict(b))
        labels.append(b.labels)
    return rmse(np.concatenate(preds), np.concatenate(labels))


def rmse(pred: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    err = pred - labels
    mag = float(np.sqrt(np.mean(err[:, 0] ** 2)))
    ang = float(np.degrees(np.sqrt(np.mean(err[:, 1] ** 2))))
    return mag, ang


# ------------------------------------------------------------------------ sweep

@dataclass
class GridSpec:
    kind: str = "radial"
    n_buses: int = 15
    seed: int = 0

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.n_buses}-s{self.seed}"


@dataclass
class ExperimentConfig:
    grids: list[GridSpec] = field(default_factory=lambda: [GridSpec("radial", n, 0) for n in DEFAULT_GRID_SIZES])
    n_timesteps: int = 500
    rates: list[float] = field(default_factory=lambda: [0.2, 0.9])
    noise: str = "tiers"  # "tiers" | "none"
    models: list[str] = field(default_factory=lambda: ["gnan", "skp_gnan", "gat", "skp_gat", "mlp"])
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "results"
    master_seed: int = 0
    save_checkpoints: bool = True

    def __post_init__(self):
        self.grids = [g if isinstance(g, GridSpec) else GridSpec(**g) for g in self.grids]
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if not self.models:
            raise ValueError("at least one model is required")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError("penetration rates must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    grid: str
    n_buses: int
    rate: float
    model: str
    rmse_mag_pu: float = float("nan")
    rmse_ang_deg: float = float("nan")
    train_s: float = float("nan")
    infer_s: float = float("nan")
    params: int = 0
    best_epoch: int = 0
    status: str = "ok"


def derive_seed(master: int, *parts) -> int:
    key = "|".join(str(p) for p in parts).encode()
    return int(np.random.SeedSequence([master, zlib.crc32(key)]).generate_state(1)[0])


def master_seed_from_env(default: int) -> int:
    env = os.environ.get("GRIDMP_SEED")
    return int(env) if env not in (None, "") else default


def run_sweep(config: ExperimentConfig) -> list[MetricsReport]:
    reports: list[MetricsReport] = []
    ckpt_dir = Path(config.out_dir) / "checkpoints"
    for spec in config.grids:
        try:
            grid = build_synthetic_grid(spec.kind, spec.n_buses, spec.seed)
        except Exception as exc:  # noqa: BLE001 - a failed leg is recorded, the sweep goes on
            log.error("grid %s failed: %s", spec.name, exc)
            for rate in config.rates:
                for kind in config.models:
                    reports.append(MetricsReport(spec.name, spec.n_buses, rate, kind, status=f"failed: {exc}"))
            continue
        for rate in config.rates:
            try:
                ds = build_dataset(grid, config.n_timesteps, rate, derive_seed(config.master_seed, spec.name, rate),
                                   noiseless=config.noise == "none")
            except Exception as exc:  # noqa: BLE001
                log.error("dataset %s @ %.2f failed: %s", spec.name, rate, exc)
                for kind in config.models:
                    reports.append(MetricsReport(spec.name, grid.n_buses, rate, kind, status=f"failed: {exc}"))
                continue
            for kind in config.models:
                reports.append(_run_leg(config, spec, ds, rate, kind, ckpt_dir))
    return reports


def _run_leg(config: ExperimentConfig, spec: GridSpec, ds: Dataset, rate: float, kind: str, ckpt_dir: Path):
    row = MetricsReport(spec.name, ds.grid.n_buses, rate, kind)
    try:
        seed = derive_seed(config.master_seed, spec.name, rate, kind)
        model = build_model(default_model_config(kind, ds, seed=seed))
        tc = TrainConfig(**{**asdict(config.train), "seed": seed})
        t0 = time.perf_counter()
        ckpt, _ = train(model, ds, ds.split, tc)
        row.train_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        row.rmse_mag_pu, row.rmse_ang_deg = evaluate_rmse(ckpt, ds, ds.split.test)
        row.infer_s = time.perf_counter() - t0
        row.params = ckpt.n_params()
        row.best_epoch = ckpt.best_epoch
        row.status = ckpt.status
        if config.save_checkpoints:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            ckpt.save(ckpt_dir / f"{spec.name}_r{rate:.2f}_{kind}.ckpt")
    except Exception as exc:  # noqa: BLE001
        log.exception("leg %s / %.2f / %s failed", spec.name, rate, kind)
        row.status = f"failed: {exc}"
    return row


# ----------------------------------------------------------------------- export

RESULT_COLUMNS = ("grid", "n_buses", "rate", "model", "rmse_mag_pu", "rmse_ang_deg", "params", "best_epoch", "status")
TIMING_COLUMNS = ("grid", "n_buses", "rate", "model", "train_s", "infer_s")

PLOT_SCRIPT = '''"""Figures from the sweep CSVs: RMSE per model, penetration curves, timing."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
rows = list(csv.DictReader(open(root / "results.csv")))
ok = [r for r in rows if r["status"] == "ok"]

by_model = defaultdict(list)
for r in ok:
    by_model[r["model"]].append(float(r["rmse_mag_pu"]))
if by_model:
    fig, ax = plt.subplots()
    ax.boxplot(list(by_model.values()))
    ax.set_xticks(range(1, len(by_model) + 1), list(by_model))
    ax.set_ylabel("RMSE |V| (p.u.)")
    fig.savefig(root / "rmse_boxplot.png", dpi=120)

for channel, col in (("magnitude", "rmse_mag_pu"), ("angle", "rmse_ang_deg")):
    curves = defaultdict(list)
    for r in ok:
        curves[(r["grid"], r["model"])].append((float(r["rate"]), float(r[col])))
    grids = sorted({g for g, _ in curves})
    if not grids:
        continue
    fig, axes = plt.subplots(1, len(grids), figsize=(4 * len(grids), 3.5), squeeze=False)
    for ax, grid in zip(axes[0], grids):
        for (g, model), pts in sorted(curves.items()):
            if g == grid:
                pts.sort()
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=model)
        ax.set_title(grid)
        ax.set_xlabel("penetration rate")
        ax.set_yscale("log")
    axes[0][0].set_ylabel(col)
    axes[0][-1].legend()
    fig.tight_layout()
    fig.savefig(root / f"penetration_{channel}.png", dpi=120)

timing = root / "timing.csv"
if timing.exists():
    trows = list(csv.DictReader(open(timing)))
    if trows:
        fig, ax = plt.subplots()
        models = sorted({r["model"] for r in trows})
        ax.bar(models, [sum(float(r["train_s"]) for r in trows if r["model"] == m) for m in models])
        ax.set_ylabel("total training time (s)")
        fig.savefig(root / "timing.png", dpi=120)
'''

DIAGNOSTICS_PLOT_SCRIPT = '''"""Figures from diagnose output: DE/RQ per layer and learned distance curves."""
import csv
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
trace = root / "layer_trace.csv"
if trace.exists():
    rows = list(csv.DictReader(open(trace)))
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.5))
    a.plot([int(r["layer"]) for r in rows], [float(r["dirichlet_energy"]) for r in rows], marker="o")
    a.set_xlabel("layer"); a.set_ylabel("Dirichlet energy")
    b.plot([int(r["layer"]) for r in rows], [float(r["rayleigh_quotient"]) for r in rows], marker="o")
    b.set_xlabel("layer"); b.set_ylabel("Rayleigh quotient")
    fig.tight_layout()
    fig.savefig(root / "layer_trace.png", dpi=120)
for path in sorted(root.glob("distance_curve_c*.csv")):
    rows = list(csv.DictReader(open(path)))
    fig, ax = plt.subplots()
    ax.plot([int(r["hop"]) for r in rows], [float(r["weight"]) for r in rows], marker=".")
    ax.set_xlabel("hop distance"); ax.set_ylabel("learned weight")
    fig.savefig(path.with_suffix(".png"), dpi=120)
'''


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def export_results(reports: Sequence[MetricsReport], out_dir) -> dict[str, Path]:
    """Write results.csv/.json (deterministic content), timing.csv and a plotting script."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "results.csv", "json": out / "results.json", "timing": out / "timing.csv",
                 "plot": out / "plot_results.py"}
        rows = [asdict(r) for r in reports]
        with open(paths["csv"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for r in rows:
                w.writerow([_cell(r[c]) for c in RESULT_COLUMNS])
        with open(paths["timing"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMING_COLUMNS)
            for r in rows:
                w.writerow([_cell(r[c]) for c in TIMING_COLUMNS])
        paths["json"].write_text(json.dumps([{c: r[c] for c in RESULT_COLUMNS} for r in rows], indent=1))
        paths["plot"].write_text(PLOT_SCRIPT)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return paths


def read_results(path) -> list[MetricsReport]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(MetricsReport(grid=r["grid"], n_buses=int(r["n_buses"]), rate=float(r["rate"]),
                                     model=r["model"], rmse_mag_pu=float(r["rmse_mag_pu"]),
                                     rmse_ang_deg=float(r["rmse_ang_deg"]), params=int(r["params"]),
                                     best_epoch=int(r["best_epoch"]), status=r["status"]))
    return out
