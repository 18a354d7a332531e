"""End-to-end dataset generation and the index + CSV-shard directory format.

Layout of a dataset directory::

    index.json                  grid, scenario topologies, mask, tiers, split, samples
    topo_<id>_nodes.csv         timestep, bus, node features..., v_mag, v_ang
    topo_<id>_edges.csv         timestep, source, target, branch, edge features...
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import DistanceCache, DistanceData, Grid, SwitchingScenario, generate_switching_scenario
from .measurements import (EDGE_FEATURES, NODE_FEATURES, DatasetSplit, GraphSample, SampleRejected,
                           TierAssignment, assemble_sample, assign_tiers, generate_profiles,
                           select_measured_buses, split_dataset)
from .powerflow import solve_power_flow

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    grid: Grid
    samples: list[GraphSample]
    mask: np.ndarray
    tiers: TierAssignment
    topologies: dict[str, Grid]
    split: DatasetSplit
    penetration: float = 1.0
    rejected: list[str] = field(default_factory=list)
    _distances: DistanceCache = field(default_factory=DistanceCache, repr=False)

    def distance(self, topology_id: str) -> DistanceData:
        return self._distances.get(self.topologies[topology_id])

    def subset(self, indices) -> list[GraphSample]:
        return [self.samples[i] for i in indices]

    def __len__(self) -> int:
        return len(self.samples)


def build_dataset(grid: Grid, n_timesteps: int, penetration: float, seed: int,
                  noiseless: bool = False, switching: bool = True) -> Dataset:
    ss = np.random.SeedSequence(seed)
    s_profile, s_scenario, s_mask, s_noise, s_split = (int(c.generate_state(1)[0]) for c in ss.spawn(5))
    p, q = generate_profiles(grid.n_buses, n_timesteps, s_profile)
    if switching:
        scenario = generate_switching_scenario(grid, n_timesteps, s_scenario)
    else:
        scenario = SwitchingScenario(grid, n_timesteps)
    mask = select_measured_buses(grid, penetration, s_mask)
    tiers = assign_tiers(grid, noiseless=noiseless)
    rng = np.random.default_rng(s_noise)

    samples, topologies, rejected = [], {}, []
    for t, active in enumerate(scenario.topologies()):
        sol = solve_power_flow(active, p[t], q[t])
        try:
            sample = assemble_sample(active, sol, mask, tiers, t, rng)
        except SampleRejected as exc:
            rejected.append(str(exc))
            continue
        topologies.setdefault(sample.topology_id, active)
        samples.append(sample)
    if rejected:
        log.warning("%d of %d timesteps rejected", len(rejected), n_timesteps)
    split = split_dataset(len(samples), s_split)
    return Dataset(grid, samples, mask, tiers, topologies, split, penetration, rejected)


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_topo: dict[str, list[GraphSample]] = {}
    for s in ds.samples:
        by_topo.setdefault(s.topology_id, []).append(s)
    for tid, group in by_topo.items():
        with open(out / f"topo_{tid}_nodes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestep", "bus", *NODE_FEATURES, "v_mag", "v_ang"])
            for s in group:
                for i in range(s.n_nodes):
                    w.writerow([s.timestep_index, i, *map(_fmt, s.node_features[i]), *map(_fmt, s.labels[i])])
        with open(out / f"topo_{tid}_edges.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestep", "source", "target", "branch", *EDGE_FEATURES])
            for s in group:
                for k in range(s.edge_index.shape[1]):
                    w.writerow([s.timestep_index, s.edge_index[0, k], s.edge_index[1, k], s.edge_branch[k],
                                *map(_fmt, s.edge_features[k])])
    index = {
        "format": "gridmp-dataset-1",
        "grid": ds.grid.to_dict(),
        "penetration": ds.penetration,
        "topologies": {tid: sorted(b.id for b in g.closed_branches()) for tid, g in ds.topologies.items()},
        "mask": [bool(m) for m in ds.mask],
        "tiers": ds.tiers.to_dict(),
        "split": {"train": list(ds.split.train), "val": list(ds.split.val), "test": list(ds.split.test)},
        "samples": [{"timestep": s.timestep_index, "topology": s.topology_id} for s in ds.samples],
        "rejected": ds.rejected,
    }
    (out / "index.json").write_text(json.dumps(index, indent=1))
    return out


def load_dataset(path) -> Dataset:
    root = Path(path)
    index = json.loads((root / "index.json").read_text())
    grid = Grid.from_dict(index["grid"])
    topologies = {tid: grid.with_closed_set(ids) for tid, ids in index["topologies"].items()}
    mask = np.array(index["mask"], dtype=bool)
    nodes: dict[tuple[str, int], list] = {}
    edges: dict[tuple[str, int], list] = {}
    for tid in topologies:
        with open(root / f"topo_{tid}_nodes.csv", newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row in r:
                nodes.setdefault((tid, int(row[0])), []).append([float(v) for v in row[2:]])
        with open(root / f"topo_{tid}_edges.csv", newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row in r:
                edges.setdefault((tid, int(row[0])), []).append(row[1:])
    nf = len(NODE_FEATURES)
    samples = []
    for entry in index["samples"]:
        key = (entry["topology"], entry["timestep"])
        arr = np.array(nodes[key], dtype=float)
        erows = edges.get(key, [])
        ei = np.array([[int(r[0]) for r in erows], [int(r[1]) for r in erows]], dtype=np.int64).reshape(2, -1)
        samples.append(GraphSample(
            topology_id=entry["topology"],
            node_features=arr[:, :nf],
            edge_index=ei,
            edge_branch=np.array([int(r[2]) for r in erows], dtype=np.int64),
            edge_features=np.array([[float(v) for v in r[3:]] for r in erows], dtype=float).reshape(-1, len(EDGE_FEATURES)),
            measured_mask=mask.copy(),
            labels=arr[:, nf:nf + 2],
            timestep_index=entry["timestep"],
        ))
    split = DatasetSplit(tuple(index["split"]["train"]), tuple(index["split"]["val"]), tuple(index["split"]["test"]))
    return Dataset(grid, samples, mask, TierAssignment.from_dict(index["tiers"]), topologies, split,
                   index["penetration"], index.get("rejected", []))
