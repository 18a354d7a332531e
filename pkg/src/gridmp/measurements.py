"""Load profiles, sensor placement, two-tier measurement noise and sample assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .powerflow import PowerFlowSolution, branch_flows

STEPS_PER_DAY = 96  # 15-minute resolution
ANGLE_FLOOR = 0.01  # rad

NODE_FEATURES = ("v_mag_meas", "v_ang_meas", "p_meas", "q_meas", "meas_present",
                 "is_slack", "vn_pu", "time_sin", "time_cos")
EDGE_FEATURES = ("p_flow_meas", "q_flow_meas", "p_std", "q_std", "conductance",
                 "susceptance", "shift_rad", "is_transformer", "switch_closed")


class SampleRejected(ValueError):
    pass


class TooFewSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseTier:
    v_mag_rate: float
    v_ang_rate: float
    p_rate: float
    q_rate: float

    def __post_init__(self):
        if min(self.v_mag_rate, self.v_ang_rate, self.p_rate, self.q_rate) < 0:
            raise ValueError("noise rates must be non-negative")


# substation-grade equipment and household smart meters
HIGH_PRECISION = NoiseTier(0.002, 0.005, 0.005, 0.010)
HOUSEHOLD = NoiseTier(0.005, 0.010, 0.010, 0.020)
NOISELESS = NoiseTier(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class TierAssignment:
    """Noise tier per bus and per branch id."""
    bus: tuple[NoiseTier, ...]
    branch: dict

    def to_dict(self) -> dict:
        def name(t):
            return {HIGH_PRECISION: "high", HOUSEHOLD: "household", NOISELESS: "none"}.get(t, "custom")
        return {"bus": [name(t) for t in self.bus], "branch": {str(k): name(v) for k, v in self.branch.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "TierAssignment":
        table = {"high": HIGH_PRECISION, "household": HOUSEHOLD, "none": NOISELESS}
        return cls(tuple(table[n] for n in d["bus"]), {int(k): table[v] for k, v in d["branch"].items()})


def assign_tiers(grid: Grid, noiseless: bool = False) -> TierAssignment:
    """MV: high precision everywhere. LV: high precision at transformers, household elsewhere."""
    if noiseless:
        return TierAssignment(tuple(NOISELESS for _ in grid.buses), {b.id: NOISELESS for b in grid.branches})
    if grid.level == "MV":
        return TierAssignment(tuple(HIGH_PRECISION for _ in grid.buses), {b.id: HIGH_PRECISION for b in grid.branches})
    at_trafo = set()
    for b in grid.branches:
        if b.transformer:
            at_trafo.update((b.from_bus, b.to_bus))
    bus = tuple(HIGH_PRECISION if i in at_trafo else HOUSEHOLD for i in range(grid.n_buses))
    branch = {b.id: HIGH_PRECISION if b.transformer else HOUSEHOLD for b in grid.branches}
    return TierAssignment(bus, branch)


def generate_profiles(n_buses: int, n_timesteps: int, seed: int, scale: float | None = None):
    """Daily-periodic active/reactive load per bus, shape ``(T, N)``.

    ``scale`` shrinks the peak load on large grids (default ``min(1, 15/N)``)
    so that constant-p.u. feeders stay within voltage-collapse limits.
    """
    if n_timesteps < 1:
        raise ValueError("n_timesteps must be >= 1")
    if scale is None:
        scale = min(1.0, 15.0 / n_buses)
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.02, 0.05, size=n_buses)
    phase = rng.uniform(0, 2 * np.pi, size=n_buses)
    pf = rng.uniform(0.2, 0.5, size=n_buses)
    t = np.arange(n_timesteps)[:, None]
    daily = 1.0 + 0.6 * np.sin(2 * np.pi * t / STEPS_PER_DAY + phase)
    noise = rng.lognormal(0.0, 0.15, size=(n_timesteps, n_buses))
    p = np.clip(base * daily * noise, 0.0, 0.1) * scale
    q = p * pf
    return p, q


def select_measured_buses(grid: Grid, rate: float, seed: int) -> np.ndarray:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"penetration rate must lie in [0, 1], got {rate}")
    n = grid.n_buses
    k = max(1, math.ceil(round(rate * n, 9)))
    rng = np.random.default_rng(seed)
    others = np.array([i for i in range(n) if i != grid.slack])
    picked = rng.choice(others, size=k - 1, replace=False) if k > 1 else np.array([], dtype=int)
    mask = np.zeros(n, dtype=bool)
    mask[grid.slack] = True
    mask[picked] = True
    return mask


def apply_noise(value, rate, draw, angle: bool = False):
    """``value + draw * rate * |value|``; angles use ``max(|value|, ANGLE_FLOOR)``."""
    value = np.asarray(value, dtype=float)
    mag = np.abs(value)
    if angle:
        mag = np.maximum(mag, ANGLE_FLOOR)
    return value + np.asarray(draw) * (np.asarray(rate) * mag)


@dataclass
class GraphSample:
    topology_id: str
    node_features: np.ndarray   # (N, 9), NODE_FEATURES order
    edge_index: np.ndarray      # (2, M) rows: source, target; two rows per closed branch
    edge_branch: np.ndarray     # (M,) branch id of every directed edge
    edge_features: np.ndarray   # (M, 9), EDGE_FEATURES order
    measured_mask: np.ndarray   # (N,) bool
    labels: np.ndarray          # (N, 2): v_mag p.u., v_ang rad
    timestep_index: int

    @property
    def n_nodes(self) -> int:
        return self.labels.shape[0]


def assemble_sample(grid: Grid, solution: PowerFlowSolution, mask: np.ndarray, tiers: TierAssignment,
                    time_index: int, rng: np.random.Generator) -> GraphSample:
    if not solution.converged:
        raise SampleRejected(f"power flow did not converge at t={time_index}: {solution.message}")
    n = grid.n_buses
    x = np.zeros((n, len(NODE_FEATURES)))
    draws = rng.standard_normal((n, 4))
    for i in range(n):
        if mask[i]:
            tier = tiers.bus[i]
            x[i, 0] = apply_noise(solution.v_mag[i], tier.v_mag_rate, draws[i, 0])
            x[i, 1] = apply_noise(solution.v_ang[i], tier.v_ang_rate, draws[i, 1], angle=True)
            x[i, 2] = apply_noise(solution.p_inj[i], tier.p_rate, draws[i, 2])
            x[i, 3] = apply_noise(solution.q_inj[i], tier.q_rate, draws[i, 3])
            x[i, 4] = 1.0
        x[i, 5] = 1.0 if i == grid.slack else 0.0
        x[i, 6] = grid.buses[i].vn_pu
    phase = 2 * np.pi * time_index / STEPS_PER_DAY
    x[:, 7] = np.sin(phase)
    x[:, 8] = np.cos(phase)

    flows = branch_flows(grid, solution.voltage)
    closed = grid.closed_branches()
    src, dst, bid, rows = [], [], [], []
    edraws = rng.standard_normal((len(closed), 2, 2))
    for k, br in enumerate(closed):
        y = 1.0 / br.z
        tier = tiers.branch[br.id]
        for end, (a, b) in enumerate(((br.from_bus, br.to_bus), (br.to_bus, br.from_bus))):
            s = flows[br.id][end]
            if mask[a]:
                p_std, q_std = tier.p_rate * abs(s.real), tier.q_rate * abs(s.imag)
                pm = s.real + edraws[k, end, 0] * p_std
                qm = s.imag + edraws[k, end, 1] * q_std
            else:
                pm = qm = p_std = q_std = 0.0
            src.append(a)
            dst.append(b)
            bid.append(br.id)
            rows.append([pm, qm, p_std, q_std, y.real, y.imag, br.shift_rad, float(br.transformer), 1.0])
    labels = np.column_stack([solution.v_mag, solution.v_ang])
    if not np.all(np.isfinite(labels)) or np.any(labels[:, 0] <= 0):
        raise SampleRejected(f"non-physical labels at t={time_index}")
    return GraphSample(
        topology_id=grid.topology_id(),
        node_features=x,
        edge_index=np.array([src, dst], dtype=np.int64).reshape(2, -1),
        edge_branch=np.array(bid, dtype=np.int64),
        edge_features=np.array(rows, dtype=float).reshape(-1, len(EDGE_FEATURES)),
        measured_mask=np.asarray(mask, dtype=bool).copy(),
        labels=labels,
        timestep_index=int(time_index),
    )


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


def split_dataset(n_samples: int, seed: int) -> DatasetSplit:
    if n_samples < 10:
        raise TooFewSamplesError(f"need at least 10 samples to split, got {n_samples}")
    perm = np.random.default_rng(seed).permutation(n_samples)
    a, b = n_samples * 8 // 10, n_samples * 9 // 10
    return DatasetSplit(tuple(int(i) for i in perm[:a]), tuple(int(i) for i in perm[a:b]),
                        tuple(int(i) for i in perm[b:]))


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-scores fitted on the training split.

    Labels get their own per-channel mean/std so models regress a
    unit-scale target; the loss is still measured in label units.
    """
    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    label_mean: np.ndarray | None = None
    label_std: np.ndarray | None = None

    @classmethod
    def fit(cls, samples) -> "Standardizer":
        samples = list(samples)
        xn = np.concatenate([s.node_features for s in samples])
        xe = np.concatenate([s.edge_features for s in samples])
        y = np.concatenate([s.labels for s in samples])

        def stats(x):
            m, sd = x.mean(axis=0), x.std(axis=0)
            return m, np.where(sd > 1e-12, sd, 1.0)

        return cls(*stats(xn), *stats(xe), *stats(y))

    def nodes(self, x: np.ndarray) -> np.ndarray:
        return (x - self.node_mean) / self.node_std

    def edges(self, x: np.ndarray) -> np.ndarray:
        return (x - self.edge_mean) / self.edge_std

    _KEYS = ("node_mean", "node_std", "edge_mean", "edge_std", "label_mean", "label_std")

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self._KEYS if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(*(np.array(d[k], dtype=float) if k in d else None for k in cls._KEYS))
