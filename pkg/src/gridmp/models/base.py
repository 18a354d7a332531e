"""Batches, model configuration and the training loss shared by every estimator."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..grid import DistanceData
from ..measurements import EDGE_FEATURES, NODE_FEATURES, GraphSample, Standardizer
from ..optim import ParamStore

# models regress the deviation from the flat profile (1 p.u., 0 rad)
LABEL_OFFSET = np.array([1.0, 0.0])
# angle errors are shrunk before squaring so both channels weigh in comparably
CHANNEL_SCALE = np.array([1.0, 0.1])


class TopologyMismatchError(ValueError):
    pass


class FeatureError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class UnsupportedModelError(TypeError):
    pass


@dataclass
class ModelConfig:
    kind: str
    n_node_features: int = len(NODE_FEATURES)
    n_edge_features: int = len(EDGE_FEATURES)
    depth: int = 4
    hidden: int = 32
    heads: int = 3
    channels: int = 2
    mlp_hidden: int = 256
    max_nodes: int | None = None
    max_hop: int = 50
    shape_hidden: tuple[int, int] = (16, 16)
    edge_hidden: int = 16
    slope: float = 0.2
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape_hidden"] = list(self.shape_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "shape_hidden" in d:
            d["shape_hidden"] = tuple(d["shape_hidden"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Batch:
    """A disjoint union of ``B`` samples of one ``N``-bus grid.

    Node rows are ordered sample-major (row ``b * N + i``); ``src``/``dst``
    index real directed edges in that global numbering.
    """
    n_graphs: int
    n_nodes: int
    x: np.ndarray
    labels: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_x: np.ndarray
    distances: list[DistanceData]
    adjacency: list[np.ndarray]
    label_mean: np.ndarray = field(default_factory=lambda: LABEL_OFFSET.copy())
    label_scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_rows(self) -> int:
        return self.n_graphs * self.n_nodes

    @property
    def targets(self) -> np.ndarray:
        """Labels in model-output units: ``(labels - label_mean) / label_scale``."""
        return (self.labels - self.label_mean) / self.label_scale

    @property
    def loss_weights(self) -> np.ndarray:
        # undoes the label scaling inside the loss so errors stay in p.u. / rad
        return CHANNEL_SCALE * self.label_scale

    def to_labels(self, out: np.ndarray) -> np.ndarray:
        return out * self.label_scale + self.label_mean

    def with_self_loops(self) -> tuple[np.ndarray, np.ndarray]:
        loops = np.arange(self.n_rows)
        return np.concatenate([self.src, loops]), np.concatenate([self.dst, loops])

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]


def make_batch(samples: Sequence[GraphSample], distances: Sequence[DistanceData],
               standardizer: Standardizer | None = None) -> Batch:
    samples = list(samples)
    n = samples[0].n_nodes
    xs, labels, src, dst, ex, adj = [], [], [], [], [], []
    for b, (s, dd) in enumerate(zip(samples, distances)):
        if s.n_nodes != n:
            raise TopologyMismatchError("all samples in a batch must share the bus count")
        if dd.n != n or (dd.topology_id and s.topology_id and dd.topology_id != s.topology_id):
            raise TopologyMismatchError(f"distance data {dd.topology_id} does not match sample topology {s.topology_id}")
        x = s.node_features if standardizer is None else standardizer.nodes(s.node_features)
        e = s.edge_features if standardizer is None else standardizer.edges(s.edge_features)
        xs.append(x)
        labels.append(s.labels)
        src.append(s.edge_index[0] + b * n)
        dst.append(s.edge_index[1] + b * n)
        ex.append(e)
        a = np.zeros((n, n))
        a[s.edge_index[0], s.edge_index[1]] = 1.0
        adj.append(np.maximum(a, a.T))
    batch = Batch(len(samples), n, np.concatenate(xs), np.concatenate(labels),
                  np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64),
                  np.concatenate(ex) if ex else np.zeros((0, len(EDGE_FEATURES))), list(distances), adj)
    if standardizer is not None and standardizer.label_mean is not None:
        batch.label_mean = np.asarray(standardizer.label_mean, dtype=float)
        batch.label_scale = np.asarray(standardizer.label_std, dtype=float)
    return batch


# ----------------------------------------------------------------- layers

def add_dense(store: ParamStore, name: str, rng, sizes: Sequence[int]) -> None:
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        store.weight(f"{name}.W{k}", rng, (a, b))
        store.bias(f"{name}.b{k}", (b,))


def apply_dense(store: ParamStore, name: str, x: ad.Tensor, n_layers: int, act) -> ad.Tensor:
    """Dense stack; ``act`` on hidden layers, identity on the last."""
    for k in range(n_layers):
        x = ad.add(ad.matmul(x, store[f"{name}.W{k}"]), store[f"{name}.b{k}"])
        if k < n_layers - 1:
            x = act(x)
    return x


def add_featurewise(store: ParamStore, name: str, rng, n_features: int, sizes: Sequence[int]) -> None:
    """One independent scalar network per feature, stored as stacked (d, in, out) weights."""
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        store.weight(f"{name}.W{k}", rng, (n_features, a, b))
        store.bias(f"{name}.b{k}", (n_features, 1, b))


def apply_featurewise(store: ParamStore, name: str, x: ad.Tensor, n_layers: int) -> ad.Tensor:
    """(R, d) -> (d, R, out): feature ``k`` of every row goes through network ``k``."""
    rows, d = x.shape
    h = ad.reshape(ad.transpose(x), (d, rows, 1))
    for k in range(n_layers):
        h = ad.add(ad.matmul(h, store[f"{name}.W{k}"]), store[f"{name}.b{k}"])
        if k < n_layers - 1:
            h = ad.tanh(h)
    return h


def select_column(x: ad.Tensor, c: int) -> ad.Tensor:
    e = np.zeros((x.shape[1], 1))
    e[c, 0] = 1.0
    return ad.matmul(x, ad.Tensor(e))


# ------------------------------------------------------------------- model

class Model:
    kind = "base"
    has_layers = False
    has_distance = False

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParamStore()
        self.build(np.random.default_rng(config.seed))

    def build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def forward(self, batch: Batch) -> ad.Tensor:
        raise NotImplementedError

    def predict(self, batch: Batch) -> np.ndarray:
        """Absolute (v_mag p.u., v_ang rad) per node row."""
        return batch.to_labels(self.forward(batch).data)

    def n_params(self) -> int:
        return self.params.n_params()


def loss(pred: ad.Tensor, targets: np.ndarray, mask: np.ndarray | None = None, model_name: str = "model",
         weights: np.ndarray | None = None) -> ad.Tensor:
    """Mean squared error over buses and both channels, angle channel pre-scaled.

    ``weights`` replaces the per-channel scale (default ``CHANNEL_SCALE``).
    """
    if pred.shape != targets.shape:
        raise ad.ShapeError(f"loss: predictions {pred.shape} vs labels {targets.shape}")
    if not np.all(np.isfinite(pred.data)):
        raise NumericError(f"{model_name}: non-finite predictions")
    scale = CHANNEL_SCALE if weights is None else np.asarray(weights, dtype=float)
    w = np.broadcast_to(scale[: targets.shape[1]], targets.shape).copy()
    if mask is not None:
        w = w * np.asarray(mask, dtype=float)[:, None]
    diff = ad.mul(ad.sub(pred, ad.Tensor(targets)), ad.Tensor(w))
    sq = ad.square(diff)
    if mask is None:
        return ad.mean(sq)
    return ad.scale(ad.sum(sq), 1.0 / (targets.shape[1] * max(1.0, float(np.sum(mask)))))
