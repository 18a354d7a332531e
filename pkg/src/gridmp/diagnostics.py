"""Layer-wise smoothness diagnostics and learned distance-function curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Batch, GNAN, Model, SKPGNAN, UnsupportedModelError


class UndefinedQuotientError(ZeroDivisionError):
    pass


def sym_normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2`` restricted to nodes with positive degree."""
    a = np.asarray(adjacency, dtype=float)
    deg = a.sum(axis=1)
    active = deg > 0
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[active] = 1.0 / np.sqrt(deg[active])
    lap = np.diag(active.astype(float)) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return lap


def dirichlet_energy(x: np.ndarray, laplacian: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return float(np.trace(x.T @ laplacian @ x))


def dirichlet_energy_edges(x: np.ndarray, adjacency: np.ndarray) -> float:
    """Half the sum over ordered adjacent pairs of ``||x_i/sqrt(d_i) - x_j/sqrt(d_j)||^2``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    a = np.asarray(adjacency, dtype=float)
    deg = a.sum(axis=1)
    scaled = np.zeros_like(x)
    active = deg > 0
    scaled[active] = x[active] / np.sqrt(deg[active])[:, None]
    i, j = np.nonzero(a)
    return 0.5 * float(np.sum(a[i, j] * np.sum((scaled[i] - scaled[j]) ** 2, axis=1)))


def rayleigh_quotient(x: np.ndarray, laplacian: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    norm2 = float(np.sum(x * x))
    if norm2 == 0.0:
        raise UndefinedQuotientError("Rayleigh quotient of the zero signal is undefined")
    return dirichlet_energy(x, laplacian) / norm2


@dataclass
class LayerTrace:
    layer: list[int]
    dirichlet_energy: list[float]
    rayleigh_quotient: list[float]

    def rows(self):
        return list(zip(self.layer, self.dirichlet_energy, self.rayleigh_quotient))


def trace_layers(model: Model, batch: Batch, graph: int = 0) -> LayerTrace:
    """DE and RQ of the input (layer 0) and every layer output for one graph of the batch."""
    if not getattr(model, "has_layers", False):
        raise UnsupportedModelError(f"{model.kind} has no layer-wise embeddings")
    lap = sym_normalized_laplacian(batch.adjacency[graph])
    rows = slice(graph * batch.n_nodes, (graph + 1) * batch.n_nodes)
    layers, des, rqs = [], [], []
    for k, t in enumerate(model.layers(batch)):
        x = t.data[rows]
        layers.append(k)
        des.append(dirichlet_energy(x, lap))
        rqs.append(rayleigh_quotient(x, lap) if np.any(x) else 0.0)
    return LayerTrace(layers, des, rqs)


@dataclass
class DistanceCurve:
    hops: np.ndarray
    scaled: np.ndarray
    weights: np.ndarray  # (channels, max_hop + 1)


def mean_edge_weight(model: SKPGNAN, batch: Batch) -> np.ndarray:
    return np.array([model.edge_weight(c, batch.edge_x).data.mean() if len(batch.edge_x) else 1.0
                     for c in range(model.config.channels)])


def extract_distance_curve(model: Model, max_hop: int, batch: Batch | None = None) -> DistanceCurve:
    """Learned weight per hop ``l`` evaluated at ``s = 1 / (1 + l)``.

    For SKP-GNAN the adjacent-pair edge MLP is replaced by its mean over the
    edges of ``batch`` (or by 1 when no batch is given).
    """
    hops = np.arange(max_hop + 1)
    if isinstance(model, SKPGNAN):
        mean = mean_edge_weight(model, batch) if batch is not None else None
        weights = model.distance_curve(max_hop, mean)
    elif isinstance(model, GNAN):
        weights = model.distance_curve(max_hop)
    else:
        raise UnsupportedModelError(f"{model.kind} has no distance function")
    return DistanceCurve(hops, 1.0 / (1.0 + hops), weights)
