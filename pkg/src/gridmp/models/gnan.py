"""Additive graph models: per-feature shape functions weighted by learned distance kernels."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import (Batch, FeatureError, Model, add_dense, add_featurewise, apply_dense, apply_featurewise,
                   select_column)
from .kron import skp_layer


def _hop_tables(batch: Batch, max_hop: int | None):
    """Flattened (B*N*N) hop index, 1/shell-count weight and masks for a batch.

    Pairs that are unreachable (or farther than ``max_hop``) get zero weight.
    """
    n, b = batch.n_nodes, batch.n_graphs
    hops = np.stack([dd.hops for dd in batch.distances])
    shells = np.stack([dd.shell_counts for dd in batch.distances]).astype(float)
    keep = np.isfinite(hops)
    if max_hop is not None:
        keep &= hops <= max_hop
    idx = np.where(keep, hops, 0).astype(np.int64)
    inv_n = np.where(keep, 1.0 / shells, 0.0)
    n_hops = int(idx.max()) + 1
    eye = np.broadcast_to(np.eye(n, dtype=bool), (b, n, n))
    return {
        "hop": idx.reshape(-1),
        "inv_n": inv_n.reshape(-1),
        "keep": keep,
        "n_hops": n_hops,
        "diag": eye.reshape(-1).astype(float),
        "nonadj": (keep & ~eye & (hops > 1)).reshape(-1).astype(float),
    }


def scaled_hops(n_hops: int) -> np.ndarray:
    return 1.0 / (1.0 + np.arange(n_hops, dtype=float))


class GNAN(Model):
    """Node-level GNAN: ``y_i = sum_k sum_j rho(s_ij) / n_ij * f_k(x_jk)``.

    Each shape function ``f_k`` maps one scalar feature to both output
    channels; one distance kernel ``rho`` is shared by all features.
    """
    kind = "gnan"
    has_distance = True

    def build(self, rng):
        c = self.config
        h1, h2 = c.shape_hidden
        add_featurewise(self.params, "shape", rng, c.n_node_features, (1, h1, h2, c.channels))
        add_dense(self.params, "rho", rng, (1, h1, h2, 1))

    def shape_values(self, batch: Batch) -> ad.Tensor:
        """(d, R, channels) shape-function outputs ``f_k(x_jk)``."""
        return apply_featurewise(self.params, "shape", ad.Tensor(batch.x), 3)

    def rho(self, s) -> ad.Tensor:
        s = np.asarray(s, dtype=float).reshape(-1, 1)
        return ad.reshape(apply_dense(self.params, "rho", ad.Tensor(s), 3, ad.tanh), (s.shape[0],))

    def operator(self, batch: Batch) -> ad.Tensor:
        """(B, N, N) aggregation weights ``rho(s_ij) / n_ij``."""
        t = batch.cached(("hops", None), lambda: _hop_tables(batch, None))
        table = self.rho(scaled_hops(t["n_hops"]))
        w = ad.mul(ad.gather(table, t["hop"]), ad.Tensor(t["inv_n"]))
        return ad.reshape(w, (batch.n_graphs, batch.n_nodes, batch.n_nodes))

    def embed(self, batch: Batch) -> ad.Tensor:
        """(R, d, channels) per-feature node embeddings."""
        f = self.shape_values(batch)
        d, rows, ch = f.shape
        per_node = ad.reshape(ad.transpose(f, (1, 0, 2)), (batch.n_graphs, batch.n_nodes, d * ch))
        h = ad.matmul(self.operator(batch), per_node)
        return ad.reshape(h, (rows, d, ch))

    def forward(self, batch: Batch) -> ad.Tensor:
        # summing over features before aggregating is the same sum, d times cheaper
        g = ad.sum(self.shape_values(batch), axis=0)
        g = ad.reshape(g, (batch.n_graphs, batch.n_nodes, self.config.channels))
        out = ad.matmul(self.operator(batch), g)
        return ad.reshape(out, (batch.n_rows, self.config.channels))

    def contributions(self, batch: Batch) -> np.ndarray:
        """``C[b, j, k, c] = f_k(x_jk) * sum_i rho(s_ij) / n_ij`` for every node j, feature k."""
        f = self.shape_values(batch).data                      # (d, R, ch)
        d, rows, ch = f.shape
        col = self.operator(batch).data.sum(axis=1)            # (B, N): sum over targets i
        f = np.transpose(f, (1, 0, 2)).reshape(batch.n_graphs, batch.n_nodes, d, ch)
        return f * col[:, :, None, None]

    def distance_curve(self, max_hop: int) -> np.ndarray:
        return self.rho(scaled_hops(max_hop + 1)).data[None, :]


class SKPGNAN(GNAN):
    """GNAN with one edge-conditioned aggregation operator per output channel.

    ``W_c[i, j] = rho_c(s_ij) * m_c(i, j) / n_ij`` where ``m_c`` is an edge
    MLP on the features of edge j->i for adjacent pairs, a distance MLP on
    the hop count otherwise, and the edge MLP on a learned self-edge vector
    on the diagonal.
    """
    kind = "skp_gnan"

    def build(self, rng):
        c = self.config
        h1, h2 = c.shape_hidden
        add_featurewise(self.params, "shape", rng, c.n_node_features, (1, h1, h2, c.channels))
        for ch in range(c.channels):
            add_dense(self.params, f"rho{ch}", rng, (1, h1, h2, 1))
            add_dense(self.params, f"edge{ch}", rng, (c.n_edge_features, c.edge_hidden, 1))
            add_dense(self.params, f"dist{ch}", rng, (1, c.edge_hidden, 1))
        # a learned feature vector, not a bias: a zero start would sit on the leaky-relu kink
        self.params.weight("self_edge", rng, (1, c.n_edge_features))

    def rho_c(self, ch: int, s) -> ad.Tensor:
        s = np.asarray(s, dtype=float).reshape(-1, 1)
        return ad.reshape(apply_dense(self.params, f"rho{ch}", ad.Tensor(s), 3, ad.tanh), (s.shape[0],))

    def _leaky(self, x):
        return ad.leaky_relu(x, self.config.slope)

    def edge_weight(self, ch: int, e) -> ad.Tensor:
        e = ad.as_tensor(e)
        return ad.reshape(apply_dense(self.params, f"edge{ch}", e, 2, self._leaky), (e.shape[0],))

    def dist_weight(self, ch: int, hops) -> ad.Tensor:
        d = np.asarray(hops, dtype=float).reshape(-1, 1) / self.config.max_hop
        return ad.reshape(apply_dense(self.params, f"dist{ch}", ad.Tensor(d), 2, self._leaky), (d.shape[0],))

    def _edge_tables(self, batch: Batch):
        n, nn = batch.n_nodes, batch.n_nodes * batch.n_nodes
        b_of = batch.dst // n
        pos = b_of * nn + (batch.dst % n) * n + (batch.src % n)
        count = np.zeros(batch.n_graphs * nn)
        np.add.at(count, pos, 1.0)
        inv_mult = np.where(count > 0, 1.0 / np.maximum(count, 1.0), 0.0)
        return {"pos": pos, "inv_mult": inv_mult}

    def operator_c(self, batch: Batch, ch: int) -> ad.Tensor:
        c = self.config
        if batch.edge_x.shape[1] != c.n_edge_features:
            raise FeatureError(f"expected {c.n_edge_features} edge features, got {batch.edge_x.shape[1]}")
        t = batch.cached(("hops", c.max_hop), lambda: _hop_tables(batch, c.max_hop))
        e = batch.cached("edges", lambda: self._edge_tables(batch))
        size = batch.n_graphs * batch.n_nodes * batch.n_nodes
        rho = ad.gather(self.rho_c(ch, scaled_hops(t["n_hops"])), t["hop"])
        dist = ad.mul(ad.gather(self.dist_weight(ch, np.arange(t["n_hops"])), t["hop"]), ad.Tensor(t["nonadj"]))
        adj = ad.mul(ad.segment_sum(self.edge_weight(ch, batch.edge_x), e["pos"], size), ad.Tensor(e["inv_mult"]))
        self_w = self.edge_weight(ch, self.params["self_edge"])
        diag = ad.mul(ad.gather(self_w, np.zeros(size, dtype=np.int64)), ad.Tensor(t["diag"]))
        m = ad.add(ad.add(adj, dist), diag)
        w = ad.mul(ad.mul(rho, m), ad.Tensor(t["inv_n"]))
        return ad.reshape(w, (batch.n_graphs, batch.n_nodes, batch.n_nodes))

    def operator(self, batch: Batch) -> ad.Tensor:
        raise NotImplementedError("SKP-GNAN has one operator per channel; use operator_c")

    def embed(self, batch: Batch) -> ad.Tensor:
        f = self.shape_values(batch)
        d, rows, ch = f.shape
        outs = []
        for c in range(ch):
            fc = ad.reshape(ad.transpose(ad.reshape(select_column(ad.reshape(f, (d * rows, ch)), c), (d, rows))),
                            (batch.n_graphs, batch.n_nodes, d))
            outs.append(ad.reshape(ad.matmul(self.operator_c(batch, c), fc), (rows, d, 1)))
        return ad.concat(outs, axis=2)

    def forward(self, batch: Batch) -> ad.Tensor:
        g = ad.sum(self.shape_values(batch), axis=0)  # (R, ch)
        ch = self.config.channels
        # channel c aggregates only its own column: W_c = e_c e_c^T
        selectors = [np.diag(np.eye(ch)[c]) for c in range(ch)]
        return skp_layer(g, [self.operator_c(batch, c) for c in range(ch)], selectors)

    def contributions(self, batch: Batch) -> np.ndarray:
        f = self.shape_values(batch).data
        d, rows, ch = f.shape
        f = np.transpose(f, (1, 0, 2)).reshape(batch.n_graphs, batch.n_nodes, d, ch)
        cols = np.stack([self.operator_c(batch, c).data.sum(axis=1) for c in range(ch)], axis=-1)
        return f * cols[:, :, None, :]

    def distance_curve(self, max_hop: int, mean_edge_weight: np.ndarray | None = None) -> np.ndarray:
        """Effective per-hop weight per channel.

        Hop 0 uses the self-edge branch, hop 1 the edge MLP averaged over
        ``mean_edge_weight`` (per channel; 1 if not given), larger hops the
        distance MLP.
        """
        hops = np.arange(max_hop + 1)
        curves = []
        for c in range(self.config.channels):
            rho = self.rho_c(c, scaled_hops(max_hop + 1)).data
            m = self.dist_weight(c, hops).data.copy()
            m[0] = self.edge_weight(c, self.params["self_edge"]).data[0]
            if max_hop >= 1:
                m[1] = 1.0 if mean_edge_weight is None else float(mean_edge_weight[c])
            curves.append(rho * m)
        return np.array(curves)
