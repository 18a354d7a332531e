"""Attention message passing: GATv2 and the edge-conditioned SKP-GAT."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import Batch, FeatureError, Model, add_dense, apply_dense
from .kron import SparseOperator, skp_layer


def layer_dims(config) -> list[int]:
    return [config.n_node_features] + [config.hidden] * (config.depth - 1) + [config.channels]


class GATv2(Model):
    """Single-head GATv2 stack with self-loops.

    Scores are ``a . LeakyReLU(W_dst x_i + W_src x_j)`` (the concatenated
    weight split into its two halves) and messages are ``W_src x_j``.
    """
    kind = "gat"
    has_layers = True

    def build(self, rng):
        for k, (a, b) in enumerate(zip(layer_dims(self.config)[:-1], layer_dims(self.config)[1:])):
            self.params.weight(f"l{k}.W_src", rng, (a, b))
            self.params.weight(f"l{k}.W_dst", rng, (a, b))
            self.params.weight(f"l{k}.att", rng, (b, 1))
            self.params.bias(f"l{k}.b", (b,))

    def attention(self, k: int, x: ad.Tensor, src, dst, n_rows: int) -> tuple[ad.Tensor, ad.Tensor]:
        p = self.params
        xs = ad.matmul(x, p[f"l{k}.W_src"])
        xd = ad.matmul(x, p[f"l{k}.W_dst"])
        h = ad.leaky_relu(ad.add(ad.gather(xd, dst), ad.gather(xs, src)), self.config.slope)
        e = ad.reshape(ad.matmul(h, p[f"l{k}.att"]), (len(src),))
        return ad.segment_softmax(e, dst, n_rows), xs

    def layer(self, k: int, x: ad.Tensor, src, dst, n_rows: int, last: bool) -> ad.Tensor:
        alpha, xs = self.attention(k, x, src, dst, n_rows)
        out = ad.add(ad.segment_sum(ad.mul_rows(ad.gather(xs, src), alpha), dst, n_rows), self.params[f"l{k}.b"])
        return out if last else ad.leaky_relu(out, self.config.slope)

    def layers(self, batch: Batch) -> list[ad.Tensor]:
        """Input followed by the output of every layer."""
        src, dst = batch.with_self_loops()
        x = ad.Tensor(batch.x)
        outs = [x]
        for k in range(self.config.depth):
            x = self.layer(k, x, src, dst, batch.n_rows, last=k == self.config.depth - 1)
            outs.append(x)
        return outs

    def forward(self, batch: Batch) -> ad.Tensor:
        return self.layers(batch)[-1]


class SKPGAT(Model):
    """``X' = phi(sum_h A_h(E) X W_h + b)`` with attention from edge features only.

    Each head scores an edge with a small MLP on its features; self-loops,
    which carry no edge features, get one learned score per head. The heads
    are shared by all layers.
    """
    kind = "skp_gat"
    has_layers = True

    def build(self, rng):
        c = self.config
        for h in range(c.heads):
            add_dense(self.params, f"head{h}", rng, (c.n_edge_features, c.edge_hidden, 1))
            self.params.bias(f"head{h}.self", (1,))
        dims = layer_dims(c)
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            for h in range(c.heads):
                self.params.weight(f"l{k}.W{h}", rng, (a, b))
            self.params.bias(f"l{k}.b", (b,))

    def scores(self, h: int, edge_x, n_loops: int) -> ad.Tensor:
        """Unnormalised scores ``z`` for real edges followed by ``n_loops`` self-loops."""
        edge_x = np.asarray(edge_x, dtype=float)
        if edge_x.ndim != 2 or edge_x.shape[1] != self.config.n_edge_features:
            raise FeatureError(f"expected (E, {self.config.n_edge_features}) edge features, got {edge_x.shape}")
        z = apply_dense(self.params, f"head{h}", ad.Tensor(edge_x), 2, lambda t: ad.leaky_relu(t, self.config.slope))
        z = ad.reshape(z, (edge_x.shape[0],))
        loops = ad.gather(self.params[f"head{h}.self"], np.zeros(n_loops, dtype=np.int64))
        return ad.concat([z, loops])

    def attention(self, batch: Batch) -> list[ad.Tensor]:
        _, dst = batch.with_self_loops()
        return [ad.segment_softmax(self.scores(h, batch.edge_x, batch.n_rows), dst, batch.n_rows)
                for h in range(self.config.heads)]

    def operators(self, batch: Batch) -> list[SparseOperator]:
        src, dst = batch.with_self_loops()
        return [SparseOperator(src, dst, alpha, batch.n_rows) for alpha in self.attention(batch)]

    def dense_operators(self, batch: Batch) -> list[np.ndarray]:
        """``A_h`` as dense (R, R) matrices with ``A[i, j]`` the weight of j -> i."""
        return [op.dense() for op in self.operators(batch)]

    def layer(self, k: int, x: ad.Tensor, ops, last: bool) -> ad.Tensor:
        weights = [self.params[f"l{k}.W{h}"] for h in range(len(ops))]
        out = ad.add(skp_layer(x, ops, weights), self.params[f"l{k}.b"])
        return out if last else ad.leaky_relu(out, self.config.slope)

    def layers(self, batch: Batch) -> list[ad.Tensor]:
        ops = self.operators(batch)
        x = ad.Tensor(batch.x)
        outs = [x]
        for k in range(self.config.depth):
            x = self.layer(k, x, ops, last=k == self.config.depth - 1)
            outs.append(x)
        return outs

    def forward(self, batch: Batch) -> ad.Tensor:
        return self.layers(batch)[-1]
