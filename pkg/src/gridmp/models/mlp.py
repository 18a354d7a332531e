"""Fully connected baseline on the flattened bus feature vector."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import Batch, CapacityError, Model, add_dense, apply_dense


class MLP(Model):
    kind = "mlp"

    def build(self, rng):
        c = self.config
        if c.max_nodes is None:
            raise ValueError("MLP needs config.max_nodes")
        h = c.mlp_hidden
        add_dense(self.params, "mlp", rng, (c.max_nodes * c.n_node_features, h, h, c.channels * c.max_nodes))

    def forward(self, batch: Batch) -> ad.Tensor:
        c = self.config
        n, b, f = batch.n_nodes, batch.n_graphs, c.n_node_features
        if n > c.max_nodes:
            raise CapacityError(f"{n}-bus sample exceeds MLP capacity of {c.max_nodes} buses")
        x = ad.Tensor(batch.x.reshape(b, n * f))
        if n < c.max_nodes:
            x = ad.concat([x, ad.Tensor(np.zeros((b, (c.max_nodes - n) * f)))], axis=1)
        y = apply_dense(self.params, "mlp", x, 3, lambda t: ad.leaky_relu(t, c.slope))
        y = ad.reshape(y, (b * c.max_nodes, c.channels))
        if n < c.max_nodes:
            rows = (np.arange(b)[:, None] * c.max_nodes + np.arange(n)[None, :]).reshape(-1)
            y = ad.gather(y, rows)
        return y
