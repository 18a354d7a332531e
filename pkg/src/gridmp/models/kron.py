"""Sum-of-Kronecker-products layer kernel and its vectorised counterpart.

``skp_layer`` computes ``sum_c A_c X W_c``. An operator may be a dense
(N, N) matrix, a stack of per-graph (B, N, N) matrices acting on a batch
whose rows are ordered graph-major, or a :class:`SparseOperator` given by
weighted directed edges.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad


@dataclass
class SparseOperator:
    src: np.ndarray
    dst: np.ndarray
    weight: ad.Tensor  # (E,), entry A[dst, src]
    n: int

    def dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        np.add.at(a, (self.dst, self.src), self.weight.data)
        return a


def _apply(a, x: ad.Tensor) -> ad.Tensor:
    rows, d = x.shape
    if isinstance(a, SparseOperator):
        if a.n != rows:
            raise ad.ShapeError(f"skp_layer: sparse operator over {a.n} nodes, input has {rows}")
        return ad.segment_sum(ad.mul_rows(ad.gather(x, a.src), a.weight), a.dst, rows)
    a = ad.as_tensor(a)
    if len(a.shape) == 3:
        b, n, m = a.shape
        if n != m or b * n != rows:
            raise ad.ShapeError(f"skp_layer: operator stack {a.shape} does not tile {rows} rows")
        return ad.reshape(ad.matmul(a, ad.reshape(x, (b, n, d))), (rows, d))
    if a.shape != (rows, rows):
        raise ad.ShapeError(f"skp_layer: operator {a.shape} does not match {rows} nodes")
    return ad.matmul(a, x)


def skp_layer(x: ad.Tensor, operators: Sequence, weights: Sequence) -> ad.Tensor:
    """``sum_c A_c X W_c`` (no activation)."""
    if len(operators) != len(weights) or not operators:
        raise ad.ShapeError(f"skp_layer: {len(operators)} operators vs {len(weights)} weights")
    x = ad.as_tensor(x)
    out = None
    for a, w in zip(operators, weights):
        term = ad.matmul(_apply(a, x), ad.as_tensor(w))
        out = term if out is None else ad.add(out, term)
    return out


def vec(x: np.ndarray) -> np.ndarray:
    """Column-stacking vectorisation."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return np.asarray(v).reshape(shape, order="F")


def kron_operator(operators: Sequence[np.ndarray], weights: Sequence[np.ndarray]) -> np.ndarray:
    """Dense ``sum_c W_c^T (x) A_c`` acting on ``vec(X)``."""
    return sum(np.kron(np.asarray(w).T, np.asarray(a)) for a, w in zip(operators, weights))
