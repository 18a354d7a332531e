"""Named parameter collections, Adamax, and the checkpoint file format.

A checkpoint is a single file: one line of JSON (names, shapes, offsets,
step counter and free-form metadata) followed by the little-endian float64
payload of every tensor, concatenated in header order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor, parameter

CHECKPOINT_FORMAT = "gridmp-checkpoint-1"


class UnpopulatedGradientError(RuntimeError):
    pass


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ParamStore:
    """Ordered ``name -> Tensor`` map plus Adamax moment buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.first_moment: dict[str, np.ndarray] = {}
        self.inf_norm: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(value)
        self.params[name] = t
        self.first_moment[name] = np.zeros_like(t.data)
        self.inf_norm[name] = np.zeros_like(t.data)
        return t

    def weight(self, name: str, rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, glorot(rng, shape))

    def bias(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def n_params(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != {t.shape}")
            t.data = v.copy()


def adamax_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8, allow_missing: bool = False) -> None:
    """One Adamax update of every parameter, then clear the gradients.

    Parameters that took no part in the loss have ``grad is None``; that is an
    error unless ``allow_missing`` is set, in which case they get a zero step.
    """
    store.step += 1
    bias_corr = 1.0 - beta1 ** store.step
    for name, t in store.params.items():
        g = t.grad
        if g is None:
            if not allow_missing:
                raise UnpopulatedGradientError(f"parameter {name!r} has no gradient")
            g = np.zeros_like(t.data)
        m = store.first_moment[name]
        u = store.inf_norm[name]
        m *= beta1
        m += (1.0 - beta1) * g
        np.maximum(beta2 * u, np.abs(g), out=u)
        t.data = t.data - (lr / bias_corr) * m / (u + eps)
        t.grad = None


def save_checkpoint(path, values: dict[str, np.ndarray], step: int = 0, meta: dict | None = None) -> None:
    entries, offset = [], 0
    for name, v in values.items():
        v = np.asarray(v, dtype=np.float64)
        entries.append({"name": name, "shape": list(v.shape), "offset": offset, "count": int(v.size)})
        offset += int(v.size)
    header = {"format": CHECKPOINT_FORMAT, "step": int(step), "tensors": entries, "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in values.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], int, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a gridmp checkpoint")
    payload = np.frombuffer(raw[nl + 1:], dtype="<f8")
    values = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"]:e["offset"] + e["count"]]
        values[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return values, header["step"], header["meta"]
