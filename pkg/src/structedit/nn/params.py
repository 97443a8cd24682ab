"""Named parameters, initialisation, Adam and the checkpoint format."""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from typing import BinaryIO

import numpy as np

from .core import Tensor, parameter

MAGIC = b"SEDT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered registry of trainable tensors keyed by dotted names."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def _new(self, name, data) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        p = parameter(data, name)
        self.params[name] = p
        return p

    def matrix(self, name, n_in, n_out) -> Tensor:
        bound = 1.0 / np.sqrt(n_in)
        return self._new(name, self.rng.uniform(-bound, bound, size=(n_in, n_out)))

    def bias(self, name, n, value=0.0) -> Tensor:
        return self._new(name, np.full((1, n), value))

    def embedding(self, name, rows, dim) -> Tensor:
        return self._new(name, self.rng.normal(0.0, 0.1, size=(rows, dim)))

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for k, p in self.params.items():
            if state[k].shape != p.data.shape:
                raise CheckpointError(f"shape mismatch for {k}: {state[k].shape} vs {p.data.shape}")
            p.data[...] = state[k]


class Adam:
    def __init__(self, store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=5.0):
        self.store, self.lr, self.b1, self.b2, self.eps, self.clip = store, lr, beta1, beta2, eps, clip
        self.m = {k: np.zeros_like(p.data) for k, p in store.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in store.params.items()}
        self.t = 0

    def step(self) -> float:
        """One update; gradients are rescaled to global norm ``clip`` first.
        Returns the pre-clipping norm."""
        grads = {k: p.grad for k, p in self.store.params.items() if p.grad is not None}
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if not np.isfinite(norm):
            raise FloatingPointError("non-finite gradient")
        factor = self.clip / norm if self.clip and norm > self.clip else 1.0
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            g = g * factor
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            self.store.params[k].data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.store.zero_grad()
        return norm


def write_checkpoint(f: BinaryIO, header: dict, tensors: dict):
    """Layout: magic, version byte, u32 header length, JSON header, then per
    tensor: u16 name length, name, u8 rank, u32 dims, little-endian f8 data."""
    f.write(MAGIC)
    f.write(bytes([VERSION]))
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    f.write(struct.pack("<I", len(hb)))
    f.write(hb)
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        f.write(struct.pack("<H", len(nb)))
        f.write(nb)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def _read(f, n):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def read_checkpoint(f: BinaryIO):
    if _read(f, 4) != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version = _read(f, 1)[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", _read(f, 4))
    header = json.loads(_read(f, hlen).decode("utf-8"))
    (count,) = struct.unpack("<I", _read(f, 4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(f, 2))
        name = _read(f, nlen).decode("utf-8")
        rank = _read(f, 1)[0]
        shape = struct.unpack(f"<{rank}I", _read(f, 4 * rank))
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(_read(f, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return header, tensors
