"""Named parameter storage, initialization and the DAFM1 checkpoint format.

Checkpoint layout (all integers little-endian u32)::

    b"DAFM1" | count | count x ( id_len | id utf-8 | rank | dims... | f64 payload )

Entries are written in store order; payloads are row-major little-endian
float64, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable, Iterator
from pathlib import Path

import numpy as np

from .tensor import Tensor, parameter

CHECKPOINT_MAGIC = b"DAFM1"


class CheckpointError(ValueError):
    pass


class ParameterStore:
    """Ordered map from parameter id to leaf Tensor, plus a freeze mask."""

    def __init__(self, items: Iterable[tuple[str, np.ndarray]] = ()):
        self._params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()
        for name, value in items:
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter id: {name}")
        t = parameter(np.array(value, dtype=np.float64))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def freeze(self, names: Iterable[str]):
        names = list(names)
        unknown = [n for n in names if n not in self._params]
        if unknown:
            raise KeyError(f"unknown parameter ids: {unknown}")
        self.frozen.update(names)

    def freeze_all_except(self, names: Iterable[str]):
        keep = set(names)
        self.frozen = {n for n in self._params if n not in keep}

    def unfreeze(self):
        self.frozen = set()

    def trainable(self) -> list[str]:
        return [n for n in self._params if n not in self.frozen]

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def num_values(self) -> int:
        return sum(t.value.size for t in self._params.values())

    def snapshot(self) -> dict[str, bytes]:
        """Raw bytes of every parameter, for bit-equality checks."""
        return {n: t.value.tobytes() for n, t in self._params.items()}

    def copy(self) -> "ParameterStore":
        out = ParameterStore((n, t.value.copy()) for n, t in self._params.items())
        out.frozen = set(self.frozen)
        return out

    def load_values(self, other: "ParameterStore"):
        for n, t in other.items():
            if self[n].shape != t.shape:
                raise CheckpointError(f"shape mismatch for {n}: {self[n].shape} vs {t.shape}")
            self[n].value = t.value.copy()


def glorot(rng: np.random.Generator, shape) -> np.ndarray:
    """uniform(-r, r), r = sqrt(6 / (fan_in + fan_out)); fan_in is the product of trailing dims."""
    fan_out = shape[0]
    fan_in = int(np.prod(shape[1:]))
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def save_checkpoint(path, store: ParameterStore) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", t.value.ndim))
        chunks.append(struct.pack(f"<{t.value.ndim}I", *t.value.shape))
        chunks.append(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> ParameterStore:
    data = Path(path).read_bytes()
    if data[:5] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a DAFM1 checkpoint: {path}")
    pos = 5

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint: {path}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    store = ParameterStore()
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4))
        name = take(id_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims)
        store.add(name, values.astype(np.float64))
    if pos != len(data):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return store
