"""Named trainable parameters and their binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    magic  b"SRNN"      4 bytes
    version             1 byte  (currently 1)
    count               uint32
    count x record:
        name length     uint16, then UTF-8 name bytes
        ndim            uint8, then ndim x uint32 dimension sizes
        payload         prod(shape) x float64, row-major
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autodiff import Parameter
from .exceptions import ContractError, DimensionError, ParseError

MAGIC = b"SRNN"
FORMAT_VERSION = 1


class ParameterStore:
    """Ordered mapping of name -> Parameter.

    Reads may happen from several threads during cost collection; gradient
    accumulation and optimizer steps must not overlap with anything else.
    """

    def __init__(self, params=None):
        self._params: OrderedDict[str, Parameter] = OrderedDict()
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = value if isinstance(value, Parameter) else Parameter(value, name=name)
        p.name = name
        self._params[name] = p
        return p

    def __getitem__(self, name) -> Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    @property
    def size(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(p.value.size for p in self._params.values()))

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def flat_values(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self._params.values()])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for p in self._params.values()])

    def set_flat_values(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise DimensionError(f"expected {self.size} values, got {flat.size}")
        offset = 0
        for p in self._params.values():
            n = p.value.size
            p.value = flat[offset:offset + n].reshape(p.value.shape).copy()
            offset += n

    def checksum(self) -> str:
        """SHA-256 over names, shapes and raw parameter bytes."""
        h = hashlib.sha256()
        for name, p in self._params.items():
            h.update(name.encode())
            h.update(repr(p.value.shape).encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise ContractError(f"missing parameters: {sorted(missing)}")
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise DimensionError(f"{name}: shape {value.shape} != {p.value.shape}")
            p.value = value.copy()
            p.zero_grad()

    def copy(self) -> "ParameterStore":
        return ParameterStore({name: p.value.copy() for name, p in self._params.items()})


def save_checkpoint(store_or_state, path):
    state = store_or_state.state_dict() if isinstance(store_or_state, ParameterStore) else store_or_state
    chunks = [MAGIC, struct.pack("<BI", FORMAT_VERSION, len(state))]
    for name, value in state.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        chunks.append(value.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, count = struct.unpack_from("<BI", data, 4)
        if version != FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported format version {version}")
        pos = 9
        state = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise ParseError(f"{path}: truncated payload for {name!r}")
            state[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except struct.error as exc:
        raise ParseError(f"{path}: truncated checkpoint ({exc})") from None
    if pos != len(data):
        raise ParseError(f"{path}: {len(data) - pos} trailing bytes")
    return state
