"""Named parameter blocks with gradient buffers and binary checkpoints.

A ParameterStore is confined to a single training thread.  Checkpoints hold
values only (no optimizer state), always as 32-bit little-endian floats, so
save -> load -> save is byte-identical regardless of the in-memory dtype.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ShapeError, ValidationError

CKPT_MAGIC = b"CKPT1"
CKPT_VERSION = 1


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


def glorot_limit(shape: tuple[int, ...]) -> float:
    """Uniform init half-width sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_out, fan_in = shape[0], shape[1]
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class ParameterStore:
    """Ordered map of block name -> Param, with a private init rng."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._blocks: dict[str, Param] = {}

    def add(self, name: str, shape: tuple[int, ...], init: str = "glorot") -> Param:
        """Create a block.  init is "glorot", "zeros", or an ndarray to copy."""
        if name in self._blocks:
            raise ValidationError(f"duplicate parameter block '{name}'")
        if isinstance(init, np.ndarray):
            if tuple(init.shape) != tuple(shape):
                raise ShapeError(f"init for '{name}': got {init.shape}, want {shape}")
            value = init.astype(self.dtype)
        elif init == "zeros":
            value = np.zeros(shape, dtype=self.dtype)
        elif init == "glorot":
            a = glorot_limit(tuple(shape))
            value = self._rng.uniform(-a, a, size=shape).astype(self.dtype)
        else:
            raise ValidationError(f"unknown init '{init}'")
        param = Param(value)
        self._blocks[name] = param
        return param

    def __getitem__(self, name: str) -> Param:
        return self._blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._blocks if n.startswith(prefix)]

    def zero_grads(self, names=None) -> None:
        for name in names if names is not None else self._blocks:
            self._blocks[name].grad[...] = 0

    def n_parameters(self, names=None) -> int:
        picked = names if names is not None else self._blocks
        return sum(self._blocks[n].value.size for n in picked)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<I", CKPT_VERSION))
            fh.write(struct.pack("<I", len(self._blocks)))
            for name, param in self._blocks.items():
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", param.value.ndim))
                for dim in param.value.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(param.value.astype("<f4").tobytes())

    @staticmethod
    def load(path, dtype=np.float32) -> "ParameterStore":
        store = ParameterStore(seed=0, dtype=dtype)
        with open(path, "rb") as fh:
            if fh.read(5) != CKPT_MAGIC:
                raise ValidationError(f"'{path}' is not a checkpoint file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CKPT_VERSION:
                raise ValidationError(f"unsupported checkpoint version {version}")
            (n_blocks,) = struct.unpack("<I", fh.read(4))
            for _ in range(n_blocks):
                (name_len,) = struct.unpack("<I", fh.read(4))
                name = fh.read(name_len).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack("<" + "I" * rank, fh.read(4 * rank))
                count = int(np.prod(shape)) if rank else 1
                values = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
                store.add(name, tuple(shape), init=values.astype(dtype))
        return store
