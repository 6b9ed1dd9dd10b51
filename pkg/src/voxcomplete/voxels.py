"""Voxel grids, signed-value conversion, grid metrics and the binvox format."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

BINVOX_MAGIC = b"#binvox 1"


class BinvoxError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Cubic binary occupancy grid indexed ``occupancy[x, y, z]``.

    ``translate`` and ``scale`` are carried as binvox metadata only.
    """

    occupancy: np.ndarray
    translate: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or len(set(occ.shape)) != 1 or occ.shape[0] < 1:
            raise ValueError(f"occupancy must be a non-empty cube, got shape {occ.shape}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "translate", tuple(float(t) for t in self.translate))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def empty(cls, dim: int = 32) -> "VoxelGrid":
        return cls(np.zeros((dim,) * 3, dtype=bool))

    @classmethod
    def full(cls, dim: int = 32) -> "VoxelGrid":
        return cls(np.ones((dim,) * 3, dtype=bool))

    @property
    def dim(self) -> int:
        return self.occupancy.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """Bits in row-major (x, y, z) order, length dim**3."""
        return self.occupancy.reshape(-1)

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def with_occupancy(self, occupancy: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(occupancy, self.translate, self.scale)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (self.translate == other.translate and self.scale == other.scale
                and np.array_equal(self.occupancy, other.occupancy))

    __hash__ = None

    def to_json(self) -> str:
        """Nested 0/1 lists indexed [x][y][z], for debugging."""
        return json.dumps({
            "dim": self.dim,
            "translate": list(self.translate),
            "scale": self.scale,
            "occupancy": self.occupancy.astype(int).tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "VoxelGrid":
        obj = json.loads(text)
        return cls(np.array(obj["occupancy"], dtype=bool), tuple(obj["translate"]), obj["scale"])


# ------------------------------------------------------------------ signed

def to_signed(grid: VoxelGrid, dtype=np.float32) -> np.ndarray:
    """Occupied -> +1, empty -> -1, as a (dim, dim, dim) float array."""
    return np.where(grid.occupancy, 1.0, -1.0).astype(dtype)


def binarize(values: np.ndarray, threshold: float = 0.0) -> VoxelGrid:
    """Voxel occupied iff its value is strictly above ``threshold``."""
    if not -1.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (-1, 1), got {threshold}")
    return VoxelGrid(np.asarray(values) > threshold)


def _check_dims(a_shape, b_shape) -> None:
    if a_shape != b_shape:
        raise ValueError(f"dimension mismatch: {a_shape} vs {b_shape}")


def l1_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference over all cells of two signed grids."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a.shape, b.shape)
    return float(np.mean(np.abs(a - b)))


def missing_count(fractured: VoxelGrid, complete: VoxelGrid) -> int:
    """Cells occupied in ``complete`` but empty in ``fractured``."""
    _check_dims(fractured.occupancy.shape, complete.occupancy.shape)
    return int(np.count_nonzero(complete.occupancy & ~fractured.occupancy))


# ------------------------------------------------------------------ binvox

def _binvox_order(occ: np.ndarray) -> np.ndarray:
    # file index x*dim^2 + z*dim + y
    return occ.transpose(0, 2, 1).reshape(-1)


def parse_binvox(data: bytes) -> VoxelGrid:
    """Decode a binvox byte string into a cubic grid."""
    if not data.startswith(BINVOX_MAGIC):
        raise BinvoxError("missing '#binvox 1' header")
    pos = 0
    dims = translate = None
    scale = 1.0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise BinvoxError("header ended before 'data' line")
        line = data[pos:end].strip()
        pos = end + 1
        if line.startswith(b"#binvox"):
            continue
        if line == b"data":
            break
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        try:
            if key == b"dim":
                dims = [int(v) for v in parts[1:]]
            elif key == b"translate":
                translate = tuple(float(v) for v in parts[1:])
            elif key == b"scale":
                scale = float(parts[1])
            else:
                raise BinvoxError(f"unknown header line {line!r}")
        except (ValueError, IndexError) as exc:
            raise BinvoxError(f"malformed header line {line!r}") from exc
    if dims is None or len(dims) != 3:
        raise BinvoxError("header lacks a 'dim a b c' line")
    if len(set(dims)) != 1 or dims[0] < 1:
        raise BinvoxError(f"only cubic grids are supported, got dim {dims}")
    if translate is None:
        translate = (0.0, 0.0, 0.0)
    if len(translate) != 3:
        raise BinvoxError("translate needs three values")
    if not scale > 0:
        raise BinvoxError(f"scale must be positive, got {scale}")

    dim = dims[0]
    payload = np.frombuffer(data, dtype=np.uint8, offset=pos)
    if payload.size % 2:
        raise BinvoxError("run-length payload has an odd number of bytes")
    values, counts = payload[0::2], payload[1::2]
    if np.any(counts == 0):
        raise BinvoxError("run-length count of 0")
    total = int(counts.sum(dtype=np.int64))
    if total != dim ** 3:
        raise BinvoxError(f"run lengths decode to {total} voxels, expected {dim ** 3}")
    bits = np.repeat(values != 0, counts)
    occ = bits.reshape(dim, dim, dim).transpose(0, 2, 1)
    return VoxelGrid(np.ascontiguousarray(occ), translate, scale)


def _rle(bits: np.ndarray) -> np.ndarray:
    """Maximal runs split at 255, as interleaved (value, count) bytes."""
    change = np.flatnonzero(bits[1:] != bits[:-1]) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [bits.size])))
    values = bits[starts].astype(np.uint8)
    reps = (lengths + 254) // 255
    out_values = np.repeat(values, reps)
    out_counts = np.full(out_values.size, 255, dtype=np.int64)
    last = np.cumsum(reps) - 1
    out_counts[last] = lengths - 255 * (reps - 1)
    pairs = np.empty(out_values.size * 2, dtype=np.uint8)
    pairs[0::2] = out_values
    pairs[1::2] = out_counts
    return pairs


def write_binvox(grid: VoxelGrid) -> bytes:
    d = grid.dim
    tx, ty, tz = grid.translate
    header = (f"#binvox 1\ndim {d} {d} {d}\ntranslate {tx!r} {ty!r} {tz!r}\n"
              f"scale {grid.scale!r}\ndata\n").encode("ascii")
    return header + _rle(_binvox_order(grid.occupancy)).tobytes()


def read_binvox(path: str | os.PathLike) -> VoxelGrid:
    with open(path, "rb") as fh:
        return parse_binvox(fh.read())


def save_binvox(grid: VoxelGrid, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(write_binvox(grid))

