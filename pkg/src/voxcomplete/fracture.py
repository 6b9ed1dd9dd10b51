"""Synthetic fractures: carve spherical or cubic holes out of complete grids."""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .manifest import load_grids, read_manifest
from .voxels import VoxelGrid, missing_count

SPHERE = "sphere"
CUBE = "cube"


@dataclass(frozen=True)
class FractureParams:
    n_range: tuple[int, int] = (1, 4)
    m_range: tuple[int, int] = (3, 6)
    p_sphere: float = 0.75
    seed: int = 0

    def __post_init__(self):
        (nl, nh), (ml, mh) = self.n_range, self.m_range
        if not 1 <= nl <= nh:
            raise ValueError(f"invalid n_range {self.n_range}")
        if not 1 <= ml <= mh:
            raise ValueError(f"invalid m_range {self.m_range}")
        if not 0.0 <= self.p_sphere <= 1.0:
            raise ValueError(f"p_sphere must be in [0, 1], got {self.p_sphere}")


@dataclass(frozen=True)
class Fracture:
    center: tuple[int, int, int]
    size: int
    shape: str


@dataclass(eq=False)
class SamplePair:
    fractured: VoxelGrid
    complete: VoxelGrid
    label: int
    removed: int
    fractures: list[Fracture] = field(default_factory=list)


@functools.lru_cache(maxsize=None)
def shape_offsets(m: int, shape: str) -> np.ndarray:
    """Integer offsets (K, 3) covered by a fracture of size ``m``.

    A cube has Chebyshev radius m // 2; a sphere has Euclidean radius m / 2.
    """
    if m < 1:
        raise ValueError(f"fracture size must be positive, got {m}")
    r = m // 2
    ax = np.arange(-r, r + 1)
    off = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    if shape == SPHERE:
        off = off[(off ** 2).sum(axis=1) * 4 <= m * m]
    elif shape != CUBE:
        raise ValueError(f"unknown fracture shape {shape!r}")
    off.setflags(write=False)
    return off


def _carve_inplace(occ: np.ndarray, center, m: int, shape: str) -> None:
    pts = shape_offsets(m, shape) + np.asarray(center)
    dim = occ.shape[0]
    pts = pts[np.all((pts >= 0) & (pts < dim), axis=1)]
    occ[pts[:, 0], pts[:, 1], pts[:, 2]] = False


def carve(grid: VoxelGrid, center: Sequence[int], m: int, shape: str) -> VoxelGrid:
    """Clear the voxels of one fracture centered at ``center``, clipped to
    the grid."""
    center = tuple(int(c) for c in center)
    if len(center) != 3 or any(not 0 <= c < grid.dim for c in center):
        raise ValueError(f"center {center} outside grid of side {grid.dim}")
    occ = grid.occupancy.copy()
    _carve_inplace(occ, center, m, shape)
    return grid.with_occupancy(occ)


def simulate_fracture(grid: VoxelGrid, params: FractureParams, rng: np.random.Generator,
                      label: int = 0, shape: str | None = None) -> SamplePair:
    """Fracture a complete grid.

    Draws n seeds (without replacement) from the voxels occupied at the
    start, then for each seed a size m and a shape, and clears that region.
    ``shape`` forces the fracture shape instead of drawing it.
    """
    occupied = np.argwhere(grid.occupancy)
    if len(occupied) == 0:
        raise ValueError("cannot fracture an empty grid")
    n = int(rng.integers(params.n_range[0], params.n_range[1] + 1))
    if n > len(occupied):
        warnings.warn(f"only {len(occupied)} occupied voxels for {n} fracture seeds; using all",
                      RuntimeWarning, stacklevel=2)
        n = len(occupied)
    seeds = occupied[rng.choice(len(occupied), size=n, replace=False)]
    occ = grid.occupancy.copy()
    fractures = []
    for seed in seeds:
        m = int(rng.integers(params.m_range[0], params.m_range[1] + 1))
        kind = shape or (SPHERE if rng.random() < params.p_sphere else CUBE)
        _carve_inplace(occ, seed, m, kind)
        fractures.append(Fracture(tuple(int(c) for c in seed), m, kind))
    fractured = grid.with_occupancy(occ)
    return SamplePair(fractured, grid, label, missing_count(fractured, grid), fractures)


def object_rng(seed: int, index: int, epoch: int | None = None) -> np.random.Generator:
    """Independent stream per (seed, object index[, epoch])."""
    key = [seed, index] if epoch is None else [seed, index, epoch]
    return np.random.default_rng(key)


def fracture_objects(grids: Sequence[VoxelGrid], labels: Sequence[int], params: FractureParams,
                     pairs_per_object: int = 1, epoch: int | None = None) -> list[SamplePair]:
    """``pairs_per_object`` independent fractures of each grid, in input
    order."""
    if pairs_per_object < 1:
        raise ValueError("pairs_per_object must be positive")
    pairs = []
    for i, (grid, label) in enumerate(zip(grids, labels)):
        rng = object_rng(params.seed, i, epoch)
        for _ in range(pairs_per_object):
            pairs.append(simulate_fracture(grid, params, rng, label=int(label)))
    return pairs


def build_corpus(manifest, params: FractureParams, pairs_per_object: int = 1,
                 num_classes: int | None = None, split: str | None = None) -> list[SamplePair]:
    """Fracture every object listed in a dataset manifest.

    ``manifest`` is a path to a JSON-lines file or already-loaded records.
    """
    records = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    if split is not None:
        records = [r for r in records if r.get("split", "train") == split]
    grids, labels = load_grids(records, num_classes)
    return fracture_objects(grids, labels, params, pairs_per_object)
