"""Procedural solid shapes for desk-scale corpora and demos.

Each class draws randomized proportions from an RNG so objects within a class
vary but share structure.
"""

from __future__ import annotations

import numpy as np

from .voxels import VoxelGrid

CLASSES = ("box", "ball", "cylinder", "table", "cup", "torus")


def _coords(dim: int):
    c = (np.arange(dim) + 0.5) / dim * 2.0 - 1.0  # cell centers in [-1, 1]
    return np.meshgrid(c, c, c, indexing="ij")


def solid(kind: str, dim: int = 32, rng: np.random.Generator | None = None) -> VoxelGrid:
    rng = rng or np.random.default_rng(0)
    x, y, z = _coords(dim)

    def j(lo, hi):
        return rng.uniform(lo, hi)

    if kind == "box":
        a, b, c = j(0.4, 0.85), j(0.4, 0.85), j(0.4, 0.85)
        occ = (np.abs(x) <= a) & (np.abs(y) <= b) & (np.abs(z) <= c)
    elif kind == "ball":
        r = j(0.5, 0.85)
        occ = x ** 2 + y ** 2 + z ** 2 <= r ** 2
    elif kind == "cylinder":
        r, h = j(0.35, 0.75), j(0.5, 0.85)
        occ = (x ** 2 + y ** 2 <= r ** 2) & (np.abs(z) <= h)
    elif kind == "table":
        w, d, top = j(0.6, 0.85), j(0.5, 0.85), j(0.5, 0.7)
        thick, leg = j(0.1, 0.2), j(0.1, 0.18)
        occ = (np.abs(x) <= w) & (np.abs(y) <= d) & (z <= top) & (z >= top - thick)
        for sx in (-1, 1):
            for sy in (-1, 1):
                occ |= ((np.abs(x - sx * (w - leg)) <= leg) & (np.abs(y - sy * (d - leg)) <= leg)
                        & (z >= -0.8) & (z <= top))
    elif kind == "cup":
        r, h, wall = j(0.45, 0.75), j(0.5, 0.8), j(0.15, 0.25)
        rr = x ** 2 + y ** 2
        outer = (rr <= r ** 2) & (np.abs(z) <= h)
        inner = (rr <= (r - wall) ** 2) & (z > -h + wall)
        occ = outer & ~inner
    elif kind == "torus":
        big, small = j(0.45, 0.6), j(0.18, 0.3)
        occ = (np.sqrt(x ** 2 + y ** 2) - big) ** 2 + z ** 2 <= small ** 2
    else:
        raise ValueError(f"unknown shape class {kind!r}; choose from {CLASSES}")
    return VoxelGrid(occ)


def make_objects(n_per_class: int, dim: int = 32, classes=CLASSES, seed: int = 0):
    """(grids, labels) with ``n_per_class`` objects of each class, labels
    indexing ``classes``."""
    rng = np.random.default_rng(seed)
    grids, labels = [], []
    for _ in range(n_per_class):
        for label, kind in enumerate(classes):
            grids.append(solid(kind, dim, rng))
            labels.append(label)
    return grids, labels
