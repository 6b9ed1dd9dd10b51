"""Triangle meshes: OFF/STL readers, simple generators, and a voxelizer.

The voxelizer marks every cell that a triangle touches (separating-axis
triangle/box test) and can then fill the interior by flooding the empty space
from the grid boundary.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .voxels import VoxelGrid


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray   # (V, 3) float
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def __len__(self) -> int:
        return len(self.triangles)


# ----------------------------------------------------------------- readers

def _tokens(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.extend(line.split())
    return out


def parse_off(text: str) -> Mesh:
    toks = _tokens(text)
    if not toks or not toks[0].startswith("OFF"):
        raise MeshError("not an OFF file")
    # some corpora glue the counts onto the keyword, e.g. "OFF490 518 0"
    head = toks[0][3:]
    toks = ([head] if head else []) + toks[1:]
    try:
        nv, nf = int(toks[0]), int(toks[1])
        pos = 3
        verts = np.array(toks[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        tris = []
        for _ in range(nf):
            k = int(toks[pos])
            idx = [int(i) for i in toks[pos + 1:pos + 1 + k]]
            pos += 1 + k
            for j in range(1, k - 1):
                tris.append((idx[0], idx[j], idx[j + 1]))
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed OFF file: {exc}") from exc
    return Mesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def _dedupe(tri_verts: np.ndarray) -> Mesh:
    flat = tri_verts.reshape(-1, 3)
    verts, inverse = np.unique(flat, axis=0, return_inverse=True)
    return Mesh(verts, inverse.reshape(-1, 3))


def parse_stl(data: bytes) -> Mesh:
    if len(data) >= 84:
        (n,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * n:
            rec = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
            arr = np.frombuffer(data, dtype=rec, count=n, offset=84)
            return _dedupe(arr["v"].astype(np.float64))
    text = data.decode("ascii", errors="replace")
    if not text.lstrip().startswith("solid"):
        raise MeshError("not an STL file")
    verts = []
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0] == "vertex":
            try:
                verts.append([float(p) for p in parts[1:4]])
            except ValueError as exc:
                raise MeshError(f"bad vertex line {line!r}") from exc
    if len(verts) % 3:
        raise MeshError("ASCII STL vertex count is not a multiple of 3")
    return _dedupe(np.array(verts, dtype=np.float64).reshape(-1, 3, 3))


def read_mesh(path: str | os.PathLike) -> Mesh:
    ext = os.path.splitext(str(path))[1].lower()
    with open(path, "rb") as fh:
        data = fh.read()
    if ext == ".off":
        return parse_off(data.decode("ascii", errors="replace"))
    if ext == ".stl":
        return parse_stl(data)
    raise MeshError(f"unsupported mesh extension {ext!r}")


# -------------------------------------------------------------- generators

def box_mesh(lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0)) -> Mesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[(hi if (i >> a) & 1 else lo)[a] for a in range(3)] for i in range(8)])
    quads = [(0, 2, 6, 4), (1, 5, 7, 3), (0, 4, 5, 1), (2, 3, 7, 6), (0, 1, 3, 2), (4, 6, 7, 5)]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return Mesh(corners, np.array(tris))


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> Mesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return Mesh(np.array(verts) * radius, np.array(faces))


# -------------------------------------------------------------- voxelizer

def _axis_test(axes: np.ndarray, v0, v1, v2, half: float) -> np.ndarray:
    """True where the triangle/box pair is separated along ``axes``."""
    p0 = np.einsum("ij,ij->i", v0, axes)
    p1 = np.einsum("ij,ij->i", v1, axes)
    p2 = np.einsum("ij,ij->i", v2, axes)
    r = half * np.abs(axes).sum(axis=1)
    lo = np.minimum(np.minimum(p0, p1), p2)
    hi = np.maximum(np.maximum(p0, p1), p2)
    return (lo > r) | (hi < -r)


def triangles_overlap_boxes(tri: np.ndarray, centers: np.ndarray, half: float = 0.5) -> np.ndarray:
    """Separating-axis overlap test for paired triangles (N, 3, 3) and
    axis-aligned boxes (N, 3) of half-size ``half``. Touching counts as
    overlap."""
    v0 = tri[:, 0] - centers
    v1 = tri[:, 1] - centers
    v2 = tri[:, 2] - centers
    sep = np.zeros(len(centers), dtype=bool)
    for a in range(3):
        lo = np.minimum(np.minimum(v0[:, a], v1[:, a]), v2[:, a])
        hi = np.maximum(np.maximum(v0[:, a], v1[:, a]), v2[:, a])
        sep |= (lo > half) | (hi < -half)
    edges = (v1 - v0, v2 - v1, v0 - v2)
    sep |= _axis_test(np.cross(edges[0], edges[1]), v0, v1, v2, half)
    eye = np.eye(3)
    for e in edges:
        for a in range(3):
            sep |= _axis_test(np.cross(e, eye[a]), v0, v1, v2, half)
    return ~sep


def fit_to_grid(vertices: np.ndarray, dim: int, reference: np.ndarray | None = None) -> np.ndarray:
    """Uniformly scale and center vertices into grid coordinates so the
    bounding box of ``reference`` (default: the vertices) spans [1, dim - 1]
    along its longest axis."""
    ref = vertices if reference is None else reference
    lo, hi = ref.min(axis=0), ref.max(axis=0)
    extent = hi - lo
    if np.any(extent <= 0):
        raise MeshError("degenerate bounding box (zero extent on an axis)")
    # slight inset keeps faces lying on the margin plane out of the margin cells
    scale = (dim - 2) / extent.max() * (1.0 - 1e-6)
    return (vertices - (lo + hi) / 2.0) * scale + dim / 2.0


def fill_interior(occ: np.ndarray) -> np.ndarray:
    """Occupy every empty cell not 6-connected to the grid boundary."""
    labels, _ = ndimage.label(~occ)
    border = np.concatenate([
        labels[0].ravel(), labels[-1].ravel(), labels[:, 0].ravel(),
        labels[:, -1].ravel(), labels[:, :, 0].ravel(), labels[:, :, -1].ravel()])
    exterior = np.isin(labels, np.unique(border[border > 0]))
    return ~exterior


def voxelize_mesh(mesh: Mesh, dim: int = 32, fill: bool = True, chunk: int = 1 << 18) -> VoxelGrid:
    if len(mesh) == 0:
        raise MeshError("empty mesh")
    used = mesh.vertices[np.unique(mesh.triangles)]
    verts = fit_to_grid(mesh.vertices, dim, reference=used)
    tri = verts[mesh.triangles]

    lo = np.clip(np.floor(tri.min(axis=1)).astype(np.int64), 0, dim - 1)
    hi = np.clip(np.floor(tri.max(axis=1)).astype(np.int64), 0, dim - 1)
    sizes = hi - lo + 1
    counts = sizes.prod(axis=1)

    occ = np.zeros((dim,) * 3, dtype=bool)
    starts = np.concatenate(([0], np.cumsum(counts)))
    t0 = 0
    while t0 < len(tri):
        t1 = int(np.searchsorted(starts, starts[t0] + chunk, side="right")) - 1
        t1 = max(t1, t0 + 1)
        idx = np.repeat(np.arange(t0, t1), counts[t0:t1])
        local = np.arange(idx.size) - np.repeat(starts[t0:t1] - starts[t0], counts[t0:t1])
        sy, sz = sizes[idx, 1], sizes[idx, 2]
        cell = np.stack([local // (sy * sz), (local // sz) % sy, local % sz], axis=1) + lo[idx]
        hit = triangles_overlap_boxes(tri[idx], cell + 0.5)
        c = cell[hit]
        occ[c[:, 0], c[:, 1], c[:, 2]] = True
        t0 = t1
    if fill:
        occ = fill_interior(occ)
    return VoxelGrid(occ)
