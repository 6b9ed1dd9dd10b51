import struct

import numpy as np
import pytest
from scipy.optimize import linprog

from voxcomplete.meshes import (Mesh, MeshError, box_mesh, fit_to_grid, icosphere, parse_off,
                                parse_stl, read_mesh, triangles_overlap_boxes, voxelize_mesh)

CUBE_OFF = """OFF
8 6 0
-1 -1 -1
1 -1 -1
1 1 -1
-1 1 -1
-1 -1 1
1 -1 1
1 1 1
-1 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 4 7 3
"""


def box_distance(points, center, radius_box=0.5):
    # distance from a point to an axis-aligned unit cell
    d = np.maximum(np.abs(points - center) - radius_box, 0.0)
    return np.linalg.norm(d, axis=-1)


def lp_overlap(tri, center, half=0.5):
    # feasibility of a convex combination of the vertices inside the box
    a_eq = np.ones((1, 3))
    a_ub = np.vstack([tri.T, -tri.T])
    b_ub = np.concatenate([center + half, -(center - half)])
    res = linprog(np.zeros(3), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=[(0, None)] * 3,
                  method="highs")
    return res.status == 0


# ----------------------------------------------------------------- readers

def test_parse_off_quads_fan_triangulated():
    m = parse_off(CUBE_OFF)
    assert m.vertices.shape == (8, 3) and m.triangles.shape == (12, 3)


def test_parse_off_glued_header():
    text = CUBE_OFF.replace("OFF\n8 6 0", "OFF8 6 0")
    assert parse_off(text).triangles.shape == (12, 3)


@pytest.mark.parametrize("text", ["PLY\n", "OFF\n8 6 0\n1 2 3\n", "OFF\n1 1 0\n0 0 0\n3 0 1 2\n"])
def test_parse_off_errors(text):
    with pytest.raises(MeshError):
        parse_off(text)


def stl_binary(tris):
    out = b"\0" * 80 + struct.pack("<I", len(tris))
    for t in tris:
        out += struct.pack("<3f", 0, 0, 0) + struct.pack("<9f", *np.ravel(t)) + b"\0\0"
    return out


def stl_ascii(tris):
    lines = ["solid x"]
    for t in tris:
        lines += ["facet normal 0 0 0", "outer loop"]
        lines += [f"vertex {a} {b} {c}" for a, b, c in t]
        lines += ["endloop", "endfacet"]
    return ("\n".join(lines + ["endsolid x"]) + "\n").encode()


def test_stl_binary_and_ascii_agree():
    box = box_mesh()
    tris = box.vertices[box.triangles]
    a, b = parse_stl(stl_binary(tris)), parse_stl(stl_ascii(tris))
    assert len(a.vertices) == len(b.vertices) == 8
    assert np.allclose(a.vertices[a.triangles], tris)
    assert np.allclose(b.vertices[b.triangles], tris)


def test_read_mesh_by_extension(tmp_path):
    (tmp_path / "c.off").write_text(CUBE_OFF)
    assert len(read_mesh(tmp_path / "c.off")) == 12
    (tmp_path / "c.obj").write_text("")
    with pytest.raises(MeshError):
        read_mesh(tmp_path / "c.obj")


def test_mesh_index_validation():
    with pytest.raises(MeshError):
        Mesh(np.zeros((3, 3)), [[0, 1, 3]])


# -------------------------------------------------------- overlap test

def test_overlap_matches_lp_oracle():
    rng = np.random.default_rng(0)
    n = 400
    tri = rng.uniform(-2, 2, size=(n, 3, 3))
    centers = rng.uniform(-1, 1, size=(n, 3))
    got = triangles_overlap_boxes(tri, centers)
    want = np.array([lp_overlap(tri[i], centers[i]) for i in range(n)])
    assert got.any() and (~got).any()
    assert np.array_equal(got, want)


# ------------------------------------------------------------ voxelizer

def test_box_spanning_target_fills_interior():
    g = voxelize_mesh(box_mesh(), 32, fill=True)
    assert g.occupied_count() == 30 ** 3
    inner = g.occupancy[1:-1, 1:-1, 1:-1]
    assert inner.all()
    assert g.occupied_count() == inner.sum()  # margin empty


def test_box_shell_without_fill():
    g = voxelize_mesh(box_mesh(), 16, fill=False)
    assert g.occupied_count() == 14 ** 3 - 12 ** 3


def test_single_triangle_is_surface_only():
    tri = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0.5]], [[0, 1, 2]])
    g = voxelize_mesh(tri, 32, fill=False)
    assert 0 < g.occupied_count() < 32 ** 2 * 3


@pytest.mark.parametrize("mesh", [box_mesh(), icosphere(2), box_mesh((0, 0, 0), (1, 3, 2))])
def test_fill_is_monotone(mesh):
    a = voxelize_mesh(mesh, 20, fill=False).occupancy
    b = voxelize_mesh(mesh, 20, fill=True).occupancy
    assert np.all(b[a])


def test_empty_and_degenerate_meshes():
    with pytest.raises(MeshError):
        voxelize_mesh(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), 8)
    flat = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])  # zero z extent
    with pytest.raises(MeshError):
        voxelize_mesh(flat, 8)


def _sphere_setup(dim, subdivisions=4):
    mesh = icosphere(subdivisions)
    pts = fit_to_grid(mesh.vertices, dim)
    center = np.full(3, dim / 2.0)
    r_out = np.linalg.norm(pts - center, axis=1).max()
    # inscribed radius: smallest distance from the center to a face plane
    tri = pts[mesh.triangles]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    r_in = np.abs(np.einsum("ij,ij->i", tri[:, 0] - center, n)).min()
    cells = np.stack(np.meshgrid(*[np.arange(dim) + 0.5] * 3, indexing="ij"), -1)
    return mesh, center, r_out, r_in, cells


@pytest.mark.parametrize("dim", [16, 32])
def test_sphere_between_exact_cell_oracles(dim):
    mesh, center, r_out, r_in, cells = _sphere_setup(dim)
    g = voxelize_mesh(mesh, dim, fill=True).occupancy
    touches_ball = box_distance(cells, center) <= r_out
    # farthest corner of each cell from the center
    far = np.linalg.norm(np.abs(cells - center) + 0.5, axis=-1)
    inside_ball = far <= r_in
    assert np.all(touches_ball[g])
    assert np.all(g[inside_ball])


def test_sphere_count_near_conservative_volume():
    dim = 32
    mesh, center, r_out, _, _ = _sphere_setup(dim)
    count = voxelize_mesh(mesh, dim, fill=True).occupied_count()
    r = r_out
    ball = 4 / 3 * np.pi * r ** 3
    # cells whose box meets a ball of radius r: Steiner volume of cube + ball
    steiner = 1 + 6 * r + 3 * np.pi * r ** 2 + ball
    assert ball < count <= 1.02 * steiner


@pytest.mark.xfail(strict=True, reason="conservative rasterization marks every cell touching the "
                   "surface, which adds a shell of roughly 3*pi*r^2 cells; at dim 32 the count is ~14% "
                   "above the ball volume")
def test_sphere_within_ten_percent_of_ball_volume():
    dim = 32
    mesh, center, r_out, _, _ = _sphere_setup(dim)
    count = voxelize_mesh(mesh, dim, fill=True).occupied_count()
    ball = 4 / 3 * np.pi * r_out ** 3
    assert abs(count / ball - 1) <= 0.10
