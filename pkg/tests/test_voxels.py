import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxcomplete.voxels import (BinvoxError, VoxelGrid, binarize, l1_loss, missing_count,
                                parse_binvox, read_binvox, save_binvox, to_signed, write_binvox)

from conftest import grids, random_grid


def header(a, b, c, translate="0 0 0", scale="1"):
    return f"#binvox 1\ndim {a} {b} {c}\ntranslate {translate}\nscale {scale}\ndata\n".encode()


def payload(data: bytes) -> bytes:
    return data[data.index(b"data\n") + 5:]


def naive_rle(bits):
    # reference encoder: walk the bits one by one
    out, i = [], 0
    while i < len(bits):
        v, n = bits[i], 0
        while i < len(bits) and bits[i] == v and n < 255:
            n += 1
            i += 1
        out += [int(v), n]
    return bytes(out)


def naive_file_order(occ):
    d = occ.shape[0]
    return [occ[x, y, z] for x in range(d) for z in range(d) for y in range(d)]


# ------------------------------------------------------------------ parse

def test_parse_full_2cube():
    g = parse_binvox(header(2, 2, 2) + bytes([1, 8]))
    assert g.dim == 2 and g.occupied_count() == 8


def test_parse_empty_32():
    data = header(32, 32, 32) + bytes([0, 255]) * 128 + bytes([0, 128])
    g = parse_binvox(data)
    assert g.dim == 32 and g.occupied_count() == 0


def test_parse_rejects_non_cubic():
    with pytest.raises(BinvoxError):
        parse_binvox(header(32, 32, 16) + bytes([0, 255]) * 64)


@pytest.mark.parametrize("data", [
    b"#binvox 2\ndim 2 2 2\ndata\n\x01\x08",
    b"not binvox",
    header(2, 2, 2) + bytes([1, 7]),           # short payload
    header(2, 2, 2) + bytes([1, 8, 0, 1]),     # long payload
    header(2, 2, 2) + bytes([1, 0, 1, 8]),     # zero count
    header(2, 2, 2) + bytes([1]),              # dangling byte
    header(2, 2, 2, scale="-1") + bytes([1, 8]),
])
def test_parse_errors(data):
    with pytest.raises(BinvoxError):
        parse_binvox(data)


def test_parse_index_order():
    # single set bit at file index x*d^2 + z*d + y
    d = 3
    x, y, z = 2, 0, 1
    idx = x * d * d + z * d + y
    bits = np.zeros(d ** 3, dtype=np.uint8)
    bits[idx] = 1
    g = parse_binvox(header(d, d, d) + naive_rle(bits))
    assert g.occupancy[x, y, z] and g.occupied_count() == 1


def test_parse_header_metadata():
    g = parse_binvox(header(2, 2, 2, translate="0.5 -1.25 3", scale="2.5") + bytes([0, 8]))
    assert g.translate == (0.5, -1.25, 3.0) and g.scale == 2.5


# ------------------------------------------------------------------ write

def test_write_empty_32_is_129_pairs():
    p = payload(write_binvox(VoxelGrid.empty(32)))
    assert len(p) == 2 * 129
    assert p == bytes([0, 255]) * 128 + bytes([0, 128])


def test_write_full_2cube_single_pair():
    assert payload(write_binvox(VoxelGrid.full(2))) == bytes([1, 8])


@settings(max_examples=60, deadline=None)
@given(grids())
def test_write_matches_naive_encoder(g):
    assert payload(write_binvox(g)) == naive_rle(naive_file_order(g.occupancy))


@settings(max_examples=60, deadline=None)
@given(grids(), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
def test_roundtrip_and_byte_stability(g, t, s):
    g = VoxelGrid(g.occupancy, (t, -t, 0.0), s)
    data = write_binvox(g)
    back = parse_binvox(data)
    assert back == g
    assert write_binvox(back) == data


def test_runs_are_maximal():
    g = random_grid(16, 0.3, seed=5)
    p = payload(write_binvox(g))
    vals, counts = p[0::2], p[1::2]
    for i in range(1, len(vals)):
        # a value may repeat only after a full run of 255
        if vals[i] == vals[i - 1]:
            assert counts[i - 1] == 255
    assert all(1 <= c <= 255 for c in counts)


def test_file_roundtrip(tmp_path):
    g = random_grid(8, 0.4, seed=2)
    save_binvox(g, tmp_path / "a.binvox")
    assert read_binvox(tmp_path / "a.binvox") == g


# ----------------------------------------------------------------- signed

def test_to_signed_values():
    assert np.all(to_signed(VoxelGrid.empty(4)) == -1)
    assert np.all(to_signed(VoxelGrid.full(4)) == 1)
    g = random_grid(5, seed=3)
    s = to_signed(g)
    assert np.array_equal(s.reshape(-1) == 1, g.flat)


def test_binarize_threshold():
    v = np.full((2, 2, 2), -0.3)
    v[0, 0, 0] = 0.3
    v[1, 1, 1] = 0.0  # strict inequality
    g = binarize(v)
    assert g.occupancy[0, 0, 0] and not g.occupancy[1, 1, 1] and g.occupied_count() == 1
    with pytest.raises(ValueError):
        binarize(v, 1.0)


@settings(max_examples=40, deadline=None)
@given(grids(), st.floats(-0.99, 0.99))
def test_binarize_inverts_signed(g, thr):
    assert binarize(to_signed(g), thr) == g


# ----------------------------------------------------------------- metrics

def test_l1_examples():
    e, f = to_signed(VoxelGrid.empty(4)), to_signed(VoxelGrid.full(4))
    assert l1_loss(e, e) == 0.0
    assert l1_loss(f, e) == 2.0
    with pytest.raises(ValueError):
        l1_loss(e, to_signed(VoxelGrid.empty(3)))


@settings(max_examples=40, deadline=None)
@given(grids(max_dim=6), st.integers(0, 2**31))
def test_l1_symmetric_and_definite(a, seed):
    b = random_grid(a.dim, 0.5, seed)
    sa, sb = to_signed(a), to_signed(b)
    assert l1_loss(sa, sb) == l1_loss(sb, sa) >= 0
    assert (l1_loss(sa, sb) == 0) == (a == b)


@settings(max_examples=40, deadline=None)
@given(grids(max_dim=6), st.integers(0, 2**31))
def test_l1_equals_twice_missing_fraction(complete, seed):
    keep = np.random.default_rng(seed).random(complete.occupancy.shape) < 0.7
    fractured = complete.with_occupancy(complete.occupancy & keep)
    n = missing_count(fractured, complete)
    assert l1_loss(to_signed(fractured), to_signed(complete)) == pytest.approx(2 * n / complete.dim ** 3)


def test_missing_count_examples():
    full, empty = VoxelGrid.full(2), VoxelGrid.empty(2)
    assert missing_count(full, full) == 0
    assert missing_count(empty, full) == 8
    extra = np.zeros((2, 2, 2), bool)
    extra[0, 0, 0] = True
    assert missing_count(VoxelGrid(extra), empty) == 0


def test_json_roundtrip():
    g = VoxelGrid(random_grid(4, seed=9).occupancy, (1.0, 2.0, 3.0), 0.5)
    assert VoxelGrid.from_json(g.to_json()) == g


def test_grid_validation():
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros((2, 2, 3), bool))
    with pytest.raises(ValueError):
        VoxelGrid(np.zeros((2, 2, 2), bool), scale=0.0)
