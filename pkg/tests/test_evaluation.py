import numpy as np
import pytest

from voxcomplete.evaluation import (AblationRow, ClassRow, EvalReport, SweepPoint, count_inversions,
                                    evaluate, fracture_sweep, identity_completer, point_near,
                                    reconstruct, reconstruct_batch, sweep_csv)
from voxcomplete.fracture import FractureParams, fracture_objects
from voxcomplete.network import ArchConfig, init_params
from voxcomplete.shapes import make_objects
from voxcomplete.voxels import VoxelGrid, binarize, to_signed

TINY = ArchConfig(dim=8, num_classes=6, enc_channels=(4, 8), dec_channels=(4, 1), se_ratio=2,
                  label_embed_dim=4, label_channels=2, critic_hidden=8)


@pytest.fixture(scope="module")
def corpus():
    grids, labels = make_objects(2, 8, seed=0)
    pairs = fracture_objects(grids, labels, FractureParams(m_range=(2, 3), seed=1))
    return grids, labels, pairs


def perfect_for(pairs):
    answers = {p.fractured.occupancy.tobytes(): p.complete for p in pairs}
    return lambda grids, labels: [answers[g.occupancy.tobytes()] for g in grids]


# ---------------------------------------------------------- evaluate

def test_identity_output_equals_input_exactly(corpus):
    _, _, pairs = corpus
    rep = evaluate(identity_completer, pairs)
    assert rep.output_loss == rep.input_loss
    for row in rep.classes:
        assert row.output_loss == row.input_loss >= 0


def test_perfect_model_zero_output(corpus):
    _, _, pairs = corpus
    rep = evaluate(perfect_for(pairs), pairs)
    assert rep.output_loss == 0 and all(r.output_loss == 0 for r in rep.classes)
    assert rep.input_loss > 0


def test_classes_match_label_set_and_names(corpus):
    _, _, pairs = corpus
    subset = [p for p in pairs if p.label in (1, 4)]
    rep = evaluate(identity_completer, subset, names=["a", "b", "c", "d", "e", "f"])
    assert [r.label for r in rep.classes] == [1, 4]
    assert [r.name for r in rep.classes] == ["b", "e"]
    assert sum(r.count for r in rep.classes) == len(subset)


def test_evaluate_model_params(corpus):
    _, _, pairs = corpus
    rep = evaluate(init_params(TINY, 0), pairs)
    assert np.isfinite(rep.output_loss) and rep.output_loss >= 0


def test_report_text_and_json():
    rep = EvalReport([ClassRow(0, "Archeology", 3, 0.0209, 0.0077)], 0.0209, 0.0077,
                     [AblationRow(False, False, 0.0611), AblationRow(True, True, 0.0057)])
    text = rep.to_text()
    assert "Archeology |     0.0209 |      0.0077" in text
    assert "Overall" in text and "Skip-connections" in text
    assert "No               | No                 |   0.0611" in text
    assert '"output_loss": 0.0077' in rep.to_json()


# -------------------------------------------------------- reconstruct

def test_reconstruct_single_pass_matches_manual():
    params = init_params(TINY, 1)
    grid = make_objects(1, 8, seed=2)[0][3]
    from voxcomplete.network import generator_forward

    x = to_signed(grid, np.float32)[None, None]
    manual = binarize(generator_forward(params, x, [3]).data[0, 0])
    assert np.array_equal(reconstruct(params, grid, 3).occupancy, manual.occupancy)
    twice = reconstruct(params, manual, 3)
    assert np.array_equal(reconstruct(params, grid, 3, iterations=2).occupancy, twice.occupancy)


def test_reconstruct_keeps_header_metadata():
    grid = VoxelGrid(np.zeros((8, 8, 8), bool), (1.0, 2.0, 3.0), 0.5)
    grid.occupancy[2:5, 2:5, 2:5] = True
    out = reconstruct(init_params(TINY, 0), grid, 0)
    assert out.translate == grid.translate and out.scale == grid.scale


def test_reconstruct_empty_grid_warns():
    with pytest.warns(RuntimeWarning, match="empty"):
        out = reconstruct(init_params(TINY, 0), VoxelGrid(np.zeros((8, 8, 8), bool)), 0)
    assert out.occupancy.shape == (8, 8, 8)


@pytest.mark.parametrize("label", [6, -1])
def test_reconstruct_bad_label(label):
    grid = make_objects(1, 8)[0][0]
    with pytest.raises(ValueError):
        reconstruct(init_params(TINY, 0), grid, label)


def test_reconstruct_bad_iterations_and_dim():
    params = init_params(TINY, 0)
    with pytest.raises(ValueError):
        reconstruct(params, make_objects(1, 8)[0][0], 0, iterations=0)
    with pytest.raises(ValueError):
        reconstruct(params, make_objects(1, 16)[0][0], 0)


def test_reconstruct_batch_chunking_consistent():
    params = init_params(TINY, 0)
    grids, labels = make_objects(1, 8, seed=3)
    a = reconstruct_batch(params, grids, labels, chunk=2)
    b = reconstruct_batch(params, grids, labels, chunk=32)
    assert all(np.array_equal(x.occupancy, y.occupancy) for x, y in zip(a, b))


# -------------------------------------------------------------- sweep

def test_sweep_identity_recovers_nothing(corpus):
    grids, labels, _ = corpus
    pts = fracture_sweep(identity_completer, grids, labels, sizes=[0, 1, 3, 5])
    assert pts[0].undefined_recovery and pts[0].recovery == 1.0 and pts[0].missing_fraction == 0
    for p in pts[1:]:
        assert p.recovery == 0 and p.misplaced_rate == 0 and not p.undefined_recovery
    fracs = [p.missing_fraction for p in pts]
    assert fracs == sorted(fracs)


def test_sweep_perfect_recovers_everything(corpus):
    grids, labels, _ = corpus

    def fill_back(gs, ls):  # pairs arrive in object order with repeats=1
        assert all(np.all(src.occupancy | ~g.occupancy) for src, g in zip(grids, gs))
        return list(grids)

    pts = fracture_sweep(fill_back, grids, labels, sizes=[2, 4])
    assert all(p.recovery == 1.0 and p.misplaced_rate == 0 for p in pts)


def test_sweep_deterministic(corpus):
    grids, labels, _ = corpus
    a = fracture_sweep(identity_completer, grids, labels, sizes=[2, 3], seed=4)
    b = fracture_sweep(identity_completer, grids, labels, sizes=[2, 3], seed=4)
    assert a == b


def test_sweep_csv_layout():
    text = sweep_csv([SweepPoint(1, 0.05, 0.9, 0.001), SweepPoint(2, 0.1, 0.8, 0.002)])
    lines = text.splitlines()
    assert lines[0] == "size,missing_fraction,recovery,misplaced_rate"
    assert lines[1] == "1,0.050000,0.900000,0.001000"
    assert len(lines) == 3


def test_inversions_and_point_near():
    pts = [SweepPoint(s, f, r, 0) for s, f, r in
           [(1, 0.1, 0.9), (2, 0.2, 0.95), (3, 0.3, 0.7), (4, 0.45, 0.6), (5, 0.5, 0.65)]]
    assert count_inversions(pts) == 2
    assert count_inversions(list(reversed(pts))) == 2
    assert point_near(pts, 0.4).size == 4
    assert count_inversions(pts[2:4]) == 0
