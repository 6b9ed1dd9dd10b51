import numpy as np
import pytest
from hypothesis import strategies as st

from voxcomplete.voxels import VoxelGrid


@st.composite
def grids(draw, max_dim=8):
    dim = draw(st.integers(1, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    density = draw(st.sampled_from([0.0, 0.05, 0.5, 0.95, 1.0]))
    occ = np.random.default_rng(seed).random((dim,) * 3) < density
    return VoxelGrid(occ)


def random_grid(dim, density=0.5, seed=0):
    return VoxelGrid(np.random.default_rng(seed).random((dim,) * 3) < density)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
