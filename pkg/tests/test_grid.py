import numpy as np
import pytest

from urapprox.geometry import cantor_four_corners, flat_plane, sphere
from urapprox.grid import GridError, build_dyadic_grid

import oracles


@pytest.fixture(scope="module")
def circle_grid():
    return build_dyadic_grid(sphere((0.5, 0.5), 0.25, 2.0 ** -11), 2, 7)


def test_children_partition_the_parent(circle_grid):
    g = circle_grid
    for c in range(g.n_cubes):
        if g.children[c]:
            assert g.mass[list(g.children[c])].sum() == pytest.approx(g.mass[c], rel=1e-12)
    for k in range(g.k_min, g.k_max + 1):
        assert g.mass[g.level == k].sum() == pytest.approx(g.E.total_mass, rel=1e-12)


def test_parent_links_agree_with_index_containment(circle_grid):
    g = circle_grid
    for c in range(g.n_cubes):
        p = g.parent[c]
        if p >= 0:
            assert oracles.contains(g, p, c)
            assert g.level[p] == g.level[c] - 1


def test_descendants_match_brute_force(segment_grid):
    g = segment_grid
    M = oracles.containment_matrix(g)
    for c in range(g.n_cubes):
        assert g.descendants(c) == sorted(np.nonzero(M[c])[0].tolist())
        assert np.array_equal(g.descendant_mask(c), M[c])


def test_segment_grid_has_dyadic_counts(segment_grid):
    assert segment_grid.n_cubes == 127
    for k in range(7):
        assert len(segment_grid.cubes_at(k)) == 2 ** k


def test_cantor_cube_counts():
    g = build_dyadic_grid(cantor_four_corners(3, 2.0 ** -12), 0, 6)
    assert [len(g.cubes_at(k)) for k in range(7)] == [4 ** ((k + 1) // 2) for k in range(7)]


def test_centres_lie_in_their_cubes(circle_grid):
    g = circle_grid
    lo = g.index * g.length[:, None]
    assert np.all(g.center >= lo) and np.all(g.center < lo + g.length[:, None])
    assert g.a0() > 0


def test_bad_generation_range():
    with pytest.raises(GridError):
        build_dyadic_grid(flat_plane(0, 1, 2, 2.0 ** -6), 3, 2)


def test_dump_has_one_row_per_cube(circle_grid):
    rows = circle_grid.dump().strip().split("\n")
    assert len(rows) == circle_grid.n_cubes + 1
