import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absd.geometry import (CELL_STAGGER, E_STAGGER, H_STAGGER, NODE_STAGGER, SIDES,
                           StaggeredGrid, boundary_mask, build_grid, cross_normal, restagger,
                           tangential_project)

vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)
unit = st.sampled_from([s.normal for s in SIDES])


def test_boundary_face_count():
    g = build_grid((1, 1, 1), (8, 8, 8))
    assert len(g.boundary_faces) == 384


def test_spacing_anisotropic_extent():
    g = build_grid((1, 2, 1), (4, 8, 4))
    assert g.h == (0.25, 0.25, 0.25)


def test_too_few_cells_rejected():
    with pytest.raises(ValueError):
        build_grid((1, 1, 1), (2, 8, 8))


def test_x0_must_be_inside():
    with pytest.raises(ValueError):
        build_grid((1, 1, 1), (8, 8, 8), x0=(1.0, 0.5, 0.5))
    assert build_grid((1, 1, 1), 8).x0 == (0.5, 0.5, 0.5)


def test_shapes_and_weights(grid8):
    g = grid8
    assert g.shape(E_STAGGER[0]) == (8, 9, 9)
    assert g.shape(H_STAGGER[0]) == (9, 8, 8)
    for s in (*E_STAGGER, *H_STAGGER, NODE_STAGGER, CELL_STAGGER):
        assert np.isclose(g.weights(s).sum(), g.volume)
    assert np.isclose(sum(f.area for f in g.boundary_faces), g.surface_area)


def test_boundary_mask_counts(grid8):
    m = boundary_mask(NODE_STAGGER, grid8)
    assert m.sum() == 9 ** 3 - 7 ** 3


def test_restagger_preserves_linear_fields(grid8):
    g = grid8
    f = lambda x: 1.0 + 2 * x[..., 0] - x[..., 1] + 0.5 * x[..., 2]
    out = restagger(f(g.coords(NODE_STAGGER)), NODE_STAGGER, CELL_STAGGER)
    assert np.allclose(out, f(g.coords(CELL_STAGGER)))


def test_cross_normal_examples():
    assert np.allclose(cross_normal([0, 1, 0], [0, 0, 1]), [1, 0, 0])
    assert np.allclose(cross_normal([0, 0, 1], [0, 0, 1]), 0)
    assert np.allclose(cross_normal([1, 2, 3], [1, 0, 0]), [0, 3, -2])


def test_tangential_project_examples():
    assert np.allclose(tangential_project([1, 2, 3], [0, 0, 1]), [1, 2, 0])
    assert np.allclose(tangential_project([0, 0, 1], [0, 0, 1]), 0)
    assert np.allclose(tangential_project([1, 2, 0], [0, 0, 1]), [1, 2, 0])


@given(vec, unit)
@settings(max_examples=100, deadline=None)
def test_projection_properties(u, nu):
    p = tangential_project(u, nu)
    assert np.allclose(tangential_project(p, nu), p)
    assert abs(np.dot(p, nu)) < 1e-12
    # |u x nu| equals the length of the tangential part
    assert np.isclose(np.linalg.norm(cross_normal(u, nu)), np.linalg.norm(p))


@given(st.tuples(st.integers(4, 9), st.integers(4, 9), st.integers(4, 9)),
       st.tuples(st.floats(0.5, 3), st.floats(0.5, 3), st.floats(0.5, 3)))
@settings(max_examples=30, deadline=None)
def test_grid_weights_sum_to_volume(n, extent):
    g = StaggeredGrid(extent, n)
    for s in (NODE_STAGGER, CELL_STAGGER, *E_STAGGER):
        assert np.isclose(g.weights(s).sum(), g.volume)
