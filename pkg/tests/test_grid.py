import csv

import numpy as np
import pytest

from hjidecomp.core.grid import (AnalyticField, NodeMask, ReducedField, ValueField, build_grid, central_gradient,
                                 central_gradients, cluster_vectors, estimate_limiting_superdiff, interpolate,
                                 load_value_field, stencil_fit)
from hjidecomp.core.model import DimensionError
from hjidecomp.core.solver import field_lookup
from hjidecomp.games import P3Oracle


def affine_field(grid):
    return ValueField(grid, 2.0 * grid.nodes()[..., 0] + 1.0, transformed=False)


def test_build_grid_examples():
    grid = build_grid([(-2.0, 2.0)], [5])
    assert grid.axes[0].tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert grid.spacing.tolist() == [1.0]

    square = build_grid([(0.0, 1.0), (0.0, 1.0)], [3, 3])
    assert square.size == 9
    assert square.spacing.tolist() == [0.5, 0.5]

    cube = build_grid([(-2.0, 2.0)], [81], dim=3)
    assert cube.shape == (81, 81, 81)
    assert np.allclose(cube.spacing, 0.05)


def test_build_grid_errors():
    with pytest.raises(ValueError):
        build_grid([(1.0, -1.0)], [5])
    with pytest.raises(ValueError):
        build_grid([(0.0, 1.0)], [1])
    with pytest.raises(DimensionError):
        build_grid([(0.0, 1.0), (0.0, 1.0)], [3, 3, 3])


def test_nodes_are_lexicographic_and_reproducible():
    grid = build_grid([(0.0, 1.0), (-1.0, 1.0)], [3, 5])
    nodes = grid.node_list()
    assert nodes[1].tolist() == [0.0, -0.5]
    assert nodes[5].tolist() == [0.5, -1.0]
    again = build_grid([(0.0, 1.0), (-1.0, 1.0)], [3, 5])
    assert np.array_equal(nodes, again.node_list())
    assert np.array_equal(grid.node(7), nodes[7])


def test_face_mask():
    grid = build_grid([(0.0, 1.0)], [4], dim=2)
    assert grid.face_mask().sum() == 12


def test_interpolate_affine_and_nodes():
    grid = build_grid([(-1.0, 1.0)], [7])
    field = affine_field(grid)
    assert interpolate(field, [0.3]) == pytest.approx(1.6, abs=1e-12)
    assert interpolate(field, grid.node(2)) == field.values[2]

    unit = ValueField(build_grid([(0.0, 1.0)], [2]), [0.0, 1.0], transformed=False)
    assert interpolate(unit, [0.25]) == pytest.approx(0.25)


def test_interpolate_clamps_and_flags():
    grid = build_grid([(-1.0, 1.0)], [7])
    value, outside = interpolate(affine_field(grid), [5.0], return_flag=True)
    assert outside
    assert value == pytest.approx(3.0)
    values, flags = interpolate(affine_field(grid), np.array([[0.0], [-3.0]]), return_flag=True)
    assert flags.tolist() == [False, True]


def test_evaluate_outside_the_box_reads_never_captured():
    grid = build_grid([(-1.0, 1.0)], [5])
    field = ValueField(grid, np.full(grid.shape, 0.5))
    points = np.array([[2.0], [0.3], [-1.0]])
    stored = field.evaluate(points, natural=False)
    assert stored.tolist() == [1.0, 0.5, 0.5]
    assert np.array_equal(stored, field_lookup(field)(points))
    natural = field.evaluate(points)
    assert np.isinf(natural[0])
    assert natural[1] == pytest.approx(np.log(2.0))

    plain = affine_field(grid)
    assert plain.evaluate([2.0]) == pytest.approx(3.0)


def test_interpolate_affine_2d_batch():
    grid = build_grid([(-1.0, 1.0), (0.0, 2.0)], [5, 9])
    nodes = grid.nodes()
    field = ValueField(grid, 3.0 * nodes[..., 0] - nodes[..., 1] + 0.5, transformed=False)
    points = np.random.default_rng(0).uniform([-1.0, 0.0], [1.0, 2.0], (50, 2))
    expected = 3.0 * points[:, 0] - points[:, 1] + 0.5
    assert np.allclose(interpolate(field, points), expected, atol=1e-12)


def test_value_field_rejects_nonzero_target_values():
    grid = build_grid([(0.0, 1.0)], [3])
    mask = [NodeMask.TARGET, NodeMask.INTERIOR, NodeMask.BOUNDARY]
    with pytest.raises(ValueError):
        ValueField(grid, [0.5, 0.5, 0.5], mask)


def test_central_gradient_affine():
    grid = build_grid([(-1.0, 1.0)], [9], dim=2)
    field = affine_field(grid)
    assert np.allclose(central_gradient(field, (3, 4)), [2.0, 0.0], atol=1e-12)
    assert np.allclose(central_gradient(field, (0, 0)), [2.0, 0.0], atol=1e-12)
    assert np.allclose(central_gradients(field)[..., 0], 2.0)


def test_central_gradient_abs():
    grid = build_grid([(-2.0, 2.0)], [5])
    field = ValueField(grid, np.abs(grid.axes[0]), transformed=False)
    assert central_gradient(field, 3)[0] == pytest.approx(1.0)
    assert central_gradient(field, 2)[0] == pytest.approx(0.0)


def test_central_gradient_flags_target_nodes():
    grid = build_grid([(-1.0, 1.0)], [5])
    mask = [NodeMask.BOUNDARY, NodeMask.INTERIOR, NodeMask.TARGET, NodeMask.INTERIOR, NodeMask.BOUNDARY]
    field = ValueField(grid, [1.0, 0.5, 0.0, 0.5, 1.0], mask, transformed=False)
    _, flagged = central_gradient(field, 2, return_flag=True)
    assert flagged
    _, flagged = central_gradient(field, 1, return_flag=True)
    assert not flagged


def test_stencil_fit_separates_kinks():
    field = AnalyticField(lambda x: np.abs(x[..., 0]), 1, 0.01, transformed=False)
    fit = stencil_fit(field, np.array([[0.5], [0.0], [-0.3]]))
    assert fit.smooth.tolist() == [True, False, True]
    assert fit.gradient[0, 0] == pytest.approx(1.0)
    assert fit.gradient[2, 0] == pytest.approx(-1.0)


def test_superdiff_of_a_concave_kink():
    field = AnalyticField(lambda x: np.minimum(x[..., 0], -x[..., 0]), 1, 0.01, transformed=False)
    sample = estimate_limiting_superdiff(field, [0.0], seed=3)
    assert sample.vectors.shape == (2, 1)
    assert np.allclose(sample.vectors[:, 0], [-1.0, 1.0], atol=1e-6)
    assert sample.radius == pytest.approx(0.04)


def test_superdiff_of_a_min_of_affine_planes():
    field = AnalyticField(lambda x: np.minimum(x[..., 0] + 2.0 * x[..., 1], 3.0 * x[..., 0] - x[..., 1]), 2, 0.02,
                          transformed=False)
    # both planes meet on x1 = 1.5 x2
    sample = estimate_limiting_superdiff(field, [0.3, 0.2], samples=128, seed=1)
    assert len(sample.vectors) == 2
    assert np.allclose(sample.vectors, [[1.0, 2.0], [3.0, -1.0]], atol=1e-6)


def test_superdiff_of_a_smooth_field():
    grid = build_grid([(-1.0, 1.0)], [41], dim=2)
    sample = estimate_limiting_superdiff(affine_field(grid), [0.1, -0.2])
    assert len(sample.vectors) == 1
    assert np.allclose(sample.vectors[0], [2.0, 0.0], atol=1e-9)
    assert sample.smooth_count == sample.samples


def test_superdiff_p3_envelope_branches():
    env = P3Oracle(0.5).envelope_field(spacing=0.05)
    sample = estimate_limiting_superdiff(env, [0.0, 1.0, -1.0], samples=128)
    assert len(sample.vectors) == 2
    assert np.allclose(sample.vectors, [[-2.0, 2.0, 0.0], [2.0, 0.0, -2.0]], atol=0.05)


def test_superdiff_radius_and_empty_sample():
    field = AnalyticField(lambda x: np.abs(x[..., 0]), 1, 0.1, transformed=False)
    with pytest.raises(ValueError):
        estimate_limiting_superdiff(field, [0.0], radius=0.1)
    nowhere = AnalyticField(lambda x: np.full(x.shape[:-1], np.inf), 1, 0.1, transformed=False)
    sample = estimate_limiting_superdiff(nowhere, [0.0])
    assert len(sample.vectors) == 0
    assert sample.diagnostic


def test_cluster_vectors():
    vectors = np.array([[1.0, 0.0], [1.01, 0.0], [0.99, 0.0], [-1.0, 0.0], [-1.0, 0.02]])
    reps = cluster_vectors(vectors)
    assert reps.shape == (2, 2)
    assert np.allclose(reps, [[-1.0, 0.01], [1.0, 0.0]])


def test_cluster_representative_ignores_a_straddling_sample():
    # one gradient estimated across a kink still merges into the cluster but does not move its representative
    vectors = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.12, 0.0]])
    reps = cluster_vectors(vectors)
    assert reps.tolist() == [[1.0, 0.0]]


def test_reduced_field_index_projection():
    grid = build_grid([(-1.0, 1.0)], [5], dim=2)
    nodes = grid.nodes()
    source = ValueField(grid, nodes[..., 0] - 2.0 * nodes[..., 1], transformed=False)
    reduced = ReducedField(source, [2, 0], 3)
    x = np.array([0.25, 0.9, 0.5])
    assert reduced.evaluate(x) == pytest.approx(0.5 - 2.0 * 0.25)
    assert reduced.embed_gradient([1.0, -2.0]).tolist() == [-2.0, 0.0, 1.0]


def test_reduced_field_matrix_projection():
    source = AnalyticField(lambda y: y[..., 0] + y[..., 1], 2, 0.1, gradient_fn=lambda y: np.ones(y.shape),
                           transformed=False)
    matrix = np.array([[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])
    reduced = ReducedField(source, matrix, 4)
    x = np.array([1.0, 2.0, 0.5, 0.5])
    assert reduced.evaluate(x) == pytest.approx(2.0)
    assert reduced.gradient(x).tolist() == [1.0, 1.0, -1.0, -1.0]


def test_reduced_field_rejects_bad_projections():
    source = AnalyticField(lambda y: y[..., 0], 2, 0.1)
    with pytest.raises(DimensionError):
        ReducedField(source, [0, 0], 3)
    with pytest.raises(DimensionError):
        ReducedField(source, [0, 3], 3)
    with pytest.raises(DimensionError):
        ReducedField(source, [0, 1, 2], 3)


def test_sample_on_stores_the_kruzkov_scale():
    grid = build_grid([(-1.0, 1.0)], [5])
    field = AnalyticField(lambda x: np.abs(x[..., 0]), 1, grid.h_max,
                          target_fn=lambda x: np.abs(x[..., 0]) <= 0.1)
    sampled = field.sample_on(grid)
    assert sampled.mask[2] == NodeMask.TARGET and sampled.values[2] == 0.0
    assert sampled.values[4] == pytest.approx(1.0 - np.exp(-1.0))
    assert sampled.evaluate([1.0]) == pytest.approx(1.0)


def test_dump_csv_format(tmp_path):
    grid = build_grid([(0.0, 1.0)], [3], dim=2)
    values = np.full(grid.shape, 0.5)
    values[0, 0] = 0.0
    values[2, 2] = 1.0
    mask = np.where(grid.face_mask(), NodeMask.BOUNDARY, NodeMask.INTERIOR)
    mask[0, 0] = NodeMask.TARGET
    field = ValueField(grid, values, mask)
    filename = tmp_path / "value.csv"
    assert field.dump_csv(filename) == 9
    with open(filename, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["x1", "x2", "value", "mask"]
    assert rows[1] == ["0", "0", "0", "TARGET"]
    assert rows[2][:2] == ["0", "0.5"]
    assert rows[-1][2:] == ["inf", "BOUNDARY"]
    assert float(rows[5][2]) == pytest.approx(np.log(2.0))

    loaded = load_value_field(filename, grid)
    assert np.allclose(loaded.values[:2], values[:2])
    assert loaded.values[2, 2] == 1.0
