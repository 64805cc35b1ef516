import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dccm.errors import ContractError
from dccm.geodesic import (GeodesicConfig, compute_geodesic, path_energy, path_from_nodes,
                           riemannian_length, straight_path, _make_path)


def constant(M):
    M = np.asarray(M, dtype=float)
    return lambda X: np.broadcast_to(M, (len(np.atleast_2d(X)),) + M.shape)


def warped(X):
    """Metric whose second direction gets expensive away from x1 = 0."""
    X = np.atleast_2d(X)
    M = np.zeros((len(X), 2, 2))
    M[:, 0, 0] = 1.0
    M[:, 1, 1] = 1.0 + 4.0 * X[:, 0] ** 2
    M[:, 0, 1] = M[:, 1, 0] = 0.3 * X[:, 0]
    return M


@pytest.mark.parametrize("N", [1, 3, 10, 37])
def test_identity_length_is_euclidean(N):
    path = _make_path(straight_path([0, 0], [3, 4], N), constant(np.eye(2)), None)
    assert riemannian_length(path, constant(np.eye(2))) == pytest.approx(5.0, abs=1e-9)
    assert path.length == pytest.approx(5.0, abs=1e-9)


def test_weighted_length():
    M = constant(np.diag([4.0, 1.0]))
    path = _make_path(straight_path([0, 0], [1, 0], 10), M, None)
    assert riemannian_length(path, M) == pytest.approx(2.0, abs=1e-12)


def test_degenerate_path():
    path = compute_geodesic(constant(np.eye(2)), [0.3, 0.4], [0.3, 0.4], 10)
    assert path.energy == 0.0 and path.length == 0.0
    assert not np.any(path.displacements)


def test_node_recursion_and_partition():
    nodes = straight_path([0.1, -0.2], [0.7, 0.5], 10)
    V, ds = path_from_nodes(nodes)
    assert ds.sum() == pytest.approx(1.0) and np.all(ds > 0)
    np.testing.assert_allclose(nodes[:-1] + V * ds[:, None], nodes[1:], atol=1e-15)
    np.testing.assert_array_equal(nodes[0], [0.1, -0.2])
    np.testing.assert_array_equal(nodes[-1], [0.7, 0.5])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(0.2, 3.0), st.floats(-0.9, 0.9))
def test_constant_metric_geodesic_is_straight(pts, scale, corr):
    x, xs = np.array(pts[:2]), np.array(pts[2:])
    M = np.array([[scale, corr * np.sqrt(scale)], [corr * np.sqrt(scale), 1.0]])
    path = compute_geodesic(constant(M), x, xs, 10)
    np.testing.assert_allclose(path.nodes, straight_path(x, xs, 10), atol=1e-6)
    d = xs - x
    assert path.energy == pytest.approx(d @ M @ d, rel=1e-9, abs=1e-12)


def test_warped_metric_improves_on_straight_line():
    x, xs = np.array([-1.0, 0.0]), np.array([1.0, 1.0])
    path = compute_geodesic(warped, x, xs, 10)
    straight = path_energy(straight_path(x, xs, 10), warped)
    assert path.energy < straight - 1e-3
    np.testing.assert_array_equal(path.nodes[0], x)
    np.testing.assert_array_equal(path.nodes[-1], xs)
    # local optimality: no small interior perturbation lowers the discrete energy
    rng = np.random.default_rng(0)
    for _ in range(20):
        trial = path.nodes.copy()
        trial[1:-1] += rng.normal(scale=1e-4, size=trial[1:-1].shape)
        assert path_energy(trial, warped) >= path.energy - 1e-9


def test_energy_never_exceeds_straight_for_trained_metric(cstr_dccm, rng):
    for _ in range(10):
        x, xs = rng.uniform(0.1, 1.1, 2), rng.uniform(0.1, 1.1, 2)
        path = compute_geodesic(cstr_dccm, x, xs, 10)
        assert path.energy <= path_energy(straight_path(x, xs, 10), cstr_dccm.metric) + 1e-15


def test_callable_and_analytic_gradients_agree(cstr_dccm):
    x, xs = np.array([0.5, 0.5]), np.array([0.94, 0.3])
    a = compute_geodesic(cstr_dccm, x, xs, 10)
    b = compute_geodesic(cstr_dccm.metric, x, xs, 10)
    assert a.energy == pytest.approx(b.energy, rel=1e-6)


def test_cauchy_schwarz_length_energy():
    path = compute_geodesic(warped, [-1.0, 0.0], [1.0, 1.0], 10)
    assert path.length ** 2 <= path.energy + 1e-12


def test_bad_arguments():
    with pytest.raises(ContractError):
        compute_geodesic(constant(np.eye(2)), [0, 0], [1, 1], 1)
    with pytest.raises(ContractError):
        compute_geodesic(constant(np.eye(2)), [0, 0], [1, 1, 1], 10)


def test_iteration_cap_respected():
    path = compute_geodesic(warped, [-1.0, 0.0], [1.0, 1.0], 10, GeodesicConfig(max_iterations=2))
    assert path.iterations <= 2
