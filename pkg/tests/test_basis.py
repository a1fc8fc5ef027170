import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closure_enkf.basis import (
    BandwidthRule, BasisKind, BasisSet, ScaledCoefficients, bspline_basis, build_basis, clamped_knots,
    cubic_bspline_matrix, gaussian_kernel_matrix, gaussian_rbf_basis, kmeans, project_field, rbf_bandwidth,
    synthesize_field,
)
from closure_enkf.errors import ConfigurationError, DimensionError, SingularityError
from closure_enkf.grid import SpatialGrid, grid_points
from oracles import cox_de_boor


def test_clamped_knots():
    t = clamped_knots(0.0, 1.0, 7)
    assert len(t) == 11
    np.testing.assert_array_equal(t[:4], 0.0)
    np.testing.assert_array_equal(t[-4:], 1.0)
    np.testing.assert_allclose(t[4:7], [0.25, 0.5, 0.75])
    with pytest.raises(ConfigurationError):
        clamped_knots(0, 1, 3)


@pytest.mark.parametrize("m", [4, 5, 11, 19])
def test_partition_of_unity(m):
    b = bspline_basis(SpatialGrid.uniform(1.0, 1000), m)
    assert b.matrix.shape == (1000, m)
    assert np.abs(b.matrix.sum(axis=1) - 1).max() < 1e-10
    assert b.matrix.min() >= 0


@pytest.mark.parametrize("m", [4, 7, 11])
def test_cox_de_boor_oracle(m):
    t = clamped_knots(0.0, 2.0, m)
    x = np.concatenate([np.linspace(0, 2, 57), [0.0, 2.0, t[5] if m > 5 else 1.0]])
    B = cubic_bspline_matrix(x, t)
    ref = np.array([[cox_de_boor(xi, k, 3, t, closed_right=True) for k in range(m)] for xi in x])
    assert np.abs(B - ref).max() < 1e-12


def test_endpoint_interpolation():
    b = bspline_basis(SpatialGrid.uniform(1.0, 50), 11)
    np.testing.assert_allclose(b.matrix[0], np.eye(11)[0], atol=1e-15)
    np.testing.assert_allclose(b.matrix[-1], np.eye(11)[-1], atol=1e-15)


def test_bspline_errors():
    with pytest.raises(ConfigurationError):
        bspline_basis(SpatialGrid.uniform(1.0, 10, 2), 5)
    with pytest.raises(ConfigurationError):
        bspline_basis(SpatialGrid.uniform(1.0, 10), 3)


def test_evaluate_matches_matrix():
    g = SpatialGrid.uniform(1.0, 30)
    b = bspline_basis(g, 8)
    np.testing.assert_array_equal(b.evaluate(grid_points(g)), b.matrix)
    r = gaussian_rbf_basis(SpatialGrid.uniform(1.0, 10, 2), 6, seed=3)
    np.testing.assert_allclose(r.evaluate(grid_points(SpatialGrid.uniform(1.0, 10, 2))), r.matrix)


def test_kmeans_separated_clusters_exact():
    # three tight, well separated blobs: every restart must land on the blob means
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    pts = np.vstack([c + 0.1 * rng.standard_normal((40, 2)) for c in centers])
    means = np.array([pts[i * 40:(i + 1) * 40].mean(axis=0) for i in range(3)])
    for seed in range(5):
        got = kmeans(pts, 3, seed=seed)
        order = np.argsort(got[:, 0] + 100 * got[:, 1])
        want = means[np.argsort(means[:, 0] + 100 * means[:, 1])]
        np.testing.assert_allclose(got[order], want, atol=1e-12)


def test_kmeans_deterministic_and_monotone():
    pts = grid_points(SpatialGrid.uniform(1.0, 12, 2))
    a, hist = kmeans(pts, 9, seed=7, return_history=True)
    b = kmeans(pts, 9, seed=7)
    np.testing.assert_array_equal(a, b)
    assert all(h1 <= h0 + 1e-12 for h0, h1 in zip(hist, hist[1:]))


def test_kmeans_fixed_point_is_lloyd_stationary():
    pts = np.random.default_rng(5).uniform(size=(200, 2))
    c = kmeans(pts, 6, seed=1)
    labels = np.argmin(((pts[:, None] - c[None]) ** 2).sum(-1), axis=1)
    for j in range(6):
        np.testing.assert_allclose(c[j], pts[labels == j].mean(axis=0), atol=1e-12)


def test_kmeans_duplicate_points():
    pts = np.zeros((10, 2))
    c = kmeans(pts, 3, seed=0)
    np.testing.assert_array_equal(c, 0.0)
    with pytest.raises(ConfigurationError):
        kmeans(pts, 11)


def test_bandwidth_rules():
    c = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
    assert rbf_bandwidth(c, "paper-literal", 100) == pytest.approx(5.0 / 100)
    assert rbf_bandwidth(c, "lowe", 100) == pytest.approx(5.0 / np.sqrt(6))
    assert rbf_bandwidth(c, "fixed", 100, 0.3) == 0.3
    with pytest.raises(ConfigurationError):
        rbf_bandwidth(c, "fixed", 100)
    with pytest.raises(ConfigurationError):
        rbf_bandwidth(np.zeros((3, 2)), "lowe", 100)


def test_gaussian_kernel_values():
    K = gaussian_kernel_matrix(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[0.0, 0.0]]), 2.0)
    np.testing.assert_allclose(K[:, 0], [1.0, np.exp(-2.0 / 4.0)])


def test_rbf_basis_metadata():
    g = SpatialGrid.uniform(1.0, 25, 2)
    b = build_basis(g, "rbf", 80, seed=0)
    assert b.kind is BasisKind.RBF and b.matrix.shape == (625, 80)
    d = b.to_dict()
    assert d["n_bases"] == 80 and d["bandwidth_rule"] == "lowe" and len(d["centroids"]) == 80
    assert np.all(b.matrix > 0) and np.all(b.matrix <= 1)


def test_synthesize_and_project_roundtrip():
    g = SpatialGrid.uniform(1.0, 100)
    b = bspline_basis(g, 11)
    sigma = 0.1
    eta = np.random.default_rng(0).standard_normal(11)
    f = synthesize_field(b, ScaledCoefficients(eta, sigma))
    np.testing.assert_allclose(f, b.matrix @ (sigma * eta))
    np.testing.assert_allclose(project_field(b, sigma, f), eta, atol=1e-10)
    E = np.random.default_rng(1).standard_normal((11, 4))
    np.testing.assert_allclose(b.synthesize(E, sigma), b.matrix @ (sigma * E))


def test_projection_is_least_squares():
    g = SpatialGrid.uniform(1.0, 60)
    b = bspline_basis(g, 7)
    target = np.sin(9 * grid_points(g)[:, 0])
    eta = project_field(b, 0.5, target)
    resid = target - b.synthesize(eta, 0.5)
    np.testing.assert_allclose(b.matrix.T @ resid, 0.0, atol=1e-10)


def test_projection_singular_names_columns():
    M = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 0.0]] * 5)
    b = BasisSet(BasisKind.RBF, M)
    with pytest.raises(SingularityError) as info:
        project_field(b, 1.0, np.ones(10))
    assert info.value.columns and set(info.value.columns) <= {0, 1, 2}
    assert len(info.value.columns) == 2
    # ridge fallback stays finite
    assert np.all(np.isfinite(project_field(b, 1.0, np.ones(10), ridge=1e-6)))


def test_projection_shape_error():
    b = bspline_basis(SpatialGrid.uniform(1.0, 20), 5)
    with pytest.raises(DimensionError):
        project_field(b, 1.0, np.ones(7))
    with pytest.raises(DimensionError):
        b.synthesize(np.ones(4), 1.0)


def test_scaled_coefficients_validation():
    with pytest.raises((DimensionError, ConfigurationError)):
        ScaledCoefficients(np.ones(3), np.ones(4))


@settings(max_examples=25, deadline=None)
@given(m=st.integers(4, 25), n=st.integers(30, 200), L=st.floats(0.5, 3.0))
def test_partition_of_unity_property(m, n, L):
    b = bspline_basis(SpatialGrid((L,), (n,)), m)
    assert np.abs(b.matrix.sum(axis=1) - 1).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(x=st.floats(0.0, 1.0), m=st.integers(4, 15))
def test_cox_de_boor_pointwise_property(x, m):
    t = clamped_knots(0.0, 1.0, m)
    B = cubic_bspline_matrix([x], t)[0]
    ref = [cox_de_boor(x, k, 3, t, closed_right=True) for k in range(m)]
    assert np.abs(B - ref).max() < 1e-12
