"""Tests for nearest-neighbor point kriging and block (regional-average) kriging."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from spatpart.covariance import Theta, build_cov_matrix, cov_value, structured_cov
from spatpart.estimate import (
    SpatialDataset,
    assemble_q,
    fit_fixed_effects,
    var_beta_exact,
)
from spatpart.geometry import NeighborIndex
from spatpart.partition import PartitionAssignment, partition_random
from spatpart.predict import (
    block_predict,
    predict_dense,
    predict_point_global,
    predict_point_local,
    predict_points_global,
    predict_weights,
)


def make_fit(data, theta, part):
    from spatpart.estimate import FittedModel

    beta, cache = fit_fixed_effects(data, part, theta)
    cov_beta = var_beta_exact(data, part, theta, cache)
    return FittedModel(
        theta_hat=theta,
        beta_hat=beta,
        cov_beta=cov_beta,
        variance_method="exact",
        partition=part,
        block_cache=cache,
    )


def random_setup(rng, n, theta, group_size=None):
    points = rng.uniform(size=(n, 2))
    x = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    y = x @ np.array([1.0, 1.0, 1.0]) + rng.normal(size=n)
    data = SpatialDataset(points=points, y=y, X=x)
    if group_size is None:
        part = PartitionAssignment(labels=np.zeros(n, dtype=np.intp), n_groups=1)
    else:
        part = partition_random(n, group_size, seed=rng)
    return data, make_fit(data, theta, part), NeighborIndex(points)


class TestPointPredictionGlobal:
    def test_exact_interpolation_without_nugget(self):
        rng = np.random.default_rng(1)
        theta = Theta(2.0, 0.0, 0.4)
        data, fit, index = random_setup(rng, 120, theta)
        for i in range(0, 120, 17):
            value, var = predict_point_global(fit, data, index, data.points[i], data.X[i], 30)
            assert value == pytest.approx(data.y[i], abs=1e-6)
            assert var == pytest.approx(0.0, abs=1e-6)

    def test_nugget_smooths_at_observed_sites(self):
        rng = np.random.default_rng(2)
        theta = Theta(2.0, 0.5, 0.4)
        data, fit, index = random_setup(rng, 120, theta)
        hits = sum(
            abs(predict_point_global(fit, data, index, data.points[i], data.X[i], 30)[0] - data.y[i])
            > 1e-6
            for i in range(0, 120, 17)
        )
        assert hits == len(range(0, 120, 17))

    def test_far_site_falls_back_to_mean_surface(self):
        # beyond the spherical range every cross-covariance is zero
        rng = np.random.default_rng(3)
        theta = Theta(2.0, 0.3, 0.5, model="spherical")
        data, fit, index = random_setup(rng, 80, theta)
        site = np.array([50.0, 50.0])
        x_site = np.array([1.0, 0.7, -0.2])
        value, var = predict_point_global(fit, data, index, site, x_site, 20)
        assert value == pytest.approx(float(x_site @ fit.beta_hat), rel=1e-12)
        assert var == pytest.approx(theta.sill + float(x_site @ fit.cov_beta @ x_site), rel=1e-10)

    def test_all_neighbors_matches_dense_predictor(self):
        # m = n with the dense coefficient covariance reproduces classical kriging
        rng = np.random.default_rng(4)
        theta = Theta(1.5, 0.2, 0.4, model="spherical")
        data, fit, index = random_setup(rng, 150, theta)
        sites = rng.uniform(size=(25, 2))
        x_sites = np.column_stack([np.ones(25), rng.normal(size=(25, 2))])
        nn = predict_points_global(fit, data, index, sites, x_sites, 150)
        dense = predict_dense(fit, data, sites, x_sites)
        np.testing.assert_allclose(nn.values, dense.values, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(nn.variances, dense.variances, rtol=1e-8, atol=1e-10)

    def test_variance_nonincreasing_in_m_statistically(self):
        # more neighbors can only help on the whole; checked over many sites,
        # not pointwise (no pointwise guarantee is asserted)
        rng = np.random.default_rng(5)
        theta = Theta(2.0, 0.1, 0.4)
        data, fit, index = random_setup(rng, 200, theta)
        sites = rng.uniform(size=(80, 2))
        x_sites = np.column_stack([np.ones(80), rng.normal(size=(80, 2))])
        var_small = predict_points_global(fit, data, index, sites, x_sites, 10).variances
        var_large = predict_points_global(fit, data, index, sites, x_sites, 60).variances
        frac = np.mean(var_large <= var_small + 1e-10)
        assert frac >= 0.95
        assert var_large.mean() < var_small.mean()

    def test_shape_validation(self):
        rng = np.random.default_rng(6)
        theta = Theta(1.0, 0.1, 0.3)
        data, fit, index = random_setup(rng, 30, theta)
        with pytest.raises(ValueError):
            predict_points_global(fit, data, index, np.zeros((2, 2)), np.zeros((2, 2)), 5)


class TestPointPredictionLocal:
    def test_all_neighbors_matches_dense_predictor(self):
        rng = np.random.default_rng(7)
        theta = Theta(1.5, 0.2, 0.4)
        data, fit, index = random_setup(rng, 120, theta)
        sites = rng.uniform(size=(10, 2))
        x_sites = np.column_stack([np.ones(10), rng.normal(size=(10, 2))])
        dense = predict_dense(fit, data, sites, x_sites)
        for j in range(10):
            value, var = predict_point_local(theta, data, index, sites[j], x_sites[j], 120)
            assert value == pytest.approx(dense.values[j], rel=1e-8, abs=1e-10)
            assert var == pytest.approx(dense.variances[j], rel=1e-8, abs=1e-10)

    def test_exact_interpolation_without_nugget(self):
        rng = np.random.default_rng(8)
        theta = Theta(2.0, 0.0, 0.4)
        data, _, index = random_setup(rng, 100, theta)
        value, var = predict_point_local(theta, data, index, data.points[5], data.X[5], 25)
        assert value == pytest.approx(data.y[5], abs=1e-6)
        assert var == pytest.approx(0.0, abs=1e-6)

    def test_all_zero_dummy_column_dropped(self):
        # a categorical level absent from the neighborhood must not break the
        # local solve
        rng = np.random.default_rng(9)
        n = 80
        points = rng.uniform(size=(n, 2))
        dummy = np.zeros(n)
        dummy[points[:, 0] > 0.9] = 1.0  # level present only far from the query
        x = np.column_stack([np.ones(n), rng.normal(size=n), dummy])
        y = x @ np.array([1.0, 1.0, 2.0]) + rng.normal(size=n)
        data = SpatialDataset(points=points, y=y, X=x)
        index = NeighborIndex(points)
        theta = Theta(1.0, 0.1, 0.2, model="spherical")
        site = np.array([0.05, 0.05])
        nb, _ = index.k_nearest(site, 10)
        assert np.all(data.X[nb][:, 2] == 0)
        value, var = predict_point_local(theta, data, index, site, np.array([1.0, 0.0, 0.0]), 10)
        assert np.isfinite(value) and np.isfinite(var) and var >= 0


class TestPredictionWeights:
    def test_weights_reproduce_predictions_for_any_response(self):
        # the weights depend only on geometry, X, and theta: re-fitting beta on
        # a new y and predicting must equal the old weights dotted with that y
        rng = np.random.default_rng(10)
        theta = Theta(1.5, 0.2, 0.4)
        data, fit, index = random_setup(rng, 100, theta, group_size=25)
        site = np.array([0.4, 0.6])
        x_site = np.array([1.0, 0.3, -1.2])
        lam = predict_weights(fit, data, index, site, x_site, 20)
        for _ in range(20):
            y_new = rng.normal(size=100)
            data_new = SpatialDataset(points=data.points, y=y_new, X=data.X)
            fit_new = make_fit(data_new, theta, fit.partition)
            value, _ = predict_point_global(fit_new, data_new, index, site, x_site, 20)
            assert float(lam @ y_new) == pytest.approx(value, rel=1e-9, abs=1e-12)

    def test_weights_sum_to_one_with_intercept(self):
        # lambda' X = x' exactly, so with an intercept the weights reproduce
        # constant fields
        rng = np.random.default_rng(11)
        theta = Theta(2.0, 0.3, 0.5)
        data, fit, index = random_setup(rng, 120, theta, group_size=30)
        q = assemble_q(data, fit.block_cache)
        for _ in range(5):
            site = rng.uniform(size=2)
            x_site = np.array([1.0, *rng.normal(size=2)])
            lam = predict_weights(fit, data, index, site, x_site, 15, q=q)
            assert float(lam @ np.ones(120)) == pytest.approx(1.0, abs=1e-8)
            np.testing.assert_allclose(lam @ data.X, x_site, atol=1e-8)

    def test_intercept_only_coincident_site(self):
        rng = np.random.default_rng(12)
        n = 60
        points = rng.uniform(size=(n, 2))
        y = rng.normal(size=n)
        data = SpatialDataset(points=points, y=y, X=np.ones((n, 1)))
        part = PartitionAssignment(labels=np.zeros(n, dtype=np.intp), n_groups=1)
        theta = Theta(1.0, 0.0, 0.3)
        fit = make_fit(data, theta, part)
        index = NeighborIndex(points)
        lam = predict_weights(fit, data, index, points[7], np.array([1.0]), 20)
        assert float(lam @ y) == pytest.approx(y[7], abs=1e-6)


def brute_force_block_variance(data, fit, index, grid, x_grid, m):
    """Assemble the full joint covariance and take the quadratic form directly."""
    theta = fit.theta_hat
    n, n_grid = data.n, grid.shape[0]
    q = assemble_q(data, fit.block_cache)
    a_star = np.zeros(n)
    g_sum = np.zeros(data.n_coef)
    for k in range(n_grid):
        nb, _ = index.k_nearest(grid[k], m)
        pts = data.points[nb]
        c = structured_cov(cdist(grid[k][None, :], pts)[0], theta)
        u = np.linalg.solve(build_cov_matrix(pts, pts, theta), c)
        a_star[nb] += u
        g_sum += x_grid[k] - data.X[nb].T @ u
    a_star = a_star / n_grid + q.T @ (g_sum / n_grid)
    a = np.full(n_grid, 1.0 / n_grid)
    v_oo = build_cov_matrix(data.points, data.points, theta)
    v_ou = structured_cov(cdist(data.points, grid), theta)
    v_uu = cov_value(cdist(grid, grid), theta)
    np.fill_diagonal(v_uu, theta.sill)
    return float(a_star @ v_oo @ a_star - 2.0 * a_star @ v_ou @ a + a @ v_uu @ a)


class TestBlockPrediction:
    def _setup(self, rng, n=200, grid_side=10):
        theta = Theta(2.0, 0.2, 0.4, model="spherical")
        points = rng.uniform(size=(n, 2))
        x = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = x @ np.array([1.0, 1.0, 1.0]) + rng.normal(size=n)
        data = SpatialDataset(points=points, y=y, X=x)
        part = partition_random(n, 50, seed=rng)
        fit = make_fit(data, theta, part)
        ticks = (np.arange(grid_side) + 0.5) / grid_side
        xx, yy = np.meshgrid(ticks, ticks)
        grid = np.column_stack([xx.ravel(), yy.ravel()])
        x_grid = np.column_stack([np.ones(grid.shape[0]), rng.normal(size=(grid.shape[0], 2))])
        return data, fit, NeighborIndex(points), grid, x_grid

    def test_value_is_mean_of_point_predictions(self):
        rng = np.random.default_rng(13)
        data, fit, index, grid, x_grid = self._setup(rng)
        res = block_predict(fit, data, index, grid, x_grid, 30)
        pointwise = predict_points_global(fit, data, index, grid, x_grid, 30)
        assert res.value == pytest.approx(pointwise.values.mean(), abs=1e-12)
        assert res.n_grid == 100 and not res.subsampled

    def test_variance_matches_dense_assembly(self):
        rng = np.random.default_rng(14)
        data, fit, index, grid, x_grid = self._setup(rng)
        res = block_predict(fit, data, index, grid, x_grid, 30)
        want = brute_force_block_variance(data, fit, index, grid, x_grid, 30)
        assert res.variance == pytest.approx(want, rel=1e-8)

    def test_one_point_grid_value_equals_point_prediction(self):
        rng = np.random.default_rng(15)
        data, fit, index, _, _ = self._setup(rng)
        site = np.array([[0.52, 0.48]])
        x_site = np.array([[1.0, 0.2, -0.4]])
        res = block_predict(fit, data, index, site, x_site, 25)
        value, _ = predict_point_global(fit, data, index, site[0], x_site[0], 25)
        assert res.value == pytest.approx(value, abs=1e-12)
        want = brute_force_block_variance(data, fit, index, site, x_site, 25)
        assert res.variance == pytest.approx(want, rel=1e-8)

    def test_unbiasedness_gap_is_negligible(self):
        # the pooled-coefficient weights satisfy lambda' X = x' exactly, so the
        # diagnostic should sit at rounding level
        rng = np.random.default_rng(16)
        data, fit, index, grid, x_grid = self._setup(rng)
        res = block_predict(fit, data, index, grid, x_grid, 30)
        assert np.max(np.abs(res.unbiasedness_gap)) < 1e-10

    def test_subsample_flag(self):
        rng = np.random.default_rng(17)
        data, fit, index, grid, x_grid = self._setup(rng)
        res = block_predict(fit, data, index, grid, x_grid, 30, subsample_cap=100, seed=1)
        assert res.subsampled
        assert np.isfinite(res.variance) and res.variance >= 0

    def test_empty_grid_rejected(self):
        rng = np.random.default_rng(18)
        data, fit, index, _, _ = self._setup(rng)
        with pytest.raises(ValueError):
            block_predict(fit, data, index, np.empty((0, 2)), np.empty((0, 3)), 10)

    def test_result_independent_of_chunking(self):
        import spatpart.predict as predict_mod

        rng = np.random.default_rng(19)
        data, fit, index, grid, x_grid = self._setup(rng)
        res_big = block_predict(fit, data, index, grid, x_grid, 30)
        old = predict_mod._GRID_CHUNK
        try:
            predict_mod._GRID_CHUNK = 7
            res_small = block_predict(fit, data, index, grid, x_grid, 30)
        finally:
            predict_mod._GRID_CHUNK = old
        assert res_small.value == res_big.value
        assert res_small.variance == pytest.approx(res_big.variance, rel=1e-12)
