"""Tests for the two synthetic-field generators and response construction."""

import numpy as np
import pytest

from spatpart.covariance import Theta
from spatpart.geometry import NeighborIndex
from spatpart.simulate import (
    BETA_TRUE,
    GEOSTAT_CAP,
    SimConfig,
    make_response,
    simulate_geostat,
    simulate_realization,
    simulate_sumsine,
    square_grid,
    sumsine_surface,
    unit_square_points,
)


class TestSimConfig:
    def test_geostat_requires_theta(self):
        with pytest.raises(ValueError):
            SimConfig(method="geostat", n=100)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            SimConfig(method="bogus", n=100)

    def test_geostat_cap_includes_grid(self):
        theta = Theta(1.0, 0.1, 0.5)
        with pytest.raises(ValueError):
            SimConfig(method="geostat", n=GEOSTAT_CAP, grid_side=40, theta=theta)

    def test_sumsine_uncapped(self):
        SimConfig(method="sumsine", n=100000)


class TestSquareGrid:
    def test_cell_centers(self):
        grid = square_grid(2)
        np.testing.assert_allclose(
            sorted(map(tuple, grid)), [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
        )

    def test_size(self):
        assert square_grid(40).shape == (1600, 2)


class TestGeostat:
    def test_pure_nugget_is_iid(self):
        # tau2 = 0 makes the covariance diagonal: independent N(0, eta2) draws
        rng = np.random.default_rng(1)
        points = unit_square_points(50, rng)
        theta = Theta(0.0, 4.0, 0.5, model="spherical")
        draws = np.array([simulate_geostat(points, theta, seed=s) for s in range(400)])
        np.testing.assert_allclose(draws.var(axis=0, ddof=1).mean(), 4.0, rtol=0.1)
        c = np.corrcoef(draws.T)
        off = c[~np.eye(50, dtype=bool)]
        assert np.abs(off).mean() < 0.1

    def test_marginal_variance_matches_sill(self):
        # sample variance of a fixed coordinate over replicates ~ tau2 + eta2
        rng = np.random.default_rng(2)
        points = unit_square_points(20, rng)
        theta = Theta(10.0, 0.1, 0.5, model="spherical")
        draws = np.array([simulate_geostat(points, theta, seed=s) for s in range(500)])
        v = draws[:, 0].var(ddof=1)
        assert v == pytest.approx(10.1, rel=0.10)

    def test_correlation_vanishes_at_range(self):
        # spherical support ends at d = rho
        theta = Theta(10.0, 0.1, 0.5, model="spherical")
        points = np.array([[0.0, 0.0], [0.5, 0.0], [0.1, 0.0]])
        draws = np.array([simulate_geostat(points, theta, seed=s) for s in range(500)])
        c = np.corrcoef(draws.T)
        assert abs(c[0, 1]) < 0.15  # at the range: uncorrelated
        assert c[0, 2] > 0.5  # well inside the range: strongly correlated

    def test_cap_enforced(self):
        rng = np.random.default_rng(3)
        points = rng.uniform(size=(GEOSTAT_CAP + 1, 2))
        with pytest.raises(ValueError):
            simulate_geostat(points, Theta(1.0, 0.1, 0.5))

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(4)
        points = unit_square_points(30, rng)
        theta = Theta(2.0, 0.1, 0.4)
        a = simulate_geostat(points, theta, seed=7)
        b = simulate_geostat(points, theta, seed=7)
        np.testing.assert_array_equal(a, b)


class TestSumsine:
    def test_surface_standardization(self):
        rng = np.random.default_rng(5)
        points = unit_square_points(2000, rng)
        surface = sumsine_surface(points, seed=6)
        assert surface.mean() == pytest.approx(0.0, abs=1e-10)
        assert surface.var(ddof=1) == pytest.approx(10.0, rel=1e-12)

    def test_noise_added_on_top(self):
        rng = np.random.default_rng(7)
        points = unit_square_points(5000, rng)
        field = simulate_sumsine(points, seed=8)
        assert field.var(ddof=1) == pytest.approx(10.1, rel=0.1)
        assert abs(field.mean()) < 0.2

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(9)
        points = unit_square_points(100, rng)
        np.testing.assert_array_equal(
            simulate_sumsine(points, seed=10), simulate_sumsine(points, seed=10)
        )

    def test_spatial_autocorrelation_vs_permutation(self):
        # nearest-neighbor product statistic must beat its permutation null
        rng = np.random.default_rng(11)
        points = unit_square_points(800, rng)
        field = sumsine_surface(points, seed=12)
        index = NeighborIndex(points)
        ids, _ = index.k_nearest_batch(points, 2)
        nn = ids[:, 1]  # nearest distinct neighbor of each point
        stat = float(np.mean(field * field[nn]))
        perm_rng = np.random.default_rng(13)
        null = [
            float(np.mean(p * p[nn]))
            for p in (perm_rng.permutation(field) for _ in range(200))
        ]
        assert stat > np.max(null)


class TestMakeResponse:
    def test_linear_identity(self):
        # y - epsilon is exactly X @ (1, 1, 1)
        rng = np.random.default_rng(14)
        points = unit_square_points(200, rng)
        epsilon = rng.normal(size=200)
        y, x = make_response(points, epsilon, lambda r: r.normal(size=200), seed=15)
        np.testing.assert_allclose(y - epsilon, x @ BETA_TRUE, rtol=1e-12)
        recovered, *_ = np.linalg.lstsq(x, y - epsilon, rcond=None)
        np.testing.assert_allclose(recovered, BETA_TRUE, rtol=1e-8)

    def test_design_layout(self):
        rng = np.random.default_rng(16)
        points = unit_square_points(50, rng)
        _, x = make_response(points, np.zeros(50), lambda r: r.normal(size=50), seed=17)
        assert x.shape == (50, 3)
        np.testing.assert_array_equal(x[:, 0], 1.0)

    def test_patterned_covariate_uses_supplied_generator(self):
        rng = np.random.default_rng(18)
        points = unit_square_points(2000, rng)

        def field_fn(r):
            return simulate_sumsine(points, seed=r)

        _, x = make_response(points, np.zeros(2000), field_fn, seed=19)
        assert x[:, 2].var(ddof=1) == pytest.approx(10.1, rel=0.1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            make_response(np.zeros((3, 2)), np.zeros(4), lambda r: np.zeros(3))


class TestSimulateRealization:
    def test_shapes_and_split(self):
        cfg = SimConfig(
            method="geostat", n=150, grid_side=10, theta=Theta(2.0, 0.1, 0.5), seed=20
        )
        real = simulate_realization(cfg)
        assert real.points_obs.shape == (150, 2)
        assert real.points_grid.shape == (100, 2)
        assert real.y_obs.shape == (150,) and real.y_grid.shape == (100,)
        assert real.X_obs.shape == (150, 3) and real.X_grid.shape == (100, 3)
        assert real.epsilon.shape == (250,)

    def test_response_consistent_with_error(self):
        cfg = SimConfig(method="sumsine", n=300, grid_side=5, seed=21)
        real = simulate_realization(cfg)
        y = np.concatenate([real.y_obs, real.y_grid])
        x = np.vstack([real.X_obs, real.X_grid])
        np.testing.assert_allclose(y - x @ real.beta_true, real.epsilon, rtol=1e-12)

    def test_deterministic_under_seed(self):
        cfg = SimConfig(
            method="geostat", n=100, grid_side=8, theta=Theta(2.0, 0.1, 0.5), seed=22
        )
        a = simulate_realization(cfg)
        b = simulate_realization(cfg)
        np.testing.assert_array_equal(a.y_obs, b.y_obs)
        np.testing.assert_array_equal(a.X_grid, b.X_grid)

    def test_different_seeds_differ(self):
        theta = Theta(2.0, 0.1, 0.5)
        a = simulate_realization(SimConfig(method="geostat", n=50, grid_side=5, theta=theta, seed=1))
        b = simulate_realization(SimConfig(method="geostat", n=50, grid_side=5, theta=theta, seed=2))
        assert not np.array_equal(a.y_obs, b.y_obs)

    def test_covariate_and_error_streams_independent(self):
        # x2 comes from the same generator family but a different draw
        cfg = SimConfig(method="sumsine", n=500, grid_side=5, seed=23)
        real = simulate_realization(cfg)
        x2 = np.vstack([real.X_obs, real.X_grid])[:, 2]
        assert not np.allclose(x2, real.epsilon)
        assert abs(np.corrcoef(x2, real.epsilon)[0, 1]) < 0.35
