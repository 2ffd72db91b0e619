import numpy as np
import pytest

from skorokhod.errors import EpsilonTooLargeError, InvalidDataError
from skorokhod.esm import invariant_residuals
from skorokhod.rbm import (
    BatchSummary,
    Perturbation,
    RbmParams,
    corner_time_fraction,
    errors_decreasing,
    face_tolerance,
    fd_derivative,
    gaussian_increments,
    jitter_diagnostics,
    jitter_trend,
    pathwise_derivative,
    perturbed_params,
    run_batch,
    run_seed,
    simulate_rbm,
    uniform_grid,
)

GHR_R = [[1.0, 0.5], [-1.0, 1.0]]


@pytest.fixture
def params():
    return RbmParams([0.5, 0.5], [-0.5, -0.5], np.eye(2), GHR_R).checked()


@pytest.fixture(scope="module")
def corner_trend():
    """
    Jitter proxies of a drift into the corner, fifty seeds per grid.
    """
    params = RbmParams([0.5, 0.5], [-2.0, -2.0], np.eye(2), GHR_R).checked()
    return jitter_trend(params, range(50), [2.0**-10, 2.0**-12, 2.0**-14])


@pytest.fixture
def mixed():
    return Perturbation([0.3, -0.2], [0.5, 0.25], [[0.1, 0.0], [0.05, 0.2]], [[0.0, 0.1], [-0.1, 0.0]])


@pytest.fixture
def reflection_only():
    return Perturbation.from_json({"V": [[0.0, 0.2], [0.1, 0.0]]})


class TestNoise:
    """
    Test cases for the seeded Brownian increments.
    """

    def test_reproducible(self):
        grid = uniform_grid(1.0, 2.0**-8)
        first, second = gaussian_increments(42, grid), gaussian_increments(42, grid)
        assert first.shape == (256, 2)
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, gaussian_increments(43, grid))

    def test_variance_matches_step(self):
        dt = 2.0**-12
        increments = gaussian_increments(0, uniform_grid(1.0, dt))
        assert 0.95 <= np.std(increments) / np.sqrt(dt) <= 1.05


class TestParameters:
    """
    Test cases for RBM parameter and perturbation validation.
    """

    def test_ghr_directions(self, params):
        np.testing.assert_array_equal(params.sp.directions, [[1.0, -1.0], [0.5, 1.0]])

    def test_invalid_params(self):
        params = RbmParams([-0.1, 0.5], [0.0, 0.0], np.eye(2), [[1.0, 2.0], [2.0, 1.0]])
        assert not params.validate()
        assert params.validation_errors[0].startswith("x:")
        assert "spectral radius" in params.validation_errors[1]

        params = RbmParams([0.1, 0.5], [0.0, 0.0], np.eye(2), [[2.0, 0.0], [0.0, 1.0]])
        with pytest.raises(InvalidDataError, match="diagonal"):
            params.checked()

    def test_missing_field(self):
        with pytest.raises(InvalidDataError, match="sigma"):
            RbmParams.from_json({"x": [0, 0], "b": [0, 0], "R": np.eye(2).tolist()})

    def test_perturbation_checks(self):
        pert = Perturbation([0.0, 0.0], [0.0, 0.0], np.zeros((2, 2)), np.eye(2))
        assert not pert.validate()
        assert "V:" in pert.validation_errors[0]

        params = RbmParams([0.0, 0.5], [0.0, 0.0], np.eye(2), GHR_R)
        pert = Perturbation.from_json({"y": [-1.0, 0.0]})
        with pytest.raises(InvalidDataError, match="leaves the quadrant"):
            pert.checked(params)

    def test_combine(self, mixed, reflection_only):
        combined = mixed.combine(reflection_only, 2.0, -1.0)
        np.testing.assert_allclose(combined.V, 2.0 * mixed.V - reflection_only.V)
        np.testing.assert_allclose(combined.y, 2.0 * mixed.y)

    def test_eps_too_large(self, params):
        pert = Perturbation.from_json({"y": [-1.0, 0.0]})
        with pytest.raises(EpsilonTooLargeError, match="eps"):
            perturbed_params(params, pert, 1.0)

    def test_face_tolerance(self):
        params = RbmParams([0.5, 0.5], [0.0, 0.0], 2.0 * np.eye(2), GHR_R)
        assert face_tolerance(params, uniform_grid(1.0, 0.25)) == pytest.approx(1e-7)
        still = RbmParams([0.5, 0.5], [0.0, 0.0], np.zeros((2, 2)), GHR_R)
        assert face_tolerance(still, uniform_grid(1.0, 0.25)) == 1e-12


class TestPathwiseDerivative:
    """
    Test cases for RBM derivatives against common-random-number finite differences.
    """

    def test_simulated_path_invariants(self, params):
        path = simulate_rbm(params, uniform_grid(1.0, 2.0**-8), seed=3)
        residuals = invariant_residuals(params.sp, path.X, path.esp)
        assert max(residuals.values()) <= 1e-9

    def test_interior_drift_derivative(self):
        """
        Far from the boundary the drift perturbation gives theta(t) = c t.
        """
        params = RbmParams([5.0, 5.0], [0.0, 0.0], 0.1 * np.eye(2), GHR_R)
        pert = Perturbation.from_json({"c": [1.0, 0.0]})
        path = simulate_rbm(params, uniform_grid(1.0, 2.0**-6), seed=0)
        theta = pathwise_derivative(path, pert)
        expected = np.outer(path.grid, [1.0, 0.0])
        np.testing.assert_allclose(theta.values, expected, atol=1e-12)
        np.testing.assert_allclose(fd_derivative(path, pert, 1e-3).values, expected, atol=1e-9)

    @pytest.mark.parametrize("name", ["mixed", "reflection_only"])
    def test_fd_errors_decrease(self, params, name, request):
        """
        Most paths show E(eps) decreasing along eps = 1e-2, 1e-3, 1e-4.
        """
        pert = request.getfixturevalue(name)
        summary = run_batch(params, pert, range(50), uniform_grid(1.0, 2.0**-8), [1e-2, 1e-3, 1e-4])
        assert summary.decreasing_fraction >= 0.8
        assert sorted(summary.errors) == list(range(50))

    def test_workers_do_not_change_results(self, params, mixed):
        grid = uniform_grid(1.0, 2.0**-6)
        serial = run_batch(params, mixed, [0, 1, 2], grid, [1e-2, 1e-3])
        parallel = run_batch(params, mixed, [0, 1, 2], grid, [1e-2, 1e-3], workers=2)
        assert serial.as_dict() == parallel.as_dict()

    def test_seed_csv_is_reproducible(self, params, mixed, tmp_path):
        grid = uniform_grid(1.0, 2.0**-6)
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            run_seed(params, mixed, grid, 7, [1e-2, 1e-3], output_dir=str(tmp_path / name))
        first = (tmp_path / "a" / "rbm-seed-7.csv").read_bytes()
        assert first == (tmp_path / "b" / "rbm-seed-7.csv").read_bytes()
        assert first.startswith(b"t,z_1,z_2,dz_1,dz_2,fd_0.01_1")


class TestDiagnostics:
    """
    Test cases for the error-trend test and the jitter proxies.
    """

    @pytest.mark.parametrize(
        "errors, expected",
        [
            ({1e-2: 1e-1, 1e-3: 1e-2, 1e-4: 1e-3}, True),
            ({1e-2: 1e-1, 1e-3: 2e-1, 1e-4: 1e-3}, False),
            ({1e-2: 1e-12, 1e-3: 5e-12, 1e-4: 1e-11}, True),
            ({1e-2: 1e-1, 1e-3: float("nan"), 1e-4: 1e-3}, False),
        ],
    )
    def test_errors_decreasing(self, errors, expected):
        assert errors_decreasing(errors) is expected

    def test_jitter_report(self):
        params = RbmParams([0.05, 0.05], [-1.0, -1.0], np.eye(2), GHR_R)
        path = simulate_rbm(params, uniform_grid(1.0, 2.0**-8), seed=1)
        report = jitter_diagnostics(path)
        assert 0.0 <= report.corner_time_fraction <= 1.0
        assert 0.0 <= report.constant_y_fraction <= 1.0
        assert report.boundary_steps > 0
        assert set(report.as_dict()) >= {"corner_hits", "flags"}

    @pytest.mark.parametrize("coarse, fine", [(0, 1), (1, 2)])
    def test_corner_time_shrinks_with_the_step(self, corner_trend, coarse, fine):
        """
        Mean corner time over fifty seeds falls along dt = 2^-10, 2^-12, 2^-14.
        """
        fractions = corner_trend["corner_time_fraction"].to_numpy()
        assert fractions[fine] < fractions[coarse]

    def test_corner_trend_table(self, corner_trend):
        np.testing.assert_array_equal(corner_trend["dt"], [2.0**-10, 2.0**-12, 2.0**-14])
        assert (corner_trend["seeds"] == 50).all()
        assert (corner_trend["corner_time_fraction"] > 0.0).all()

    def test_trend_averages_seed_reports(self):
        params = RbmParams([0.5, 0.5], [-2.0, -2.0], np.eye(2), GHR_R).checked()
        grid = uniform_grid(1.0, 2.0**-6)
        paths = [simulate_rbm(params, grid, seed, decompose=False) for seed in range(3)]
        serial = jitter_trend(params, range(3), [2.0**-6])
        assert serial["corner_time_fraction"].iloc[0] == pytest.approx(
            np.mean([corner_time_fraction(path) for path in paths])
        )
        parallel = jitter_trend(params, range(3), [2.0**-6], workers=2)
        assert serial.to_dict() == parallel.to_dict()

    def test_summary_fraction(self):
        summary = BatchSummary([1e-2], {0: {1e-2: 0.1}, 1: {1e-2: 0.2}}, {0: True, 1: False}, {})
        assert summary.decreasing_fraction == 0.5
        assert summary.as_dict()["decreasing_fraction"] == 0.5
