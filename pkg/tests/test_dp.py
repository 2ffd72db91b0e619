import numpy as np
import pytest

from skorokhod.derivproj import build_projection
from skorokhod.dp import (
    dp_condition_residuals,
    dp_linearity_check,
    dp_lipschitz_report,
    dp_timeshift_check,
    solve_dp,
    theta_z,
)
from skorokhod.errors import DerivativeUndefinedError, InvalidDataError
from skorokhod.esm import solve_esm
from skorokhod.paths import PwLinearPath, merge_times
from skorokhod.sm1d import nabla_gamma1_right
from tests.conftest import random_walk


def random_psi(seed, times, dim=2):
    rng = np.random.default_rng(seed)
    return PwLinearPath(times, rng.standard_normal((len(times), dim)))


@pytest.fixture
def corner_paths(ghr):
    """
    Fifty paths driven into the corner of the oblique quadrant, with their perturbations.
    """
    cases = []
    for seed in range(50):
        X = random_walk(seed, steps=512, start=(0.2, 0.2), drift=(-3.0, -3.0), scale=0.2)
        cases.append((solve_esm(ghr.sp, X), random_psi(1000 + seed, X.times)))
    return cases


class TestSolveDp:
    """
    Test cases for the discrete derivative problem.
    """

    def test_interior_path(self, ghr):
        """
        Away from the boundary phi is psi and eta stays at zero.
        """
        X = PwLinearPath([0.0, 0.5, 1.0], [[1.0, 1.0], [2.0, 1.5], [2.0, 2.0]])
        esp = solve_esm(ghr.sp, X)
        psi = random_psi(0, X.times)
        sol = solve_dp(ghr.sp, esp, psi)
        np.testing.assert_allclose(sol.phi.values, psi.values, atol=1e-12)
        np.testing.assert_allclose(sol.eta.values, np.zeros((3, 2)), atol=1e-12)
        assert sol.events == []
        assert not sol.stopped

    def test_matches_one_dim_right_derivative(self, half_line):
        """
        In one dimension phi(t) is the right-continuous regularization of the derivative.
        """
        rng = np.random.default_rng(11)
        for _ in range(20):
            times = np.arange(9) / 4.0
            values = rng.standard_normal(9)
            values[0] = abs(values[0]) + 0.5
            f = PwLinearPath(times, values)
            g = PwLinearPath(times, rng.standard_normal(9))
            grid = merge_times(times, np.arange(33) / 16.0)
            esp = solve_esm(half_line, f, grid)
            sol = solve_dp(half_line, esp, g)
            expected = [nabla_gamma1_right(f, g, t) for t in sol.grid]
            np.testing.assert_allclose(sol.phi.values[:, 0], expected, atol=1e-9)

    def test_constant_psi_follows_projection_products(self, ghr):
        X = random_walk(5, drift=(-2.0, -2.0))
        esp = solve_esm(ghr.sp, X)
        psi = PwLinearPath.constant([1.0, -0.5])
        sol = solve_dp(ghr.sp, esp, psi)
        expected = np.array([1.0, -0.5])
        for k, faces in enumerate(esp.active_sets):
            expected = build_projection(ghr.sp, faces)(expected)
            np.testing.assert_allclose(sol.phi.values[k], expected, atol=1e-12)

    def test_left_values_are_pre_projection(self, normal_quadrant):
        X = PwLinearPath([0.0, 2.0], [[1.0, 1.0], [-1.0, 1.0]])
        esp = solve_esm(normal_quadrant.sp, X, np.arange(9) / 4.0)
        sol = solve_dp(normal_quadrant.sp, esp, PwLinearPath.constant([1.0, 0.0], horizon=2.0))
        assert [event.index for event in sol.events] == [4]
        np.testing.assert_array_equal(sol.phi.left_limit(1.0), [1.0, 0.0])
        np.testing.assert_array_equal(sol.phi(1.0), [0.0, 0.0])
        np.testing.assert_array_equal(sol.eta.jumps()[4], [-1.0, 0.0])

    def test_invalid_on_w(self, ghr):
        X = PwLinearPath([0.0, 1.0], [[1.0, 1.0], [2.0, 2.0]])
        esp = solve_esm(ghr.sp, X)
        with pytest.raises(InvalidDataError, match="on_w"):
            solve_dp(ghr.sp, esp, PwLinearPath.constant([0.0, 0.0]), on_w="ignore")


class TestStoppingOnW:
    """
    Test cases for the DP stopping time on the nonempty-W counter-example.
    """

    def test_stops_at_tau(self, d2):
        esp = solve_esm(d2.sp, d2.X, decompose=False)
        sol = solve_dp(d2.sp, esp, d2.psi)
        assert sol.stopped
        assert sol.tau == 1.0
        assert sol.grid[-1] < 1.0

    def test_raise_mode(self, d2):
        esp = solve_esm(d2.sp, d2.X, decompose=False)
        with pytest.raises(DerivativeUndefinedError) as info:
            solve_dp(d2.sp, esp, d2.psi, on_w="raise")
        assert info.value.tau == 1.0


class TestThetaZ:
    """
    Test cases for the left-limit regularization at smooth-boundary events.
    """

    def test_left_value_kept_when_in_g(self, normal_quadrant):
        """
        Hitting face 0 while the derivative points inward keeps the left value.
        """
        X = PwLinearPath([0.0, 2.0], [[1.0, 1.0], [-1.0, 1.0]])
        esp = solve_esm(normal_quadrant.sp, X, np.arange(9) / 4.0)
        sol = solve_dp(normal_quadrant.sp, esp, PwLinearPath.constant([1.0, 0.0], horizon=2.0))
        theta = theta_z(sol, normal_quadrant.sp, [1.0, 0.0])
        np.testing.assert_array_equal(theta(1.0), [1.0, 0.0])
        np.testing.assert_array_equal(theta(1.25), [0.0, 0.0])
        assert sol.theta is theta

    def test_left_limits_follow_substituted_values(self, normal_quadrant):
        """
        After the event the left limit restarts from the kept value.
        """
        X = PwLinearPath([0.0, 2.0], [[1.0, 1.0], [-1.0, 1.0]])
        esp = solve_esm(normal_quadrant.sp, X, np.arange(9) / 4.0)
        sol = solve_dp(normal_quadrant.sp, esp, PwLinearPath.constant([1.0, 0.0], horizon=2.0))
        theta = theta_z(sol, normal_quadrant.sp, [1.0, 0.0])
        np.testing.assert_array_equal(theta.left_limit(1.25), [1.0, 0.0])
        np.testing.assert_array_equal(theta.jumps()[4], [0.0, 0.0])
        np.testing.assert_array_equal(theta.jumps()[5], [-1.0, 0.0])

    def test_projected_value_when_left_leaves_g(self, normal_quadrant):
        X = PwLinearPath([0.0, 2.0], [[1.0, 1.0], [-1.0, 1.0]])
        esp = solve_esm(normal_quadrant.sp, X, np.arange(9) / 4.0)
        sol = solve_dp(normal_quadrant.sp, esp, PwLinearPath.constant([-1.0, 0.0], horizon=2.0))
        theta = theta_z(sol, normal_quadrant.sp, [-1.0, 0.0])
        np.testing.assert_array_equal(theta(1.0), [0.0, 0.0])
        np.testing.assert_array_equal(theta(0.0), [-1.0, 0.0])


class TestDpProperties:
    """
    Test cases for linearity, time-shift, Lipschitz bounds and the defining conditions.
    """

    def test_condition_residuals(self, ghr, corner_paths):
        corner_visits = 0
        for esp, psi in corner_paths:
            sol = solve_dp(ghr.sp, esp, psi)
            residuals = dp_condition_residuals(ghr.sp, esp, sol, psi)
            assert max(residuals.values()) <= 1e-9
            corner_visits += sum(1 for faces in esp.active_sets if len(faces) == 2)
        assert corner_visits > 0

    @pytest.mark.parametrize("alpha, beta", [(1.0, 0.0), (1.0, 1.0), (2.0, -1.0), (-1.0, 0.5)])
    def test_linearity(self, ghr, corner_paths, alpha, beta):
        for seed, (esp, psi1) in enumerate(corner_paths):
            psi2 = random_psi(2000 + seed, esp.grid)
            sol1, sol2 = solve_dp(ghr.sp, esp, psi1), solve_dp(ghr.sp, esp, psi2)
            assert dp_linearity_check(ghr.sp, esp, sol1, sol2, alpha, beta, psi1, psi2) <= 1e-9

    def test_time_shift(self, ghr, corner_paths):
        for esp, psi in corner_paths:
            assert dp_timeshift_check(ghr.sp, esp, psi, 0.0) <= 1e-12
            assert dp_timeshift_check(ghr.sp, esp, psi, float(esp.grid[256])) <= 1e-9

    def test_lipschitz_report(self, ghr):
        X = PwLinearPath([0.0, 1.0], [[1.0, 1.0], [2.0, 2.0]])
        esp = solve_esm(ghr.sp, X)
        psi = random_psi(3, X.times)
        assert dp_lipschitz_report(ghr.sp, esp, psi, psi) is None
        assert dp_lipschitz_report(ghr.sp, esp, psi, psi + 1.0) == pytest.approx(1.0)

