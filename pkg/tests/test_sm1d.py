import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skorokhod.errors import InvalidDataError
from skorokhod.paths import PwLinearPath, sup_norm
from skorokhod.sm1d import (
    complementarity_residual,
    f_functional,
    f_functional_limit,
    fd_oracle,
    gamma1,
    left_continuity_holds,
    nabla_gamma1,
    nabla_gamma1_right,
    phi_set,
)

lattice_values = st.lists(
    st.integers(min_value=-6, max_value=6).map(lambda k: k / 2.0), min_size=9, max_size=9
)


def lattice_path(values):
    """
    Path with breakpoints at multiples of 1/4 and half-integer values.
    """
    return PwLinearPath(np.arange(len(values)) / 4.0, values)


class TestGamma1:
    """
    Test cases for the one-dimensional Skorokhod map.
    """

    def test_pushes_only_at_zero(self):
        """
        f = 1 - 2t is regulated from t = 1/2 on.
        """
        f = PwLinearPath([0.0, 1.0], [1.0, -1.0])
        Z, Y = gamma1(f)
        np.testing.assert_array_equal(Z.times, [0.0, 0.5, 1.0])
        assert Z(0.25)[0] == 0.5
        assert Z(0.75)[0] == 0.0
        assert Y(0.5)[0] == 0.0
        assert Y(1.0)[0] == 1.0
        assert complementarity_residual(Z, Y) == 0.0

    def test_negative_start(self):
        Z, Y = gamma1(PwLinearPath([0.0, 1.0], [-1.0, 1.0]))
        assert Z(0.0)[0] == 0.0
        assert Y(1.0)[0] == 1.0
        assert Z(1.0)[0] == 2.0

    def test_rejects_vector_paths(self):
        with pytest.raises(InvalidDataError, match="1-D"):
            gamma1(PwLinearPath([0.0, 1.0], [[0.0, 1.0], [1.0, 0.0]]))

    @settings(max_examples=200, deadline=None)
    @given(lattice_values, lattice_values)
    def test_lipschitz_constant_two(self, a, b):
        """
        ||Gamma(f1) - Gamma(f2)|| <= 2 ||f1 - f2|| on every horizon.
        """
        f1, f2 = lattice_path(a), lattice_path(b)
        gap = sup_norm(gamma1(f1)[0] - gamma1(f2)[0])
        assert gap <= 2.0 * sup_norm(f1 - f2) + 1e-12


class TestArgmaxAndF:
    """
    Test cases for the argmax sets and the F functional.
    """

    def test_phi_set(self):
        f = PwLinearPath([0.0, 1.0, 2.0, 3.0], [0.0, -1.0, -1.0, 0.0])
        argmax = phi_set(f, 3.0)
        assert argmax.intervals == ((1.0, 2.0),)
        assert argmax.sup == 1.0
        assert not argmax.is_singleton
        assert phi_set(f, 0.5).is_singleton

    def test_f_cases(self):
        """
        F is 0 before -f reaches 0, a positive part when it touches 0 and -g on the argmax after.
        """
        f = PwLinearPath([0.0, 2.0], [1.0, -1.0])
        g = PwLinearPath.constant([1.0], horizon=2.0)
        assert f_functional(f, g, 0.5) == 0.0
        assert f_functional(f, g, 1.0) == 0.0
        assert f_functional(f, g, 1.5) == -1.0
        assert nabla_gamma1(f, g, 1.5) == 0.0

    def test_one_sided_limits(self):
        f = PwLinearPath([0.0, 2.0], [1.0, -1.0])
        g = PwLinearPath.constant([1.0], horizon=2.0)
        assert f_functional_limit(f, g, 1.0, "-") == 0.0
        assert f_functional_limit(f, g, 1.0, "+") == -1.0
        assert nabla_gamma1(f, g, 1.0) == 1.0
        assert nabla_gamma1_right(f, g, 1.0) == 0.0
        assert left_continuity_holds(f, g, 1.0)
        with pytest.raises(InvalidDataError, match="side"):
            f_functional_limit(f, g, 1.0, "left")

    def test_matches_finite_differences(self):
        """
        At singleton argmax times the derivative agrees with a small-eps difference quotient.
        """
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(200):
            f = lattice_path(rng.integers(-6, 7, size=9) / 2.0)
            g = lattice_path(rng.integers(-6, 7, size=9) / 2.0)
            for t in np.arange(1, 17) / 8.0:
                if not phi_set(f, t).is_singleton:
                    continue
                checked += 1
                assert abs(nabla_gamma1(f, g, t) - fd_oracle(f, g, t, 1e-5)) <= 1e-3
        assert checked > 100

    def test_oracle_rejects_nonpositive_eps(self):
        f = PwLinearPath([0.0, 1.0], [1.0, 0.0])
        with pytest.raises(InvalidDataError, match="eps"):
            fd_oracle(f, f, 0.5, 0.0)
