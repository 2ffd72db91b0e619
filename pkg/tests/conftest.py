import numpy as np
import pytest

from skorokhod.fixtures import (
    build_d1_esp,
    build_d2_counterexample,
    build_ghr_example,
    build_normal_quadrant,
)
from skorokhod.geometry import SPData
from skorokhod.paths import PwLinearPath


@pytest.fixture
def ghr():
    """Oblique quadrant with d_1 = (1, -1), d_2 = (1/2, 1)."""
    return build_ghr_example()


@pytest.fixture
def normal_quadrant():
    return build_normal_quadrant()


@pytest.fixture
def d2():
    # k_max = 10 keeps every Z(t_n) well above the face tolerance before t = 1
    return build_d2_counterexample(10)


@pytest.fixture
def d1():
    return build_d1_esp()


@pytest.fixture
def half_line():
    return SPData([[1.0]], [0.0], [[1.0]], family="one_dim").checked()


@pytest.fixture
def output_dir(tmp_path):
    return str(tmp_path / "runs")


def random_walk(seed, steps=256, start=(0.5, 0.5), drift=(-1.0, -1.0), scale=1.0, horizon=1.0):
    """
    Piecewise-linear random walk on a uniform grid.
    """
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, horizon, steps + 1)
    values = np.asarray(start, dtype=float) + np.outer(times, drift)
    noise = rng.standard_normal((steps, len(start))) * scale * np.sqrt(horizon / steps)
    values[1:] += np.cumsum(noise, axis=0)
    return PwLinearPath(times, values)
