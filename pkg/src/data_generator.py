import os

import numpy as np

from skorokhod.fixtures import FIXTURES
from skorokhod.paths import PwLinearPath
from utils.io import write_frame, write_json

DATA_DIR = "data/inputs"


# Random walk input paths on a uniform grid
def generate_path(seed, dim=2, steps=256, horizon=1.0, start=None, drift=None):
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, horizon, steps + 1)
    start = np.full(dim, 0.5) if start is None else np.asarray(start, dtype=float)
    drift = np.full(dim, -1.0) if drift is None else np.asarray(drift, dtype=float)
    increments = rng.standard_normal((steps, dim)) * np.sqrt(horizon / steps)
    values = start + np.outer(times, drift)
    values[1:] += np.cumsum(increments, axis=0)
    return PwLinearPath(times, values)


# Perturbation paths: a constant offset plus a linear ramp
def generate_psi(seed, dim=2, horizon=1.0):
    rng = np.random.default_rng(seed)
    offset, slope = rng.standard_normal(dim), rng.standard_normal(dim)
    return PwLinearPath([0.0, horizon], [offset, offset + slope * horizon])


def generate_rbm_inputs():
    ghr = FIXTURES["ghr_quadrant"]()
    params = {
        "x": [0.5, 0.5],
        "b": [-0.5, -0.5],
        "sigma": [[1.0, 0.0], [0.0, 1.0]],
        "R": ghr.sp.directions.T.tolist(),
    }
    # y, c, theta and V all nonzero
    mixed = {
        "y": [0.3, -0.2],
        "c": [0.5, 0.25],
        "theta": [[0.1, 0.0], [0.05, 0.2]],
        "V": [[0.0, 0.1], [-0.1, 0.0]],
    }
    reflection_only = {"V": [[0.0, 0.2], [0.1, 0.0]]}
    return params, mixed, reflection_only


if __name__ == "__main__":
    os.makedirs(DATA_DIR, exist_ok=True)

    # SP data and B polytopes for every fixture
    for name, build in FIXTURES.items():
        fixture = build()
        write_json(fixture.sp.to_json(), os.path.join(DATA_DIR, f"sp-{name}.json"))
        if fixture.B is not None:
            write_json(fixture.B.to_json(), os.path.join(DATA_DIR, f"b-{name}.json"))

    params, mixed, reflection_only = generate_rbm_inputs()
    write_json(params, os.path.join(DATA_DIR, "params-ghr.json"))
    write_json(mixed, os.path.join(DATA_DIR, "pert-mixed.json"))
    write_json(reflection_only, os.path.join(DATA_DIR, "pert-reflection.json"))

    for seed in range(5):
        write_frame(generate_path(seed).to_frame(), os.path.join(DATA_DIR, f"path-{seed}.csv"))
        write_frame(generate_psi(seed).to_frame(), os.path.join(DATA_DIR, f"psi-{seed}.csv"))
