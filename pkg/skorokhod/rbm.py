"""
Reflected Brownian motion in the nonnegative quadrant, its pathwise derivatives
through the derivative problem, common-random-number finite differences and
boundary-jitter diagnostics.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from skorokhod.dp import DpSolution, solve_dp, theta_z
from skorokhod.errors import EpsilonTooLargeError, InvalidDataError
from skorokhod.esm import EspSolution, shared_node_gap, solve_esm
from skorokhod.geometry import SPData, nabla_pi, q_matrix
from skorokhod.paths import CadlagStepPath, PwLinearPath, uniform_times
from utils.config import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# raw + 1/2 stays exact in float64 with 52 random bits
UNIFORM_BITS = 52

NOISE_FLOOR = 1e-9


def _array(value, shape, name):
    arr = np.array(value, dtype=float)
    if arr.shape != shape:
        raise InvalidDataError(f"{name}: shape {arr.shape} is invalid (expected {shape}).")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RbmParams:
    x: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    R: np.ndarray
    validation_errors: List[str] = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "x", _array(self.x, (2,), "x"))
        object.__setattr__(self, "b", _array(self.b, (2,), "b"))
        object.__setattr__(self, "sigma", _array(self.sigma, (2, 2), "sigma"))
        object.__setattr__(self, "R", _array(self.R, (2, 2), "R"))

    @property
    def directions(self):
        return self.R.T

    @property
    def sp(self) -> SPData:
        return SPData(
            normals=np.eye(2), offsets=np.zeros(2), directions=self.directions, family="orthant"
        )

    def validate(self):
        self.validation_errors.clear()
        if np.any(self.x < 0):
            self.validation_errors.append(f"x: {self.x.tolist()} is outside the quadrant.")
        diagonal = np.diag(self.R)
        if np.any(np.abs(diagonal - 1.0) > 1e-12):
            self.validation_errors.append(
                f"R: diagonal {diagonal.tolist()} violates <d_i, e_i> = 1."
            )
        else:
            _, rho = q_matrix(self.sp)
            if rho >= 1.0:
                self.validation_errors.append(f"R: spectral radius {rho:.6f} of Q is not below 1.")
        return not self.validation_errors

    def checked(self):
        if not self.validate():
            raise InvalidDataError(" ".join(self.validation_errors))
        return self

    @classmethod
    def from_json(cls, document):
        try:
            params = cls(document["x"], document["b"], document["sigma"], document["R"])
        except KeyError as e:
            raise InvalidDataError(f"{e.args[0]}: missing field is invalid.") from e
        return params.checked()

    def to_json(self):
        return {
            "x": self.x.tolist(),
            "b": self.b.tolist(),
            "sigma": self.sigma.tolist(),
            "R": self.R.tolist(),
        }


@dataclass(frozen=True, eq=False)
class Perturbation:
    y: np.ndarray
    c: np.ndarray
    theta: np.ndarray
    V: np.ndarray
    validation_errors: List[str] = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "y", _array(self.y, (2,), "y"))
        object.__setattr__(self, "c", _array(self.c, (2,), "c"))
        object.__setattr__(self, "theta", _array(self.theta, (2, 2), "theta"))
        object.__setattr__(self, "V", _array(self.V, (2, 2), "V"))

    @classmethod
    def zero(cls):
        return cls(np.zeros(2), np.zeros(2), np.zeros((2, 2)), np.zeros((2, 2)))

    def validate(self, params: Optional[RbmParams] = None):
        self.validation_errors.clear()
        if np.any(np.diag(self.V) != 0.0):
            self.validation_errors.append(
                f"V: diagonal {np.diag(self.V).tolist()} must be zero (<v_i, n_i> = 0)."
            )
        if params is not None:
            blocked = (params.x == 0.0) & (self.y < 0.0)
            if np.any(blocked):
                self.validation_errors.append(
                    f"y: {self.y.tolist()} leaves the quadrant from x = {params.x.tolist()}."
                )
        return not self.validation_errors

    def checked(self, params=None):
        if not self.validate(params):
            raise InvalidDataError(" ".join(self.validation_errors))
        return self

    def combine(self, other, alpha=1.0, beta=1.0):
        return Perturbation(
            alpha * self.y + beta * other.y,
            alpha * self.c + beta * other.c,
            alpha * self.theta + beta * other.theta,
            alpha * self.V + beta * other.V,
        )

    @classmethod
    def from_json(cls, document):
        zeros = {"y": [0.0, 0.0], "c": [0.0, 0.0], "theta": [[0.0] * 2] * 2, "V": [[0.0] * 2] * 2}
        merged = {**zeros, **document}
        return cls(merged["y"], merged["c"], merged["theta"], merged["V"]).checked()

    def to_json(self):
        return {
            "y": self.y.tolist(),
            "c": self.c.tolist(),
            "theta": self.theta.tolist(),
            "V": self.V.tolist(),
        }


@dataclass(frozen=True, eq=False)
class SamplePath:
    params: RbmParams
    seed: int
    grid: np.ndarray
    increments: np.ndarray
    W: np.ndarray
    X: PwLinearPath
    esp: EspSolution

    @property
    def face_tol(self):
        return self.esp.tol


def uniform_grid(horizon: float, dt: float) -> np.ndarray:
    return uniform_times(horizon, dt)


def gaussian_increments(seed: int, grid) -> np.ndarray:
    """
    Brownian increments over the grid from a Philox stream keyed by the seed.

    Entry (k, j) always consumes the same counter position, so any run with
    the same seed and step count sees identical noise.
    """
    grid = np.asarray(grid, dtype=float)
    steps = grid.size - 1
    generator = np.random.Generator(np.random.Philox(key=int(seed)))
    raw = generator.integers(0, 2**UNIFORM_BITS, size=(steps, 2), dtype=np.int64)
    uniforms = (raw.astype(float) + 0.5) / 2.0**UNIFORM_BITS
    return norm.ppf(uniforms) * np.sqrt(np.diff(grid))[:, None]


def face_tolerance(params: RbmParams, grid) -> float:
    dt = float(np.max(np.diff(grid))) if len(grid) > 1 else 0.0
    scale = DEFAULT_TOLERANCES.rbm_face_scale * float(np.linalg.norm(params.sigma, 2)) * np.sqrt(dt)
    return max(scale, DEFAULT_TOLERANCES.snap)


def _input_values(params: RbmParams, grid, W):
    return params.x + np.outer(grid, params.b) + W @ params.sigma.T


def simulate_rbm(params: RbmParams, grid, seed: int, decompose: bool = True) -> SamplePath:
    params.checked()
    grid = np.asarray(grid, dtype=float)
    increments = gaussian_increments(seed, grid)
    W = np.vstack([np.zeros((1, 2)), np.cumsum(increments, axis=0)])
    X = PwLinearPath(grid, _input_values(params, grid, W))
    esp = solve_esm(params.sp, X, grid, tol=face_tolerance(params, grid), decompose=decompose)
    return SamplePath(params, int(seed), grid, increments, W, X, esp)


def perturbation_input(path: SamplePath, pert: Perturbation) -> PwLinearPath:
    """
    psi = y + c t + theta W + V L on the grid.
    """
    if path.esp.L is None:
        raise InvalidDataError("path: local times are required (simulate with decompose=True).")
    values = pert.y + np.outer(path.grid, pert.c) + path.W @ pert.theta.T
    values = values + path.esp.L.values @ pert.V.T
    return PwLinearPath(path.grid, values)


def derivative_solution(path: SamplePath, pert: Perturbation) -> DpSolution:
    pert.checked(path.params)
    sp = path.params.sp
    psi = perturbation_input(path, pert)
    sol = solve_dp(sp, path.esp, psi, on_w="raise")
    theta_z(sol, sp, nabla_pi(sp, path.params.x, pert.y, path.face_tol))
    return sol


def pathwise_derivative(path: SamplePath, pert: Perturbation) -> CadlagStepPath:
    return derivative_solution(path, pert).theta


def perturbed_params(params: RbmParams, pert: Perturbation, eps: float) -> RbmParams:
    perturbed = RbmParams(
        params.x + eps * pert.y,
        params.b + eps * pert.c,
        params.sigma + eps * pert.theta,
        params.R + eps * pert.V,
    )
    if not perturbed.validate():
        raise EpsilonTooLargeError(
            f"eps: {eps!r} leaves the assumptions ({' '.join(perturbed.validation_errors)})"
        )
    return perturbed


def fd_derivative(path: SamplePath, pert: Perturbation, eps: float) -> PwLinearPath:
    """
    (Z^eps - Z) / eps, re-simulated with the same Brownian increments.
    """
    shifted = perturbed_params(path.params, pert, eps)
    X = PwLinearPath(path.grid, _input_values(shifted, path.grid, path.W))
    sol = solve_esm(shifted.sp, X, path.grid, tol=path.face_tol, decompose=False)
    return PwLinearPath(path.grid, (sol.Z.values - path.esp.Z.values) / eps)


def event_mask(sol: DpSolution, size: int, window: int) -> np.ndarray:
    keep = np.ones(size, dtype=bool)
    for event in sol.events:
        keep[max(event.index - window, 0) : event.index + window + 1] = False
    return keep


def fd_error(
    path: SamplePath,
    pert: Perturbation,
    eps_list: Sequence[float],
    window: int = 1,
    sol: DpSolution = None,
) -> Dict[float, float]:
    """
    E(eps): largest |fd(eps) - grad Z| over grid times more than `window`
    steps away from the derivative's events.
    """
    sol = derivative_solution(path, pert) if sol is None else sol
    keep = event_mask(sol, path.grid.size, window)
    errors = {}
    for eps in eps_list:
        try:
            fd = fd_derivative(path, pert, eps)
        except EpsilonTooLargeError as e:
            logger.warning("Skipping eps = %s on seed %d: %s", eps, path.seed, e)
            errors[eps] = float("nan")
            continue
        gap = np.linalg.norm(fd.values - sol.theta.values, axis=1)
        errors[eps] = float(gap[keep].max()) if np.any(keep) else 0.0
    return errors


def errors_decreasing(errors: Dict[float, float], floor: float = NOISE_FLOOR) -> bool:
    """
    True when E strictly decreases along decreasing eps; values at or below
    the floor count as converged.
    """
    ordered = [errors[eps] for eps in sorted(errors, reverse=True)]
    if any(np.isnan(e) for e in ordered):
        return False
    return all(nxt <= floor or nxt < prev for prev, nxt in zip(ordered[:-1], ordered[1:]))


@dataclass
class JitterReport:
    boundary_steps: int
    constant_y_fraction: float
    corner_time_fraction: float
    corner_hits: int
    visited_before_fraction: float
    visited_after_fraction: float
    flags: List[str] = field(default_factory=list)

    def as_dict(self):
        return {
            "boundary_steps": self.boundary_steps,
            "constant_y_fraction": self.constant_y_fraction,
            "corner_time_fraction": self.corner_time_fraction,
            "corner_hits": self.corner_hits,
            "visited_before_fraction": self.visited_before_fraction,
            "visited_after_fraction": self.visited_after_fraction,
            "flags": list(self.flags),
        }


def corner_time_fraction(path: SamplePath) -> float:
    steps = np.diff(path.grid)
    corner = np.array([len(faces) >= 2 for faces in path.esp.active_sets[1:]])
    return float(steps[corner].sum() / path.grid[-1]) if steps.size else 0.0


def _visited_alone(active_sets, lo, hi, faces):
    window = active_sets[max(lo, 0) : max(hi, 0)]
    return all(any(tuple(s) == (i,) for s in window) for i in faces)


def jitter_diagnostics(path: SamplePath, window_count: int = 3) -> JitterReport:
    """
    Grid-scale proxies for the boundary jitter conditions. Advisory only.
    """
    active = path.esp.active_sets
    y_steps = np.linalg.norm(np.diff(path.esp.Y.values, axis=0), axis=1)
    n = len(active)

    boundary = [k for k in range(1, n) if active[k]]
    constant = 0
    for k in boundary:
        if np.all(y_steps[k - 1 : k + 1] <= 1e-15):
            constant += 1
    constant_fraction = constant / len(boundary) if boundary else 0.0

    corners = [k for k in range(1, n) if len(active[k]) >= 2]
    widths = [2 ** (window_count - j) for j in range(window_count)]
    before = after = 0
    for k in corners:
        faces = range(path.params.sp.num_faces)
        if all(_visited_alone(active, k - w, k, faces) for w in widths):
            before += 1
        if all(_visited_alone(active, k + 1, k + 1 + w, faces) for w in widths):
            after += 1

    report = JitterReport(
        boundary_steps=len(boundary),
        constant_y_fraction=constant_fraction,
        corner_time_fraction=corner_time_fraction(path),
        corner_hits=len(corners),
        visited_before_fraction=before / len(corners) if corners else 1.0,
        visited_after_fraction=after / len(corners) if corners else 1.0,
    )
    if constant_fraction > 0.5:
        report.flags.append("constant_y_on_boundary")
    if report.corner_time_fraction > 0.01:
        report.flags.append("corner_time")
    for flag in report.flags:
        logger.warning("Jitter proxy %s failed on seed %d", flag, path.seed)
    return report


@dataclass
class BatchSummary:
    eps_list: List[float]
    errors: Dict[int, Dict[float, float]]
    decreasing: Dict[int, bool]
    jitter: Dict[int, dict]

    @property
    def decreasing_fraction(self):
        return sum(self.decreasing.values()) / len(self.decreasing) if self.decreasing else 0.0

    @property
    def mean_corner_time_fraction(self):
        values = [j["corner_time_fraction"] for j in self.jitter.values()]
        return float(np.mean(values)) if values else 0.0

    def as_dict(self):
        return {
            "eps": self.eps_list,
            "decreasing_fraction": self.decreasing_fraction,
            "mean_corner_time_fraction": self.mean_corner_time_fraction,
            "paths": [
                {
                    "seed": seed,
                    "errors": {repr(eps): e for eps, e in self.errors[seed].items()},
                    "decreasing": self.decreasing[seed],
                    "jitter": self.jitter[seed],
                }
                for seed in sorted(self.errors)
            ],
        }


def path_frame(path: SamplePath, theta: CadlagStepPath, fds: Dict[float, PwLinearPath]):
    frame = pd.DataFrame({"t": path.grid})
    for i in range(2):
        frame[f"z_{i + 1}"] = path.esp.Z.values[:, i]
    for i in range(2):
        frame[f"dz_{i + 1}"] = theta.values[:, i]
    for eps, fd in fds.items():
        for i in range(2):
            frame[f"fd_{eps:g}_{i + 1}"] = fd.values[:, i]
    return frame


def run_seed(params, pert, grid, seed, eps_list, window=1, output_dir=None, window_count=3):
    path = simulate_rbm(params, grid, seed)
    sol = derivative_solution(path, pert)
    errors = fd_error(path, pert, eps_list, window, sol)
    jitter = jitter_diagnostics(path, window_count)
    if output_dir is not None:
        fds = {eps: fd_derivative(path, pert, eps) for eps in eps_list if not np.isnan(errors[eps])}
        frame = path_frame(path, sol.theta, fds)
        frame.to_csv(
            os.path.join(output_dir, f"rbm-seed-{seed}.csv"), index=False, float_format="%.17g"
        )
    return seed, errors, jitter.as_dict()


def _run_seed_args(args):
    return run_seed(*args)


def run_batch(
    params: RbmParams,
    pert: Perturbation,
    seeds: Sequence[int],
    grid,
    eps_list: Sequence[float],
    window: int = 1,
    workers: int = 1,
    output_dir: Optional[str] = None,
) -> BatchSummary:
    jobs = [(params, pert, grid, seed, list(eps_list), window, output_dir) for seed in seeds]
    if workers <= 1:
        results = [_run_seed_args(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_run_seed_args, jobs))

    results.sort(key=lambda item: item[0])
    errors = {seed: err for seed, err, _ in results}
    summary = BatchSummary(
        eps_list=list(eps_list),
        errors=errors,
        decreasing={seed: errors_decreasing(err) for seed, err in errors.items()},
        jitter={seed: jit for seed, _, jit in results},
    )
    logger.info(
        "RBM batch of %d paths: %.1f%% with decreasing finite-difference error",
        len(results),
        100.0 * summary.decreasing_fraction,
    )
    return summary


def _coarsened(path: SamplePath, stride: int) -> EspSolution:
    grid = path.grid[::stride]
    X = PwLinearPath(grid, _input_values(path.params, grid, path.W[::stride]))
    return solve_esm(path.params.sp, X, grid, tol=face_tolerance(path.params, grid), decompose=False)


def brownian_refinement(
    params: RbmParams,
    seeds: Sequence[int],
    dts: Sequence[float],
    reference_dt: float = 2.0**-14,
    horizon: float = 1.0,
) -> pd.DataFrame:
    """
    Grid refinement of the quadrant ESM driven by one Brownian path per seed.

    Each coarse input samples the reference path's Brownian motion at every
    stride-th node, so all grids share the noise. `error` is the largest
    nodal gap to the reference solution and `successive` the gap to the next
    finer grid at the shared nodes, both averaged over the seeds.
    """
    fine = uniform_grid(horizon, reference_dt)
    strides = []
    for dt in sorted({float(dt) for dt in dts}, reverse=True):
        stride = int(round(dt / reference_dt))
        if stride < 1 or stride * reference_dt != dt or (fine.size - 1) % stride:
            raise InvalidDataError(f"dt: {dt!r} is invalid (a multiple of {reference_dt!r} dividing the horizon).")
        strides.append(stride)

    errors = np.zeros((len(seeds), len(strides)))
    successive = np.full((len(seeds), len(strides)), np.nan)
    for s, seed in enumerate(seeds):
        reference = simulate_rbm(params, fine, seed, decompose=False)
        solutions = [_coarsened(reference, stride) for stride in strides]
        for k, (stride, sol) in enumerate(zip(strides, solutions)):
            errors[s, k] = float(np.abs(sol.Z.values - reference.esp.Z.values[::stride]).max())
            if k + 1 < len(solutions):
                successive[s, k] = shared_node_gap(sol, solutions[k + 1])

    table = pd.DataFrame(
        {
            "dt": [stride * reference_dt for stride in strides],
            "error": errors.mean(axis=0),
            "successive": successive.mean(axis=0),
        }
    )
    logger.info("Brownian grid refinement over %d seeds on %d grids", len(seeds), len(strides))
    return table


def _jitter_job(args):
    params, grid, seed, window_count = args
    path = simulate_rbm(params, grid, seed, decompose=False)
    return jitter_diagnostics(path, window_count).as_dict()


def jitter_trend(
    params: RbmParams,
    seeds: Sequence[int],
    dts: Sequence[float],
    horizon: float = 1.0,
    window_count: int = 3,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Jitter proxies averaged over the seeds, one row per grid step.
    """
    rows = []
    for dt in sorted({float(dt) for dt in dts}, reverse=True):
        grid = uniform_grid(horizon, dt)
        jobs = [(params, grid, seed, window_count) for seed in seeds]
        if workers <= 1:
            reports = [_jitter_job(job) for job in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                reports = list(executor.map(_jitter_job, jobs))
        frame = pd.DataFrame(reports)
        rows.append(
            {
                "dt": dt,
                "seeds": len(reports),
                "corner_time_fraction": float(frame["corner_time_fraction"].mean()),
                "constant_y_fraction": float(frame["constant_y_fraction"].mean()),
                "corner_hits": float(frame["corner_hits"].mean()),
                "visited_before_fraction": float(frame["visited_before_fraction"].mean()),
                "visited_after_fraction": float(frame["visited_after_fraction"].mean()),
            }
        )
    return pd.DataFrame(rows)
