"""
Extended Skorokhod map for piecewise-linear inputs by projection time-stepping,
plus the Y = RL local-time decomposition and the invariant checks built on it.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.linalg import orth

from skorokhod.errors import DecompositionError, DomainViolationError, InvalidDataError, TraceError
from skorokhod.geometry import FaceSet, SPData, _is_unit_quadrant, orthant2_step, project_pi
from skorokhod.paths import PwLinearPath, merge_times, sup_norm, time_shift, uniform_times
from skorokhod.sm1d import gamma1
from utils.config import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


@dataclass(frozen=True, eq=False)
class EspSolution:
    X: PwLinearPath
    Z: PwLinearPath
    Y: PwLinearPath
    L: Optional[PwLinearPath]
    grid: np.ndarray
    active_sets: List[FaceSet]
    face_trace: List[FaceSet]
    tol: float

    @property
    def horizon(self):
        return float(self.grid[-1])

    def index_of(self, S):
        idx = int(np.searchsorted(self.grid, S))
        if idx >= self.grid.size or self.grid[idx] != S:
            raise InvalidDataError(f"S: {S!r} is not a grid time.")
        return idx

    def shifted(self, index):
        """
        The solution on [grid[index], T], re-based so that it starts at time 0.
        """
        S = float(self.grid[index])
        grid = self.grid[index:] - S
        z_start = self.Z.values[index]
        L = None
        if self.L is not None:
            L = PwLinearPath(grid, self.L.values[index:] - self.L.values[index])
        return replace(
            self,
            X=time_shift(self.X, S, z_start),
            Z=PwLinearPath(grid, self.Z.values[index:]),
            Y=PwLinearPath(grid, self.Y.values[index:] - self.Y.values[index]),
            L=L,
            grid=grid,
            active_sets=self.active_sets[index:],
            face_trace=self.face_trace[index:],
        )

    def to_frame(self) -> pd.DataFrame:
        """
        Columns t, x_i, z_i, y_i, l_i (when decomposed) and the active set label per grid time.
        """
        frame = pd.DataFrame({"t": self.grid})
        parts = [("x", self.X.values_at(self.grid)), ("z", self.Z.values), ("y", self.Y.values)]
        if self.L is not None:
            parts.append(("l", self.L.values))
        for prefix, values in parts:
            for i in range(values.shape[1]):
                frame[f"{prefix}_{i + 1}"] = values[:, i]
        frame["faces"] = [faces.label for faces in self.active_sets]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, tol: float = None):
        tol = DEFAULT_TOLERANCES.face if tol is None else tol
        if "faces" not in frame.columns:
            raise InvalidDataError("frame: column faces is required.")
        grid = frame["t"].to_numpy(dtype=float)
        X = PwLinearPath.from_frame(frame, prefix="x_")
        Z = PwLinearPath.from_frame(frame, prefix="z_")
        Y = PwLinearPath.from_frame(frame, prefix="y_")
        L = PwLinearPath.from_frame(frame, prefix="l_") if "l_1" in frame.columns else None
        active = [FaceSet.parse(label) for label in frame["faces"].astype(str)]
        return cls(X, Z, Y, L, grid, active, trace_of(active), tol)


def _solve_grid(sp: SPData, X: PwLinearPath, grid) -> np.ndarray:
    if grid is None:
        return X.times
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise InvalidDataError("grid: an empty grid is invalid.")
    return merge_times(grid, X.times[X.times <= grid.max()], [0.0])


def _step_quadrant(sp, xs):
    d1, d2 = (tuple(float(v) for v in d) for d in sp.directions)
    c1, c2 = (float(c) for c in sp.offsets)
    z1, z2 = orthant2_step(float(xs[0, 0]), float(xs[0, 1]), d1, d2, c1, c2)
    out = [(z1, z2)]
    for dx1, dx2 in np.diff(xs, axis=0).tolist():
        z1, z2 = orthant2_step(z1 + dx1, z2 + dx2, d1, d2, c1, c2)
        out.append((z1, z2))
    return np.array(out)


def _step_generic(sp, xs):
    z = np.empty_like(xs)
    z[0] = project_pi(sp, xs[0])
    for k in range(1, xs.shape[0]):
        z[k] = project_pi(sp, z[k - 1] + (xs[k] - xs[k - 1]))
    return z


def step_tolerances(xs: np.ndarray, tol: float) -> np.ndarray:
    """
    tol * max(1, |X(t_k) - X(t_{k-1})|) per grid point; the first point scales with |X(0)|.
    """
    increments = np.diff(xs, axis=0, prepend=np.zeros((1, xs.shape[1])))
    return tol * np.maximum(1.0, np.linalg.norm(increments, axis=1))


def active_sets_of(sp: SPData, z: np.ndarray, tol) -> List[FaceSet]:
    """
    Active face set of every row of z. `tol` is a scalar or one tolerance per row.
    """
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (z.shape[0],))
    slack = z @ sp.normals.T - sp.offsets
    worst = slack.min(axis=1)
    if np.any(worst < -tol):
        k = int(np.argmax(tol + worst < 0))
        raise DomainViolationError(
            f"Z: {z[k].tolist()} at step {k} is outside G (slack {worst[k]:.3e})."
        )
    masks = np.abs(slack) <= tol[:, None]
    cache: Dict[bytes, FaceSet] = {}
    sets = []
    for row in masks:
        key = row.tobytes()
        if key not in cache:
            cache[key] = FaceSet(np.flatnonzero(row))
        sets.append(cache[key])
    return sets


def trace_of(active_sets: List[FaceSet]) -> List[FaceSet]:
    return [a.union(b) for a, b in zip(active_sets[:-1], active_sets[1:])]


def solve_esm(
    sp: SPData,
    X: PwLinearPath,
    grid=None,
    tol: Optional[float] = None,
    decompose: bool = True,
) -> EspSolution:
    tol = DEFAULT_TOLERANCES.face if tol is None else tol
    grid = _solve_grid(sp, X, grid)
    xs = X.values_at(grid)

    z = _step_quadrant(sp, xs) if _is_unit_quadrant(sp) else _step_generic(sp, xs)
    y = z - xs
    # rounding in pi grows with the size of the step it resolves
    active = active_sets_of(sp, z, step_tolerances(xs, tol))
    trace = trace_of(active)

    Z = PwLinearPath(grid, z)
    Y = PwLinearPath(grid, y)
    L = decompose_local_times(sp, Z, Y, trace, initial_faces=active[0]) if decompose else None

    logger.debug(
        "ESM solved on %d grid points (%d boundary steps)",
        grid.size,
        sum(1 for faces in trace if faces),
    )
    return EspSolution(X, Z, Y, L, grid, active, trace, tol)


def decompose_local_times(
    sp: SPData,
    Z: PwLinearPath,
    Y: PwLinearPath,
    face_trace: List[FaceSet],
    initial_faces: Optional[FaceSet] = None,
    tolerances=DEFAULT_TOLERANCES,
) -> PwLinearPath:
    """
    Expands each step increment of Y over the directions of the step's faces.

    Steps sharing a face set are solved together in one least-squares call.
    """
    y = Y.values_at(Z.times)
    steps = np.vstack([y[:1], np.diff(y, axis=0)])
    faces_per_step = [FaceSet(initial_faces or ())] + list(face_trace)
    if len(faces_per_step) != steps.shape[0]:
        raise TraceError(
            f"face_trace: {len(face_trace)} intervals for {Z.times.size} grid points is invalid."
        )

    groups: Dict[FaceSet, List[int]] = {}
    for k, faces in enumerate(faces_per_step):
        groups.setdefault(faces, []).append(k)

    increments = np.zeros((steps.shape[0], sp.num_faces))
    for faces, rows in groups.items():
        rhs = steps[rows]
        if not faces:
            residual = np.linalg.norm(rhs, axis=1)
            coeffs = np.zeros((len(rows), 0))
        else:
            D = sp.directions[list(faces)].T
            solution, *_ = np.linalg.lstsq(D, rhs.T, rcond=None)
            coeffs = solution.T
            residual = np.linalg.norm(coeffs @ D.T - rhs, axis=1)

        bad = residual > tolerances.decomposition
        if np.any(bad):
            k = rows[int(np.argmax(bad))]
            raise DecompositionError(
                f"face_trace: step {k} with faces {faces!r} leaves residual "
                f"{residual.max():.3e} (trace too coarse or directions dependent)."
            )
        if coeffs.size and coeffs.min() < -tolerances.clip:
            k = rows[int(np.argmin(coeffs.min(axis=1)))]
            raise DecompositionError(
                f"L: increment {coeffs.min():.3e} at step {k} violates nondecreasing local time."
            )
        if faces:
            increments[np.ix_(rows, list(faces))] = np.maximum(coeffs, 0.0)

    return PwLinearPath(Z.times, np.cumsum(increments, axis=0))


def _common_grid(X1, X2, T, grid):
    parts = [X1.times, X2.times, [T]]
    if grid is not None:
        parts.append(grid)
    times = merge_times(*parts)
    return times[times <= T]


def _ratio(numerator, denominator, name):
    if denominator <= 0.0:
        raise InvalidDataError(f"{name}: inputs coincide on [0, T]; the ratio is undefined.")
    return numerator / denominator


def lipschitz_report(sp: SPData, X1, X2, T, grid=None, tol=None) -> float:
    times = _common_grid(X1, X2, T, grid)
    sol1 = solve_esm(sp, X1, times, tol, decompose=False)
    sol2 = solve_esm(sp, X2, times, tol, decompose=False)
    return _ratio(sup_norm(sol1.Z - sol2.Z, T), sup_norm(X1 - X2, T), "X")


def local_time_lipschitz_report(sp: SPData, X1, X2, T, grid=None, tol=None) -> float:
    times = _common_grid(X1, X2, T, grid)
    sol1 = solve_esm(sp, X1, times, tol)
    sol2 = solve_esm(sp, X2, times, tol)
    return _ratio(sup_norm(sol1.L - sol2.L, T), sup_norm(X1 - X2, T), "X")


def projected_lipschitz_check(sp: SPData, X1, X2, faces, T, grid=None, tol=None):
    """
    ||P_I(Z1 - Z2)||_T / ||P_I(X1 - X2)||_T with P_I the orthogonal projection
    onto span{n_i : i in I}; None when I is empty.
    """
    faces = FaceSet(faces, sp.num_faces)
    times = _common_grid(X1, X2, T, grid)
    sol1 = solve_esm(sp, X1, times, tol, decompose=False)
    sol2 = solve_esm(sp, X2, times, tol, decompose=False)
    for label, sol in (("X1", sol1), ("X2", sol2)):
        outside = [f for f in sol.face_trace if not set(f) <= set(faces)]
        if outside:
            raise TraceError(f"{label}: face trace {outside[0]!r} is not contained in {faces!r}.")
    if not faces:
        return None

    basis = orth(sp.normals[list(faces)].T)
    projector = basis @ basis.T
    dz = (sol1.Z - sol2.Z).values @ projector
    dx = (sol1.X - sol2.X).truncate(T).values @ projector
    return _ratio(
        float(np.linalg.norm(dz, axis=1).max()), float(np.linalg.norm(dx, axis=1).max()), "X"
    )


def esm_timeshift_check(sp: SPData, X: PwLinearPath, sol: EspSolution, S: float) -> float:
    """
    Re-solves from (S, Z(S)) with the shifted input and returns the largest
    deviation from the original Z on [S, T] at shared grid points.
    """
    idx = sol.index_of(S)
    shifted_input = time_shift(X, S, sol.Z.values[idx])
    grid = sol.grid[idx:] - S
    resolved = solve_esm(sp, shifted_input, grid, sol.tol, decompose=False)
    return float(np.abs(resolved.Z.values_at(grid) - sol.Z.values[idx:]).max())


def invariant_residuals(sp: SPData, X: PwLinearPath, sol: EspSolution) -> Dict[str, float]:
    xs = X.values_at(sol.grid)
    z, y = sol.Z.values, sol.Y.values
    slack = z @ sp.normals.T - sp.offsets
    residuals = {
        "z_equals_x_plus_y": float(np.abs(z - xs - y).max()),
        "z_in_g": float(max(0.0, -slack.min())),
    }
    if sol.L is None:
        return residuals

    dl = np.diff(sol.L.values, axis=0)
    off_trace = 0.0
    for k, faces in enumerate(sol.face_trace):
        idle = [i for i in range(sp.num_faces) if i not in faces]
        if idle:
            off_trace = max(off_trace, float(np.abs(dl[k, idle]).max()))
    residuals.update(
        {
            "l_nondecreasing": float(max(0.0, -dl.min())) if dl.size else 0.0,
            "l_complementarity": off_trace,
            "y_equals_rl": float(np.abs(y - sol.L.values @ sp.directions).max()),
        }
    )
    return residuals


def fd_quotient(
    sp: SPData, X: PwLinearPath, psi: PwLinearPath, eps: float, base: EspSolution
) -> PwLinearPath:
    """
    (Gamma(X + eps psi) - Gamma(X)) / eps on the grid of `base`.
    """
    if eps <= 0:
        raise InvalidDataError(f"eps: {eps!r} is invalid (must be positive).")
    shifted = solve_esm(sp, X + eps * psi, base.grid, base.tol, decompose=False)
    return PwLinearPath(base.grid, (shifted.Z.values_at(base.grid) - base.Z.values) / eps)


def shared_node_gap(coarse: EspSolution, fine: EspSolution) -> float:
    """
    Largest |Z_coarse - Z_fine| over the coarse grid times.

    Raises:
        InvalidDataError: If the coarse grid is not contained in the fine one.
    """
    idx = np.minimum(np.searchsorted(fine.grid, coarse.grid), fine.grid.size - 1)
    if not np.array_equal(fine.grid[idx], coarse.grid):
        raise InvalidDataError("grid: the coarse grid is not nested in the fine grid.")
    return float(np.abs(coarse.Z.values - fine.Z.values[idx]).max())


def convergence_slope(dts, errors) -> float:
    """
    Least-squares slope of log(error) against log(dt); zero errors are left out.
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0.0
    if keep.sum() < 2:
        raise InvalidDataError("errors: a slope needs at least two positive errors.")
    slope, _ = np.polyfit(np.log(dts[keep]), np.log(errors[keep]), 1)
    return float(slope)


def _is_half_line(sp: SPData) -> bool:
    return sp.family == "one_dim" and sp.normals[0, 0] == 1.0 and sp.offsets[0] == 0.0


def refinement_study(
    sp: SPData,
    X: PwLinearPath,
    dts,
    reference: Optional[PwLinearPath] = None,
    tol: Optional[float] = None,
) -> pd.DataFrame:
    """
    Solves the ESM for one input on uniform grids of the given steps and
    measures each solution against `reference` in the sup norm on [0, T].

    Without a reference, the half-line is compared with the exact
    one-dimensional map and other data with the solution on a grid four
    times finer than the finest step.

    Returns:
        DataFrame with columns dt, grid_points, error and successive, the
        sup-norm gap to the next finer solution (NaN on the finest grid).
    """
    dts = sorted({float(dt) for dt in dts}, reverse=True)
    if not dts:
        raise InvalidDataError("dts: at least one grid step is required.")
    T = X.horizon
    if reference is None:
        if _is_half_line(sp):
            reference = gamma1(X)[0]
        else:
            reference = solve_esm(sp, X, uniform_times(T, dts[-1] / 4.0), tol, decompose=False).Z

    solutions = [solve_esm(sp, X, uniform_times(T, dt), tol, decompose=False) for dt in dts]
    rows = []
    for k, (dt, sol) in enumerate(zip(dts, solutions)):
        successive = np.nan
        if k + 1 < len(solutions):
            successive = sup_norm(sol.Z - solutions[k + 1].Z, T)
        rows.append(
            {
                "dt": dt,
                "grid_points": int(sol.grid.size),
                "error": sup_norm(sol.Z - reference, T),
                "successive": successive,
            }
        )
    return pd.DataFrame(rows)
