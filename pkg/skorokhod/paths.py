"""
Continuous piecewise-linear paths and right-continuous step paths on a finite horizon.
"""

import logging
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from skorokhod.errors import InvalidDataError

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


def _as_times(times) -> np.ndarray:
    times = np.array(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise InvalidDataError("times: an empty breakpoint list is invalid.")
    if times[0] != 0.0:
        raise InvalidDataError(f"times: first breakpoint {times[0]!r} must be 0.")
    if np.any(np.diff(times) <= 0):
        raise InvalidDataError("times: breakpoints must be strictly increasing.")
    return times


def _as_values(values, count) -> np.ndarray:
    values = np.array(values, dtype=float)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    if values.ndim != 2 or values.shape[0] != count:
        raise InvalidDataError(
            f"values: shape {values.shape} does not match {count} breakpoints."
        )
    return values


def _freeze(*arrays):
    for arr in arrays:
        arr.setflags(write=False)


def merge_times(*grids) -> np.ndarray:
    merged = np.unique(np.concatenate([np.asarray(g, dtype=float).reshape(-1) for g in grids]))
    return merged[merged >= 0.0]


class PwLinearPath:
    """
    Continuous path, linear between breakpoints and constant after the last one.

    Evaluation at a breakpoint returns the stored value bit-exactly.
    """

    def __init__(self, times, values):
        self.times = _as_times(times)
        self.values = _as_values(values, self.times.size)
        _freeze(self.times, self.values)

    @classmethod
    def constant(cls, value, horizon=1.0):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        times = [0.0] if horizon == 0 else [0.0, float(horizon)]
        return cls(times, np.tile(value, (len(times), 1)))

    @classmethod
    def from_function(cls, func, times):
        times = np.asarray(times, dtype=float)
        return cls(times, np.array([np.atleast_1d(func(t)) for t in times]))

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def horizon(self):
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return f"PwLinearPath(breakpoints={self.times.size}, dim={self.dim}, horizon={self.horizon})"

    def _eval_one(self, t):
        t = max(float(t), 0.0)
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if self.times[k] == t or k == self.times.size - 1:
            return self.values[k].copy()
        t0, t1 = self.times[k], self.times[k + 1]
        w = (t - t0) / (t1 - t0)
        return self.values[k] + w * (self.values[k + 1] - self.values[k])

    def __call__(self, t):
        if np.ndim(t) == 0:
            return self._eval_one(t)
        return np.array([self._eval_one(s) for s in np.asarray(t, dtype=float)])

    def values_at(self, times) -> np.ndarray:
        return self(np.asarray(times, dtype=float).reshape(-1))

    def component(self, i):
        return PwLinearPath(self.times, self.values[:, i])

    def refine(self, grid):
        return refine(self, grid)

    def truncate(self, horizon):
        """
        Restriction to [0, horizon]; the horizon becomes a breakpoint.
        """
        kept = self.times[self.times < horizon]
        times = np.append(kept, float(horizon))
        return PwLinearPath(times, self.values_at(times))

    def _combine(self, other, op):
        if isinstance(other, PwLinearPath):
            times = merge_times(self.times, other.times)
            return PwLinearPath(times, op(self.values_at(times), other.values_at(times)))
        return PwLinearPath(self.times, op(self.values, np.asarray(other, dtype=float)))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, scalar):
        return PwLinearPath(self.times, float(scalar) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return PwLinearPath(self.times, -self.values)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=[f"v_{i + 1}" for i in range(self.dim)])
        frame.insert(0, "t", self.times)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, prefix="v_"):
        columns = sorted(
            (c for c in frame.columns if c.startswith(prefix)),
            key=lambda c: int(c[len(prefix):]),
        )
        if "t" not in frame.columns or not columns:
            raise InvalidDataError("frame: columns t and v_1..v_J are required.")
        return cls(frame["t"].to_numpy(), frame[columns].to_numpy())


class CadlagStepPath:
    """
    Right-continuous step path: constant on [s_k, s_{k+1}) with stored left limits.
    """

    def __init__(self, times, values, left_values=None):
        self.times = _as_times(times)
        self.values = _as_values(values, self.times.size)
        if left_values is None:
            left = np.vstack([self.values[:1], self.values[:-1]])
        else:
            left = _as_values(left_values, self.times.size).copy()
            left[0] = self.values[0]
        self.left_values = left
        _freeze(self.times, self.values, self.left_values)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def horizon(self):
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return f"CadlagStepPath(events={self.times.size}, dim={self.dim}, horizon={self.horizon})"

    def _index(self, t):
        return max(int(np.searchsorted(self.times, max(float(t), 0.0), side="right")) - 1, 0)

    def __call__(self, t):
        if np.ndim(t) == 0:
            return self.values[self._index(t)].copy()
        return np.array([self.values[self._index(s)] for s in np.asarray(t, dtype=float)])

    def left_limit(self, t):
        k = self._index(t)
        if self.times[k] == t:
            return self.left_values[k].copy()
        return self.values[k].copy()

    def jumps(self) -> np.ndarray:
        return self.values - self.left_values

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=[f"v_{i + 1}" for i in range(self.dim)])
        for i in range(self.dim):
            frame[f"left_{i + 1}"] = self.left_values[:, i]
        frame.insert(0, "t", self.times)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame):
        values = PwLinearPath.from_frame(frame).values
        left_columns = [f"left_{i + 1}" for i in range(values.shape[1])]
        left = frame[left_columns].to_numpy() if set(left_columns) <= set(frame.columns) else None
        return cls(frame["t"].to_numpy(), values, left)


Path = Union[PwLinearPath, CadlagStepPath]


def sup_norm(f: Path, t: Optional[float] = None) -> float:
    """
    sup_{s in [0, t]} |f(s)| in the Euclidean norm.

    On each linear segment |a + s b|^2 is a convex quadratic in s, so its
    maximum sits at a segment endpoint; the value at t closes the last segment.
    For step paths the stored left limits belong to the supremum as well.
    """
    t = f.horizon if t is None else float(t)
    if t < 0:
        raise InvalidDataError(f"t: {t!r} is invalid (negative time).")
    mask = f.times <= t
    norms = [np.linalg.norm(f.values[mask], axis=1), [np.linalg.norm(f(t))]]
    if isinstance(f, CadlagStepPath):
        norms.append(np.linalg.norm(f.left_values[mask], axis=1))
    return float(max(np.max(n) for n in norms))


def time_shift(f: Path, S: float, anchor) -> Path:
    """
    anchor + f(S + .) - f(S), with breakpoints after S re-based to S.
    """
    S = float(S)
    if S < 0:
        raise InvalidDataError(f"S: {S!r} is invalid (negative shift).")
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
    later = f.times > S
    times = np.concatenate([[0.0], f.times[later] - S])
    base = f(S)
    if isinstance(f, CadlagStepPath):
        values = np.vstack([anchor, anchor + f.values[later] - base])
        left = np.vstack([anchor, anchor + f.left_values[later] - base])
        return CadlagStepPath(times, values, left)
    values = np.vstack([anchor, anchor + f.values[later] - base])
    return PwLinearPath(times, values)


def refine(f: PwLinearPath, grid: Sequence[float]) -> PwLinearPath:
    times = merge_times(f.times, grid)
    if times.size == f.times.size:
        return f
    return PwLinearPath(times, f.values_at(times))


def uniform_times(horizon: float, dt: float) -> np.ndarray:
    if dt <= 0 or horizon <= 0:
        raise InvalidDataError(f"dt: {dt!r} with horizon {horizon!r} is invalid.")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-12 * max(1.0, horizon):
        raise InvalidDataError(f"dt: {dt!r} does not divide horizon {horizon!r}.")
    return np.arange(steps + 1) * dt

