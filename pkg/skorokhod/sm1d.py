"""
One-dimensional Skorokhod map on [0, inf) and its directional derivative.

Everything here is exact piecewise-linear arithmetic: running maxima are
resolved by inserting the crossing times, and suprema over argmax sets are
taken over interval endpoints plus the breakpoints of the perturbation.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from skorokhod.errors import InvalidDataError
from skorokhod.paths import PwLinearPath, merge_times
from utils.config import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


def _scalar(path: PwLinearPath, name: str):
    if path.dim != 1:
        raise InvalidDataError(f"{name}: dimension {path.dim} is invalid (1-D path expected).")
    return path.values[:, 0]


def gamma1(f: PwLinearPath, snap: float = None) -> Tuple[PwLinearPath, PwLinearPath]:
    """
    Returns (Z, Y) with Y(t) = sup_{s<=t}(-f(s)) v 0 and Z = f + Y.

    Breakpoints are added where the running maximum of -f attaches to -f.
    """
    snap = DEFAULT_TOLERANCES.snap if snap is None else snap
    values = _scalar(f, "f")
    times = f.times

    out_t = [0.0]
    out_y = [max(-values[0], 0.0)]
    crossings = set()
    level = out_y[0]
    for k in range(times.size - 1):
        t0, t1 = times[k], times[k + 1]
        g0, g1 = -values[k], -values[k + 1]
        if g1 > level:
            if g0 < level:
                s = t0 + (level - g0) / (g1 - g0) * (t1 - t0)
                if s - t0 > snap and t1 - s > snap:
                    out_t.append(s)
                    out_y.append(level)
                    crossings.add(len(out_t) - 1)
            level = g1
        out_t.append(t1)
        out_y.append(level)

    out_t = np.array(out_t)
    Y = PwLinearPath(out_t, out_y)
    z = f.values_at(out_t)[:, 0] + Y.values[:, 0]
    for idx in crossings:
        z[idx] = 0.0
    Z = PwLinearPath(out_t, np.maximum(z, 0.0))
    return Z, Y


def complementarity_residual(Z: PwLinearPath, Y: PwLinearPath, tol: float = None) -> float:
    """
    Largest increase of Y over a segment on which Z is positive somewhere.
    """
    tol = DEFAULT_TOLERANCES.face if tol is None else tol
    times = merge_times(Z.times, Y.times)
    z = Z.values_at(times)[:, 0]
    y = Y.values_at(times)[:, 0]
    positive = np.maximum(z[:-1], z[1:]) > tol
    increments = np.abs(np.diff(y))
    return float(increments[positive].max()) if np.any(positive) else 0.0


@dataclass(frozen=True)
class ArgmaxSet:
    """
    Closed intervals (points are degenerate intervals) where -f attains its sup over [0, t].
    """

    intervals: Tuple[Tuple[float, float], ...]
    sup: float
    t: float

    def __contains__(self, s):
        return any(lo <= s <= hi for lo, hi in self.intervals)

    @property
    def is_singleton(self):
        return len(self.intervals) == 1 and self.intervals[0][0] == self.intervals[0][1]

    def endpoints(self):
        return sorted({v for interval in self.intervals for v in interval})


def phi_set(f: PwLinearPath, t: float, tol: float = None) -> ArgmaxSet:
    tol = DEFAULT_TOLERANCES.argmax if tol is None else tol
    t = float(t)
    window = f.truncate(t) if t > 0 else PwLinearPath([0.0], f.values[:1])
    neg = -_scalar(window, "f")
    top = float(neg.max())
    on = neg >= top - tol

    intervals = []
    for k, time in enumerate(window.times):
        if not on[k]:
            continue
        if k > 0 and on[k - 1]:
            lo, _ = intervals[-1]
            intervals[-1] = (lo, float(time))
        else:
            intervals.append((float(time), float(time)))
    return ArgmaxSet(tuple(intervals), top, t)


def _sup_neg_g(g: PwLinearPath, intervals) -> float:
    values = _scalar(g, "g")
    best = -np.inf
    for lo, hi in intervals:
        inside = (g.times > lo) & (g.times < hi)
        candidates = [-g(lo)[0], -g(hi)[0]]
        candidates.extend(-values[inside])
        best = max(best, max(candidates))
    return float(best)


def _f_from_argmax(g, argmax: ArgmaxSet, intervals, tol) -> float:
    if argmax.sup < -tol:
        return 0.0
    value = _sup_neg_g(g, intervals)
    if argmax.sup <= tol:
        return max(value, 0.0)
    return value


def f_functional(f: PwLinearPath, g: PwLinearPath, t: float, tol: float = None) -> float:
    tol = DEFAULT_TOLERANCES.argmax if tol is None else tol
    argmax = phi_set(f, t, tol)
    return _f_from_argmax(g, argmax, argmax.intervals, tol)


def _knots(f: PwLinearPath, g: PwLinearPath) -> np.ndarray:
    _, Y = gamma1(f)
    return merge_times(f.times, g.times, Y.times)


def f_functional_limit(
    f: PwLinearPath, g: PwLinearPath, t: float, side: str, tol: float = None
) -> float:
    """
    One-sided limit F(f, g)(t-) or F(f, g)(t+).

    Inside a knot-free window the argmax structure is fixed, apart from a
    front that moves with the query time; evaluating at the window midpoint
    and pulling that front back to t gives the limit exactly.
    """
    tol = DEFAULT_TOLERANCES.argmax if tol is None else tol
    if side not in ("-", "+"):
        raise InvalidDataError(f"side: {side!r} is invalid (use '-' or '+').")
    t = float(t)
    knots = _knots(f, g)
    if side == "-":
        if t <= 0.0:
            return f_functional(f, g, 0.0, tol)
        earlier = knots[knots < t]
        mid = 0.5 * (earlier[-1] + t)
    else:
        later = knots[knots > t]
        mid = 0.5 * (t + (later[0] if later.size else t + 1.0))

    argmax = phi_set(f, mid, tol)
    intervals = [
        (t if lo == mid else lo, t if hi == mid else hi) for lo, hi in argmax.intervals
    ]
    return _f_from_argmax(g, argmax, intervals, tol)


def nabla_gamma1(f: PwLinearPath, g: PwLinearPath, t: float) -> float:
    return float(g(t)[0]) + f_functional(f, g, t)


def nabla_gamma1_right(f: PwLinearPath, g: PwLinearPath, t: float) -> float:
    """
    Right-continuous regularization g(t) + F(t+); the 1-D DP solution equals it.
    """
    return float(g(t)[0]) + f_functional_limit(f, g, t, "+")


def left_continuity_holds(f: PwLinearPath, g: PwLinearPath, t: float, tol: float = None) -> bool:
    tol = DEFAULT_TOLERANCES.residual if tol is None else tol
    return f_functional_limit(f, g, t, "-") >= -float(g(t)[0]) - tol


def fd_oracle(f: PwLinearPath, g: PwLinearPath, t: float, eps: float) -> float:
    if eps <= 0:
        raise InvalidDataError(f"eps: {eps!r} is invalid (must be positive).")
    z_eps, _ = gamma1(f + eps * g)
    z, _ = gamma1(f)
    return float((z_eps(t)[0] - z(t)[0]) / eps)
