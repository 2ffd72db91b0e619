"""
Reference problems with exactly known answers: the nonempty-V ESP in three
dimensions, the nonempty-W counter-example in the quadrant, the oblique
Harrison-Reiman quadrant and the normally reflected quadrant.

gamma = 1/2 keeps every counter-example quantity a dyadic rational, so the
generic solver reproduces the closed forms bit for bit while k <= MAX_K.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from skorokhod.errors import InvalidDataError, SolverMismatchError
from skorokhod.esm import solve_esm
from skorokhod.geometry import BPolytope, SPData, register_pi
from skorokhod.paths import PwLinearPath

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

GAMMA = 0.5
MAX_K = 20

EXACT_TOL = 1e-12


@register_pi("d2_counterexample")
def d2_pi(x):
    x = np.asarray(x, dtype=float)
    return x + max(-x[0], -x[1], 0.0) * np.ones(2)


@register_pi("d1_nonempty_v")
def d1_pi(x):
    a = np.maximum(np.asarray(x, dtype=float), 0.0)
    return np.array([a[0], a[1], min(a[0] + a[1], a[2])])


@dataclass(eq=False)
class Fixture:
    name: str
    sp: SPData
    B: Optional[BPolytope] = None
    delta: Optional[float] = None
    X: Optional[PwLinearPath] = None
    psi: Optional[PwLinearPath] = None
    expected: Dict[str, Tuple[object, str]] = field(default_factory=dict)


def d2_breakpoints(k_max: int = MAX_K) -> np.ndarray:
    n_max = 2 * k_max + 2
    return np.concatenate([1.0 - GAMMA ** np.arange(n_max + 1), [1.0, 2.0]])


def d2_input(k_max: int = MAX_K) -> PwLinearPath:
    """
    X(0) = (1, 0); odd steps move by -3 gamma^n e_1, even steps by -3 gamma^n e_2;
    X = (-1, -1) from t = 1 on.
    """
    n_max = 2 * k_max + 2
    values = [np.array([1.0, 0.0])]
    for n in range(1, n_max + 1):
        step = np.zeros(2)
        step[0 if n % 2 else 1] = -3.0 * GAMMA**n
        values.append(values[-1] + step)
    values.extend([np.array([-1.0, -1.0])] * 2)
    return PwLinearPath(d2_breakpoints(k_max), np.array(values))


def d2_closed_form(eps: float, n: int) -> np.ndarray:
    """
    Z_eps(t_n) for the counter-example input shifted by eps (1, 0), eps = gamma^p.

    Before the escape index p the path alternates between the faces; from p on
    it stays on the face {x_2 = 0} at (eps + (-gamma)^n, 0).
    """
    if n == 0:
        return np.array([1.0 + eps, 0.0])
    escape = np.inf if eps == 0 else int(round(-np.log2(eps)))
    if eps != 0 and GAMMA**escape != eps:
        raise InvalidDataError(f"eps: {eps!r} is invalid (must be a power of 1/2).")
    if n < escape:
        if n % 2:
            return np.array([0.0, GAMMA**n - eps])
        return np.array([GAMMA**n + eps, 0.0])
    return np.array([eps + (-GAMMA) ** n, 0.0])


def build_d2_counterexample(k_max: int = MAX_K) -> Fixture:
    if not 1 <= k_max <= MAX_K:
        raise InvalidDataError(f"k_max: {k_max} is invalid (dyadic exactness holds for 1..{MAX_K}).")
    sp = SPData(
        normals=np.eye(2),
        offsets=np.zeros(2),
        directions=[[1.0, 1.0], [1.0, 1.0]],
        family="custom_pi",
        custom_pi=d2_pi,
        pi_name="d2_counterexample",
    ).checked()
    B = BPolytope([[2.0, 1.0], [1.0, 2.0], [-2.0, -1.0], [-1.0, -2.0]]).checked()
    X = d2_input(k_max)
    expected = {
        "Z(t_n)": ([d2_closed_form(0.0, n) for n in range(2 * k_max + 3)], "derived"),
        "Z(t>=1)": (np.zeros(2), "given"),
        "Z_eps_odd(1)": ([np.array([GAMMA ** (2 * k + 1), 0.0]) for k in range(1, k_max + 1)], "given"),
        "Z_eps_even(1)": ([np.array([GAMMA ** (2 * k), 0.0]) for k in range(1, k_max + 1)], "derived"),
        "W": ([(0, 1)], "given"),
    }
    return Fixture(
        name="d2_counterexample",
        sp=sp,
        B=B,
        delta=1.0,
        X=X,
        psi=PwLinearPath.constant([1.0, 0.0], horizon=2.0),
        expected=expected,
    )


@dataclass(eq=False)
class D2Result:
    table: pd.DataFrame
    limit_even: np.ndarray
    limit_odd: np.ndarray


def _check_closed_form(sol, eps, n_max):
    expected = np.array([d2_closed_form(eps, n) for n in range(n_max + 1)])
    gap = float(np.abs(sol.Z.values[: n_max + 1] - expected).max())
    end = np.array([eps, 0.0])
    gap = max(gap, float(np.abs(sol.Z.values[n_max + 1 :] - end).max()))
    if gap > EXACT_TOL:
        raise SolverMismatchError(
            f"eps: {eps!r} gives a solver/closed-form gap of {gap:.3e} on the counter-example."
        )


def run_d2_subsequences(k_max: int = MAX_K) -> D2Result:
    """
    Difference quotients (Z_eps(1) - Z(1)) / eps along eps = gamma^{2k} and gamma^{2k+1}.
    """
    fixture = build_d2_counterexample(k_max)
    n_max = 2 * k_max + 2
    base = solve_esm(fixture.sp, fixture.X, decompose=False)
    _check_closed_form(base, 0.0, n_max)
    z_one = base.Z(1.0)

    rows = []
    for k in range(1, k_max + 1):
        row = {"k": k}
        for label, eps in (("even", GAMMA ** (2 * k)), ("odd", GAMMA ** (2 * k + 1))):
            shifted = solve_esm(fixture.sp, fixture.X + eps * fixture.psi, decompose=False)
            _check_closed_form(shifted, eps, n_max)
            quotient = (shifted.Z(1.0) - z_one) / eps
            row[f"eps_{label}"] = eps
            row[f"{label}_1"], row[f"{label}_2"] = quotient
        rows.append(row)

    table = pd.DataFrame(rows)
    last = table.iloc[-1]
    result = D2Result(
        table=table,
        limit_even=np.array([last["even_1"], last["even_2"]]),
        limit_odd=np.array([last["odd_1"], last["odd_2"]]),
    )
    logger.info(
        "Counter-example quotients at k = %d: even %s, odd %s",
        k_max,
        result.limit_even.tolist(),
        result.limit_odd.tolist(),
    )
    return result


def build_d1_esp() -> Fixture:
    root3 = np.sqrt(3.0)
    normals = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1 / root3, 1 / root3, -1 / root3]]
    directions = np.vstack([np.eye(3), [[0.0, 0.0, -root3]]])
    sp = SPData(
        normals=normals,
        offsets=np.zeros(4),
        directions=directions,
        family="custom_pi",
        custom_pi=d1_pi,
        pi_name="d1_nonempty_v",
    ).checked()
    corners = np.array([[a, b, c] for a in (-1, 1) for b in (-1, 1) for c in (-4, 4)], dtype=float)
    return Fixture(
        name="d1_nonempty_v",
        sp=sp,
        B=BPolytope(corners).checked(),
        delta=1.0,
        expected={"V": ([(0, 1, 2, 3)], "given"), "W": ([], "given")},
    )


def build_ghr_example() -> Fixture:
    """
    Oblique quadrant with d_1 = (1, -1), d_2 = (1/2, 1).

    B is the parallelogram {a d_1 + b d_2 : |a| <= 1, |b| <= 3/2}: each pair
    of its facets is parallel to one direction, which is what the normal
    geometry condition asks for at delta = 1/5.
    """
    d1, d2 = np.array([1.0, -1.0]), np.array([0.5, 1.0])
    sp = SPData(normals=np.eye(2), offsets=np.zeros(2), directions=[d1, d2], family="orthant").checked()
    corners = [d1 + 1.5 * d2, d1 - 1.5 * d2, -d1 - 1.5 * d2, -d1 + 1.5 * d2]
    return Fixture(
        name="ghr_quadrant",
        sp=sp,
        B=BPolytope(corners).checked(),
        delta=0.2,
        expected={"Q": (np.array([[0.0, 1.0], [0.5, 0.0]]), "derived"), "rho": (np.sqrt(0.5), "derived")},
    )


def build_normal_quadrant() -> Fixture:
    sp = SPData(normals=np.eye(2), offsets=np.zeros(2), directions=np.eye(2), family="orthant").checked()
    square = [[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]]
    return Fixture(
        name="normal_quadrant",
        sp=sp,
        B=BPolytope(square).checked(),
        delta=0.5,
        expected={"Q": (np.zeros((2, 2)), "derived"), "rho": (0.0, "derived")},
    )


FIXTURES = {
    "d2_counterexample": build_d2_counterexample,
    "d1_nonempty_v": build_d1_esp,
    "ghr_quadrant": build_ghr_example,
    "normal_quadrant": build_normal_quadrant,
}
