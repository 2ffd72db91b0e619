"""
Discrete solver for the derivative problem associated with a constrained path,
the Theta_Z left-limit regularization, and the DP property checks.

The face set used at grid time t_k is the active set of Z(t_k), the point
where the projection scheme resolves step k. The DP is solved only for Z
produced with its active sets; faces are never re-detected from Z values.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.linalg import orth

from skorokhod.derivproj import DerivProjection, build_projection
from skorokhod.errors import DerivativeUndefinedError, InvalidDataError, WMembershipError
from skorokhod.esm import EspSolution
from skorokhod.geometry import FaceSet, SPData
from skorokhod.paths import CadlagStepPath, PwLinearPath, time_shift
from utils.config import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

ON_W_CHOICES = ("stop", "raise")


@dataclass(frozen=True)
class DpEvent:
    time: float
    index: int
    faces: FaceSet
    previous: FaceSet

    def as_dict(self):
        return {
            "time": self.time,
            "index": self.index,
            "faces": list(self.faces),
            "previous": list(self.previous),
        }


@dataclass(eq=False)
class DpSolution:
    phi: CadlagStepPath
    eta: CadlagStepPath
    psi_values: np.ndarray
    grid: np.ndarray
    face_sets: List[FaceSet]
    events: List[DpEvent] = field(default_factory=list)
    tau: Optional[float] = None
    theta: Optional[CadlagStepPath] = None

    @property
    def stopped(self):
        return self.tau is not None


def _psi_values(psi, grid):
    if isinstance(psi, PwLinearPath):
        return psi.values_at(grid)
    values = np.asarray(psi, dtype=float)
    if values.shape[0] != grid.size:
        raise InvalidDataError(f"psi: {values.shape[0]} values for {grid.size} grid times.")
    return values


def solve_dp(sp: SPData, esp: EspSolution, psi, on_w: str = "stop") -> DpSolution:
    """
    phi_0 = L_{I_0} psi(0) and phi_k = L_{I_k}(phi_{k-1} + psi(t_k) - psi(t_{k-1})).

    phi's stored left limit at t_k is the pre-projection value, so
    phi(t_k) - phi(t_k-) is the eta jump at t_k. Reaching a face set in W
    stops the recursion at tau, or raises when on_w is "raise".
    """
    if on_w not in ON_W_CHOICES:
        raise InvalidDataError(f"on_w: {on_w!r} is invalid.")
    grid = esp.grid
    psi_values = _psi_values(psi, grid)
    cache: Dict[FaceSet, DerivProjection] = {}

    phi = np.zeros_like(psi_values)
    left = np.zeros_like(psi_values)
    events: List[DpEvent] = []
    tau = None
    end = grid.size
    for k in range(grid.size):
        faces = esp.active_sets[k]
        if faces not in cache:
            try:
                cache[faces] = build_projection(sp, faces)
            except WMembershipError as e:
                tau = float(grid[k])
                if on_w == "raise" or k == 0:
                    raise DerivativeUndefinedError(
                        f"faces: {faces!r} at t = {tau!r} is in W; "
                        f"the directional derivative need not exist from here on ({e}).",
                        tau,
                    ) from e
                logger.warning("DP stopped at tau = %s on W face set %r", tau, faces)
                end = k
                break
        pre = psi_values[0] if k == 0 else phi[k - 1] + (psi_values[k] - psi_values[k - 1])
        left[k] = pre
        phi[k] = cache[faces](pre)
        if k > 0 and faces != esp.active_sets[k - 1]:
            events.append(DpEvent(float(grid[k]), k, faces, esp.active_sets[k - 1]))

    times = grid[:end]
    phi, left, psi_kept = phi[:end], left[:end], psi_values[:end]
    eta = phi - psi_kept
    eta_left = np.vstack([eta[:1], eta[:-1]])
    logger.debug("DP solved on %d grid points with %d events", end, len(events))
    return DpSolution(
        phi=CadlagStepPath(times, phi, left),
        eta=CadlagStepPath(times, eta, eta_left),
        psi_values=psi_kept,
        grid=times,
        face_sets=list(esp.active_sets[:end]),
        events=events,
        tau=tau,
    )


def theta_z(sol: DpSolution, sp: SPData, deriv_at_0, tol: float = None) -> CadlagStepPath:
    """
    Replaces phi by its left limit at events landing on the smooth boundary
    whenever that left limit still lies in G_{Z(t)}; the value at 0 becomes
    deriv_at_0. Left limits are rebuilt from the substituted values, so
    Theta(t_k-) = Theta(t_{k-1}) + psi(t_k) - psi(t_{k-1}).
    """
    tol = DEFAULT_TOLERANCES.face if tol is None else tol
    values = sol.phi.values.copy()
    values[0] = np.asarray(deriv_at_0, dtype=float)
    for event in sol.events:
        if len(event.faces) != 1:
            continue
        i = event.faces[0]
        left = sol.phi.left_values[event.index]
        if float(left @ sp.normals[i]) >= -tol:
            values[event.index] = left
    left = values.copy()
    left[1:] = values[:-1] + np.diff(sol.psi_values, axis=0)
    theta = CadlagStepPath(sol.grid, values, left)
    sol.theta = theta
    return theta


def dp_linearity_check(
    sp: SPData,
    esp: EspSolution,
    sol1: DpSolution,
    sol2: DpSolution,
    alpha: float,
    beta: float,
    psi1,
    psi2,
) -> float:
    combined = alpha * _psi_values(psi1, esp.grid) + beta * _psi_values(psi2, esp.grid)
    resolved = solve_dp(sp, esp, combined)
    expected = alpha * sol1.phi.values + beta * sol2.phi.values
    return float(np.abs(resolved.phi.values - expected).max())


def dp_timeshift_check(
    sp: SPData, esp: EspSolution, psi: PwLinearPath, S: float, sol: DpSolution = None
) -> float:
    """
    Re-solves from S with psi^S = phi(S) + psi(S + .) - psi(S) against the
    shifted constrained path; returns the largest deviation on [S, T].
    """
    sol = solve_dp(sp, esp, psi) if sol is None else sol
    idx = esp.index_of(S)
    shifted_psi = time_shift(psi, S, sol.phi.values[idx])
    resolved = solve_dp(sp, esp.shifted(idx), shifted_psi)
    return float(np.abs(resolved.phi.values - sol.phi.values[idx:]).max())


def dp_lipschitz_report(sp: SPData, esp: EspSolution, psi1, psi2, T: float = None):
    """
    ||phi1 - phi2||_T / ||psi1 - psi2||_T, or None when the inputs coincide.
    """
    T = esp.horizon if T is None else T
    mask = esp.grid <= T
    p1 = _psi_values(psi1, esp.grid)
    p2 = _psi_values(psi2, esp.grid)
    denominator = float(np.linalg.norm(p1[mask] - p2[mask], axis=1).max())
    if denominator == 0.0:
        return None
    sol1, sol2 = solve_dp(sp, esp, p1), solve_dp(sp, esp, p2)
    n = min(mask.sum(), sol1.grid.size, sol2.grid.size)
    diffs = np.concatenate(
        [
            sol1.phi.values[:n] - sol2.phi.values[:n],
            sol1.phi.left_values[:n] - sol2.phi.left_values[:n],
        ]
    )
    return float(np.linalg.norm(diffs, axis=1).max()) / denominator


def dp_condition_residuals(sp: SPData, esp: EspSolution, sol: DpSolution, psi) -> Dict[str, float]:
    psi_values = _psi_values(psi, esp.grid)[: sol.grid.size]
    phi, eta = sol.phi.values, sol.eta.values

    in_h = 0.0
    jump = 0.0
    interior = 0.0
    bases: Dict[FaceSet, np.ndarray] = {}
    for k, faces in enumerate(sol.face_sets):
        increment = eta[k] - (eta[k - 1] if k > 0 else 0.0)
        if not faces:
            if k > 0:
                interior = max(interior, float(np.abs(increment).max()))
            continue
        idx = list(faces)
        in_h = max(in_h, float(np.abs(sp.normals[idx] @ phi[k]).max()))
        if faces not in bases:
            bases[faces] = orth(sp.directions[idx].T)
        Q = bases[faces]
        jump = max(jump, float(np.linalg.norm(increment - Q @ (Q.T @ increment))))

    return {
        "phi_equals_psi_plus_eta": float(np.abs(phi - psi_values - eta).max()),
        "phi_in_h": in_h,
        "eta_jump_in_span_d": jump,
        "eta_interior_constancy": interior,
    }
