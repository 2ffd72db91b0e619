"""
Derivative projection operators L_x onto H_x along span d(x), their adjoints,
B-norms, and the cyclic composition machinery.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from skorokhod.errors import ConvergenceError, WMembershipError
from skorokhod.geometry import BPolytope, FaceSet, SPData, subspace_bases
from utils.config import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


@dataclass(frozen=True, eq=False)
class DerivProjection:
    faces: FaceSet
    matrix: np.ndarray
    h_basis: np.ndarray
    d_basis: np.ndarray

    def __call__(self, y):
        return self.matrix @ np.asarray(y, dtype=float)

    def residuals(self) -> Dict[str, float]:
        P = self.matrix
        eye = np.eye(P.shape[0])
        h_complement = eye - self.h_basis @ self.h_basis.T
        d_complement = eye - self.d_basis @ self.d_basis.T
        return {
            "idempotence": float(np.abs(P @ P - P).max()),
            "range_in_h": float(np.abs(h_complement @ P).max()),
            "complement_in_span_d": float(np.abs(d_complement @ (eye - P)).max()),
        }


@dataclass(frozen=True, eq=False)
class AdjointProjection:
    faces: FaceSet
    matrix: np.ndarray
    h_basis: np.ndarray
    d_basis: np.ndarray

    def __call__(self, y):
        return self.matrix @ np.asarray(y, dtype=float)

    def residuals(self) -> Dict[str, float]:
        Pt = self.matrix
        eye = np.eye(Pt.shape[0])
        return {
            "range_in_span_d_perp": float(np.abs(self.d_basis.T @ Pt).max(initial=0.0)),
            "complement_in_h_perp": float(np.abs(self.h_basis.T @ (Pt - eye)).max(initial=0.0)),
        }


def build_projection(sp: SPData, faces, tolerances=DEFAULT_TOLERANCES) -> DerivProjection:
    """
    L_x for the face set of x: the projection onto H_x along span d(x).

    With D and Nm the direction and normal columns of the face set,
    L_x = I - D (Nm'D)^{-1} Nm' whenever the face set has at most J faces;
    larger face sets are handled through the split R^J = H_x (+) span d(x).
    """
    faces = FaceSet(faces, sp.num_faces)
    J = sp.dim
    h_basis, d_basis = subspace_bases(sp, faces)
    if not faces:
        return DerivProjection(faces, np.eye(J), h_basis, d_basis)

    split = np.hstack([h_basis, d_basis])
    if split.shape[1] != J or np.linalg.matrix_rank(split, tol=1e-10) < J:
        raise WMembershipError(
            f"faces: {faces!r} lies in W (H_x and span d(x) do not split R^{J})."
        )

    idx = list(faces)
    D = sp.directions[idx].T
    Nm = sp.normals[idx].T
    if len(idx) <= J:
        M = Nm.T @ D
        if np.linalg.cond(M) > tolerances.condition:
            raise WMembershipError(
                f"faces: {faces!r} gives an ill-conditioned Nm'D (cond {np.linalg.cond(M):.3e})."
            )
        try:
            factor = lu_factor(M)
        except (LinAlgError, ValueError) as e:
            raise WMembershipError(f"faces: {faces!r} gives a singular Nm'D ({e}).") from e
        P = np.eye(J) - D @ lu_solve(factor, Nm.T)
    else:
        coords = np.linalg.solve(split, np.eye(J))
        P = h_basis @ coords[: h_basis.shape[1]]

    return DerivProjection(faces, P, h_basis, d_basis)


def adjoint(p: DerivProjection) -> AdjointProjection:
    return AdjointProjection(p.faces, p.matrix.T.copy(), p.h_basis, p.d_basis)


def b_norm(B: BPolytope, y) -> float:
    normals, offsets = B.halfspaces
    return float(max(np.max(normals @ np.asarray(y, dtype=float) / offsets), 0.0))


def dual_norm(B: BPolytope, y) -> float:
    return float(np.max(B.vertices @ np.asarray(y, dtype=float)))


@dataclass
class SetBReport:
    delta: float
    pairs_checked: int = 0
    violations: List[dict] = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def as_dict(self):
        return {
            "delta": self.delta,
            "pairs_checked": self.pairs_checked,
            "passed": self.passed,
            "violations": self.violations,
        }


def check_set_b(sp: SPData, B: BPolytope, delta: float, tol: float = 1e-10) -> SetBReport:
    """
    Facet-by-facet test of: z on the boundary of B with |<z, n_i>| < delta
    forces <nu, d_i> = 0 for every normal nu at z.

    On a facet <z, n_i> ranges over the hull of its vertex values, and a
    boundary point's normal cone is spanned by the normals of its facets,
    so checking each (facet, face) pair is exhaustive for polytopes.
    """
    report = SetBReport(delta=float(delta))
    for facet in B.facets:
        pairings = facet.vertices @ sp.normals.T
        for i in range(sp.num_faces):
            report.pairs_checked += 1
            low, high = pairings[:, i].min(), pairings[:, i].max()
            if low >= delta - 1e-12 or high <= -delta + 1e-12:
                continue
            slope = float(facet.normal @ sp.directions[i])
            if abs(slope) > tol:
                report.violations.append(
                    {"facet_normal": facet.normal.tolist(), "face": i, "pairing": slope}
                )
    if not report.passed:
        logger.warning("Set B check failed on %d facet/face pairs", len(report.violations))
    return report


@dataclass(frozen=True, eq=False)
class CompositionResult:
    limit: np.ndarray
    cycles: int
    contraction_factor: float
    displacements: List[float]


def composition_limit(
    sp: SPData,
    face_sequence: Sequence,
    target,
    y,
    max_iter: int = 200,
    tol: float = None,
) -> CompositionResult:
    """
    Applies L over the face sequence cyclically until one full cycle moves y
    by less than tol, then checks the limit against L_target y.
    """
    tol = DEFAULT_TOLERANCES.composition if tol is None else tol
    y0 = np.asarray(y, dtype=float)
    target_proj = build_projection(sp, target)
    cycle = [build_projection(sp, faces).matrix for faces in face_sequence]
    threshold = tol * max(1.0, float(np.linalg.norm(y0)))

    current = y0.copy()
    displacements: List[float] = []
    converged = False
    for _ in range(max_iter):
        before = current
        for P in cycle:
            current = P @ current
        displacements.append(float(np.linalg.norm(current - before)))
        if displacements[-1] < threshold:
            converged = True
            break

    ratios = [b / a for a, b in zip(displacements[:-1], displacements[1:]) if a > threshold]
    factor = float(max(ratios)) if ratios else 0.0
    diagnostics = {"cycles": len(displacements), "displacements": displacements[-5:]}
    if not converged:
        raise ConvergenceError(
            f"face_sequence: no convergence within {max_iter} cycles.", diagnostics
        )

    expected = target_proj(y0)
    mismatch = float(np.linalg.norm(current - expected))
    if mismatch > 10 * threshold:
        raise ConvergenceError(
            f"target: limit differs from L_target y by {mismatch:.3e}.",
            dict(diagnostics, mismatch=mismatch),
        )
    logger.info(
        "Composition limit reached in %d cycles (contraction %.4f)", len(displacements), factor
    )
    return CompositionResult(current, len(displacements), factor, displacements)


def cycle_contraction(
    sp: SPData,
    B: BPolytope,
    face_sequence: Sequence,
    target,
    samples: int = 1000,
    seed: int = 0,
) -> float:
    """
    Worst ratio ||L*_{x_1} ... L*_{x_K} y||_{B*} / ||y||_{B*} over random y
    orthogonal to H_target.
    """
    target = FaceSet(target, sp.num_faces)
    span = sp.normals[list(target)].T
    adjoints = [build_projection(sp, faces).matrix.T for faces in face_sequence]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        y = span @ rng.standard_normal(span.shape[1])
        base = dual_norm(B, y)
        if base <= 1e-12:
            continue
        out = y
        for Pt in reversed(adjoints):
            out = Pt @ out
        worst = max(worst, dual_norm(B, out) / base)
    return worst
