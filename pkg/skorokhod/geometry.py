"""
Polyhedral SP data {(d_i, n_i, c_i)}, face-set queries, the projection map pi
and the classification of boundary face sets.

Face indices are 0-based throughout the package.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import null_space, orth
from scipy.optimize import linprog, nnls
from scipy.spatial import ConvexHull, QhullError

from skorokhod.errors import (
    AssumptionViolationError,
    DomainViolationError,
    InvalidDataError,
    NumericalError,
    SizeError,
    UnsupportedConfigurationError,
)
from utils.config import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

FAMILIES = ("general", "one_dim", "orthant", "custom_pi")

# face-set enumeration is exponential in N
MAX_ENUMERATED_FACES = 12

# slack accepted when a complementarity pattern is tested
PI_PATTERN_SLACK = 1e-12

# box bound for the feasibility LPs; G may be unbounded
LP_BOX = 1e6

RICHARDSON_STEPS = (1e-4, 1e-5, 1e-6, 1e-7)

PI_REGISTRY: Dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def register_pi(name):
    """
    Registers a closed-form projection so custom_pi SP data can be loaded from JSON.
    """

    def decorator(func):
        PI_REGISTRY[name] = func
        return func

    return decorator


class FaceSet(tuple):
    """
    Sorted, duplicate-free tuple of face indices.
    """

    def __new__(cls, indices=(), num_faces=None):
        idx = [int(i) for i in indices]
        if len(set(idx)) != len(idx):
            raise InvalidDataError(f"faces: {idx} contains duplicates.")
        if num_faces is not None:
            out_of_range = [i for i in idx if i < 0 or i >= num_faces]
            if out_of_range:
                raise InvalidDataError(
                    f"faces: {out_of_range} is invalid for {num_faces} faces."
                )
        return super().__new__(cls, sorted(idx))

    def union(self, other):
        return FaceSet(set(self) | set(other))

    @property
    def label(self):
        return ";".join(str(i) for i in self)

    @classmethod
    def parse(cls, text, num_faces=None):
        text = "" if text is None else str(text).strip()
        if not text or text.lower() == "nan":
            return cls((), num_faces)
        separator = ";" if ";" in text else ","
        return cls([int(float(part)) for part in text.split(separator)], num_faces)

    def __repr__(self):
        return "FaceSet({" + ",".join(str(i) for i in self) + "})"


def _frozen_array(values, ndim=None):
    arr = np.array(values, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(1, -1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SPData:
    normals: np.ndarray
    offsets: np.ndarray
    directions: np.ndarray
    family: str = "general"
    custom_pi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    pi_name: str = ""
    validation_errors: List[str] = field(
        default_factory=list, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        object.__setattr__(self, "normals", _frozen_array(self.normals, ndim=2))
        object.__setattr__(self, "directions", _frozen_array(self.directions, ndim=2))
        object.__setattr__(self, "offsets", _frozen_array(self.offsets).reshape(-1))

    @property
    def num_faces(self):
        return self.normals.shape[0]

    @property
    def dim(self):
        return self.normals.shape[1]

    def validate(self):
        """
        Checks the SP invariants and collects a message per violation.

        Returns:
            True when the data is usable, False otherwise (see validation_errors).
        """
        self.validation_errors.clear()
        n, d, c = self.normals, self.directions, self.offsets
        if n.shape != d.shape:
            self.validation_errors.append(
                f"directions: shape {d.shape} does not match normals {n.shape}."
            )
        if c.shape[0] != n.shape[0]:
            self.validation_errors.append(
                f"offsets: {c.shape[0]} values for {n.shape[0]} faces is invalid."
            )
        if self.family not in FAMILIES:
            self.validation_errors.append(f"family: {self.family} is invalid.")
        if self.validation_errors:
            return False

        for i in range(self.num_faces):
            norm = float(np.linalg.norm(n[i]))
            if abs(norm - 1.0) > 1e-12:
                self.validation_errors.append(
                    f"normals[{i}]: norm {norm!r} violates |n_i| = 1."
                )
            pairing = float(d[i] @ n[i])
            if abs(pairing - 1.0) > 1e-12:
                self.validation_errors.append(
                    f"directions[{i}]: <d_i, n_i> = {pairing!r} violates <d_i, n_i> = 1."
                )

        if self.family == "one_dim" and (self.dim != 1 or self.num_faces != 1):
            self.validation_errors.append(
                "family: one_dim requires a single face in one dimension."
            )
        if self.family == "orthant" and self.dim != self.num_faces:
            self.validation_errors.append("family: orthant requires N = J.")
        if self.family == "custom_pi" and not callable(self.custom_pi):
            self.validation_errors.append("custom_pi: a callable projection is required.")

        if not self.validation_errors:
            solved = _interior_slack(self)
            if solved is None or solved[0] < -1e-12:
                self.validation_errors.append("G: the domain is empty (feasibility check).")

        return not self.validation_errors

    def checked(self):
        if not self.validate():
            raise InvalidDataError(" ".join(self.validation_errors))
        return self

    @classmethod
    def from_json(cls, document):
        family = document.get("family", "general")
        custom = None
        pi_name = document.get("pi", "")
        if family == "custom_pi":
            if pi_name not in PI_REGISTRY:
                raise InvalidDataError(f"pi: {pi_name!r} is invalid.")
            custom = PI_REGISTRY[pi_name]
        try:
            sp = cls(
                normals=document["normals"],
                offsets=document["offsets"],
                directions=document["directions"],
                family=family,
                custom_pi=custom,
                pi_name=pi_name,
            )
        except KeyError as e:
            raise InvalidDataError(f"{e.args[0]}: missing field is invalid.") from e
        return sp.checked()

    def to_json(self):
        document = {
            "normals": self.normals.tolist(),
            "offsets": self.offsets.tolist(),
            "directions": self.directions.tolist(),
            "family": self.family,
        }
        if self.pi_name:
            document["pi"] = self.pi_name
        return document

    def with_directions(self, directions):
        return SPData(
            normals=self.normals,
            offsets=self.offsets,
            directions=directions,
            family=self.family,
            custom_pi=self.custom_pi,
            pi_name=self.pi_name,
        )


def _interior_slack(sp, faces=()):
    """
    Largest common slack s for a point with equality on `faces` and
    <x, n_j> - c_j >= s elsewhere (capped at 1). Returns (s, x) or None.
    """
    J, N = sp.dim, sp.num_faces
    faces = list(faces)
    others = [j for j in range(N) if j not in faces]

    # variables: x (J), s
    cost = np.zeros(J + 1)
    cost[-1] = -1.0
    a_ub = b_ub = a_eq = b_eq = None
    if others:
        a_ub = np.hstack([-sp.normals[others], np.ones((len(others), 1))])
        b_ub = -sp.offsets[others]
    if faces:
        a_eq = np.hstack([sp.normals[faces], np.zeros((len(faces), 1))])
        b_eq = sp.offsets[faces]
    bounds = [(-LP_BOX, LP_BOX)] * J + [(None, 1.0)]
    result = linprog(
        cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs"
    )
    if result.status != 0:
        return None
    return float(result.x[-1]), result.x[:J]


def active_faces(sp: SPData, x, tol: Optional[float] = None) -> FaceSet:
    tol = DEFAULT_TOLERANCES.face if tol is None else tol
    slack = sp.normals @ np.asarray(x, dtype=float) - sp.offsets
    if np.any(slack < -tol):
        worst = int(np.argmin(slack))
        raise DomainViolationError(
            f"x: {np.asarray(x).tolist()} is outside G (face {worst}, slack {slack[worst]:.3e})."
        )
    return FaceSet(np.flatnonzero(np.abs(slack) <= tol))


def usc_radius(sp: SPData, x, tol: Optional[float] = None) -> float:
    """
    Radius of a ball around x on which the active set can only shrink.

    Unit normals make every inactive slack a lower bound on the distance to its face.
    """
    tol = DEFAULT_TOLERANCES.face if tol is None else tol
    slack = sp.normals @ np.asarray(x, dtype=float) - sp.offsets
    inactive = slack[slack > tol]
    return float(inactive.min()) if inactive.size else float("inf")


def subspace_bases(sp: SPData, faces) -> Tuple[np.ndarray, np.ndarray]:
    faces = FaceSet(faces, sp.num_faces)
    if not faces:
        return np.eye(sp.dim), np.zeros((sp.dim, 0))
    h_basis = null_space(sp.normals[list(faces)])
    d_basis = orth(sp.directions[list(faces)].T)
    return h_basis, d_basis


def is_in_w(sp: SPData, faces) -> bool:
    faces = FaceSet(faces, sp.num_faces)
    if len(faces) < 2:
        return False
    h_basis, d_basis = subspace_bases(sp, faces)
    return np.linalg.matrix_rank(np.hstack([h_basis, d_basis]), tol=1e-10) < sp.dim


def direction_cone_has_line(sp: SPData, faces) -> bool:
    """
    True when some nonzero nonnegative combination of {d_i, i in faces} vanishes.
    """
    faces = list(FaceSet(faces, sp.num_faces))
    if len(faces) < 2:
        return False
    k = len(faces)
    a_eq = np.vstack([sp.directions[faces].T, np.ones((1, k))])
    b_eq = np.append(np.zeros(sp.dim), 1.0)
    result = linprog(
        np.zeros(k), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * k, method="highs"
    )
    return result.status == 0


@dataclass(frozen=True, eq=False)
class FaceSetInfo:
    faces: FaceSet
    witness: np.ndarray
    smooth: bool
    nonsmooth: bool
    in_v: bool
    in_w: bool

    def as_dict(self):
        return {
            "faces": list(self.faces),
            "witness": self.witness.tolist(),
            "smooth": self.smooth,
            "nonsmooth": self.nonsmooth,
            "in_v": self.in_v,
            "in_w": self.in_w,
        }


@dataclass(frozen=True, eq=False)
class BoundaryClassification:
    entries: Tuple[FaceSetInfo, ...]

    def __getitem__(self, faces):
        key = FaceSet(faces)
        for entry in self.entries:
            if entry.faces == key:
                return entry
        raise KeyError(key)

    def __contains__(self, faces):
        key = FaceSet(faces)
        return any(entry.faces == key for entry in self.entries)

    @property
    def feasible(self):
        return [entry.faces for entry in self.entries]

    @property
    def v_sets(self):
        return [entry.faces for entry in self.entries if entry.in_v]

    @property
    def w_sets(self):
        return [entry.faces for entry in self.entries if entry.in_w]

    def as_dict(self):
        return {
            "feasible": [entry.as_dict() for entry in self.entries],
            "V": [list(f) for f in self.v_sets],
            "W": [list(f) for f in self.w_sets],
        }


def classify_boundary(sp: SPData, tol: Optional[float] = None) -> BoundaryClassification:
    tol = DEFAULT_TOLERANCES.face if tol is None else tol
    N = sp.num_faces
    if N > MAX_ENUMERATED_FACES:
        raise SizeError(
            f"num_faces: {N} exceeds the enumeration budget of {MAX_ENUMERATED_FACES}."
        )

    entries = []
    for size in range(1, N + 1):
        for subset in itertools.combinations(range(N), size):
            solved = _interior_slack(sp, subset)
            if solved is None or solved[0] <= tol:
                continue
            faces = FaceSet(subset)
            entries.append(
                FaceSetInfo(
                    faces=faces,
                    witness=solved[1],
                    smooth=size == 1,
                    nonsmooth=size >= 2,
                    in_v=direction_cone_has_line(sp, faces),
                    in_w=is_in_w(sp, faces),
                )
            )

    classification = BoundaryClassification(tuple(entries))
    logger.info(
        "Classified %d feasible face sets (V: %d, W: %d)",
        len(entries),
        len(classification.v_sets),
        len(classification.w_sets),
    )
    return classification


def spectral_radius(matrix, tol=1e-10, max_iter=10000) -> float:
    """
    Perron root of a nonnegative matrix by power iteration on Q + I.

    The unit shift keeps the Perron root strictly dominant for periodic Q.
    """
    Q = np.asarray(matrix, dtype=float)
    n = Q.shape[0]
    shifted = Q + np.eye(n)
    v = np.full(n, 1.0 / n)
    mu = 0.0
    converged = False
    for _ in range(max_iter):
        w = shifted @ v
        mu_next = float(w.sum() / v.sum())
        v = w / w.sum()
        if abs(mu_next - mu) <= tol:
            mu = mu_next
            converged = True
            break
        mu = mu_next

    rho = mu - 1.0
    dense = float(np.max(np.abs(np.linalg.eigvals(Q)))) if n else 0.0
    if not converged or abs(rho - dense) > 1e-8:
        logger.warning(
            "Power iteration did not settle (%.3e vs dense %.3e); using dense eigenvalues",
            rho,
            dense,
        )
        return dense
    return max(rho, 0.0)


def q_matrix(sp: SPData) -> Tuple[np.ndarray, float]:
    if sp.num_faces != sp.dim:
        raise UnsupportedConfigurationError(
            f"num_faces: {sp.num_faces} with dimension {sp.dim} is invalid (Q needs N = J)."
        )
    Q = np.abs(sp.directions @ sp.normals.T)
    np.fill_diagonal(Q, 0.0)
    return Q, spectral_radius(Q)


def _is_unit_quadrant(sp: SPData) -> bool:
    return (
        sp.family == "orthant"
        and sp.dim == 2
        and sp.num_faces == 2
        and np.array_equal(sp.normals, np.eye(2))
    )


def orthant2_step(x1, x2, d1, d2, c1, c2, tol=PI_PATTERN_SLACK):
    """
    pi for the two-dimensional orthant with n_i = e_i, on plain floats.

    Resolves the three boundary patterns {1}, {2}, {1,2} in turn; the
    complementarity solution is unique when rho(Q) < 1. A coordinate within
    the pattern slack below its face is snapped onto the face, so the result
    lies in G exactly and pi(pi(x)) = pi(x).
    """
    if x1 >= c1 and x2 >= c2:
        return x1, x2
    r1 = c1 - x1
    if r1 > 0.0:
        p2 = x2 + r1 * d1[1]
        if p2 >= c2 - tol:
            return c1, max(p2, c2)
    r2 = c2 - x2
    if r2 > 0.0:
        p1 = x1 + r2 * d2[0]
        if p1 >= c1 - tol:
            return max(p1, c1), c2
    det = 1.0 - d1[1] * d2[0]
    if det != 0.0:
        a, b = c1 - x1, c2 - x2
        corner_r1 = (a - d2[0] * b) / det
        corner_r2 = (b - d1[1] * a) / det
        if corner_r1 >= -tol and corner_r2 >= -tol:
            return c1, c2
    raise AssumptionViolationError(
        f"x: ({x1!r}, {x2!r}) admits no complementarity solution."
    )


def _pi_complementarity(sp: SPData, x: np.ndarray) -> np.ndarray:
    slack = sp.normals @ x - sp.offsets
    tol = PI_PATTERN_SLACK * (1.0 + float(np.max(np.abs(x))))
    for size in range(1, sp.num_faces + 1):
        for subset in itertools.combinations(range(sp.num_faces), size):
            S = list(subset)
            system = sp.normals[S] @ sp.directions[S].T
            try:
                r = np.linalg.solve(system, -slack[S])
            except np.linalg.LinAlgError:
                continue
            if np.any(r < -tol):
                continue
            candidate = x + sp.directions[S].T @ r
            if np.all(sp.normals @ candidate - sp.offsets >= -tol):
                return candidate
    raise AssumptionViolationError(
        f"x: {x.tolist()} admits no complementarity solution."
    )


def project_pi(sp: SPData, x) -> np.ndarray:
    x = np.array(x, dtype=float).reshape(-1)
    slack = sp.normals @ x - sp.offsets
    if np.all(slack >= 0.0):
        return x

    if sp.family == "one_dim":
        return x + sp.directions[0] * (-slack[0])
    if sp.family == "orthant":
        if _is_unit_quadrant(sp):
            d1, d2 = sp.directions
            c1, c2 = sp.offsets
            return np.array(orthant2_step(x[0], x[1], d1, d2, c1, c2))
        return _pi_complementarity(sp, x)
    if sp.family == "custom_pi":
        return np.asarray(sp.custom_pi(x), dtype=float)
    raise UnsupportedConfigurationError(
        f"family: {sp.family} has no projection; use one_dim, orthant or custom_pi."
    )


def nabla_pi(sp: SPData, x, v, tol: Optional[float] = None) -> np.ndarray:
    """
    Directional derivative of pi at x in G along v.

    Closed form for one_dim; otherwise difference quotients on a vanishing
    epsilon ladder, accepted once two successive quotients agree. x outside G
    is allowed and always takes the quotient route.
    """
    tol = DEFAULT_TOLERANCES.face if tol is None else tol
    x = np.array(x, dtype=float).reshape(-1)
    v = np.array(v, dtype=float).reshape(-1)
    slack = sp.normals @ x - sp.offsets
    if np.all(slack > tol):
        return v.copy()
    if sp.family == "one_dim" and slack[0] >= -tol:
        return v + sp.directions[0] * max(-float(sp.normals[0] @ v), 0.0)

    agreement = DEFAULT_TOLERANCES.richardson * max(1.0, float(np.linalg.norm(v)))
    base = project_pi(sp, x)
    quotients = []
    for eps in RICHARDSON_STEPS:
        quotients.append((project_pi(sp, x + eps * v) - base) / eps)
        if len(quotients) >= 2:
            coarse, fine = quotients[-2], quotients[-1]
            if np.linalg.norm(fine - coarse) <= agreement:
                return (10.0 * fine - coarse) / 9.0
    raise NumericalError(
        f"v: {v.tolist()} gives no convergent difference quotient at x = {x.tolist()}.",
        diagnostics={
            "eps": list(RICHARDSON_STEPS),
            "quotients": [q.tolist() for q in quotients],
        },
    )


def cone_residual(sp: SPData, x, p, tol: Optional[float] = None) -> float:
    """
    Nonnegative least-squares residual of p - x over {d_i : i in I(p)}.
    """
    delta = np.asarray(p, dtype=float) - np.asarray(x, dtype=float)
    faces = list(active_faces(sp, p, tol))
    if not faces:
        return float(np.linalg.norm(delta))
    _, residual = nnls(sp.directions[faces].T, delta)
    return float(residual)


@dataclass(frozen=True, eq=False)
class Facet:
    normal: np.ndarray
    offset: float
    vertices: np.ndarray


@dataclass(frozen=True, eq=False)
class BPolytope:
    """
    Compact, convex, symmetric polytope given by its vertices.
    """

    vertices: np.ndarray
    validation_errors: List[str] = field(
        default_factory=list, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen_array(self.vertices, ndim=2))

    @property
    def dim(self):
        return self.vertices.shape[1]

    @cached_property
    def facets(self) -> Tuple[Facet, ...]:
        """
        Half-space representation <a_f, z> <= b_f with unit outward a_f;
        coplanar hull simplices are merged into one facet.
        """
        points = self.vertices
        if self.dim == 1:
            hi, lo = float(points.max()), float(points.min())
            return (
                Facet(np.array([1.0]), hi, np.array([[hi]])),
                Facet(np.array([-1.0]), -lo, np.array([[lo]])),
            )
        try:
            hull = ConvexHull(points)
        except (QhullError, ValueError) as e:
            raise InvalidDataError(f"vertices: degenerate polytope is invalid ({e}).")

        merged = {}
        for equation in hull.equations:
            normal, offset = equation[:-1], -equation[-1]
            key = tuple(np.round(np.append(normal, offset), 9))
            merged.setdefault(key, (normal, offset))
        facets = []
        for normal, offset in merged.values():
            on_facet = np.abs(points @ normal - offset) <= 1e-9
            facets.append(Facet(normal.copy(), float(offset), points[on_facet]))
        return tuple(facets)

    @property
    def halfspaces(self) -> Tuple[np.ndarray, np.ndarray]:
        facets = self.facets
        return (
            np.array([f.normal for f in facets]),
            np.array([f.offset for f in facets]),
        )

    def validate(self):
        self.validation_errors.clear()
        if self.vertices.ndim != 2 or self.vertices.shape[0] < 2:
            self.validation_errors.append("vertices: at least two vertices are required.")
            return False
        try:
            _, offsets = self.halfspaces
        except InvalidDataError as e:
            self.validation_errors.append(str(e))
            return False
        if np.any(offsets <= 1e-12):
            self.validation_errors.append("vertices: 0 must lie strictly inside B.")
        for v in self.vertices:
            if not np.any(np.all(np.abs(self.vertices + v) <= 1e-9, axis=1)):
                self.validation_errors.append(
                    f"vertices: {v.tolist()} has no mirror vertex (symmetry)."
                )
                break
        return not self.validation_errors

    def checked(self):
        if not self.validate():
            raise InvalidDataError(" ".join(self.validation_errors))
        return self

    @classmethod
    def from_json(cls, document):
        return cls(vertices=document["vertices"]).checked()

    def to_json(self):
        return {"vertices": self.vertices.tolist()}
