from .derivproj import (
    AdjointProjection,
    DerivProjection,
    adjoint,
    b_norm,
    build_projection,
    check_set_b,
    composition_limit,
    cycle_contraction,
    dual_norm,
)
from .dp import DpSolution, solve_dp, theta_z
from .esm import EspSolution, decompose_local_times, solve_esm
from .geometry import (
    BPolytope,
    FaceSet,
    SPData,
    active_faces,
    classify_boundary,
    nabla_pi,
    project_pi,
    q_matrix,
)
from .paths import CadlagStepPath, PwLinearPath, sup_norm, time_shift
from .rbm import Perturbation, RbmParams, fd_derivative, pathwise_derivative, simulate_rbm
from .sm1d import f_functional, fd_oracle, gamma1, nabla_gamma1, phi_set

__all__ = [
    "FaceSet",
    "SPData",
    "BPolytope",
    "active_faces",
    "classify_boundary",
    "q_matrix",
    "project_pi",
    "nabla_pi",
    "PwLinearPath",
    "CadlagStepPath",
    "sup_norm",
    "time_shift",
    "gamma1",
    "phi_set",
    "f_functional",
    "nabla_gamma1",
    "fd_oracle",
    "EspSolution",
    "solve_esm",
    "decompose_local_times",
    "DerivProjection",
    "AdjointProjection",
    "build_projection",
    "adjoint",
    "b_norm",
    "dual_norm",
    "check_set_b",
    "composition_limit",
    "cycle_contraction",
    "DpSolution",
    "solve_dp",
    "theta_z",
    "RbmParams",
    "Perturbation",
    "simulate_rbm",
    "pathwise_derivative",
    "fd_derivative",
]
