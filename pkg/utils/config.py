import os
from dataclasses import dataclass, fields, replace

# default location for CSV/JSON artifacts and the run ledger
OUTPUT_DIR = os.getenv("SKOROKHOD_OUTPUT_DIR", "data/runs")


@dataclass(frozen=True)
class Tolerances:
    """
    Numerical tolerances shared by the solvers and the CLI reports.
    """

    # boundary membership for exact (pw-linear) inputs
    face: float = 1e-9
    # invariant residuals reported by the checks
    residual: float = 1e-9
    # projection algebra (P^2 = P, range/complement)
    projection: float = 1e-10
    # per-step local-time decomposition
    decomposition: float = 1e-6
    # negative local-time increments above this are floating-point noise
    clip: float = 1e-9
    # (Nm'D) condition-number guard
    condition: float = 1e12
    # per-cycle displacement for cyclic projection products
    composition: float = 1e-12
    # agreement of successive difference quotients for the derivative of pi
    richardson: float = 1e-6
    # running-max attachment points closer than this to a breakpoint are snapped
    snap: float = 1e-12
    # argmax membership of -f
    argmax: float = 1e-12
    # sampled RBM paths: face tolerance = rbm_face_scale * |sigma| * sqrt(dt)
    rbm_face_scale: float = 1e-7

    def override(self, **kwargs):
        """
        Returns a copy with the given tolerances replaced; None values are ignored.
        """
        known = {f.name for f in fields(self)}
        unknown = set(kwargs) - known
        if unknown:
            raise ValueError(f"tolerances: {', '.join(sorted(unknown))} is invalid.")
        values = {k: float(v) for k, v in kwargs.items() if v is not None}
        for name, value in values.items():
            if not value > 0:
                raise ValueError(f"tolerances: {name} = {value!r} is invalid (must be positive).")
        return replace(self, **values)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_TOLERANCES = Tolerances()
