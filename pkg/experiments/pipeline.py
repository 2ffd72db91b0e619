import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from models import ExperimentRun, RunResidual
from models.run import SUBCOMMANDS
from skorokhod.derivproj import (
    adjoint,
    b_norm,
    build_projection,
    check_set_b,
    composition_limit,
    cycle_contraction,
    dual_norm,
)
from skorokhod.dp import (
    dp_condition_residuals,
    dp_linearity_check,
    dp_lipschitz_report,
    dp_timeshift_check,
    solve_dp,
    theta_z,
)
from skorokhod.errors import DerivativeUndefinedError, SizeError, SkorokhodError, WMembershipError
from skorokhod.esm import (
    EspSolution,
    convergence_slope,
    esm_timeshift_check,
    fd_quotient,
    invariant_residuals,
    lipschitz_report,
    local_time_lipschitz_report,
    refinement_study,
    solve_esm,
)
from skorokhod.fixtures import MAX_K, build_d2_counterexample, run_d2_subsequences
from skorokhod.geometry import (
    BPolytope,
    FaceSet,
    SPData,
    classify_boundary,
    nabla_pi,
    q_matrix,
)
from skorokhod.paths import PwLinearPath, uniform_times
from skorokhod.rbm import (
    Perturbation,
    RbmParams,
    brownian_refinement,
    errors_decreasing,
    event_mask,
    jitter_trend,
    run_batch,
)
from utils.config import DEFAULT_TOLERANCES, OUTPUT_DIR
from utils.db import db_session
from utils.io import parse_face_sequence, read_frame, read_json, write_frame, write_json

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

DEFAULT_EPS = (1e-2, 1e-3, 1e-4)

# share of RBM paths whose finite-difference error must decrease
DECREASING_PATH_FRACTION = 0.9

# grid levels k, dt = 2^-k
REFINE_LEVELS = tuple(range(6, 13))
REFERENCE_LEVEL = 14
JITTER_LEVELS = (10, 12, 14)

# log-log error slopes required by the refinement study
PW_LINEAR_MIN_SLOPE = 0.9
# nodal error of a discretely sampled reflection shrinks like dt^(1/2)
BROWNIAN_MIN_SLOPE = 0.25

REQUIRED_INPUTS = {
    "esm": ("sp", "path"),
    "dp": ("sp", "psi"),
    "deriv-fd": ("sp", "path", "psi"),
    "rbm": ("params", "pert"),
    "counterexample": (),
    "check": ("sp",),
    "proj": ("sp", "faces", "y"),
    "refine": (),
    "jitter": ("params",),
}


@dataclass
class RunConfig:
    subcommand: str
    sp: Optional[str] = None
    params: Optional[str] = None
    pert: Optional[str] = None
    path: Optional[str] = None
    psi: Optional[str] = None
    esm: Optional[str] = None
    b: Optional[str] = None
    delta: Optional[float] = None
    horizon: Optional[float] = None
    grid_dt: Optional[float] = None
    seed: int = 0
    seeds: int = 1
    eps: List[float] = field(default_factory=lambda: list(DEFAULT_EPS))
    out: str = OUTPUT_DIR
    kmax: int = MAX_K
    faces: Optional[str] = None
    y: Optional[List[float]] = None
    sequence: Optional[str] = None
    target: Optional[str] = None
    window: int = 1
    workers: int = 1
    samples: int = 20
    levels: Optional[List[int]] = None
    tolerances: Dict[str, float] = field(default_factory=dict)
    validation_errors: List[str] = field(default_factory=list, init=False, repr=False)

    def validate(self):
        self.validation_errors.clear()
        if self.subcommand not in SUBCOMMANDS:
            self.validation_errors.append(f"subcommand: {self.subcommand} is invalid.")
            return False
        for name in REQUIRED_INPUTS[self.subcommand]:
            if getattr(self, name) in (None, "", []):
                self.validation_errors.append(f"{name}: required for {self.subcommand}.")
        if self.subcommand == "dp" and not (self.path or self.esm):
            self.validation_errors.append("path: dp needs --path or --esm.")
        if self.subcommand == "refine" and not (self.params or (self.sp and self.path)):
            self.validation_errors.append("params: refine needs --params or --sp with --path.")
        if self.levels is not None and (not self.levels or any(k < 1 for k in self.levels)):
            self.validation_errors.append(f"levels: {self.levels} is invalid (positive integers).")
        if self.grid_dt is not None and self.grid_dt <= 0:
            self.validation_errors.append(f"grid_dt: {self.grid_dt} is invalid (must be positive).")
        if self.horizon is not None and self.horizon <= 0:
            self.validation_errors.append(f"horizon: {self.horizon} is invalid (must be positive).")
        eps = list(self.eps)
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            self.validation_errors.append(
                f"eps: {eps} is invalid (must be positive and strictly decreasing)."
            )
        if not 1 <= self.kmax <= MAX_K:
            self.validation_errors.append(f"kmax: {self.kmax} is invalid (1..{MAX_K}).")
        if self.seeds < 1:
            self.validation_errors.append(f"seeds: {self.seeds} is invalid.")
        if self.b and self.delta is None:
            self.validation_errors.append("delta: required together with b.")
        try:
            DEFAULT_TOLERANCES.override(**self.tolerances)
        except ValueError as e:
            self.validation_errors.append(str(e))
        return not self.validation_errors

    def as_dict(self):
        document = asdict(self)
        document.pop("validation_errors")
        return document


class Pipeline:
    """
    Runs one subcommand: reads its inputs, writes CSV/JSON artifacts under the
    output directory, checks every residual against its tolerance and records
    the run in the ledger.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.output_dir = config.out
        self.tolerances = DEFAULT_TOLERANCES
        self.residual_errors: Dict[str, List[dict]] = {name: [] for name in SUBCOMMANDS}
        self.residuals: List[dict] = []
        self.report: Dict[str, object] = {}
        self.artifacts: List[str] = []
        self.errored = False

    def run(self) -> int:
        config = self.config
        if not config.validate():
            self.errored = True
            self._errors_for(config.subcommand).append(
                {"error": "InvalidDataError", "message": " ".join(config.validation_errors)}
            )
        else:
            self.tolerances = DEFAULT_TOLERANCES.override(**config.tolerances)
            os.makedirs(self.output_dir, exist_ok=True)
            process = getattr(self, f"process_{config.subcommand.replace('-', '_')}")
            started = time.perf_counter()
            try:
                process()
            except SkorokhodError as e:
                self.errored = True
                entry = {"error": type(e).__name__, "message": str(e)}
                if isinstance(e, DerivativeUndefinedError):
                    entry["tau"] = e.tau
                self._errors_for(config.subcommand).append(entry)
                logger.error("%s failed: %s", config.subcommand, e)
            logger.info("%s finished in %.2f s", config.subcommand, time.perf_counter() - started)
            self.report["residuals"] = {r["residual"]: r for r in self.residuals}
            self.artifacts.append(
                write_json(self.report, os.path.join(self.output_dir, f"{config.subcommand}-report.json"))
            )

        failed = any(len(errors) > 0 for errors in self.residual_errors.values())
        exit_code = 1 if failed else 0
        if failed:
            self.log_errors()
            logger.info(
                "\n %s run completed with failures. Please check them out at: %s",
                config.subcommand,
                self.output_dir,
            )
        else:
            logger.info("\n %s run completed; every residual is within tolerance.", config.subcommand)

        if config.subcommand in SUBCOMMANDS:
            self.record_run(exit_code)
        return exit_code

    def _errors_for(self, subcommand):
        return self.residual_errors.setdefault(subcommand, [])

    def log_errors(self):
        """
        Writes the residual failures and errors to a JSON file.
        """
        errors_file_path = os.path.join(self.output_dir, f"{time.time()}-pipeline-errors.json")
        write_json(
            {name: errors for name, errors in self.residual_errors.items() if errors},
            errors_file_path,
        )
        self.artifacts.append(errors_file_path)
        return errors_file_path

    def check_residual(self, name, value, tolerance):
        value = float(value)
        passed = bool(value <= tolerance)
        self.residuals.append(
            {"residual": name, "value": value, "tolerance": float(tolerance), "passed": passed}
        )
        if not passed:
            self._errors_for(self.config.subcommand).append(
                {"residual": name, "value": value, "tolerance": float(tolerance)}
            )
            logger.warning("Residual %s = %.3e exceeds %.3e", name, value, tolerance)
        return passed

    def record_run(self, exit_code):
        if self.errored:
            status = "error"
        else:
            status = "failed" if exit_code else "passed"
        try:
            with db_session(self.output_dir) as session:
                self._save_run(session, status, exit_code)
        except SQLAlchemyError as e:
            logger.warning("Run ledger not updated: %s", e)

    def _save_run(self, session: Session, status, exit_code):
        run = ExperimentRun(
            subcommand=self.config.subcommand,
            config_json=self.config.as_dict(),
            seed=self.config.seed,
            status=status,
            exit_code=exit_code,
            artifacts_path=self.output_dir,
        )
        if not run.validate():
            logger.warning("Run ledger entry rejected: %s", run.validation_errors)
            return
        session.add(run)
        session.flush()

        to_create = []
        for residual in self.residuals:
            row = RunResidual(
                run_id=run.id,
                name=residual["residual"],
                value=residual["value"],
                tolerance=residual["tolerance"],
                passed=residual["passed"],
            )
            if row.validate():
                to_create.append(row)
        session.bulk_save_objects(to_create)

    def _artifact(self, name):
        path = os.path.join(self.output_dir, name)
        self.artifacts.append(path)
        return path

    def _load_sp(self) -> SPData:
        return SPData.from_json(read_json(self.config.sp))

    def _load_b(self):
        if not self.config.b:
            return None
        return BPolytope.from_json(read_json(self.config.b))

    def _grid(self, horizon):
        if self.config.grid_dt is None:
            return None
        return uniform_times(self.config.horizon or horizon, self.config.grid_dt)

    def _random_path(self, template: PwLinearPath, rng, scale):
        noise = rng.standard_normal(template.values.shape) * scale
        return PwLinearPath(template.times, noise)

    def _solve_input(self, sp):
        X = PwLinearPath.from_frame(read_frame(self.config.path))
        return X, solve_esm(sp, X, self._grid(X.horizon), self.tolerances.face, self._decomposable(sp))

    def _decomposable(self, sp):
        # L is not unique when the direction cone contains a line
        try:
            return not classify_boundary(sp, self.tolerances.face).v_sets
        except SizeError:
            return True

    def process_esm(self):
        """
        Solves the ESM for an input path and checks the solution.

        This method:
        1. Reads the SP data and the input path, and solves on the path's
           breakpoints or on the --grid-dt grid.
        2. Writes the solution to esm.csv.
        3. Checks Z = X + Y, Z in G, the local-time conditions and the time shift.
        4. Estimates the Lipschitz constants of Z and L over random perturbations.
        """
        sp = self._load_sp()
        X, sol = self._solve_input(sp)
        write_frame(sol.to_frame(), self._artifact("esm.csv"))

        # Check the defining conditions
        residuals = invariant_residuals(sp, X, sol)
        limits = {
            "z_equals_x_plus_y": self.tolerances.residual,
            "z_in_g": self.tolerances.face,
            "l_nondecreasing": self.tolerances.clip,
            "l_complementarity": self.tolerances.residual,
            "y_equals_rl": self.tolerances.residual,
        }
        for name, value in residuals.items():
            self.check_residual(name, value, limits[name])

        # Re-solve from the middle of the grid
        S = float(sol.grid[sol.grid.size // 2])
        self.check_residual("time_shift", esm_timeshift_check(sp, X, sol, S), self.tolerances.residual)

        # Empirical Lipschitz constants over seeded perturbations of X
        rng = np.random.default_rng(self.config.seed)
        scale = 1e-2 * max(1.0, float(np.abs(X.values).max()))
        T = sol.horizon
        kappa, kappa_l = 0.0, 0.0
        for _ in range(self.config.samples):
            X2 = X + self._random_path(X, rng, scale)
            kappa = max(kappa, lipschitz_report(sp, X, X2, T, sol.grid, sol.tol))
            if sol.L is not None:
                kappa_l = max(kappa_l, local_time_lipschitz_report(sp, X, X2, T, sol.grid, sol.tol))

        self.report.update(
            {
                "grid_points": int(sol.grid.size),
                "boundary_steps": sum(1 for faces in sol.face_trace if faces),
                "local_times": sol.L is not None,
                "constants": {"kappa_gamma": kappa, "kappa_l": kappa_l if sol.L is not None else None},
            }
        )
        logger.info("ESM kappa estimates over %d samples: %.4f / %.4f", self.config.samples, kappa, kappa_l)

    def _esp_for_dp(self, sp):
        if self.config.esm:
            return EspSolution.from_frame(read_frame(self.config.esm), self.tolerances.face)
        return self._solve_input(sp)[1]

    def process_dp(self):
        """
        Solves the derivative problem along a constrained path.

        This method:
        1. Loads a stored ESM solution (--esm) or solves one from --path.
        2. Solves the DP for psi and regularizes it into Theta_Z.
        3. Writes dp.csv and the event log dp-events.json.
        4. Checks the defining conditions, linearity and the time shift.
        5. Estimates the Lipschitz constant over random perturbations of psi.
        """
        sp = self._load_sp()
        esp = self._esp_for_dp(sp)
        psi = PwLinearPath.from_frame(read_frame(self.config.psi))
        sol = solve_dp(sp, esp, psi)
        deriv_at_0 = nabla_pi(sp, esp.X(0.0), psi(0.0), self.tolerances.face)
        theta_z(sol, sp, deriv_at_0, self.tolerances.face)

        # One column block per path: phi, its left limits, eta and Theta
        frame = pd.DataFrame({"t": sol.grid})
        for label, values in (
            ("phi", sol.phi.values),
            ("phi_left", sol.phi.left_values),
            ("eta", sol.eta.values),
            ("theta", sol.theta.values),
        ):
            for i in range(values.shape[1]):
                frame[f"{label}_{i + 1}"] = values[:, i]
        frame["faces"] = [faces.label for faces in sol.face_sets]
        write_frame(frame, self._artifact("dp.csv"))
        write_json(
            {"tau": sol.tau, "events": [event.as_dict() for event in sol.events]},
            self._artifact("dp-events.json"),
        )

        for name, value in dp_condition_residuals(sp, esp, sol, psi).items():
            self.check_residual(name, value, self.tolerances.residual)

        # Linearity against a second, seeded perturbation
        rng = np.random.default_rng(self.config.seed)
        psi_values = psi.values_at(esp.grid)
        other = psi_values + rng.standard_normal(psi_values.shape)
        other_sol = solve_dp(sp, esp, other)
        self.check_residual(
            "linearity",
            dp_linearity_check(sp, esp, sol, other_sol, 2.0, -1.0, psi_values, other),
            self.tolerances.residual,
        )
        S = float(sol.grid[(sol.grid.size - 1) // 2])
        self.check_residual(
            "time_shift", dp_timeshift_check(sp, esp, psi, S, sol), self.tolerances.residual
        )

        kappa = 0.0
        for _ in range(self.config.samples):
            ratio = dp_lipschitz_report(
                sp, esp, psi_values, psi_values + rng.standard_normal(psi_values.shape)
            )
            kappa = max(kappa, ratio or 0.0)
        self.report.update(
            {
                "tau": sol.tau,
                "events": len(sol.events),
                "deriv_at_0": deriv_at_0.tolist(),
                "constants": {"kappa_lambda": kappa},
            }
        )

    def process_deriv_fd(self):
        """
        Compares the DP-based directional derivative with ESM difference quotients.

        This method:
        1. Solves the ESM for --path and the DP for --psi along it.
        2. Computes (Z(X + eps psi) - Z(X)) / eps for every eps.
        3. Measures the largest gap to Theta_Z away from the derivative's events.
        4. Writes deriv-fd.csv and checks that the gap decreases along eps.
        """
        sp = self._load_sp()
        X, base = self._solve_input(sp)
        psi = PwLinearPath.from_frame(read_frame(self.config.psi))
        sol = solve_dp(sp, base, psi)
        theta_z(sol, sp, nabla_pi(sp, X(0.0), psi(0.0), self.tolerances.face), self.tolerances.face)

        # The DP stops at tau; quotients are compared up to there
        size = sol.grid.size
        keep = event_mask(sol, size, self.config.window)
        frame = pd.DataFrame({"t": sol.grid})
        for i in range(sol.theta.dim):
            frame[f"dz_{i + 1}"] = sol.theta.values[:, i]
        errors = {}
        for eps in self.config.eps:
            quotient = fd_quotient(sp, X, psi, eps, base).values[:size]
            for i in range(quotient.shape[1]):
                frame[f"fd_{eps:g}_{i + 1}"] = quotient[:, i]
            gap = np.linalg.norm(quotient - sol.theta.values, axis=1)
            errors[eps] = float(gap[keep].max()) if np.any(keep) else 0.0
        write_frame(frame, self._artifact("deriv-fd.csv"))

        decreasing = errors_decreasing(errors)
        self.check_residual("fd_error_not_decreasing", 0.0 if decreasing else 1.0, 0.0)
        self.report.update(
            {"tau": sol.tau, "errors": {repr(e): v for e, v in errors.items()}, "decreasing": decreasing}
        )

    def _seeds(self):
        return [self.config.seed + k for k in range(self.config.seeds)]

    def process_rbm(self):
        """
        Pathwise derivatives of seeded quadrant RBM paths against finite differences.

        This method:
        1. Reads the RBM parameters and the perturbation.
        2. Simulates one path per seed, in parallel with --workers.
        3. Writes rbm-seed-<seed>.csv per path and the error table rbm-errors.csv.
        4. Checks the share of paths whose finite-difference error decreases.
        """
        params = RbmParams.from_json(read_json(self.config.params))
        pert = Perturbation.from_json(read_json(self.config.pert)).checked(params)
        grid = uniform_times(self.config.horizon or 1.0, self.config.grid_dt or 2.0**-REFERENCE_LEVEL)
        seeds = self._seeds()
        summary = run_batch(
            params,
            pert,
            seeds,
            grid,
            self.config.eps,
            self.config.window,
            self.config.workers,
            self.output_dir,
        )
        self.artifacts.extend(os.path.join(self.output_dir, f"rbm-seed-{s}.csv") for s in seeds)

        rows = [
            {"seed": seed, **{f"E_{eps:g}": err for eps, err in summary.errors[seed].items()}}
            for seed in seeds
        ]
        write_frame(pd.DataFrame(rows), self._artifact("rbm-errors.csv"))
        self.check_residual(
            "decreasing_fraction_shortfall",
            max(0.0, DECREASING_PATH_FRACTION - summary.decreasing_fraction),
            0.0,
        )
        self.report.update(summary.as_dict())

    def process_refine(self):
        """
        Grid-refinement study of the ESM scheme.

        This method:
        1. Solves the ESM on uniform grids dt = 2^-k for every --levels k,
           either for the input path (--sp, --path) or for seeded quadrant RBM
           inputs (--params) sampled from one reference Brownian path.
        2. Measures every solution against the exact one-dimensional map, a
           finer grid or the reference path, and against the next finer grid.
        3. Writes refine.csv and checks the fitted log-log slope of the error.
        """
        dts = [2.0**-k for k in (self.config.levels or REFINE_LEVELS)]
        if self.config.params:
            # every grid samples the same Brownian increments
            params = RbmParams.from_json(read_json(self.config.params))
            reference_dt = self.config.grid_dt or 2.0**-REFERENCE_LEVEL
            table = brownian_refinement(params, self._seeds(), dts, reference_dt, self.config.horizon or 1.0)
            min_slope = BROWNIAN_MIN_SLOPE
        else:
            sp = self._load_sp()
            X = PwLinearPath.from_frame(read_frame(self.config.path))
            table = refinement_study(sp, X, dts, tol=self.tolerances.face)
            min_slope = PW_LINEAR_MIN_SLOPE
        write_frame(table, self._artifact("refine.csv"))

        # A scheme that is exact on every grid leaves nothing to fit
        slope = None
        if (table["error"] > 0.0).sum() >= 2:
            slope = convergence_slope(table["dt"], table["error"])
            self.check_residual("refinement_slope_shortfall", max(0.0, min_slope - slope), 0.0)
        else:
            logger.info(
                "Refinement errors vanish on all but %d grid(s); no slope fitted.",
                int((table["error"] > 0.0).sum()),
            )
        self.report.update(
            {
                "dt": table["dt"].tolist(),
                "error": table["error"].tolist(),
                "successive": table["successive"].tolist(),
                "slope": slope,
                "min_slope": min_slope,
            }
        )

    def process_jitter(self):
        """
        Trend of the boundary-jitter proxies under grid refinement.

        This method:
        1. Simulates the seeded quadrant RBM paths on dt = 2^-k for every --levels k.
        2. Averages the jitter proxies over the seeds per grid.
        3. Writes jitter-trend.csv and checks that the corner time fraction
           decreases as dt shrinks.
        """
        params = RbmParams.from_json(read_json(self.config.params))
        dts = [2.0**-k for k in (self.config.levels or JITTER_LEVELS)]
        table = jitter_trend(
            params, self._seeds(), dts, self.config.horizon or 1.0, workers=self.config.workers
        )
        write_frame(table, self._artifact("jitter-trend.csv"))

        # Rows run from the coarsest grid to the finest
        fractions = table["corner_time_fraction"].to_numpy()
        decreasing = bool(np.all(np.diff(fractions) < 0.0))
        self.check_residual("corner_time_not_decreasing", 0.0 if decreasing else 1.0, 0.0)
        self.report.update({"trend": table.to_dict(orient="records"), "decreasing": decreasing})

    def process_counterexample(self):
        """
        The nonempty-W counter-example in the quadrant.

        This method:
        1. Builds the difference quotients at t = 1 along eps = gamma^{2k} and
           gamma^{2k+1}, checked bit for bit against the closed form.
        2. Writes counterexample.csv.
        3. Solves the DP along the base path, which stops at tau on the corner.
        4. Iterates the alternating face projections toward the corner, whose
           norms never contract.
        """
        result = run_d2_subsequences(self.config.kmax)
        write_frame(result.table, self._artifact("counterexample.csv"))

        fixture = build_d2_counterexample(self.config.kmax)
        base = solve_esm(fixture.sp, fixture.X, decompose=False)
        sol = solve_dp(fixture.sp, base, fixture.psi)

        # Alternating single-face projections
        singles = [FaceSet([0]), FaceSet([1])]
        y = np.array([1.0, 0.0])
        cycle_norms = []
        for _ in range(10):
            for faces in singles:
                y = build_projection(fixture.sp, faces)(y)
            cycle_norms.append(float(np.linalg.norm(y)))
        try:
            composition_limit(fixture.sp, singles, (0, 1), [1.0, 0.0])
            corner = "defined"
        except WMembershipError:
            corner = "undefined (W)"

        self.report.update(
            {
                "limit_even": result.limit_even.tolist(),
                "limit_odd": result.limit_odd.tolist(),
                "W": [list(f) for f in classify_boundary(fixture.sp).w_sets],
                "tau": sol.tau,
                "corner_projection": corner,
                "cycle_norms": cycle_norms,
            }
        )

    def process_check(self):
        """
        Boundary classification and the projection checks of the SP data.

        This method:
        1. Classifies the feasible face sets into V and W, and reports Q and
           rho(Q) when N = J.
        2. Checks the projection algebra of L_x and L_x* per non-W face set.
        3. Given --b, checks the normal geometry of B, the B-norm contraction
           of every L_x and reports the adjoint cycle contraction per corner.
        """
        sp = self._load_sp()
        classification = classify_boundary(sp, self.tolerances.face)
        self.report["classification"] = classification.as_dict()
        if sp.num_faces == sp.dim:
            Q, rho = q_matrix(sp)
            self.report["Q"] = Q.tolist()
            self.report["rho"] = rho

        projections = {}
        for faces in classification.feasible:
            if faces in classification.w_sets:
                continue
            p = build_projection(sp, faces, self.tolerances)
            projections[faces] = p
            worst = max(list(p.residuals().values()) + list(adjoint(p).residuals().values()))
            self.check_residual(f"projection[{faces.label}]", worst, self.tolerances.projection)

        B = self._load_b()
        if B is None:
            return
        report = check_set_b(sp, B, self.config.delta)
        self.report["set_b"] = report.as_dict()
        self.check_residual("set_b_violations", len(report.violations), 0)

        # ||L_x y||_B <= ||y||_B on seeded samples
        rng = np.random.default_rng(self.config.seed)
        ys = rng.standard_normal((1000, sp.dim))
        expansion = 0.0
        for p in projections.values():
            for y in ys:
                expansion = max(expansion, b_norm(B, p(y)) - b_norm(B, y))
        self.check_residual("b_norm_expansion", expansion, self.tolerances.projection)

        delta_hat = {}
        for faces, p in projections.items():
            if len(faces) < 2:
                continue
            singles = [FaceSet([i]) for i in faces]
            delta_hat[faces.label] = cycle_contraction(sp, B, singles, faces, seed=self.config.seed)
        self.report["constants"] = {"delta_hat": delta_hat}

    def process_proj(self):
        """
        L_x for one face set applied to a vector.

        This method:
        1. Builds L_x for --faces, applies it to --y and writes the matrix to proj.csv.
        2. Checks the projection algebra of L_x and L_x*.
        3. Given --b, reports the B-norm and dual-norm of y and its images.
        4. Given --sequence, iterates the cyclic product toward --target and
           checks that its contraction factor is below one.
        """
        sp = self._load_sp()
        faces = FaceSet.parse(self.config.faces, sp.num_faces)
        y = np.asarray(self.config.y, dtype=float)
        p = build_projection(sp, faces, self.tolerances)
        frame = pd.DataFrame(p.matrix, columns=[f"col_{j + 1}" for j in range(sp.dim)])
        write_frame(frame, self._artifact("proj.csv"))

        for name, value in {**p.residuals(), **adjoint(p).residuals()}.items():
            self.check_residual(name, value, self.tolerances.projection)
        self.report.update({"faces": list(faces), "matrix": p.matrix.tolist(), "Ly": p(y).tolist()})

        B = self._load_b()
        if B is not None:
            self.report["b_norm"] = {"y": b_norm(B, y), "Ly": b_norm(B, p(y))}
            self.report["dual_norm"] = {"y": dual_norm(B, y), "L*y": dual_norm(B, adjoint(p)(y))}

        if self.config.sequence:
            sequence = parse_face_sequence(self.config.sequence, sp.num_faces)
            target = FaceSet.parse(self.config.target or self.config.faces, sp.num_faces)
            result = composition_limit(sp, sequence, target, y, tol=self.tolerances.composition)
            self.report["composition"] = {
                "limit": result.limit.tolist(),
                "cycles": result.cycles,
                "contraction_factor": result.contraction_factor,
            }
            self.check_residual("contraction_factor_below_one", float(result.contraction_factor >= 1.0), 0.0)
