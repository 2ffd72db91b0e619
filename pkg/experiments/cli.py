import argparse
import logging
import sys
from dataclasses import fields

from experiments.pipeline import DEFAULT_EPS, Pipeline, RunConfig
from models.run import SUBCOMMANDS
from skorokhod.errors import InvalidDataError
from skorokhod.fixtures import MAX_K
from utils.config import OUTPUT_DIR, Tolerances
from utils.io import parse_float_list, parse_int_list

HELP = {
    "esm": "solve the ESM for a path CSV and report invariant residuals",
    "dp": "solve the derivative problem along a constrained path",
    "deriv-fd": "compare DP derivatives with ESM finite differences",
    "rbm": "pathwise derivatives of seeded quadrant RBM paths",
    "refine": "grid-refinement convergence of the ESM scheme",
    "jitter": "corner-jitter proxies of quadrant RBM under grid refinement",
    "counterexample": "difference quotients of the nonempty-W counter-example",
    "check": "classify the boundary, Q matrix and optional B-set checks",
    "proj": "derivative projection for a face set",
}


def common_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--sp", help="SP data JSON")
    parser.add_argument("--params", help="RBM parameters JSON")
    parser.add_argument("--pert", help="RBM perturbation JSON")
    parser.add_argument("--path", help="input path CSV (t, v_1..v_J)")
    parser.add_argument("--psi", help="perturbation path CSV (t, v_1..v_J)")
    parser.add_argument("--esm", help="ESM solution CSV written by the esm subcommand")
    parser.add_argument("--b", help="B polytope JSON")
    parser.add_argument("--delta", type=float)
    parser.add_argument("--grid-dt", "--dt", type=float, dest="grid_dt")
    parser.add_argument("--horizon", type=float)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    parser.add_argument("--eps", default=",".join(repr(e) for e in DEFAULT_EPS))
    parser.add_argument("--out", default=OUTPUT_DIR)
    parser.add_argument("--kmax", type=int, default=MAX_K)
    parser.add_argument("--faces", help='face set, e.g. "0,1"')
    parser.add_argument("--y", help='vector, e.g. "1,0"')
    parser.add_argument("--sequence", help='face sets separated by "|", e.g. "0|1"')
    parser.add_argument("--target")
    parser.add_argument("--window", type=int, default=1)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--samples", type=int, default=20)
    parser.add_argument("--levels", help='grid levels k of dt = 2^-k, e.g. "6,7,8"')
    parser.add_argument("--log-level", default="INFO")
    for tolerance in fields(Tolerances):
        parser.add_argument(f"--tol-{tolerance.name.replace('_', '-')}", type=float, dest=f"tol_{tolerance.name}")
    return parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="python -m experiments.cli",
        description="Skorokhod map and derivative problem experiments.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    common = common_parser()
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common], help=HELP[name])
    return parser


def config_from_args(args) -> RunConfig:
    tolerances = {
        f.name: getattr(args, f"tol_{f.name}")
        for f in fields(Tolerances)
        if getattr(args, f"tol_{f.name}") is not None
    }
    return RunConfig(
        subcommand=args.subcommand,
        sp=args.sp,
        params=args.params,
        pert=args.pert,
        path=args.path,
        psi=args.psi,
        esm=args.esm,
        b=args.b,
        delta=args.delta,
        horizon=args.horizon,
        grid_dt=args.grid_dt,
        seed=args.seed,
        seeds=args.seeds,
        eps=parse_float_list(args.eps),
        out=args.out,
        kmax=args.kmax,
        faces=args.faces,
        y=parse_float_list(args.y, "y") if args.y else None,
        sequence=args.sequence,
        target=args.target,
        window=args.window,
        workers=args.workers,
        samples=args.samples,
        levels=parse_int_list(args.levels, "levels") if args.levels else None,
        tolerances=tolerances,
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(levelname)-5.5s [%(name)s] %(message)s",
    )
    try:
        config = config_from_args(args)
    except InvalidDataError as e:
        logging.getLogger(__name__).error("%s", e)
        return 2
    return Pipeline(config).run()


if __name__ == "__main__":
    sys.exit(main())
