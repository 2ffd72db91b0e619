from .run import ExperimentRun, RunResidual

__all__ = [
    "ExperimentRun",
    "RunResidual",
]
