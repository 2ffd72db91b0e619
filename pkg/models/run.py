import json
from datetime import datetime, timezone

from sqlalchemy import Boolean, Column, DateTime, Float, ForeignKey, Index, Integer, String, Text
from sqlalchemy.orm import relationship

from utils.db import BaseModel

SUBCOMMANDS = ("esm", "dp", "deriv-fd", "rbm", "refine", "jitter", "counterexample", "check", "proj")
STATUSES = ("passed", "failed", "error")


def _utcnow():
    return datetime.now(tz=timezone.utc)


class ExperimentRun(BaseModel):
    __tablename__ = "experiment_runs"
    id = Column(Integer, primary_key=True, autoincrement=True)

    subcommand = Column(String, nullable=False)
    config_json = Column(Text, nullable=False)
    seed = Column(Integer, nullable=True)
    status = Column(String, nullable=False)
    exit_code = Column(Integer, nullable=False)
    created_date = Column(DateTime, nullable=False, default=_utcnow)
    artifacts_path = Column(String, nullable=True)

    # Relationships
    residuals = relationship("RunResidual", back_populates="run", cascade="all, delete-orphan")

    __table_args__ = (Index("idx_experiment_runs_subcommand", "subcommand"),)

    def __init__(self, **kwargs):
        kwargs.setdefault("created_date", _utcnow())
        super().__init__(**kwargs)

    def validate_subcommand(self, key, subcommand):
        subcommand = (subcommand or "").strip()
        if subcommand not in SUBCOMMANDS:
            raise ValueError(f"{key}: {subcommand} is invalid.")
        return subcommand

    def validate_status(self, key, status):
        status = (status or "").strip().lower()
        if status not in STATUSES:
            raise ValueError(f"{key}: {status} is invalid.")
        return status

    def validate_config_json(self, key, config_json):
        """
        Accepts a dict or a JSON string and stores canonical JSON text.

        Raises:
            ValueError: If the string does not parse as JSON.
        """
        if isinstance(config_json, dict):
            return json.dumps(config_json, sort_keys=True, default=str)
        try:
            json.loads(config_json)
        except (TypeError, json.JSONDecodeError):
            raise ValueError(f"{key}: {config_json} is invalid.")
        return config_json


class RunResidual(BaseModel):
    __tablename__ = "run_residuals"
    id = Column(Integer, primary_key=True, autoincrement=True)

    # FKs
    run_id = Column(Integer, ForeignKey("experiment_runs.id"), nullable=False)

    name = Column(String, nullable=False)
    value = Column(Float, nullable=False)
    tolerance = Column(Float, nullable=False)
    passed = Column(Boolean, nullable=False)

    # Relationships
    run = relationship("ExperimentRun", back_populates="residuals")

    __table_args__ = (Index("idx_run_residuals_run_id", "run_id"),)

    def validate_value(self, key, value):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: {value} is invalid.")
