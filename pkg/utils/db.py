import logging
import os
from contextlib import contextmanager
from functools import lru_cache

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from utils.config import OUTPUT_DIR

Base = declarative_base()

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

LEDGER_FILE = "ledger.db"


def ledger_url(output_dir=None):
    output_dir = OUTPUT_DIR if output_dir is None else output_dir
    return f"sqlite:///{os.path.join(output_dir, LEDGER_FILE)}"


@lru_cache(maxsize=None)
def get_engine(url):
    return create_engine(url)


class BaseModel(Base):
    __abstract__ = True

    def __init__(self, **kwargs):
        self.validation_errors = []
        # Report unknown columns into validation errors
        unknown_columns = set(kwargs.keys()) - set([c.name for c in self.columns])
        if unknown_columns:
            self.validation_errors.append(
                f"Unknown columns: {', '.join(sorted(unknown_columns))}"
            )

        for col in unknown_columns:
            kwargs.pop(col)

        super().__init__(**kwargs)

    def validate(self):
        for column in self.columns:
            value = getattr(self, column.name)
            try:
                if not column.nullable and value is None and not column.primary_key:
                    raise ValueError(f"{column.name} cannot be null.")

                validator = getattr(self, f"validate_{column.name}", None)
                if callable(validator):
                    setattr(self, column.name, validator(column.name, value))
            except ValueError as e:
                self.validation_errors.append(str(e))

        return not self.validation_errors

    def as_dict(self):
        return {c.name: getattr(self, c.name) for c in self.__table__.columns}

    @property
    def columns(self):
        return [c for c in self.__table__.columns]


@contextmanager
def db_session(output_dir=None):
    """
    Session on the run ledger under `output_dir`; the schema is created on first use.
    """
    output_dir = OUTPUT_DIR if output_dir is None else output_dir
    os.makedirs(output_dir, exist_ok=True)
    engine = get_engine(ledger_url(output_dir))
    Base.metadata.create_all(bind=engine)
    session = sessionmaker(bind=engine)()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
