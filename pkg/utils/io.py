import json
import os

import numpy as np
import pandas as pd

from skorokhod.errors import InvalidDataError
from skorokhod.geometry import FaceSet

# 17 significant digits round-trip every float64
FLOAT_FORMAT = "%.17g"


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise InvalidDataError(f"{path}: file does not exist.") from e
    except json.JSONDecodeError as e:
        raise InvalidDataError(f"{path}: malformed JSON ({e}).") from e


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(document, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(document, f, indent=4, default=_to_builtin)
    return path


def read_frame(path) -> pd.DataFrame:
    if not os.path.exists(path):
        raise InvalidDataError(f"{path}: file does not exist.")
    return pd.read_csv(path)


def write_frame(frame: pd.DataFrame, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def parse_float_list(text, name="eps"):
    """
    Parses "1e-2,1e-3" into floats.
    """
    try:
        return [float(part) for part in str(text).split(",") if part.strip()]
    except ValueError as e:
        raise InvalidDataError(f"{name}: {text} is invalid.") from e


def parse_int_list(text, name):
    try:
        return [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError as e:
        raise InvalidDataError(f"{name}: {text} is invalid.") from e


def parse_face_sequence(text, num_faces=None):
    """
    Parses "0|1|0,1" into face sets; "|" separates sets, "," separates faces.
    """
    return [FaceSet.parse(part, num_faces) for part in str(text).split("|")]
