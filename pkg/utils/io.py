from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from utils.errors import InvalidConfig

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def format_value(value: Any) -> str:
    # repr gives the shortest round-trip form, so re-runs are byte-identical
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([format_value(v) for v in row])
            count += 1
    logger.debug("wrote %s (%d rows)", path, count)
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def to_jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        # JSON has no infinity; keep it readable
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    return value


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(to_jsonable(payload), fh, indent=2, sort_keys=False)
        fh.write("\n")
    logger.debug("wrote %s", path)
    return path


def load_model(path: Path, model: Type[M]) -> M:
    """Parse a JSON file into a pydantic model; any failure is an InvalidConfig."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file not found: {path}")
    try:
        return model.model_validate_json(path.read_text())
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise InvalidConfig(f"{path}: {where}: {first.get('msg')}") from exc


def load_config(path: Path) -> "ExperimentConfig":
    from models.experiment import ExperimentConfig

    return load_model(path, ExperimentConfig)
