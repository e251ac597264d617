"""
JSON helpers for writing analysis artifacts deterministically.

Primary use case: emit manifests, synthesis results and figure-data bundles
whose bytes are identical across reruns (sorted keys, trailing newline).

Example:
    write_json(out_dir / "synthesis.json", result.to_dict())
"""

import dataclasses
import json
from datetime import date, datetime
from decimal import Decimal
from pathlib import Path
from typing import Any, Union

import numpy as np


def _json_default(o: Any):
    """Best-effort conversion for non-JSON-native types."""
    if isinstance(o, (date, datetime)):
        return o.isoformat()
    if isinstance(o, Decimal):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Path):
        return o.as_posix()
    if hasattr(o, "to_dict") and callable(getattr(o, "to_dict")):
        return o.to_dict()
    if dataclasses.is_dataclass(o) and not isinstance(o, type):
        return dataclasses.asdict(o)
    if hasattr(o, "__dict__"):
        return {k: v for k, v in o.__dict__.items() if not k.startswith("_")}
    return str(o)


def to_json(obj: Any, *, indent: int = 2, sort_keys: bool = True) -> str:
    """
    Serialize any artifact payload to a JSON string.

    - numpy scalars/arrays become Python numbers/lists.
    - dataclasses and objects exposing `to_dict()` are expanded.
    - Keys are sorted by default so equal payloads give equal bytes.
    """
    return json.dumps(obj, indent=indent, sort_keys=sort_keys, ensure_ascii=False, default=_json_default)


def to_json_array(arr: Any, *, ensure_ascii: bool = False, sort_keys: bool = True) -> str:
    """
    Convert a Python list (e.g. [{...}, {...}]) into a JSON array string.

    Accepts list, tuple or numpy array. Raises ValueError if input is not list-like.
    """
    if arr is None:
        return "[]"
    if isinstance(arr, (tuple, np.ndarray)):
        arr = list(arr)
    if not isinstance(arr, list):
        raise ValueError("to_json_array expects a list/tuple/array")
    return json.dumps(arr, ensure_ascii=ensure_ascii, sort_keys=sort_keys, default=_json_default)


def write_json(path: Union[str, Path], obj: Any) -> Path:
    """Write `obj` as JSON to `path` (parents created) and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(obj) + "\n", encoding="utf-8")
    return path


def read_json(path: Union[str, Path]) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
