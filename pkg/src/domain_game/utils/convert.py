import json
from typing import Any

import numpy as np


def to_builtin(value: Any) -> Any:
    """Recursively turn numpy scalars/arrays and tuples into JSON-friendly builtins."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def dict_to_json_string(d: dict) -> str:
    return json.dumps(to_builtin(d), sort_keys=True)


def json_string_to_dict(json_string: str) -> dict:
    return json.loads(json_string)
