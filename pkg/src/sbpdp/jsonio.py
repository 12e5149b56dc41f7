"""JSON writing with full-precision floats.

The stock ``json`` module prints floats with ``repr``, which drops digits
that are not needed for round-tripping. Operator and projection files are
required to carry at least 17 significant digits, so we format floats with
``%.17g`` explicitly.
"""

import json
import math
from pathlib import Path


def _format(obj, indent: int, level: int) -> str:
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f"{pad_in}{json.dumps(str(k))}: {_format(v, indent, level + 1)}"
            for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        flat = all(isinstance(v, (int, float, str, bool, type(None))) for v in obj)
        if flat:
            return "[" + ", ".join(_format(v, indent, level + 1) for v in obj) + "]"
        items = ",\n".join(f"{pad_in}{_format(v, indent, level + 1)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float in JSON payload: {obj!r}")
        return format(obj, ".17g")
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"unsupported type for JSON serialization: {type(obj)!r}")


def dumps(obj, indent: int = 2) -> str:
    return _format(obj, indent, 0) + "\n"


def dump(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def load(path):
    with open(path) as fh:
        return json.load(fh)
