"""Typed values and records as JSON.

Null, bool, int, float and text map to their JSON counterparts (floats keep a
decimal point so they read back as floats).  Bytes become ``{"$bytes":
base64}`` and non-finite floats ``{"$float": "inf"}``.  Nested arrays and
objects are rejected since attribute values are flat.
"""
from __future__ import annotations

import base64
import math
from typing import Any

from .errors import InvalidValue
from .model import Record, check_value


def value_to_json(v: Any) -> Any:
    if type(v) is bytes:
        return {"$bytes": base64.b64encode(v).decode("ascii")}
    if type(v) is float and math.isinf(v):
        return {"$float": "inf" if v > 0 else "-inf"}
    return v


def value_from_json(v: Any) -> Any:
    if isinstance(v, dict):
        if set(v) == {"$bytes"}:
            return base64.b64decode(v["$bytes"])
        if set(v) == {"$float"}:
            return float(v["$float"])
        raise InvalidValue("nested objects are not supported as attribute values")
    if isinstance(v, list):
        raise InvalidValue("arrays are not supported as attribute values")
    return check_value(v)


def record_to_json(r: Record, key_field: str = "_key") -> dict:
    out = {key_field: r.key}
    for n, v in r.attrs.items():
        out[n] = value_to_json(v)
    return out


def record_from_json(obj: dict, key_field: str = "_key") -> Record:
    if not isinstance(obj, dict):
        raise InvalidValue("each JSON record must be an object")
    attrs = {n: value_from_json(v) for n, v in obj.items()}
    if key_field == "_key":
        key = attrs.pop("_key", None)
    else:
        key = attrs.get(key_field)
    if key is None:
        raise InvalidValue(f"record has no key field {key_field!r}")
    if type(key) is int:
        key = str(key)
    if type(key) is not str:
        raise InvalidValue(f"key field {key_field!r} must be text or integer")
    return Record(key, attrs)
