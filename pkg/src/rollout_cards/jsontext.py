"""JSON reading and writing that keeps the source text of numbers.

Floats parsed here remember how they were spelled (``1.0`` stays ``1.0``,
``1e3`` stays ``1e3``) so that re-emitting a record never perturbs the
bytes a content hash was computed over.
"""

from __future__ import annotations

import json
import math
from json.encoder import encode_basestring  # type: ignore[attr-defined]
from typing import Any


class JsonFloat(float):
    """A float that re-serializes as the literal it was parsed from."""

    __slots__ = ("text",)

    def __new__(cls, text: str) -> "JsonFloat":
        obj = super().__new__(cls, text)
        obj.text = text
        return obj

    def __reduce__(self):
        return (JsonFloat, (self.text,))


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-standard JSON constant {name}")


_decoder = json.JSONDecoder(parse_float=JsonFloat, parse_constant=_reject_constant)


def loads(text: str) -> Any:
    return _decoder.decode(text)


def dumps(value: Any) -> str:
    """Compact JSON, insertion-ordered keys, non-ASCII kept as-is."""
    parts: list[str] = []
    _emit(value, parts.append)
    return "".join(parts)


def _emit(value: Any, out) -> None:
    if value is None:
        out("null")
    elif value is True:
        out("true")
    elif value is False:
        out("false")
    elif isinstance(value, str):
        out(encode_basestring(value))
    elif isinstance(value, JsonFloat):
        out(value.text)
    elif isinstance(value, int):
        out(int.__repr__(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("NaN and infinities are not representable in JSON")
        out(float.__repr__(value))
    elif isinstance(value, dict):
        out("{")
        first = True
        for k, v in value.items():
            if not isinstance(k, str):
                raise TypeError(f"object keys must be strings, got {type(k).__name__}")
            if not first:
                out(",")
            first = False
            out(encode_basestring(k))
            out(":")
            _emit(v, out)
        out("}")
    elif isinstance(value, (list, tuple)):
        out("[")
        for i, v in enumerate(value):
            if i:
                out(",")
            _emit(v, out)
        out("]")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__} as JSON")


def dumps_document(value: Any) -> str:
    """Indented, newline-terminated rendering used for sidecar documents."""
    return json.dumps(_plain(value), indent=2, ensure_ascii=False) + "\n"


def _plain(value: Any) -> Any:
    # json.dumps ignores float subclasses' text; fall back to the parsed value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value
