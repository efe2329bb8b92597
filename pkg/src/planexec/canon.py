"""Canonical JSON encoding and content digests.

Dict insertion order is preserved on output; callers construct objects in
whatever key order their file format fixes. Decimals are emitted as plain
JSON numbers in a normalized form and parsed back via ``parse_float``.
"""

from __future__ import annotations

import hashlib
import json
from decimal import Decimal


def decimal_text(value: Decimal) -> str:
    if not value.is_finite():
        raise ValueError("non-finite decimal cannot be serialized")
    text = format(value.normalize(), "f")
    return "0" if text == "-0" else text


def _emit(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, Decimal):
        out.append(decimal_text(obj))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if not isinstance(key, str):
                raise ValueError(f"non-string key: {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _emit(value, out)
        out.append("}")
    else:
        raise ValueError(f"cannot canonically encode {type(obj).__name__}")


def canon_dumps(obj) -> str:
    out: list[str] = []
    _emit(obj, out)
    return "".join(out)


def _strict_pairs(pairs):
    result = {}
    for key, value in pairs:
        if key in result:
            raise ValueError(f"duplicate object key: {key!r}")
        result[key] = value
    return result


def canon_loads(text: str):
    """Parse JSON with exact decimals and duplicate-key rejection."""
    return json.loads(text, parse_float=Decimal, object_pairs_hook=_strict_pairs)


def digest_obj(obj) -> str:
    return hashlib.sha256(canon_dumps(obj).encode("utf-8")).hexdigest()


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sort_keys_deep(obj):
    """Recursively sort dict keys (used where canonical order is lexicographic)."""
    if isinstance(obj, dict):
        return {k: sort_keys_deep(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [sort_keys_deep(v) for v in obj]
    return obj
