"""Runtime values: typed payloads carrying a provenance taint label.

Conformance is strict: unknown record fields are rejected, required fields
must be present, and numeric kinds are exact except for the single permitted
widening, integer to decimal.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from enum import Enum

from .canon import digest_obj
from .catalog import TypeSchema, schema_kind_text, schema_to_obj
from .errors import SchemaViolation


class Taint(str, Enum):
    TRUSTED = "trusted"
    UNTRUSTED = "untrusted"


def taint_join(*labels: Taint) -> Taint:
    """Lattice join: untrusted absorbs."""
    for label in labels:
        if label is Taint.UNTRUSTED:
            return Taint.UNTRUSTED
    return Taint.TRUSTED


@dataclass
class Value:
    schema: TypeSchema
    payload: object
    taint: Taint
    origin: int = 0  # node id that produced the value; 0 for plan constants


def _found_text(payload) -> str:
    if payload is None:
        return "null"
    if isinstance(payload, bool):
        return "boolean"
    if isinstance(payload, int):
        return "integer"
    if isinstance(payload, Decimal):
        return "decimal"
    if isinstance(payload, str):
        return "string"
    if isinstance(payload, list):
        return "list"
    if isinstance(payload, dict):
        return "record"
    return type(payload).__name__


def conform(payload, schema: TypeSchema, path: str = "$"):
    """Validate and normalize a JSON-shaped payload against a schema.

    Returns the normalized payload (record keys in schema order, integers
    widened to Decimal under decimal schemas). Raises SchemaViolation.
    """
    kind = schema.kind
    if kind == "optional":
        if payload is None:
            return None
        return conform(payload, schema.element, path)
    if payload is None:
        raise SchemaViolation("unexpected null", path, kind, "null")
    if kind == "string":
        if not isinstance(payload, str):
            raise SchemaViolation("expected string", path, kind, _found_text(payload))
        return payload
    if kind == "boolean":
        if not isinstance(payload, bool):
            raise SchemaViolation("expected boolean", path, kind, _found_text(payload))
        return payload
    if kind == "integer":
        if isinstance(payload, bool) or not isinstance(payload, int):
            raise SchemaViolation("expected integer", path, kind, _found_text(payload))
        return payload
    if kind == "decimal":
        if isinstance(payload, Decimal):
            return payload
        if isinstance(payload, int) and not isinstance(payload, bool):
            return Decimal(payload)  # the one permitted widening
        raise SchemaViolation("expected decimal", path, kind, _found_text(payload))
    if kind == "list":
        if not isinstance(payload, list):
            raise SchemaViolation("expected list", path, kind, _found_text(payload))
        return [conform(item, schema.element, f"{path}[{i}]") for i, item in enumerate(payload)]
    if kind == "record":
        if not isinstance(payload, dict):
            raise SchemaViolation("expected record", path, kind, _found_text(payload))
        unknown = set(payload) - set(schema.fields)
        if unknown:
            raise SchemaViolation(
                f"unknown field(s) {sorted(unknown)}", path, kind, "record"
            )
        result = {}
        for name, sub in schema.fields.items():
            where = f"{path}.{name}"
            if name not in payload:
                if sub.kind == "optional":
                    result[name] = None
                    continue
                raise SchemaViolation("missing required field", where, sub.kind, "absent")
            result[name] = conform(payload[name], sub, where)
        return result
    raise SchemaViolation(f"unknown schema kind {kind!r}", path, "", "")


def conforms(payload, schema: TypeSchema) -> bool:
    try:
        conform(payload, schema)
        return True
    except SchemaViolation:
        return False


def infer_literal_schema(value, path: str = "$") -> TypeSchema:
    """Infer the schema of a plan literal. Nulls and empty lists need an
    explicit annotation and are rejected here."""
    if isinstance(value, bool):
        return TypeSchema.boolean()
    if isinstance(value, int):
        return TypeSchema.integer()
    if isinstance(value, Decimal):
        return TypeSchema.decimal()
    if isinstance(value, str):
        return TypeSchema.string()
    if isinstance(value, list):
        if not value:
            raise SchemaViolation("empty list literal needs an explicit schema", path)
        first = infer_literal_schema(value[0], f"{path}[0]")
        for i, item in enumerate(value[1:], start=1):
            other = infer_literal_schema(item, f"{path}[{i}]")
            if other != first and not (
                {first.kind, other.kind} == {"integer", "decimal"}
            ):
                raise SchemaViolation("heterogeneous list literal", f"{path}[{i}]")
            if other.kind == "decimal":
                first = other
        return TypeSchema.list_of(first)
    if isinstance(value, dict):
        if not value:
            raise SchemaViolation("empty record literal needs an explicit schema", path)
        return TypeSchema.record(
            {name: infer_literal_schema(sub, f"{path}.{name}") for name, sub in value.items()}
        )
    raise SchemaViolation(f"literal of unsupported type {_found_text(value)}", path)


def compatible(found: TypeSchema, expected: TypeSchema) -> bool:
    """Type compatibility with integer-to-decimal widening, applied deeply."""
    if expected.kind == "optional":
        if found.kind == "optional":
            return compatible(found.element, expected.element)
        return compatible(found, expected.element)
    if expected.kind == "decimal":
        return found.kind in ("decimal", "integer")
    if expected.kind in ("string", "integer", "boolean"):
        return found.kind == expected.kind
    if expected.kind == "list":
        return found.kind == "list" and compatible(found.element, expected.element)
    if expected.kind == "record":
        if found.kind != "record" or set(found.fields) != set(expected.fields):
            return False
        return all(compatible(found.fields[n], expected.fields[n]) for n in expected.fields)
    return False


def value_digest(value: Value) -> str:
    return digest_obj({"payload": value.payload, "schema": schema_to_obj(value.schema)})


def describe(schema: TypeSchema) -> str:
    return schema_kind_text(schema)
