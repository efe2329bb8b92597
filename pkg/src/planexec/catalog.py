"""Typed site catalogs: the trusted action surface of each simulated website.

A catalog file is a restricted Swagger-style JSON document. Endpoint entries
declare an id, a read/write effect, documentation, typed params, a typed
return, required headers, and free-text conventions. Schemas are finite trees;
an optional top-level ``definitions`` table allows ``{"$ref": name}`` reuse,
resolved (inlined) at ingest time. Dangling or recursive references are
rejected.

Catalogs are immutable after ingestion and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .canon import canon_dumps, canon_loads
from .errors import (
    DuplicateEndpointId,
    InvalidSchema,
    MalformedDocument,
    UnknownEndpoint,
)

SCALAR_KINDS = ("string", "integer", "decimal", "boolean")
ALL_KINDS = SCALAR_KINDS + ("list", "record", "optional")


@dataclass
class TypeSchema:
    """Finite, non-recursive type tree."""

    kind: str
    element: "TypeSchema | None" = None
    fields: "dict[str, TypeSchema] | None" = None

    @classmethod
    def string(cls) -> "TypeSchema":
        return cls("string")

    @classmethod
    def integer(cls) -> "TypeSchema":
        return cls("integer")

    @classmethod
    def decimal(cls) -> "TypeSchema":
        return cls("decimal")

    @classmethod
    def boolean(cls) -> "TypeSchema":
        return cls("boolean")

    @classmethod
    def list_of(cls, element: "TypeSchema") -> "TypeSchema":
        return cls("list", element=element)

    @classmethod
    def optional_of(cls, element: "TypeSchema") -> "TypeSchema":
        return cls("optional", element=element)

    @classmethod
    def record(cls, fields: "dict[str, TypeSchema]") -> "TypeSchema":
        return cls("record", fields=dict(fields))


def validate_schema(schema: TypeSchema, path: str = "$") -> None:
    """Reject ill-formed or cyclic schema objects built programmatically."""
    seen: set[int] = set()

    def walk(node: TypeSchema, where: str) -> None:
        if not isinstance(node, TypeSchema):
            raise InvalidSchema(f"not a schema at {where}")
        if id(node) in seen:
            raise InvalidSchema(f"recursive schema at {where}")
        seen.add(id(node))
        if node.kind not in ALL_KINDS:
            raise InvalidSchema(f"unknown schema kind {node.kind!r} at {where}")
        if node.kind in ("list", "optional"):
            if node.element is None:
                raise InvalidSchema(f"{node.kind} schema missing element at {where}")
            walk(node.element, where + ".element")
        elif node.kind == "record":
            if not isinstance(node.fields, dict) or not node.fields:
                raise InvalidSchema(f"record schema needs fields at {where}")
            for name, sub in node.fields.items():
                walk(sub, f"{where}.{name}")
        seen.discard(id(node))

    walk(schema, path)


def schema_to_obj(schema: TypeSchema):
    """Canonical JSON form; record fields as ordered [name, schema] pairs."""
    if schema.kind in SCALAR_KINDS:
        return {"kind": schema.kind}
    if schema.kind in ("list", "optional"):
        return {"element": schema_to_obj(schema.element), "kind": schema.kind}
    return {
        "fields": [[name, schema_to_obj(sub)] for name, sub in schema.fields.items()],
        "kind": schema.kind,
    }


def schema_from_obj(obj, path: str = "$", definitions=None, _stack: tuple = ()) -> TypeSchema:
    """Parse a schema object, resolving $ref against ``definitions``."""
    if not isinstance(obj, dict):
        raise InvalidSchema(f"schema must be an object at {path}")
    if "$ref" in obj:
        name = obj["$ref"]
        if definitions is None or name not in definitions:
            raise InvalidSchema(f"dangling type reference {name!r} at {path}")
        if name in _stack:
            raise InvalidSchema(f"recursive type reference {name!r} at {path}")
        return schema_from_obj(definitions[name], f"{path}->{name}", definitions, _stack + (name,))
    kind = obj.get("kind")
    if kind not in ALL_KINDS:
        raise InvalidSchema(f"unknown schema kind {kind!r} at {path}")
    if kind in SCALAR_KINDS:
        return TypeSchema(kind)
    if kind in ("list", "optional"):
        if "element" not in obj:
            raise InvalidSchema(f"{kind} schema missing element at {path}")
        return TypeSchema(kind, element=schema_from_obj(obj["element"], path + ".element", definitions, _stack))
    raw_fields = obj.get("fields")
    pairs: list[tuple[str, object]]
    if isinstance(raw_fields, dict):
        pairs = list(raw_fields.items())
    elif isinstance(raw_fields, list):
        pairs = []
        for entry in raw_fields:
            if not (isinstance(entry, list) and len(entry) == 2 and isinstance(entry[0], str)):
                raise InvalidSchema(f"bad record field entry at {path}")
            pairs.append((entry[0], entry[1]))
    else:
        raise InvalidSchema(f"record schema needs fields at {path}")
    if not pairs:
        raise InvalidSchema(f"record schema needs at least one field at {path}")
    fields: dict[str, TypeSchema] = {}
    for name, sub in pairs:
        if name in fields:
            raise InvalidSchema(f"duplicate record field {name!r} at {path}")
        fields[name] = schema_from_obj(sub, f"{path}.{name}", definitions, _stack)
    return TypeSchema("record", fields=fields)


def schema_kind_text(schema: TypeSchema) -> str:
    """Compact human-readable type name for error messages."""
    if schema.kind in SCALAR_KINDS:
        return schema.kind
    if schema.kind == "list":
        return f"list<{schema_kind_text(schema.element)}>"
    if schema.kind == "optional":
        return f"optional<{schema_kind_text(schema.element)}>"
    return "record{" + ", ".join(schema.fields) + "}"


@dataclass
class ParamSpec:
    schema: TypeSchema
    required: bool = True
    doc: str = ""


@dataclass
class EndpointSpec:
    id: str
    effect: str  # "read" | "write"
    summary: str
    returns: TypeSchema
    description: str = ""
    params: dict[str, ParamSpec] = field(default_factory=dict)
    required_headers: dict[str, str] = field(default_factory=dict)
    conventions: list[str] = field(default_factory=list)


@dataclass
class ApiCatalog:
    server_id: str
    version: int
    endpoints: dict[str, EndpointSpec]
    site_conventions: list[str] = field(default_factory=list)


@dataclass
class EndpointSummary:
    """Compressed discovery form: id and one-line summary, no schemas."""

    id: str
    summary: str


@dataclass
class Finding:
    code: str
    message: str
    endpoint_id: str | None = None
    param: str | None = None

    def to_obj(self) -> dict:
        obj = {"code": self.code, "message": self.message}
        if self.endpoint_id is not None:
            obj["endpoint_id"] = self.endpoint_id
        if self.param is not None:
            obj["param"] = self.param
        return obj


def _require_str(obj: dict, key: str, where: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise MalformedDocument(f"missing or non-string {key!r} in {where}")
    return value


def endpoint_from_obj(obj, definitions=None) -> EndpointSpec:
    if not isinstance(obj, dict):
        raise MalformedDocument("endpoint entry must be an object")
    eid = _require_str(obj, "id", "endpoint")
    where = f"endpoint {eid!r}"
    effect = _require_str(obj, "effect", where)
    if effect not in ("read", "write"):
        raise MalformedDocument(f"effect must be read or write in {where}")
    summary = _require_str(obj, "summary", where)
    description = obj.get("description", "")
    if not isinstance(description, str):
        raise MalformedDocument(f"bad description in {where}")
    params: dict[str, ParamSpec] = {}
    for entry in obj.get("params", []):
        if not isinstance(entry, dict) or "name" not in entry or "schema" not in entry:
            raise MalformedDocument(f"bad param entry in {where}")
        name = entry["name"]
        if name in params:
            raise MalformedDocument(f"duplicate param {name!r} in {where}")
        schema = schema_from_obj(entry["schema"], f"{where}.params.{name}", definitions)
        required = entry.get("required", True)
        doc = entry.get("doc", "")
        if not isinstance(required, bool) or not isinstance(doc, str):
            raise MalformedDocument(f"bad param entry in {where}")
        params[name] = ParamSpec(schema=schema, required=required, doc=doc)
    if "returns" not in obj:
        raise MalformedDocument(f"missing returns in {where}")
    returns = schema_from_obj(obj["returns"], f"{where}.returns", definitions)
    headers = obj.get("required_headers", {})
    if not isinstance(headers, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in headers.items()
    ):
        raise MalformedDocument(f"bad required_headers in {where}")
    conventions = obj.get("conventions", [])
    if not isinstance(conventions, list) or not all(isinstance(c, str) for c in conventions):
        raise MalformedDocument(f"bad conventions in {where}")
    return EndpointSpec(
        id=eid,
        effect=effect,
        summary=summary,
        description=description,
        params=params,
        returns=returns,
        required_headers=dict(headers),
        conventions=list(conventions),
    )


def catalog_from_obj(obj) -> ApiCatalog:
    if not isinstance(obj, dict):
        raise MalformedDocument("catalog document must be an object")
    server_id = _require_str(obj, "server_id", "catalog")
    version = obj.get("version")
    if not isinstance(version, int) or isinstance(version, bool) or version < 0:
        raise MalformedDocument("catalog version must be a non-negative integer")
    conventions = obj.get("site_conventions", [])
    if not isinstance(conventions, list) or not all(isinstance(c, str) for c in conventions):
        raise MalformedDocument("bad site_conventions")
    definitions = obj.get("definitions", {})
    if not isinstance(definitions, dict):
        raise MalformedDocument("definitions must be an object")
    entries = obj.get("endpoints")
    if not isinstance(entries, list):
        raise MalformedDocument("endpoints must be a list")
    endpoints: dict[str, EndpointSpec] = {}
    for entry in entries:
        spec = endpoint_from_obj(entry, definitions)
        if spec.id in endpoints:
            raise DuplicateEndpointId(f"duplicate endpoint id {spec.id!r}")
        endpoints[spec.id] = spec
    return ApiCatalog(
        server_id=server_id,
        version=version,
        endpoints=endpoints,
        site_conventions=list(conventions),
    )


def ingest_catalog(document: str) -> ApiCatalog:
    """Parse and validate a catalog document."""
    try:
        obj = canon_loads(document)
    except ValueError as exc:
        raise MalformedDocument(f"invalid catalog JSON: {exc}") from exc
    return catalog_from_obj(obj)


def endpoint_to_obj(spec: EndpointSpec) -> dict:
    return {
        "id": spec.id,
        "effect": spec.effect,
        "summary": spec.summary,
        "description": spec.description,
        "params": [
            {
                "name": name,
                "schema": schema_to_obj(p.schema),
                "required": p.required,
                "doc": p.doc,
            }
            for name, p in spec.params.items()
        ],
        "returns": schema_to_obj(spec.returns),
        "required_headers": {k: spec.required_headers[k] for k in sorted(spec.required_headers)},
        "conventions": list(spec.conventions),
    }


def catalog_to_obj(catalog: ApiCatalog) -> dict:
    return {
        "server_id": catalog.server_id,
        "version": catalog.version,
        "site_conventions": list(catalog.site_conventions),
        "endpoints": [endpoint_to_obj(catalog.endpoints[eid]) for eid in sorted(catalog.endpoints)],
    }


def serialize_catalog(catalog: ApiCatalog) -> str:
    """Canonical serialization: endpoints ordered by id, fields as declared."""
    return canon_dumps(catalog_to_obj(catalog))


def summarize(catalog: ApiCatalog) -> list[EndpointSummary]:
    """One schema-free summary per endpoint, in id order."""
    return [
        EndpointSummary(id=eid, summary=catalog.endpoints[eid].summary)
        for eid in sorted(catalog.endpoints)
    ]


def expand(catalog: ApiCatalog, ids: list[str]) -> list[EndpointSpec]:
    """Full specs for exactly the requested ids, input order preserved."""
    missing = [eid for eid in ids if eid not in catalog.endpoints]
    if missing:
        raise UnknownEndpoint(missing)
    return [catalog.endpoints[eid] for eid in ids]


def validate_catalog(catalog: ApiCatalog) -> list[Finding]:
    """Structural audit. Empty result means valid and fully documented."""
    findings: list[Finding] = []
    if not catalog.server_id:
        findings.append(Finding("missing_server_id", "catalog has no server_id"))
    for eid, spec in catalog.endpoints.items():
        if spec.effect not in ("read", "write"):
            findings.append(Finding("bad_effect", f"effect {spec.effect!r}", eid))
        if not spec.summary.strip():
            findings.append(Finding("missing_summary", "endpoint has no summary", eid))
        for name, p in spec.params.items():
            if not p.doc.strip():
                findings.append(
                    Finding("undocumented_param", f"param {name!r} has no doc", eid, name)
                )
            try:
                validate_schema(p.schema)
            except InvalidSchema as exc:
                findings.append(Finding("invalid_schema", str(exc), eid, name))
        try:
            validate_schema(spec.returns)
        except InvalidSchema as exc:
            findings.append(Finding("invalid_schema", str(exc), eid))
    return findings
