"""Quarantined subroutines: model calls used strictly as data pipelines.

A subroutine receives a plan-time literal instruction plus typed runtime
inputs, and must produce output that validates against a declared schema.
Outputs are data, never instructions: nothing here can reach catalogs, the
executor, or site connectors, and failed validation re-issues the identical
request (bounded by max_retries) rather than mutating it.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from decimal import Decimal
from typing import Protocol

from .canon import canon_dumps, canon_loads
from .catalog import TypeSchema, schema_to_obj
from .errors import BackendUnavailable, SchemaViolation
from .values import Taint, Value, conform


@dataclass
class SubroutineRequest:
    kind: str  # extract | classify | summarize | transform
    instruction: str  # byte-identical to the plan literal, never interpolated
    inputs: dict[str, Value]
    output_schema: TypeSchema
    max_retries: int = 0


def request_wire(request: SubroutineRequest) -> dict:
    """Canonical backend payload: inputs clearly delimited from the instruction."""
    return {
        "kind": request.kind,
        "instruction": request.instruction,
        "inputs": {
            name: {
                "payload": request.inputs[name].payload,
                "schema": schema_to_obj(request.inputs[name].schema),
            }
            for name in sorted(request.inputs)
        },
        "output_schema": schema_to_obj(request.output_schema),
        "max_retries": request.max_retries,
    }


class SubroutineBackend(Protocol):
    def respond(self, request: SubroutineRequest) -> str: ...


def validate_output(raw: str, schema: TypeSchema):
    """Strictly parse raw backend text against a schema; returns the payload.

    String schemas take the raw text verbatim. Everything else must be JSON
    that conforms exactly (unknown fields rejected, integer widening to
    decimal is the only coercion).
    """
    if not isinstance(raw, str):
        raise SchemaViolation("backend output is not text", "$", schema.kind, type(raw).__name__)
    if schema.kind == "string":
        return raw
    try:
        parsed = canon_loads(raw)
    except ValueError as exc:
        raise SchemaViolation(f"unparseable output: {exc}", "$", schema.kind, "text") from exc
    return conform(parsed, schema)


def invoke(request: SubroutineRequest, backend: SubroutineBackend, on_retry=None) -> Value:
    """Run a subroutine; the result is always untrusted, typed data.

    Performs zero endpoint calls by construction: the backend receives only
    the request. Attempts are bounded by max_retries + 1.
    """
    last: SchemaViolation | None = None
    for attempt in range(request.max_retries + 1):
        raw = backend.respond(request)
        try:
            payload = validate_output(raw, request.output_schema)
        except SchemaViolation as exc:
            last = exc
            if attempt < request.max_retries and on_retry is not None:
                on_retry("schema_violation")
            continue
        return Value(request.output_schema, payload, Taint.UNTRUSTED, 0)
    assert last is not None
    raise last


# --- provided backends --------------------------------------------------------


def _string_leaves(payload, out: list[str]) -> None:
    if isinstance(payload, str):
        out.append(payload)
    elif isinstance(payload, list):
        for item in payload:
            _string_leaves(item, out)
    elif isinstance(payload, dict):
        for key in payload:
            _string_leaves(payload[key], out)


def _input_text(request: SubroutineRequest) -> str:
    leaves: list[str] = []
    for name in sorted(request.inputs):
        _string_leaves(request.inputs[name].payload, leaves)
    return "\n".join(leaves)


def _most_common(tokens: list[str]) -> str | None:
    if not tokens:
        return None
    counts = Counter(tokens)
    best = max(counts.values())
    for token in tokens:  # ties resolve to first occurrence
        if counts[token] == best:
            return token
    return None


def _render(payload, schema: TypeSchema) -> str:
    return payload if schema.kind == "string" else canon_dumps(payload)


class EchoBackend:
    """Returns a fixed fixture regardless of the request."""

    def __init__(self, fixture: str):
        self.fixture = fixture

    def respond(self, request: SubroutineRequest) -> str:
        return self.fixture


_SKU_RE = re.compile(r"B0\d{8}")
_TITLE_RE = re.compile(r"\"([^\"\n]{2,80})\"")
_NEGATIVE_WORDS = (
    "terrible", "awful", "broken", "broke", "refund", "disappointed", "worst",
    "useless", "return it", "stopped working",
)


class ExtractorBackend:
    """Deterministic rule-based stand-in for a real extraction model."""

    def respond(self, request: SubroutineRequest) -> str:
        text = _input_text(request)
        instruction = request.instruction.casefold()
        schema = request.output_schema

        if "sku" in instruction:
            best = _most_common(_SKU_RE.findall(text)) or "unknown"
            return self._fill(best, schema)
        if "book" in instruction or "title" in instruction:
            best = _most_common(_TITLE_RE.findall(text)) or "unknown"
            return self._fill(best, schema)
        if "single" in instruction and schema.kind == "list":
            return canon_dumps(self._single_mention_ids(request))
        if request.kind == "classify" and schema.kind == "boolean":
            lowered = text.casefold()
            negative = any(word in lowered for word in _NEGATIVE_WORDS)
            return "true" if negative else "false"
        if schema.kind == "integer":
            match = re.search(r"\b([0-9]+)\b", text)
            return match.group(1) if match else "0"
        if request.kind in ("summarize", "extract", "transform") and schema.kind == "string":
            return self._first_sentence(text)
        return _render(self._default(schema, text), schema)

    @staticmethod
    def _first_sentence(text: str) -> str:
        flat = " ".join(text.split())
        if not flat:
            return "nothing to summarize"
        sentence = flat.split(". ")[0].strip()
        return (sentence[:140]).rstrip(".") + "."

    @staticmethod
    def _fill(token: str, schema: TypeSchema) -> str:
        if schema.kind == "string":
            return token
        if schema.kind == "record":
            payload = {}
            for name, sub in schema.fields.items():
                payload[name] = token if sub.kind == "string" else ExtractorBackend._default(sub, token)
            return canon_dumps(payload)
        if schema.kind == "list":
            return canon_dumps([token] if schema.element.kind == "string" else [])
        return _render(ExtractorBackend._default(schema, token), schema)

    @staticmethod
    def _single_mention_ids(request: SubroutineRequest) -> list[str]:
        ids: list[str] = []
        for name in sorted(request.inputs):
            payload = request.inputs[name].payload
            if not isinstance(payload, list):
                continue
            for entry in payload:
                if not isinstance(entry, dict):
                    continue
                text_parts: list[str] = []
                _string_leaves(entry, text_parts)
                titles = set(_TITLE_RE.findall("\n".join(text_parts)))
                if len(titles) == 1 and isinstance(entry.get("id"), str):
                    ids.append(entry["id"])
        return ids

    @staticmethod
    def _default(schema: TypeSchema, text: str):
        if schema.kind == "string":
            return " ".join(text.split())[:100]
        if schema.kind == "integer":
            return 0
        if schema.kind == "decimal":
            return Decimal(0)
        if schema.kind == "boolean":
            return False
        if schema.kind == "list":
            return []
        if schema.kind == "optional":
            return None
        return {
            name: ExtractorBackend._default(sub, text) for name, sub in schema.fields.items()
        }


_OBEDIENCE_RE = re.compile(r"always (?:answer|respond(?: with)?)[:\s]+\"?([^\"\n.]+)", re.IGNORECASE)


class SusceptibleBackend:
    """Obeys imperative strings embedded in its inputs. Security tests only.

    Demonstrates the worst realistic subroutine: adversarial input text can
    fully steer the output value, yet it still cannot reach any endpoint.
    """

    def __init__(self, inner: SubroutineBackend | None = None):
        self.inner = inner or ExtractorBackend()

    def respond(self, request: SubroutineRequest) -> str:
        match = _OBEDIENCE_RE.search(_input_text(request))
        if match is None:
            return self.inner.respond(request)
        captured = match.group(1).strip()
        schema = request.output_schema
        if schema.kind == "string":
            return captured
        if schema.kind == "boolean":
            return "true" if captured.casefold() in ("true", "yes") else "false"
        if schema.kind == "record":
            payload = {
                name: captured if sub.kind == "string" else ExtractorBackend._default(sub, captured)
                for name, sub in schema.fields.items()
            }
            return canon_dumps(payload)
        if schema.kind == "list" and schema.element.kind == "string":
            return canon_dumps([captured])
        return self.inner.respond(request)


class ExternalModelBackend:
    """Network adapter for a real model endpoint.

    Sends the canonical request wire form and expects ``{"output": "<text>"}``.
    Any transport or shape problem surfaces as BackendUnavailable.
    """

    def __init__(self, endpoint: str, timeout_s: float = 10.0):
        self.endpoint = endpoint
        self.timeout_s = timeout_s

    def respond(self, request: SubroutineRequest) -> str:
        import requests

        try:
            response = requests.post(self.endpoint, json=request_wire(request), timeout=self.timeout_s)
            response.raise_for_status()
            output = response.json().get("output")
        except (requests.RequestException, ValueError) as exc:
            raise BackendUnavailable(f"subroutine backend unreachable: {exc}") from exc
        if not isinstance(output, str):
            raise BackendUnavailable("subroutine backend returned no text output")
        return output
