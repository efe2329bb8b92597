"""Exception hierarchy.

Every error carries a short machine-readable ``code`` class attribute so the
CLI and test harnesses can match failures without parsing messages.
"""

from __future__ import annotations

from typing import Any


class PlanExecError(Exception):
    code = "error"

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message or self.code)
        self.details = details


# --- catalog ---------------------------------------------------------------

class MalformedDocument(PlanExecError):
    """Document does not conform to the expected file format."""
    code = "malformed_document"


class DuplicateEndpointId(PlanExecError):
    code = "duplicate_endpoint_id"


class InvalidSchema(PlanExecError):
    """Dangling reference, recursive type, or ill-formed schema node."""
    code = "invalid_schema"


class UnknownEndpoint(PlanExecError):
    code = "unknown_endpoint"

    def __init__(self, endpoint_ids, **details: Any):
        ids = sorted(endpoint_ids)
        super().__init__(f"unknown endpoint(s): {', '.join(ids)}", **details)
        self.endpoint_ids = ids


# --- plan parsing ----------------------------------------------------------

class PlanSyntaxError(PlanExecError):
    code = "syntax_error"

    def __init__(self, message: str, path: str = "", **details: Any):
        where = f" at {path}" if path else ""
        super().__init__(f"{message}{where}", **details)
        self.path = path


class UnboundVariable(PlanExecError):
    code = "unbound_variable"


class DuplicateBinding(PlanExecError):
    code = "duplicate_binding"


class MissingMaxIter(PlanExecError):
    code = "missing_max_iter"


class NonLiteralEndpoint(PlanExecError):
    """An expression appeared where a literal endpoint id is required."""
    code = "non_literal_endpoint"


# --- verification ----------------------------------------------------------

class UnknownCatalog(PlanExecError):
    code = "unknown_catalog"


class TypeMismatch(PlanExecError):
    code = "type_mismatch"

    def __init__(self, message: str, node_id: int | None = None, **details: Any):
        super().__init__(message, **details)
        self.node_id = node_id


class MissingRequiredParam(PlanExecError):
    code = "missing_required_param"


class UnknownParam(PlanExecError):
    code = "unknown_param"


class PolicyViolation(PlanExecError):
    code = "policy_violation"

    def __init__(self, violations, **details: Any):
        lines = "; ".join(v.get("message", v.get("code", "?")) for v in violations)
        super().__init__(f"policy violations: {lines}", **details)
        self.violations = list(violations)


# --- quarantine ------------------------------------------------------------

class SchemaViolation(PlanExecError):
    code = "schema_violation"

    def __init__(self, message: str, path: str = "", expected: str = "", found: str = "", **details: Any):
        where = f" at {path}" if path else ""
        super().__init__(f"{message}{where}", **details)
        self.path = path
        self.expected = expected
        self.found = found


class BackendUnavailable(PlanExecError):
    code = "backend_unavailable"


# --- execution -------------------------------------------------------------

class EnforcementViolation(PlanExecError):
    """Internal runtime invariant breach. Always a bug, never handled silently."""
    code = "enforcement_violation"


class EndpointError(PlanExecError):
    """Site-level failure after declared retries, with no handler block."""
    code = "endpoint_error"

    def __init__(self, message: str, reason: str = "", **details: Any):
        super().__init__(message, **details)
        self.reason = reason


class BoundExceeded(PlanExecError):
    code = "bound_exceeded"


class ReplayDivergence(PlanExecError):
    code = "replay_divergence"

    def __init__(self, seq: int, message: str = "", **details: Any):
        super().__init__(message or f"trace diverges at seq {seq}", **details)
        self.seq = seq


class NonIdempotentContingency(PlanExecError):
    code = "non_idempotent_contingency"


class ContingencyMismatch(PlanExecError):
    """Contingent candidates declare different result types."""
    code = "contingency_mismatch"


# --- planner ---------------------------------------------------------------

class NoRelevantServer(PlanExecError):
    code = "no_relevant_server"


class PlanRejected(PlanExecError):
    """Backend output failed parsing or verification; the cause is attached."""
    code = "plan_rejected"

    def __init__(self, cause: PlanExecError, **details: Any):
        super().__init__(f"plan rejected: {cause}", **details)
        self.cause = cause


class TemplateMiss(PlanExecError):
    code = "template_miss"

    def __init__(self, message: str = "", replan_needed: bool = False, **details: Any):
        super().__init__(message or "no template matches the task", **details)
        self.replan_needed = replan_needed


# --- simulated sites -------------------------------------------------------

class SiteError(PlanExecError):
    """Endpoint-level failure raised by a simulated site."""
    code = "site_error"

    def __init__(self, reason: str, message: str = "", **details: Any):
        super().__init__(message or reason, **details)
        self.reason = reason


class UnknownPlacement(PlanExecError):
    code = "unknown_placement"


class StepLimitExceeded(PlanExecError):
    code = "step_limit_exceeded"

    def __init__(self, message: str = "", trace=None, **details: Any):
        super().__init__(message or "step limit exceeded", **details)
        self.trace = trace or []


# --- CLI -------------------------------------------------------------------

class UsageError(PlanExecError):
    code = "usage_error"


class ConfigError(PlanExecError):
    code = "config_error"
