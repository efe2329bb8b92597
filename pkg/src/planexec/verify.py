"""Static audit of a plan before execution.

Everything here runs without observing any runtime web content: the endpoint
set, binding types, taint labels, taxonomy class, and step bound are all
computed from the plan text and the referenced catalogs alone. Pure functions
over immutable inputs; safe to run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .canon import canon_loads
from .catalog import ApiCatalog, EndpointSpec, TypeSchema, schema_from_obj, schema_to_obj
from .errors import (
    MalformedDocument,
    MissingRequiredParam,
    PolicyViolation,
    SchemaViolation,
    TypeMismatch,
    UnboundVariable,
    UnknownCatalog,
    UnknownEndpoint,
    UnknownParam,
)
from .plan import (
    ArgBy,
    Arith,
    BoolOp,
    Call,
    Cmp,
    Concat,
    Count,
    Expr,
    FieldAccess,
    FilterBy,
    First,
    ForEach,
    If,
    Index,
    Length,
    Let,
    Lit,
    Not,
    Plan,
    Return,
    Subroutine,
    Var,
    structural_hash,
    sub_exprs,
    walk_nodes,
)
from .values import Taint, compatible, conform, describe, infer_literal_schema, taint_join

TAXONOMY_SAFE = "Safe"
TAXONOMY_INFLUENCE = "SafeWithInfluence"
TAXONOMY_REPLAN = "ReplanNeeded"

WRITE_GATES = ("allow", "deny", "require_listed")


@dataclass
class Policy:
    allowed_endpoints: set[str]
    write_gate: str = "allow"
    listed_writes: set[str] = field(default_factory=set)
    taint_rules: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.write_gate not in WRITE_GATES:
            raise MalformedDocument(f"bad write_gate {self.write_gate!r}")
        if not self.listed_writes <= self.allowed_endpoints:
            raise MalformedDocument("listed_writes must be a subset of allowed_endpoints")

    @classmethod
    def allow_all(cls, endpoint_ids) -> "Policy":
        ids = set(endpoint_ids)
        return cls(allowed_endpoints=ids, write_gate="allow")


def policy_from_obj(obj) -> Policy:
    if not isinstance(obj, dict):
        raise MalformedDocument("policy document must be an object")
    unknown = set(obj) - {"allowed_endpoints", "write_gate", "listed_writes", "taint_rules"}
    if unknown:
        raise MalformedDocument(f"unknown policy keys: {sorted(unknown)}")
    allowed = obj.get("allowed_endpoints")
    if not isinstance(allowed, list) or not all(isinstance(e, str) for e in allowed):
        raise MalformedDocument("allowed_endpoints must be a list of endpoint ids")
    listed = obj.get("listed_writes", [])
    if not isinstance(listed, list) or not all(isinstance(e, str) for e in listed):
        raise MalformedDocument("listed_writes must be a list of endpoint ids")
    rules_raw = obj.get("taint_rules", [])
    rules: list[tuple[str, str]] = []
    if not isinstance(rules_raw, list):
        raise MalformedDocument("taint_rules must be a list")
    for entry in rules_raw:
        if not (isinstance(entry, list) and len(entry) == 2 and all(isinstance(s, str) for s in entry)):
            raise MalformedDocument("taint_rules entries must be [endpoint_id, param] pairs")
        rules.append((entry[0], entry[1]))
    return Policy(
        allowed_endpoints=set(allowed),
        write_gate=obj.get("write_gate", "allow"),
        listed_writes=set(listed),
        taint_rules=rules,
    )


def policy_to_obj(policy: Policy) -> dict:
    return {
        "allowed_endpoints": sorted(policy.allowed_endpoints),
        "write_gate": policy.write_gate,
        "listed_writes": sorted(policy.listed_writes),
        "taint_rules": [[e, p] for e, p in policy.taint_rules],
    }


def load_policy(text: str) -> Policy:
    try:
        return policy_from_obj(canon_loads(text))
    except ValueError as exc:
        raise MalformedDocument(f"invalid policy JSON: {exc}") from exc


@dataclass
class VerifyReport:
    plan_id: str
    plan_hash: str
    endpoint_set: list[str]  # sorted; exactly the endpoints literally named
    endpoint_effects: dict[str, str]
    binding_types: dict[str, TypeSchema]
    binding_taints: dict[str, Taint]
    taxonomy: str
    static_step_bound: int
    findings: list[dict]

    def to_obj(self) -> dict:
        return {
            "plan_id": self.plan_id,
            "plan_hash": self.plan_hash,
            "endpoint_set": list(self.endpoint_set),
            "endpoint_effects": {k: self.endpoint_effects[k] for k in sorted(self.endpoint_effects)},
            "binding_types": {k: schema_to_obj(v) for k, v in sorted(self.binding_types.items())},
            "binding_taints": {k: v.value for k, v in sorted(self.binding_taints.items())},
            "taxonomy": self.taxonomy,
            "static_step_bound": self.static_step_bound,
            "findings": list(self.findings),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "VerifyReport":
        return cls(
            plan_id=obj["plan_id"],
            plan_hash=obj["plan_hash"],
            endpoint_set=list(obj["endpoint_set"]),
            endpoint_effects=dict(obj["endpoint_effects"]),
            binding_types={k: schema_from_obj(v) for k, v in obj["binding_types"].items()},
            binding_taints={k: Taint(v) for k, v in obj["binding_taints"].items()},
            taxonomy=obj["taxonomy"],
            static_step_bound=obj["static_step_bound"],
            findings=list(obj["findings"]),
        )


def resolve_catalogs(plan: Plan, catalogs: list[ApiCatalog]) -> dict[str, EndpointSpec]:
    """Map endpoint id to spec across the plan's catalog refs (exact versions)."""
    by_key = {(c.server_id, c.version): c for c in catalogs}
    endpoint_map: dict[str, EndpointSpec] = {}
    for sid, ver in plan.catalog_refs:
        cat = by_key.get((sid, ver))
        if cat is None:
            raise UnknownCatalog(f"no catalog for server {sid!r} version {ver}")
        for eid, spec in cat.endpoints.items():
            if eid in endpoint_map:
                raise UnknownCatalog(f"endpoint id {eid!r} appears in two referenced catalogs")
            endpoint_map[eid] = spec
    return endpoint_map


# --- type checking -----------------------------------------------------------

_NUMERIC = ("integer", "decimal")
_ORDERABLE = ("integer", "decimal", "string")


class _Scopes:
    """Scope stack mapping names to schemas, with availability refinements."""

    def __init__(self):
        self.stack: list[dict[str, TypeSchema]] = [{}]
        self.conditional: set[str] = set()  # maybe unbound after a handler
        self.unavailable: set[str] = set()  # owner bind inside its own handler

    def lookup(self, name: str) -> TypeSchema | None:
        for scope in reversed(self.stack):
            if name in scope:
                return scope[name]
        return None

    def bind(self, name: str, schema: TypeSchema) -> None:
        self.stack[-1][name] = schema


def _path_schema(schema: TypeSchema, path: list[str], node_id: int) -> TypeSchema:
    current = schema
    for fname in path:
        if current.kind != "record" or fname not in (current.fields or {}):
            raise TypeMismatch(
                f"field path {'.'.join(path)} not navigable in {describe(schema)}",
                node_id=node_id,
            )
        current = current.fields[fname]
    return current


def _expr_type(expr: Expr, scopes: _Scopes, node_id: int) -> TypeSchema:
    if isinstance(expr, Lit):
        if expr.schema is not None:
            try:
                conform(expr.value, expr.schema)
            except SchemaViolation as exc:
                raise TypeMismatch(f"literal does not match its schema: {exc}", node_id=node_id) from exc
            return expr.schema
        try:
            return infer_literal_schema(expr.value)
        except SchemaViolation as exc:
            raise TypeMismatch(f"cannot infer literal type: {exc}", node_id=node_id) from exc
    if isinstance(expr, Var):
        if expr.name in scopes.unavailable:
            raise UnboundVariable(
                f"variable {expr.name!r} is unavailable inside its own error handler (node {node_id})"
            )
        if expr.name in scopes.conditional:
            raise UnboundVariable(
                f"variable {expr.name!r} may be unbound after its error handler (node {node_id})"
            )
        schema = scopes.lookup(expr.name)
        if schema is None:
            raise UnboundVariable(f"variable {expr.name!r} unbound at node {node_id}")
        return schema
    if isinstance(expr, FieldAccess):
        base = _expr_type(expr.obj, scopes, node_id)
        target = base.element if base.kind == "optional" else base
        if target.kind != "record" or expr.name not in target.fields:
            raise TypeMismatch(
                f"no field {expr.name!r} on {describe(base)}", node_id=node_id
            )
        return target.fields[expr.name]
    if isinstance(expr, Index):
        seq = _expr_type(expr.seq, scopes, node_id)
        at = _expr_type(expr.at, scopes, node_id)
        if seq.kind != "list":
            raise TypeMismatch(f"cannot index {describe(seq)}", node_id=node_id)
        if at.kind != "integer":
            raise TypeMismatch(f"index must be integer, found {describe(at)}", node_id=node_id)
        return seq.element
    if isinstance(expr, Cmp):
        left = _expr_type(expr.left, scopes, node_id)
        right = _expr_type(expr.right, scopes, node_id)
        if expr.op in ("eq", "ne"):
            ok = compatible(left, right) or compatible(right, left)
        else:
            ok = (left.kind in _NUMERIC and right.kind in _NUMERIC) or (
                left.kind == "string" and right.kind == "string"
            )
        if not ok:
            raise TypeMismatch(
                f"cannot compare {describe(left)} with {describe(right)}", node_id=node_id
            )
        return TypeSchema.boolean()
    if isinstance(expr, BoolOp):
        for side in (expr.left, expr.right):
            if _expr_type(side, scopes, node_id).kind != "boolean":
                raise TypeMismatch("boolean operator needs boolean operands", node_id=node_id)
        return TypeSchema.boolean()
    if isinstance(expr, Not):
        if _expr_type(expr.operand, scopes, node_id).kind != "boolean":
            raise TypeMismatch("not needs a boolean operand", node_id=node_id)
        return TypeSchema.boolean()
    if isinstance(expr, Arith):
        left = _expr_type(expr.left, scopes, node_id)
        right = _expr_type(expr.right, scopes, node_id)
        if left.kind not in _NUMERIC or right.kind not in _NUMERIC:
            raise TypeMismatch(
                f"arithmetic needs numbers, found {describe(left)} and {describe(right)}",
                node_id=node_id,
            )
        if left.kind == "decimal" or right.kind == "decimal":
            return TypeSchema.decimal()
        return TypeSchema.integer()
    if isinstance(expr, Concat):
        for side in (expr.left, expr.right):
            if _expr_type(side, scopes, node_id).kind != "string":
                raise TypeMismatch("concat needs string operands", node_id=node_id)
        return TypeSchema.string()
    if isinstance(expr, Length):
        operand = _expr_type(expr.operand, scopes, node_id)
        if operand.kind not in ("string", "list"):
            raise TypeMismatch(f"length of {describe(operand)}", node_id=node_id)
        return TypeSchema.integer()
    if isinstance(expr, ArgBy):
        coll = _expr_type(expr.collection, scopes, node_id)
        if coll.kind != "list":
            raise TypeMismatch(f"arg{expr.mode}_by needs a list", node_id=node_id)
        leaf = _path_schema(coll.element, expr.field_path, node_id)
        if leaf.kind not in _ORDERABLE:
            raise TypeMismatch(
                f"arg{expr.mode}_by field must be orderable, found {describe(leaf)}",
                node_id=node_id,
            )
        return coll.element
    if isinstance(expr, FilterBy):
        coll = _expr_type(expr.collection, scopes, node_id)
        if coll.kind != "list":
            raise TypeMismatch("filter_by needs a list", node_id=node_id)
        leaf = _path_schema(coll.element, expr.field_path, node_id)
        value = _expr_type(expr.value, scopes, node_id)
        if expr.op in ("eq", "ne"):
            ok = compatible(value, leaf) or compatible(leaf, value)
        else:
            ok = (leaf.kind in _NUMERIC and value.kind in _NUMERIC) or (
                leaf.kind == "string" and value.kind == "string"
            )
        if not ok:
            raise TypeMismatch(
                f"filter_by compares {describe(leaf)} with {describe(value)}", node_id=node_id
            )
        return coll
    if isinstance(expr, First):
        coll = _expr_type(expr.collection, scopes, node_id)
        if coll.kind != "list":
            raise TypeMismatch("first needs a list", node_id=node_id)
        return coll.element
    if isinstance(expr, Count):
        coll = _expr_type(expr.collection, scopes, node_id)
        if coll.kind != "list":
            raise TypeMismatch("count needs a list", node_id=node_id)
        return TypeSchema.integer()
    raise TypeMismatch(f"unknown expression {expr!r}", node_id=node_id)


def _handler_guarantees(handler: list, owner_bind: str) -> bool:
    """True if the handler always re-produces the binding or exits the plan."""
    if any(
        isinstance(n, (Let, Call, Subroutine)) and getattr(n, "var", getattr(n, "bind", None)) == owner_bind
        for n in handler
    ):
        return True
    return isinstance(handler[-1], Return)


def typecheck(plan: Plan, catalogs: list[ApiCatalog]) -> dict[str, TypeSchema]:
    """Check the plan against its catalogs; returns the binding type map."""
    endpoint_map = resolve_catalogs(plan, catalogs)
    binding_types: dict[str, TypeSchema] = {}
    scopes = _Scopes()

    def record_bind(name: str, schema: TypeSchema, node_id: int) -> None:
        previous = binding_types.get(name)
        if previous is not None and previous != schema:
            raise TypeMismatch(
                f"rebind of {name!r} changes its type from {describe(previous)} to {describe(schema)}",
                node_id=node_id,
            )
        binding_types[name] = schema
        scopes.bind(name, schema)

    def check_block(block: list) -> None:
        for node in block:
            if isinstance(node, Let):
                record_bind(node.var, _expr_type(node.expr, scopes, node.node_id), node.node_id)
            elif isinstance(node, Call):
                spec = endpoint_map.get(node.endpoint)
                if spec is None:
                    raise UnknownEndpoint([node.endpoint], node_id=node.node_id)
                for pname in node.args:
                    if pname not in spec.params:
                        raise UnknownParam(
                            f"endpoint {node.endpoint!r} has no param {pname!r} (node {node.node_id})"
                        )
                for pname, pspec in spec.params.items():
                    if pname not in node.args:
                        if pspec.required:
                            raise MissingRequiredParam(
                                f"endpoint {node.endpoint!r} requires param {pname!r} (node {node.node_id})"
                            )
                        continue
                    found = _expr_type(node.args[pname], scopes, node.node_id)
                    if not compatible(found, pspec.schema):
                        raise TypeMismatch(
                            f"param {pname!r} of {node.endpoint!r} expects "
                            f"{describe(pspec.schema)}, found {describe(found)}",
                            node_id=node.node_id,
                        )
                record_bind(node.bind, spec.returns, node.node_id)
                if node.on_error:
                    scopes.stack.append({})
                    scopes.unavailable.add(node.bind)
                    for handler_node in node.on_error:
                        check_block([handler_node])
                        rebinds = (
                            isinstance(handler_node, (Let, Call, Subroutine))
                            and getattr(handler_node, "var", getattr(handler_node, "bind", None))
                            == node.bind
                        )
                        if rebinds:
                            scopes.unavailable.discard(node.bind)
                    scopes.unavailable.discard(node.bind)
                    scopes.stack.pop()
                    if not _handler_guarantees(node.on_error, node.bind):
                        scopes.conditional.add(node.bind)
            elif isinstance(node, Subroutine):
                for expr in node.inputs.values():
                    _expr_type(expr, scopes, node.node_id)
                record_bind(node.bind, node.output_schema, node.node_id)
            elif isinstance(node, If):
                cond = _expr_type(node.cond, scopes, node.node_id)
                if cond.kind != "boolean":
                    raise TypeMismatch(
                        f"if condition must be boolean, found {describe(cond)}",
                        node_id=node.node_id,
                    )
                for branch in (node.then, node.orelse):
                    if branch:
                        scopes.stack.append({})
                        check_block(branch)
                        scopes.stack.pop()
            elif isinstance(node, ForEach):
                coll = _expr_type(node.collection, scopes, node.node_id)
                if coll.kind != "list":
                    raise TypeMismatch(
                        f"foreach needs a list, found {describe(coll)}", node_id=node.node_id
                    )
                scopes.stack.append({})
                record_bind(node.var, coll.element, node.node_id)
                check_block(node.body)
                scopes.stack.pop()
            elif isinstance(node, Return):
                found = _expr_type(node.expr, scopes, node.node_id)
                if not compatible(found, plan.declared_result):
                    raise TypeMismatch(
                        f"return type {describe(found)} does not match declared "
                        f"{describe(plan.declared_result)}",
                        node_id=node.node_id,
                    )

    check_block(plan.body)
    return binding_types


# --- taint analysis ----------------------------------------------------------

def expr_taint(expr: Expr, taints: dict[str, Taint]) -> Taint:
    """Taint of an expression given binding taints: join over its inputs."""
    if isinstance(expr, Lit):
        return Taint.TRUSTED
    if isinstance(expr, Var):
        return taints.get(expr.name, Taint.TRUSTED)
    return taint_join(*(expr_taint(sub, taints) for sub in sub_exprs(expr))) if sub_exprs(expr) else Taint.TRUSTED


def taint_analyze(plan: Plan, catalogs: list[ApiCatalog]) -> dict[str, Taint]:
    """Binding taints: plan literals trusted, every endpoint or subroutine
    result untrusted, expressions join their inputs."""
    taints: dict[str, Taint] = {}

    def note(name: str, label: Taint) -> None:
        taints[name] = taint_join(taints.get(name, Taint.TRUSTED), label)

    def walk(block: list) -> None:
        for node in block:
            if isinstance(node, Let):
                note(node.var, expr_taint(node.expr, taints))
            elif isinstance(node, Call):
                note(node.bind, Taint.UNTRUSTED)
                if node.on_error:
                    walk(node.on_error)
            elif isinstance(node, Subroutine):
                note(node.bind, Taint.UNTRUSTED)
            elif isinstance(node, If):
                walk(node.then)
                if node.orelse:
                    walk(node.orelse)
            elif isinstance(node, ForEach):
                note(node.var, expr_taint(node.collection, taints))
                walk(node.body)

    walk(plan.body)
    return taints


# --- policy ------------------------------------------------------------------

def enforce_policy(
    plan: Plan,
    catalogs: list[ApiCatalog],
    policy: Policy,
    binding_taints: dict[str, Taint],
) -> list[dict]:
    """Raise PolicyViolation on any violation; returns informational findings."""
    endpoint_map = resolve_catalogs(plan, catalogs)
    violations: list[dict] = []
    rules = set(policy.taint_rules)
    for node in walk_nodes(plan.body):
        if not isinstance(node, Call):
            continue
        if node.endpoint not in policy.allowed_endpoints:
            violations.append(
                {
                    "code": "endpoint_not_allowed",
                    "node_id": node.node_id,
                    "endpoint": node.endpoint,
                    "message": f"endpoint {node.endpoint!r} not in allowed set (node {node.node_id})",
                }
            )
            continue
        spec = endpoint_map.get(node.endpoint)
        if spec is not None and spec.effect == "write":
            if policy.write_gate == "deny":
                violations.append(
                    {
                        "code": "write_denied",
                        "node_id": node.node_id,
                        "endpoint": node.endpoint,
                        "message": f"write endpoint {node.endpoint!r} blocked by write_gate=deny",
                    }
                )
            elif policy.write_gate == "require_listed" and node.endpoint not in policy.listed_writes:
                violations.append(
                    {
                        "code": "write_not_listed",
                        "node_id": node.node_id,
                        "endpoint": node.endpoint,
                        "message": f"write endpoint {node.endpoint!r} is not listed",
                    }
                )
        for pname, expr in node.args.items():
            if (node.endpoint, pname) in rules and expr_taint(expr, binding_taints) is Taint.UNTRUSTED:
                violations.append(
                    {
                        "code": "tainted_param",
                        "node_id": node.node_id,
                        "endpoint": node.endpoint,
                        "param": pname,
                        "message": f"untrusted value flows into {node.endpoint!r}.{pname}",
                    }
                )
    if violations:
        raise PolicyViolation(violations)
    return []


# --- taxonomy and step bound ---------------------------------------------------

def classify(plan: Plan) -> str:
    """Syntactic taxonomy: Safe iff the plan contains zero subroutine nodes."""
    for node in walk_nodes(plan.body):
        if isinstance(node, Subroutine):
            return TAXONOMY_INFLUENCE
    return TAXONOMY_SAFE


def _block_bound(block: list) -> int:
    total = 0
    for node in block:
        if isinstance(node, ForEach):
            total += 1 + node.max_iter * _block_bound(node.body)
        elif isinstance(node, If):
            then_bound = _block_bound(node.then)
            else_bound = _block_bound(node.orelse) if node.orelse else 0
            total += 1 + max(then_bound, else_bound)
        elif isinstance(node, Call):
            total += 1 + (_block_bound(node.on_error) if node.on_error else 0)
        else:
            total += 1
    return total


def static_bound(plan: Plan) -> int:
    """Compile-time upper bound on executed node count."""
    return _block_bound(plan.body)


# --- orchestration ---------------------------------------------------------------

def verify_plan(plan: Plan, catalogs: list[ApiCatalog], policy: Policy | None = None) -> VerifyReport:
    """Full static audit; raises on any verification or policy error."""
    endpoint_map = resolve_catalogs(plan, catalogs)
    binding_types = typecheck(plan, catalogs)
    binding_taints = taint_analyze(plan, catalogs)

    endpoint_set = sorted({n.endpoint for n in walk_nodes(plan.body) if isinstance(n, Call)})
    effects = {eid: endpoint_map[eid].effect for eid in endpoint_set}

    findings: list[dict] = []
    for node in walk_nodes(plan.body):
        # untrusted data may steer branches and loops; record, never reject
        if isinstance(node, If) and expr_taint(node.cond, binding_taints) is Taint.UNTRUSTED:
            findings.append(
                {
                    "code": "untrusted_branch_condition",
                    "node_id": node.node_id,
                    "message": f"branch at node {node.node_id} conditions on untrusted data",
                }
            )
        if isinstance(node, ForEach) and expr_taint(node.collection, binding_taints) is Taint.UNTRUSTED:
            findings.append(
                {
                    "code": "untrusted_loop_collection",
                    "node_id": node.node_id,
                    "message": f"loop at node {node.node_id} iterates untrusted data (bounded by max_iter={node.max_iter})",
                }
            )

    effective_policy = policy if policy is not None else Policy.allow_all(endpoint_set)
    findings.extend(enforce_policy(plan, catalogs, effective_policy, binding_taints))

    return VerifyReport(
        plan_id=plan.plan_id,
        plan_hash=structural_hash(plan),
        endpoint_set=endpoint_set,
        endpoint_effects=effects,
        binding_types=binding_types,
        binding_taints=binding_taints,
        taxonomy=classify(plan),
        static_step_bound=static_bound(plan),
        findings=findings,
    )
