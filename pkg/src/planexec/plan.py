"""Plan intermediate representation: a program whose control-flow graph is
fixed before execution.

The grammar gives untrusted runtime data no way to add actions: endpoint ids
and subroutine instructions occupy literal positions, no node kind carries a
block-valued expression, every expression is total, and every loop declares
``max_iter``. Plans are single-assignment; the only permitted rebind is a
Call's ``on_error`` block re-producing the owning Call's binding.

Plan files are JSON. Node records carry an explicit ``node_id`` (ascending
integers, pre-order). Canonical serialization sorts object keys
lexicographically; node lists preserve program order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .canon import canon_dumps, canon_loads, digest_text, sort_keys_deep
from .catalog import TypeSchema, schema_from_obj, schema_to_obj
from .errors import (
    DuplicateBinding,
    InvalidSchema,
    MissingMaxIter,
    NonLiteralEndpoint,
    PlanSyntaxError,
    UnboundVariable,
)

CMP_OPS = ("eq", "ne", "lt", "le", "gt", "ge")
ARITH_OPS = ("add", "sub", "mul", "div")
SUBROUTINE_KINDS = ("extract", "classify", "summarize", "transform")


# --- expressions -------------------------------------------------------------

@dataclass
class Lit:
    value: object
    schema: TypeSchema | None = None


@dataclass
class Var:
    name: str


@dataclass
class FieldAccess:
    obj: "Expr"
    name: str


@dataclass
class Index:
    seq: "Expr"
    at: "Expr"


@dataclass
class Cmp:
    op: str  # eq ne lt le gt ge
    left: "Expr"
    right: "Expr"


@dataclass
class BoolOp:
    op: str  # and | or
    left: "Expr"
    right: "Expr"


@dataclass
class Not:
    operand: "Expr"


@dataclass
class Arith:
    op: str  # add sub mul div
    left: "Expr"
    right: "Expr"


@dataclass
class Concat:
    left: "Expr"
    right: "Expr"


@dataclass
class Length:
    operand: "Expr"


@dataclass
class ArgBy:
    """argmin_by / argmax_by: pick the element extremizing a field path."""

    mode: str  # min | max
    collection: "Expr"
    field_path: list[str]


@dataclass
class FilterBy:
    collection: "Expr"
    field_path: list[str]
    op: str  # comparison op
    value: "Expr"


@dataclass
class First:
    collection: "Expr"


@dataclass
class Count:
    collection: "Expr"


Expr = (
    Lit | Var | FieldAccess | Index | Cmp | BoolOp | Not | Arith | Concat
    | Length | ArgBy | FilterBy | First | Count
)


# --- nodes -------------------------------------------------------------------

@dataclass
class Let:
    node_id: int
    var: str
    expr: Expr


@dataclass
class Call:
    node_id: int
    bind: str
    endpoint: str
    args: dict[str, Expr]
    on_error: "list[PlanNode] | None" = None
    retries: int = 0


@dataclass
class Subroutine:
    node_id: int
    bind: str
    kind: str  # extract | classify | summarize | transform
    instruction: str
    inputs: dict[str, Expr]
    output_schema: TypeSchema
    max_retries: int = 0


@dataclass
class If:
    node_id: int
    cond: Expr
    then: "list[PlanNode]"
    orelse: "list[PlanNode] | None" = None


@dataclass
class ForEach:
    node_id: int
    var: str
    collection: Expr
    body: "list[PlanNode]"
    max_iter: int = 1


@dataclass
class Return:
    node_id: int
    expr: Expr


PlanNode = Let | Call | Subroutine | If | ForEach | Return
Block = list  # ordered list of PlanNode


@dataclass
class Plan:
    plan_id: str
    task_text: str
    catalog_refs: list[tuple[str, int]]
    body: Block
    declared_result: TypeSchema

    def __post_init__(self):
        self.catalog_refs = [tuple(ref) for ref in self.catalog_refs]


# --- expression parsing / serialization --------------------------------------

def expr_from_obj(obj, path: str) -> Expr:
    if not isinstance(obj, dict):
        raise PlanSyntaxError("expression must be an object", path)
    op = obj.get("op")
    if op == "lit":
        schema = None
        if obj.get("schema") is not None:
            try:
                schema = schema_from_obj(obj["schema"], path + ".schema")
            except InvalidSchema as exc:
                raise PlanSyntaxError(str(exc), path + ".schema") from exc
        return Lit(value=obj.get("value"), schema=schema)
    if op == "var":
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            raise PlanSyntaxError("var needs a name", path)
        return Var(name)
    if op == "field":
        name = obj.get("name")
        if not isinstance(name, str):
            raise PlanSyntaxError("field needs a name", path)
        return FieldAccess(expr_from_obj(obj.get("obj"), path + ".obj"), name)
    if op == "index":
        return Index(
            expr_from_obj(obj.get("seq"), path + ".seq"),
            expr_from_obj(obj.get("at"), path + ".at"),
        )
    if op in CMP_OPS:
        return Cmp(
            op,
            expr_from_obj(obj.get("left"), path + ".left"),
            expr_from_obj(obj.get("right"), path + ".right"),
        )
    if op in ("and", "or"):
        return BoolOp(
            op,
            expr_from_obj(obj.get("left"), path + ".left"),
            expr_from_obj(obj.get("right"), path + ".right"),
        )
    if op == "not":
        return Not(expr_from_obj(obj.get("operand"), path + ".operand"))
    if op in ARITH_OPS:
        return Arith(
            op,
            expr_from_obj(obj.get("left"), path + ".left"),
            expr_from_obj(obj.get("right"), path + ".right"),
        )
    if op == "concat":
        return Concat(
            expr_from_obj(obj.get("left"), path + ".left"),
            expr_from_obj(obj.get("right"), path + ".right"),
        )
    if op == "length":
        return Length(expr_from_obj(obj.get("operand"), path + ".operand"))
    if op in ("argmin_by", "argmax_by"):
        fp = obj.get("field")
        if not isinstance(fp, list) or not fp or not all(isinstance(s, str) for s in fp):
            raise PlanSyntaxError(f"{op} needs a non-empty field path", path)
        return ArgBy(
            op[3:6],  # "min" | "max"
            expr_from_obj(obj.get("collection"), path + ".collection"),
            list(fp),
        )
    if op == "filter_by":
        fp = obj.get("field")
        if not isinstance(fp, list) or not fp or not all(isinstance(s, str) for s in fp):
            raise PlanSyntaxError("filter_by needs a non-empty field path", path)
        cmp = obj.get("cmp")
        if cmp not in CMP_OPS:
            raise PlanSyntaxError(f"filter_by has bad comparison {cmp!r}", path)
        return FilterBy(
            expr_from_obj(obj.get("collection"), path + ".collection"),
            list(fp),
            cmp,
            expr_from_obj(obj.get("value"), path + ".value"),
        )
    if op == "first":
        return First(expr_from_obj(obj.get("collection"), path + ".collection"))
    if op == "count":
        return Count(expr_from_obj(obj.get("collection"), path + ".collection"))
    raise PlanSyntaxError(f"unknown expression op {op!r}", path)


def expr_to_obj(expr: Expr):
    if isinstance(expr, Lit):
        return {
            "op": "lit",
            "schema": schema_to_obj(expr.schema) if expr.schema is not None else None,
            "value": sort_keys_deep(expr.value),
        }
    if isinstance(expr, Var):
        return {"name": expr.name, "op": "var"}
    if isinstance(expr, FieldAccess):
        return {"name": expr.name, "obj": expr_to_obj(expr.obj), "op": "field"}
    if isinstance(expr, Index):
        return {"at": expr_to_obj(expr.at), "op": "index", "seq": expr_to_obj(expr.seq)}
    if isinstance(expr, Cmp):
        return {"left": expr_to_obj(expr.left), "op": expr.op, "right": expr_to_obj(expr.right)}
    if isinstance(expr, BoolOp):
        return {"left": expr_to_obj(expr.left), "op": expr.op, "right": expr_to_obj(expr.right)}
    if isinstance(expr, Not):
        return {"op": "not", "operand": expr_to_obj(expr.operand)}
    if isinstance(expr, Arith):
        return {"left": expr_to_obj(expr.left), "op": expr.op, "right": expr_to_obj(expr.right)}
    if isinstance(expr, Concat):
        return {"left": expr_to_obj(expr.left), "op": "concat", "right": expr_to_obj(expr.right)}
    if isinstance(expr, Length):
        return {"op": "length", "operand": expr_to_obj(expr.operand)}
    if isinstance(expr, ArgBy):
        return {
            "collection": expr_to_obj(expr.collection),
            "field": list(expr.field_path),
            "op": f"arg{expr.mode}_by",
        }
    if isinstance(expr, FilterBy):
        return {
            "cmp": expr.op,
            "collection": expr_to_obj(expr.collection),
            "field": list(expr.field_path),
            "op": "filter_by",
            "value": expr_to_obj(expr.value),
        }
    if isinstance(expr, First):
        return {"collection": expr_to_obj(expr.collection), "op": "first"}
    if isinstance(expr, Count):
        return {"collection": expr_to_obj(expr.collection), "op": "count"}
    raise TypeError(f"not an expression: {expr!r}")


def sub_exprs(expr: Expr) -> list[Expr]:
    if isinstance(expr, (Lit, Var)):
        return []
    if isinstance(expr, FieldAccess):
        return [expr.obj]
    if isinstance(expr, Index):
        return [expr.seq, expr.at]
    if isinstance(expr, (Cmp, BoolOp, Arith, Concat)):
        return [expr.left, expr.right]
    if isinstance(expr, (Not, Length)):
        return [expr.operand]
    if isinstance(expr, ArgBy):
        return [expr.collection]
    if isinstance(expr, FilterBy):
        return [expr.collection, expr.value]
    if isinstance(expr, (First, Count)):
        return [expr.collection]
    raise TypeError(f"not an expression: {expr!r}")


def expr_vars(expr: Expr) -> set[str]:
    if isinstance(expr, Var):
        return {expr.name}
    names: set[str] = set()
    for sub in sub_exprs(expr):
        names |= expr_vars(sub)
    return names


# --- node parsing / serialization ---------------------------------------------

def _small_int(obj, key: str, path: str, minimum: int = 0) -> int:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise PlanSyntaxError(f"{key} must be an integer >= {minimum}", path)
    return value


def _node_from_obj(obj, path: str) -> PlanNode:
    if not isinstance(obj, dict):
        raise PlanSyntaxError("node must be an object", path)
    kind = obj.get("kind")
    node_id = obj.get("node_id")
    if isinstance(node_id, bool) or not isinstance(node_id, int):
        raise PlanSyntaxError("node needs an integer node_id", path)
    if kind == "let":
        var = obj.get("var")
        if not isinstance(var, str) or not var:
            raise PlanSyntaxError("let needs a var name", path)
        return Let(node_id, var, expr_from_obj(obj.get("expr"), path + ".expr"))
    if kind == "call":
        bind = obj.get("bind")
        if not isinstance(bind, str) or not bind:
            raise PlanSyntaxError("call needs a bind name", path)
        endpoint = obj.get("endpoint")
        if not isinstance(endpoint, str):
            # structural control-flow integrity: no Expr in endpoint position
            raise NonLiteralEndpoint(f"endpoint id must be a literal string at {path}")
        raw_args = obj.get("args", {})
        if not isinstance(raw_args, dict):
            raise PlanSyntaxError("call args must be an object", path)
        args = {
            name: expr_from_obj(sub, f"{path}.args.{name}")
            for name, sub in raw_args.items()
        }
        on_error = None
        if obj.get("on_error") is not None:
            on_error = _block_from_obj(obj["on_error"], path + ".on_error")
        retries = _small_int(obj, "retries", path) if "retries" in obj else 0
        return Call(node_id, bind, endpoint, args, on_error, retries)
    if kind == "subroutine":
        bind = obj.get("bind")
        if not isinstance(bind, str) or not bind:
            raise PlanSyntaxError("subroutine needs a bind name", path)
        sub_kind = obj.get("sub_kind")
        if sub_kind not in SUBROUTINE_KINDS:
            raise PlanSyntaxError(f"bad subroutine kind {sub_kind!r}", path)
        instruction = obj.get("instruction")
        if not isinstance(instruction, str) or not instruction:
            # instructions are plan-time literals, never expressions
            raise PlanSyntaxError("subroutine instruction must be a literal string", path)
        raw_inputs = obj.get("inputs", {})
        if not isinstance(raw_inputs, dict):
            raise PlanSyntaxError("subroutine inputs must be an object", path)
        inputs = {
            name: expr_from_obj(sub, f"{path}.inputs.{name}")
            for name, sub in raw_inputs.items()
        }
        if "output_schema" not in obj:
            raise PlanSyntaxError("subroutine needs an output_schema", path)
        try:
            output_schema = schema_from_obj(obj["output_schema"], path + ".output_schema")
        except InvalidSchema as exc:
            raise PlanSyntaxError(str(exc), path + ".output_schema") from exc
        max_retries = _small_int(obj, "max_retries", path) if "max_retries" in obj else 0
        return Subroutine(node_id, bind, sub_kind, instruction, inputs, output_schema, max_retries)
    if kind == "if":
        cond = expr_from_obj(obj.get("cond"), path + ".cond")
        then = _block_from_obj(obj.get("then"), path + ".then")
        orelse = None
        if obj.get("else") is not None:
            orelse = _block_from_obj(obj["else"], path + ".else")
        return If(node_id, cond, then, orelse)
    if kind == "foreach":
        var = obj.get("var")
        if not isinstance(var, str) or not var:
            raise PlanSyntaxError("foreach needs a var name", path)
        if "max_iter" not in obj:
            raise MissingMaxIter(f"foreach at {path} has no max_iter")
        max_iter = _small_int(obj, "max_iter", path, minimum=1)
        collection = expr_from_obj(obj.get("collection"), path + ".collection")
        body = _block_from_obj(obj.get("body"), path + ".body")
        return ForEach(node_id, var, collection, body, max_iter)
    if kind == "return":
        return Return(node_id, expr_from_obj(obj.get("expr"), path + ".expr"))
    raise PlanSyntaxError(f"unknown node kind {kind!r}", path)


def _block_from_obj(obj, path: str) -> Block:
    if not isinstance(obj, list) or not obj:
        raise PlanSyntaxError("block must be a non-empty list of nodes", path)
    return [_node_from_obj(entry, f"{path}[{i}]") for i, entry in enumerate(obj)]


def node_to_obj(node: PlanNode) -> dict:
    if isinstance(node, Let):
        return {
            "expr": expr_to_obj(node.expr),
            "kind": "let",
            "node_id": node.node_id,
            "var": node.var,
        }
    if isinstance(node, Call):
        return {
            "args": {name: expr_to_obj(node.args[name]) for name in sorted(node.args)},
            "bind": node.bind,
            "endpoint": node.endpoint,
            "kind": "call",
            "node_id": node.node_id,
            "on_error": [node_to_obj(n) for n in node.on_error] if node.on_error else None,
            "retries": node.retries,
        }
    if isinstance(node, Subroutine):
        return {
            "bind": node.bind,
            "inputs": {name: expr_to_obj(node.inputs[name]) for name in sorted(node.inputs)},
            "instruction": node.instruction,
            "kind": "subroutine",
            "max_retries": node.max_retries,
            "node_id": node.node_id,
            "output_schema": schema_to_obj(node.output_schema),
            "sub_kind": node.kind,
        }
    if isinstance(node, If):
        return {
            "cond": expr_to_obj(node.cond),
            "else": [node_to_obj(n) for n in node.orelse] if node.orelse else None,
            "kind": "if",
            "node_id": node.node_id,
            "then": [node_to_obj(n) for n in node.then],
        }
    if isinstance(node, ForEach):
        return {
            "body": [node_to_obj(n) for n in node.body],
            "collection": expr_to_obj(node.collection),
            "kind": "foreach",
            "max_iter": node.max_iter,
            "node_id": node.node_id,
            "var": node.var,
        }
    if isinstance(node, Return):
        return {"expr": expr_to_obj(node.expr), "kind": "return", "node_id": node.node_id}
    raise TypeError(f"not a plan node: {node!r}")


def child_blocks(node: PlanNode) -> list[Block]:
    """Child blocks in pre-order traversal order."""
    if isinstance(node, Call) and node.on_error:
        return [node.on_error]
    if isinstance(node, If):
        return [node.then] + ([node.orelse] if node.orelse else [])
    if isinstance(node, ForEach):
        return [node.body]
    return []


def walk_nodes(block: Block):
    """Pre-order iterator over every node in a block tree."""
    for node in block:
        yield node
        for child in child_blocks(node):
            yield from walk_nodes(child)


def assign_node_ids(plan: Plan) -> Plan:
    """Renumber node ids to canonical pre-order 1..n, in place."""
    counter = 0
    for node in walk_nodes(plan.body):
        counter += 1
        node.node_id = counter
    return plan


def _check_node_ids(plan: Plan) -> None:
    expected = 0
    for node in walk_nodes(plan.body):
        expected += 1
        if node.node_id != expected:
            raise PlanSyntaxError(
                f"node_id {node.node_id} out of order, expected {expected} (pre-order)"
            )


# --- binding discipline --------------------------------------------------------

def _check_bindings(block: Block, scopes: list[set[str]], rebind_ok: str | None = None) -> None:
    """Enforce bind-before-use and single assignment.

    ``scopes`` is a stack of name sets; bindings land in the innermost scope.
    ``rebind_ok`` names the one variable an on_error block may re-produce.
    """

    def bound(name: str) -> bool:
        return any(name in scope for scope in scopes)

    def use(expr: Expr, node: PlanNode) -> None:
        for name in sorted(expr_vars(expr)):
            if not bound(name):
                raise UnboundVariable(f"variable {name!r} used before binding at node {node.node_id}")

    def bind(name: str, node: PlanNode) -> None:
        if bound(name) and name != rebind_ok:
            raise DuplicateBinding(f"variable {name!r} rebound at node {node.node_id}")
        scopes[-1].add(name)

    for node in block:
        if isinstance(node, Let):
            use(node.expr, node)
            bind(node.var, node)
        elif isinstance(node, Call):
            for expr in node.args.values():
                use(expr, node)
            bind(node.bind, node)
            if node.on_error:
                scopes.append(set())
                _check_bindings(node.on_error, scopes, rebind_ok=node.bind)
                scopes.pop()
        elif isinstance(node, Subroutine):
            for expr in node.inputs.values():
                use(expr, node)
            bind(node.bind, node)
        elif isinstance(node, If):
            use(node.cond, node)
            for branch in (node.then, node.orelse):
                if branch:
                    scopes.append(set())
                    _check_bindings(branch, scopes, rebind_ok=rebind_ok)
                    scopes.pop()
        elif isinstance(node, ForEach):
            use(node.collection, node)
            scopes.append({node.var})
            _check_bindings(node.body, scopes, rebind_ok=rebind_ok)
            scopes.pop()
        elif isinstance(node, Return):
            use(node.expr, node)


def free_vars(block: Block) -> set[str]:
    """Names referenced before any binding within the block."""
    free: set[str] = set()

    def walk(nodes: Block, scopes: list[set[str]]) -> None:
        def note(expr: Expr) -> None:
            for name in expr_vars(expr):
                if not any(name in scope for scope in scopes):
                    free.add(name)

        for node in nodes:
            if isinstance(node, Let):
                note(node.expr)
                scopes[-1].add(node.var)
            elif isinstance(node, Call):
                for expr in node.args.values():
                    note(expr)
                scopes[-1].add(node.bind)
                if node.on_error:
                    scopes.append(set())
                    walk(node.on_error, scopes)
                    scopes.pop()
            elif isinstance(node, Subroutine):
                for expr in node.inputs.values():
                    note(expr)
                scopes[-1].add(node.bind)
            elif isinstance(node, If):
                note(node.cond)
                for branch in (node.then, node.orelse):
                    if branch:
                        scopes.append(set())
                        walk(branch, scopes)
                        scopes.pop()
            elif isinstance(node, ForEach):
                note(node.collection)
                scopes.append({node.var})
                walk(node.body, scopes)
                scopes.pop()
            elif isinstance(node, Return):
                note(node.expr)

    walk(block, [set()])
    return free


# --- plan parse / serialize -----------------------------------------------------

def plan_from_obj(obj) -> Plan:
    if not isinstance(obj, dict):
        raise PlanSyntaxError("plan document must be an object")
    plan_id = obj.get("plan_id")
    task_text = obj.get("task_text")
    if not isinstance(plan_id, str) or not plan_id:
        raise PlanSyntaxError("plan needs a plan_id")
    if not isinstance(task_text, str):
        raise PlanSyntaxError("plan needs task_text")
    refs_raw = obj.get("catalog_refs")
    if not isinstance(refs_raw, list) or not refs_raw:
        raise PlanSyntaxError("plan needs catalog_refs")
    refs: list[tuple[str, int]] = []
    for i, entry in enumerate(refs_raw):
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not isinstance(entry[0], str)
            or isinstance(entry[1], bool)
            or not isinstance(entry[1], int)
        ):
            raise PlanSyntaxError(f"bad catalog ref at catalog_refs[{i}]")
        refs.append((entry[0], entry[1]))
    if "declared_result" not in obj:
        raise PlanSyntaxError("plan needs declared_result")
    try:
        declared = schema_from_obj(obj["declared_result"], "$.declared_result")
    except InvalidSchema as exc:
        raise PlanSyntaxError(str(exc), "$.declared_result") from exc
    body = _block_from_obj(obj.get("body"), "$.body")
    plan = Plan(plan_id, task_text, refs, body, declared)
    _check_node_ids(plan)
    _check_bindings(plan.body, [set()])
    return plan


def parse_plan(text: str) -> Plan:
    """Parse a plan document, enforcing grammar-level invariants."""
    try:
        obj = canon_loads(text)
    except json.JSONDecodeError as exc:
        raise PlanSyntaxError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from exc
    except ValueError as exc:
        raise PlanSyntaxError(f"invalid JSON: {exc}") from exc
    return plan_from_obj(obj)


def plan_to_obj(plan: Plan) -> dict:
    return {
        "body": [node_to_obj(node) for node in plan.body],
        "catalog_refs": [[sid, ver] for sid, ver in plan.catalog_refs],
        "declared_result": schema_to_obj(plan.declared_result),
        "plan_id": plan.plan_id,
        "task_text": plan.task_text,
    }


def serialize_plan(plan: Plan) -> str:
    """Canonical byte-stable encoding of a plan."""
    _check_node_ids(plan)
    return canon_dumps(plan_to_obj(plan))


def structural_hash(plan: Plan) -> str:
    """Stable digest of the canonical serialization."""
    return digest_text(serialize_plan(plan))


def count_subroutines(plan: Plan) -> int:
    return sum(1 for node in walk_nodes(plan.body) if isinstance(node, Subroutine))


def plan_endpoints(plan: Plan) -> set[str]:
    """The complete endpoint set, computable before any execution."""
    return {node.endpoint for node in walk_nodes(plan.body) if isinstance(node, Call)}
