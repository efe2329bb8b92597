"""Plan interpreter with runtime enforcement, trace recording, replay, the
plan cache, and contingent execution.

Enforcement invariants checked on every run: an endpoint may be invoked only
if it appears in the verify report's endpoint set, execution halts within the
static step bound, and the trace records every node execution in a strict
sequence. Breaches raise EnforcementViolation and are never swallowed: they
indicate a bug, not a recoverable condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

from .canon import digest_obj
from .catalog import ApiCatalog, TypeSchema
from .errors import (
    BackendUnavailable,
    ContingencyMismatch,
    EndpointError,
    EnforcementViolation,
    NonIdempotentContingency,
    ReplayDivergence,
    SchemaViolation,
    SiteError,
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
    parse_plan,
    serialize_plan,
    structural_hash,
)
from .quarantine import SubroutineBackend, SubroutineRequest, invoke
from .values import Taint, Value, conform, infer_literal_schema, taint_join, value_digest
from .verify import VerifyReport, resolve_catalogs


# --- trace -------------------------------------------------------------------

@dataclass
class TraceEvent:
    seq: int
    node_id: int
    kind: str  # let call subroutine branch loop_iter return error retry
    endpoint_id: str | None = None
    arg_digest: str | None = None
    result_digest: str | None = None
    taint_flags: dict | None = None
    outcome: object = "ok"  # "ok" | {"error": code}

    def to_obj(self) -> dict:
        obj = {"seq": self.seq, "node_id": self.node_id, "kind": self.kind}
        if self.kind == "call":
            obj["endpoint_id"] = self.endpoint_id
        obj["arg_digest"] = self.arg_digest
        obj["result_digest"] = self.result_digest
        obj["taint_flags"] = self.taint_flags
        obj["outcome"] = self.outcome
        return obj


def trace_digest(trace: list[TraceEvent]) -> str:
    return digest_obj([ev.to_obj() for ev in trace])


@dataclass
class RunResult:
    status: str  # completed | failed | bound_exceeded
    error_code: str | None
    return_value: Value | None
    trace: list[TraceEvent]
    steps_executed: int

    def to_obj(self) -> dict:
        from .catalog import schema_to_obj

        rv = None
        if self.return_value is not None:
            rv = {
                "payload": self.return_value.payload,
                "schema": schema_to_obj(self.return_value.schema),
                "taint": self.return_value.taint.value,
            }
        return {
            "status": self.status,
            "error_code": self.error_code,
            "return_value": rv,
            "steps_executed": self.steps_executed,
            "trace_digest": trace_digest(self.trace),
        }


# --- recording and playback ----------------------------------------------------

@dataclass
class Recording:
    """Recorded site responses and subroutine outputs, in consumption order.

    Each entry notes the trace seq of the event that consumed it, so a
    perturbation test can predict where replay must diverge.
    """

    entries: list[dict] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {"entries": list(self.entries)}

    @classmethod
    def from_obj(cls, obj) -> "Recording":
        return cls(entries=list(obj["entries"]))


class RecordingSites:
    def __init__(self, inner, recording: Recording, next_seq):
        self._inner = inner
        self._recording = recording
        self._next_seq = next_seq

    def call(self, endpoint_id: str, args: dict, headers: dict | None = None):
        try:
            payload = self._inner.call(endpoint_id, args, headers)
        except SiteError as exc:
            self._recording.entries.append(
                {"type": "call_error", "endpoint": endpoint_id, "code": exc.reason, "seq": self._next_seq()}
            )
            raise
        self._recording.entries.append(
            {"type": "call", "endpoint": endpoint_id, "response": payload, "seq": self._next_seq()}
        )
        return payload


class RecordingBackend:
    def __init__(self, inner: SubroutineBackend, recording: Recording, next_seq):
        self._inner = inner
        self._recording = recording
        self._next_seq = next_seq

    def respond(self, request: SubroutineRequest) -> str:
        raw = self._inner.respond(request)
        self._recording.entries.append({"type": "sub", "raw": raw, "seq": self._next_seq()})
        return raw


class Playback:
    """Single shared cursor over a recording, serving both interfaces."""

    def __init__(self, recording: Recording):
        self._entries = list(recording.entries)
        self._pos = 0

    def _next(self) -> dict:
        if self._pos >= len(self._entries):
            raise SiteError("replay_exhausted")
        entry = self._entries[self._pos]
        self._pos += 1
        return entry

    @property
    def sites(self):
        return _PlaybackSites(self)

    @property
    def backend(self):
        return _PlaybackBackend(self)


class _PlaybackSites:
    def __init__(self, cursor: Playback):
        self._cursor = cursor

    def call(self, endpoint_id: str, args: dict, headers: dict | None = None):
        entry = self._cursor._next()
        if entry["type"] == "call_error" and entry["endpoint"] == endpoint_id:
            raise SiteError(entry["code"])
        if entry["type"] != "call" or entry["endpoint"] != endpoint_id:
            raise SiteError("replay_mismatch")
        return entry["response"]


class _PlaybackBackend:
    def __init__(self, cursor: Playback):
        self._cursor = cursor

    def respond(self, request: SubroutineRequest) -> str:
        entry = self._cursor._next()
        if entry["type"] != "sub":
            raise BackendUnavailable("replay_mismatch")
        return entry["raw"]


# --- expression evaluation -------------------------------------------------------

class _Fault(Exception):
    """Plan-level runtime error; may be routed to an on_error handler."""

    def __init__(self, code: str, node_id: int):
        super().__init__(f"{code} at node {node_id}")
        self.code = code
        self.node_id = node_id


class _ReturnSignal(Exception):
    def __init__(self, value: Value):
        self.value = value


class _BoundSignal(Exception):
    pass


def _navigate(payload, path: list[str]):
    for name in path:
        payload = payload[name]
    return payload


def _compare(op: str, left, right) -> bool:
    if op == "eq":
        return left == right
    if op == "ne":
        return left != right
    if op == "lt":
        return left < right
    if op == "le":
        return left <= right
    if op == "gt":
        return left > right
    return left >= right


def eval_expr(expr: Expr, lookup, node_id: int, fault, meter=None) -> Value:
    """Total evaluation of an expression.

    ``lookup(name)`` resolves a binding, ``fault(code)`` raises the runtime
    error for this node, ``meter()`` (optional) ticks a step counter used by
    the totality property tests.
    """
    if meter is not None:
        meter()

    def ev(sub: Expr) -> Value:
        return eval_expr(sub, lookup, node_id, fault, meter)

    if isinstance(expr, Lit):
        schema = expr.schema if expr.schema is not None else infer_literal_schema(expr.value)
        return Value(schema, conform(expr.value, schema), Taint.TRUSTED, node_id)
    if isinstance(expr, Var):
        return lookup(expr.name)
    if isinstance(expr, FieldAccess):
        base = ev(expr.obj)
        schema = base.schema
        payload = base.payload
        if schema.kind == "optional":
            if payload is None:
                fault("absent_optional")
            schema = schema.element
        return Value(schema.fields[expr.name], payload[expr.name], base.taint, node_id)
    if isinstance(expr, Index):
        seq = ev(expr.seq)
        at = ev(expr.at)
        i = at.payload
        if not 0 <= i < len(seq.payload):
            fault("index_out_of_range")
        return Value(seq.schema.element, seq.payload[i], taint_join(seq.taint, at.taint), node_id)
    if isinstance(expr, Cmp):
        left = ev(expr.left)
        right = ev(expr.right)
        result = _compare(expr.op, left.payload, right.payload)
        return Value(TypeSchema.boolean(), result, taint_join(left.taint, right.taint), node_id)
    if isinstance(expr, BoolOp):
        # both sides always evaluate: expressions are pure and total, and the
        # taint join must not depend on runtime short-circuiting
        left = ev(expr.left)
        right = ev(expr.right)
        result = (left.payload and right.payload) if expr.op == "and" else (left.payload or right.payload)
        return Value(TypeSchema.boolean(), bool(result), taint_join(left.taint, right.taint), node_id)
    if isinstance(expr, Not):
        operand = ev(expr.operand)
        return Value(TypeSchema.boolean(), not operand.payload, operand.taint, node_id)
    if isinstance(expr, Arith):
        left = ev(expr.left)
        right = ev(expr.right)
        a, b = left.payload, right.payload
        decimal_result = isinstance(a, Decimal) or isinstance(b, Decimal)
        if expr.op == "div" and b == 0:
            fault("division_by_zero")
        if expr.op == "add":
            out = a + b
        elif expr.op == "sub":
            out = a - b
        elif expr.op == "mul":
            out = a * b
        elif decimal_result:
            out = Decimal(a) / Decimal(b)
        else:
            out = a // b
        schema = TypeSchema.decimal() if decimal_result else TypeSchema.integer()
        if decimal_result and not isinstance(out, Decimal):
            out = Decimal(out)
        return Value(schema, out, taint_join(left.taint, right.taint), node_id)
    if isinstance(expr, Concat):
        left = ev(expr.left)
        right = ev(expr.right)
        return Value(
            TypeSchema.string(), left.payload + right.payload, taint_join(left.taint, right.taint), node_id
        )
    if isinstance(expr, Length):
        operand = ev(expr.operand)
        return Value(TypeSchema.integer(), len(operand.payload), operand.taint, node_id)
    if isinstance(expr, ArgBy):
        coll = ev(expr.collection)
        if not coll.payload:
            fault("index_out_of_range")
        best = None
        best_key = None
        for item in coll.payload:
            key = _navigate(item, expr.field_path)
            if best_key is None or (key < best_key if expr.mode == "min" else key > best_key):
                best, best_key = item, key
        return Value(coll.schema.element, best, coll.taint, node_id)
    if isinstance(expr, FilterBy):
        coll = ev(expr.collection)
        value = ev(expr.value)
        kept = [
            item
            for item in coll.payload
            if _compare(expr.op, _navigate(item, expr.field_path), value.payload)
        ]
        return Value(coll.schema, kept, taint_join(coll.taint, value.taint), node_id)
    if isinstance(expr, First):
        coll = ev(expr.collection)
        if not coll.payload:
            fault("index_out_of_range")
        return Value(coll.schema.element, coll.payload[0], coll.taint, node_id)
    if isinstance(expr, Count):
        coll = ev(expr.collection)
        return Value(TypeSchema.integer(), len(coll.payload), coll.taint, node_id)
    raise EnforcementViolation(f"unknown expression {expr!r}")


# --- the interpreter ---------------------------------------------------------------

class _Execution:
    def __init__(self, plan, report, endpoint_map, sites, subs, bound, trace, event_sink=None):
        self.plan = plan
        self.report = report
        self.endpoint_map = endpoint_map
        self.sites = sites
        self.subs = subs
        self.bound = bound
        self.trace = trace
        self.event_sink = event_sink
        self.steps = 0
        self.env: list[dict[str, Value]] = [{}]
        self.allowed = set(report.endpoint_set)

    # -- plumbing --

    def event(self, kind, node_id, endpoint_id=None, arg_digest=None, result_digest=None,
              taint_flags=None, outcome="ok") -> None:
        ev = TraceEvent(
            seq=len(self.trace) + 1,
            node_id=node_id,
            kind=kind,
            endpoint_id=endpoint_id,
            arg_digest=arg_digest,
            result_digest=result_digest,
            taint_flags=taint_flags,
            outcome=outcome,
        )
        self.trace.append(ev)
        if self.event_sink is not None:
            self.event_sink(ev)

    def fault(self, code: str, node_id: int):
        self.event("error", node_id, outcome={"error": code})
        raise _Fault(code, node_id)

    def lookup(self, name: str) -> Value:
        for scope in reversed(self.env):
            if name in scope:
                return scope[name]
        raise EnforcementViolation(f"binding {name!r} missing at runtime")

    def bind(self, name: str, value: Value) -> None:
        # a handler rebind replaces the owner binding wherever it lives
        for scope in reversed(self.env):
            if name in scope:
                scope[name] = value
                return
        self.env[-1][name] = value

    def eval(self, expr: Expr, node_id: int) -> Value:
        return eval_expr(expr, self.lookup, node_id, lambda code: self.fault(code, node_id))

    def tick(self, node_id: int) -> None:
        self.steps += 1
        if self.steps > self.bound:
            self.event("error", node_id, outcome={"error": "bound_exceeded"})
            raise _BoundSignal()

    # -- nodes --

    def exec_block(self, block: list) -> None:
        for node in block:
            self.exec_node(node)

    def exec_node(self, node) -> None:
        self.tick(node.node_id)
        if isinstance(node, Let):
            value = self.eval(node.expr, node.node_id)
            self.bind(node.var, value)
            self.event(
                "let", node.node_id,
                result_digest=value_digest(value),
                taint_flags={"result": value.taint.value},
            )
        elif isinstance(node, Call):
            self.exec_call(node)
        elif isinstance(node, Subroutine):
            self.exec_subroutine(node)
        elif isinstance(node, If):
            cond = self.eval(node.cond, node.node_id)
            self.event(
                "branch", node.node_id,
                result_digest=value_digest(cond),
                taint_flags={"cond": cond.taint.value},
            )
            branch = node.then if cond.payload else node.orelse
            if branch:
                self.env.append({})
                try:
                    self.exec_block(branch)
                finally:
                    self.env.pop()
        elif isinstance(node, ForEach):
            coll = self.eval(node.collection, node.node_id)
            items = coll.payload
            if len(items) > node.max_iter:
                self.fault("max_iter_exceeded", node.node_id)
            element_schema = coll.schema.element
            for item in items:
                value = Value(element_schema, item, coll.taint, node.node_id)
                self.event(
                    "loop_iter", node.node_id,
                    result_digest=value_digest(value),
                    taint_flags={"item": value.taint.value},
                )
                self.env.append({node.var: value})
                try:
                    self.exec_block(node.body)
                finally:
                    self.env.pop()
        elif isinstance(node, Return):
            value = self.eval(node.expr, node.node_id)
            payload = conform(value.payload, self.plan.declared_result)
            result = Value(self.plan.declared_result, payload, value.taint, node.node_id)
            self.event(
                "return", node.node_id,
                result_digest=value_digest(result),
                taint_flags={"result": result.taint.value},
            )
            raise _ReturnSignal(result)
        else:
            raise EnforcementViolation(f"unknown node {node!r}")

    def exec_call(self, node: Call) -> None:
        # the control-flow integrity check: only statically declared endpoints
        if node.endpoint not in self.allowed:
            raise EnforcementViolation(
                f"endpoint {node.endpoint!r} is outside the verified endpoint set"
            )
        try:
            value = self._call_attempts(node)
        except _Fault:
            if node.on_error:
                # declared fallback path; mark the handler entry in the trace
                self.event("retry", node.node_id, outcome="ok")
                self.env.append({})
                try:
                    self.exec_block(node.on_error)
                finally:
                    handler_scope = self.env.pop()
                # a top-level rebind of the owner binding survives the handler
                if node.bind in handler_scope:
                    self.env[-1][node.bind] = handler_scope[node.bind]
                return
            raise
        self.bind(node.bind, value)

    def _call_attempts(self, node: Call) -> Value:
        spec = self.endpoint_map[node.endpoint]
        arg_values = {name: self.eval(expr, node.node_id) for name, expr in node.args.items()}
        wire = {
            name: conform(arg_values[name].payload, spec.params[name].schema)
            for name in sorted(arg_values)
        }
        arg_digest = digest_obj({"args": wire})
        arg_taints = {name: arg_values[name].taint.value for name in sorted(arg_values)}
        last_code = "endpoint_error"
        for attempt in range(node.retries + 1):
            try:
                payload = self.sites.call(node.endpoint, wire, dict(spec.required_headers))
                normalized = conform(payload, spec.returns)
            except SiteError as exc:
                last_code = exc.reason
            except SchemaViolation:
                last_code = "bad_response"
            else:
                value = Value(spec.returns, normalized, Taint.UNTRUSTED, node.node_id)
                self.event(
                    "call", node.node_id,
                    endpoint_id=node.endpoint,
                    arg_digest=arg_digest,
                    result_digest=value_digest(value),
                    taint_flags={"args": arg_taints, "result": value.taint.value},
                    outcome="ok",
                )
                return value
            if attempt < node.retries:
                self.event("retry", node.node_id, outcome={"error": last_code})
        self.fault(last_code, node.node_id)

    def exec_subroutine(self, node: Subroutine) -> None:
        inputs = {name: self.eval(expr, node.node_id) for name, expr in node.inputs.items()}
        request = SubroutineRequest(
            kind=node.kind,
            instruction=node.instruction,
            inputs=inputs,
            output_schema=node.output_schema,
            max_retries=node.max_retries,
        )
        arg_digest = digest_obj(
            {"inputs": {name: inputs[name].payload for name in sorted(inputs)}}
        )
        try:
            value = invoke(
                request,
                self.subs,
                on_retry=lambda code: self.event("retry", node.node_id, outcome={"error": code}),
            )
        except SchemaViolation:
            self.fault("schema_violation", node.node_id)
        except BackendUnavailable:
            self.fault("backend_unavailable", node.node_id)
        value.origin = node.node_id
        self.bind(node.bind, value)
        self.event(
            "subroutine", node.node_id,
            arg_digest=arg_digest,
            result_digest=value_digest(value),
            taint_flags={
                "inputs": {name: inputs[name].taint.value for name in sorted(inputs)},
                "result": value.taint.value,
            },
        )


def execute(
    plan: Plan,
    report: VerifyReport,
    catalogs: list[ApiCatalog],
    sites,
    subs: SubroutineBackend,
    limits: int | None = None,
    trace: list[TraceEvent] | None = None,
    event_sink=None,
) -> RunResult:
    """Run a verified plan. The report must match the plan's structural hash."""
    if structural_hash(plan) != report.plan_hash:
        raise EnforcementViolation("verify report does not match this plan (structural hash)")
    endpoint_map = resolve_catalogs(plan, catalogs)
    bound = report.static_step_bound if limits is None else min(report.static_step_bound, limits)
    if trace is None:
        trace = []
    execution = _Execution(plan, report, endpoint_map, sites, subs, bound, trace, event_sink)
    status, error_code, return_value = "completed", None, None
    try:
        execution.exec_block(plan.body)
    except _ReturnSignal as signal:
        return_value = signal.value
    except _Fault as fault:
        status, error_code = "failed", fault.code
    except _BoundSignal:
        status, error_code = "bound_exceeded", "bound_exceeded"
    if execution.steps > bound:
        raise EnforcementViolation("executed steps exceeded the static bound")
    return RunResult(status, error_code, return_value, trace, execution.steps)


def run_recorded(plan, report, catalogs, sites, subs, limits=None, event_sink=None):
    """Execute while recording every site response and subroutine output."""
    trace: list[TraceEvent] = []
    recording = Recording()
    next_seq = lambda: len(trace) + 1
    result = execute(
        plan,
        report,
        catalogs,
        RecordingSites(sites, recording, next_seq),
        RecordingBackend(subs, recording, next_seq),
        limits=limits,
        trace=trace,
        event_sink=event_sink,
    )
    return result, recording


def replay(
    plan: Plan,
    report: VerifyReport,
    catalogs: list[ApiCatalog],
    recording: Recording,
    original_trace: list[TraceEvent],
) -> RunResult:
    """Re-execute against recorded inputs; the trace must match byte for byte."""
    cursor = Playback(recording)
    result = execute(plan, report, catalogs, cursor.sites, cursor.backend)
    for i in range(max(len(result.trace), len(original_trace))):
        a = original_trace[i].to_obj() if i < len(original_trace) else None
        b = result.trace[i].to_obj() if i < len(result.trace) else None
        if a != b:
            raise ReplayDivergence(seq=i + 1)
    return result


# --- plan cache -----------------------------------------------------------------

def normalize_task_text(text: str) -> str:
    """Cache identity: trim, collapse internal whitespace, casefold."""
    return " ".join(text.split()).casefold()


class PlanCache:
    """Maps (normalized task text, catalog versions) to a serialized plan."""

    def __init__(self):
        self._entries: dict[str, str] = {}

    @staticmethod
    def _key(task_text: str, catalogs: list[ApiCatalog]) -> str:
        return digest_obj(
            {
                "task": normalize_task_text(task_text),
                "catalogs": sorted([c.server_id, c.version] for c in catalogs),
            }
        )

    def lookup(self, task_text: str, catalogs: list[ApiCatalog]) -> Plan | None:
        text = self._entries.get(self._key(task_text, catalogs))
        return parse_plan(text) if text is not None else None

    def store(self, task_text: str, catalogs: list[ApiCatalog], plan: Plan) -> None:
        self._entries[self._key(task_text, catalogs)] = serialize_plan(plan)

    def __len__(self) -> int:
        return len(self._entries)

    def to_obj(self) -> dict:
        return {"entries": {k: self._entries[k] for k in sorted(self._entries)}}

    @classmethod
    def from_obj(cls, obj) -> "PlanCache":
        cache = cls()
        cache._entries = dict(obj.get("entries", {}))
        return cache


# --- contingent execution ---------------------------------------------------------

def _nonempty(value: Value) -> bool:
    if value.schema.kind in ("list", "string"):
        return len(value.payload) > 0
    if value.schema.kind == "optional":
        return value.payload is not None
    return True


def contingent_execute(
    candidates: list[tuple[Plan, VerifyReport]],
    catalogs: list[ApiCatalog],
    sites,
    subs: SubroutineBackend,
    selector: Expr,
) -> RunResult:
    """Execute read-only plan variants on isolated site clones and let the
    plan-supplied selector expression pick one result by index.

    The selector sees one binding, ``results``: a list of records
    {index, nonempty, value} for every completed candidate.
    """
    if not candidates:
        raise ContingencyMismatch("no candidate plans")
    declared = candidates[0][0].declared_result
    for plan, report in candidates:
        if plan.declared_result != declared:
            raise ContingencyMismatch("candidates declare different result types")
        writes = sorted(e for e, eff in report.endpoint_effects.items() if eff == "write")
        if writes:
            raise NonIdempotentContingency(
                f"candidate {plan.plan_id!r} uses write endpoint(s): {', '.join(writes)}"
            )
    results = [
        execute(plan, report, catalogs, sites.clone(), subs) for plan, report in candidates
    ]
    record_schema = TypeSchema.record(
        {"index": TypeSchema.integer(), "nonempty": TypeSchema.boolean(), "value": declared}
    )
    rows = []
    taint = Taint.TRUSTED
    for i, result in enumerate(results):
        if result.status == "completed" and result.return_value is not None:
            rows.append(
                {"index": i, "nonempty": _nonempty(result.return_value), "value": result.return_value.payload}
            )
            taint = taint_join(taint, result.return_value.taint)
    results_value = Value(TypeSchema.list_of(record_schema), rows, taint, 0)

    class _SelectorFault(Exception):
        pass

    def fault(code: str):
        raise _SelectorFault(code)

    def lookup(name: str) -> Value:
        if name != "results":
            raise _SelectorFault(f"selector references unknown binding {name!r}")
        return results_value

    try:
        chosen = eval_expr(selector, lookup, 0, fault)
    except _SelectorFault:
        return RunResult("failed", "selector_failed", None, [], 0)
    index = chosen.payload
    if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < len(results):
        return RunResult("failed", "selector_failed", None, [], 0)
    return results[index]
