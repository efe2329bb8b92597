"""Task planning: two-phase discovery over catalog summaries, a deterministic
template backend, an external generative adapter, clarification questions, and
contingent read-only plan variants.

The planner's entire input surface is the task, the catalogs, and the site
conventions. It never receives runtime web content and has no path to any
site connector; a plan only reaches execution through parse_plan plus the
full verifier.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal

from .canon import canon_dumps, canon_loads, digest_text
from .catalog import ApiCatalog, EndpointSpec, expand, summarize
from .errors import (
    BackendUnavailable,
    MalformedDocument,
    NonIdempotentContingency,
    NoRelevantServer,
    PlanExecError,
    PlanRejected,
    TemplateMiss,
)
from .plan import Plan, parse_plan
from .verify import Policy, VerifyReport, verify_plan


@dataclass
class TaskSpec:
    """A user task. Never carries site-produced values, only user constants."""

    text: str
    site_hints: list[str] | None = None
    parameters: dict | None = None


@dataclass
class DiscoveryContext:
    phase: str  # server_select | summary_select | schema_expand
    selected_servers: list[str]
    selected_endpoint_ids: list[str]
    expanded_specs: list[EndpointSpec]
    catalogs: list[ApiCatalog] = field(default_factory=list)

    def conventions(self) -> list[str]:
        notes: list[str] = []
        for catalog in self.catalogs:
            notes.extend(catalog.site_conventions)
            for spec in self.expanded_specs:
                notes.extend(spec.conventions)
        return notes


@dataclass
class VerifiedPlan:
    plan: Plan
    report: VerifyReport


# --- the template table ----------------------------------------------------------

@dataclass
class Template:
    id: str
    site: str
    pattern: str
    write: bool
    required_endpoints: list[str]
    slots: dict
    declared_result: dict
    skeleton: list
    contingent_slot: str | None = None


@dataclass
class TemplateTable:
    templates: list[Template]
    corrections: dict[str, str]
    synonyms: dict[str, list[str]]
    replan_patterns: list[str]
    clarify_rules: list[dict]


def load_templates(text: str | None = None) -> TemplateTable:
    if text is None:
        from .resources import bundled_templates_text

        text = bundled_templates_text()
    try:
        obj = canon_loads(text)
    except ValueError as exc:
        raise MalformedDocument(f"invalid template table JSON: {exc}") from exc
    templates = [
        Template(
            id=entry["id"],
            site=entry["site"],
            pattern=entry["pattern"],
            write=entry.get("write", False),
            required_endpoints=list(entry.get("required_endpoints", [])),
            slots=dict(entry.get("slots", {})),
            declared_result=entry["declared_result"],
            skeleton=entry["skeleton"],
            contingent_slot=entry.get("contingent_slot"),
        )
        for entry in obj["templates"]
    ]
    return TemplateTable(
        templates=templates,
        corrections=dict(obj.get("corrections", {})),
        synonyms={k: list(v) for k, v in obj.get("synonyms", {}).items()},
        replan_patterns=list(obj.get("replan_patterns", [])),
        clarify_rules=list(obj.get("clarify_rules", [])),
    )


# --- discovery ---------------------------------------------------------------------

_STOPWORDS = {
    "a", "an", "and", "are", "all", "by", "do", "does", "for", "in", "is", "it",
    "me", "my", "of", "on", "or", "that", "the", "there", "to", "with", "your",
}


def _words(text: str) -> set[str]:
    return {w for w in re.findall(r"[a-z0-9]+", text.casefold()) if w not in _STOPWORDS}


def _expand_plurals(words: set[str]) -> set[str]:
    out = set(words)
    for word in words:
        out.add(word + "s")
        if word.endswith("s"):
            out.add(word[:-1])
    return out


def _catalog_bag(catalog: ApiCatalog) -> set[str]:
    text_parts = [catalog.server_id, " ".join(catalog.site_conventions)]
    for spec in catalog.endpoints.values():
        text_parts.extend([spec.id.replace(".", " ").replace("_", " "), spec.summary, spec.description])
    return _expand_plurals(_words(" ".join(text_parts)))


def _endpoint_bag(spec: EndpointSpec) -> set[str]:
    return _expand_plurals(_words(f"{spec.id.replace('.', ' ').replace('_', ' ')} {spec.summary}"))


def discover(task: TaskSpec, catalogs: list[ApiCatalog], table: TemplateTable | None = None) -> DiscoveryContext:
    """Phase 1 picks servers, phase 2 picks endpoint summaries, phase 3 expands
    full specs for the picked ids only."""
    if not catalogs:
        raise NoRelevantServer("no catalogs available")
    task_words = _words(task.text)

    if task.site_hints:
        by_id = {c.server_id: c for c in catalogs}
        missing = [sid for sid in task.site_hints if sid not in by_id]
        if missing:
            raise NoRelevantServer(f"hinted server(s) not cataloged: {', '.join(missing)}")
        selected = [by_id[sid] for sid in task.site_hints]
    else:
        scored = [(len(task_words & _catalog_bag(c)), c) for c in catalogs]
        selected = [c for score, c in scored if score > 0]
        if not selected:
            raise NoRelevantServer(f"no server matches task {task.text!r}")

    if table is None:
        table = load_templates()
    template = _match_template(task, table)

    selected_ids: list[str] = []
    expanded: list[EndpointSpec] = []
    for catalog in selected:
        ids = [
            eid
            for eid in sorted(catalog.endpoints)
            if task_words & _endpoint_bag(catalog.endpoints[eid])
        ]
        if template is not None and template[0].site == catalog.server_id:
            for eid in template[0].required_endpoints:
                if eid in catalog.endpoints and eid not in ids:
                    ids.append(eid)
        selected_ids.extend(ids)
        expanded.extend(expand(catalog, ids))
    return DiscoveryContext(
        phase="schema_expand",
        selected_servers=[c.server_id for c in selected],
        selected_endpoint_ids=selected_ids,
        expanded_specs=expanded,
        catalogs=selected,
    )


# --- template backend -----------------------------------------------------------------

def _normalize_task(text: str) -> str:
    return " ".join(text.split()).casefold().rstrip(".?!")


def _tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9_/-]+", text.casefold())


class TemplatePlanner:
    """Deterministic pattern-table planner over the bundled task shapes."""

    def __init__(self, table: TemplateTable | None = None):
        self.table = table or load_templates()

    # -- slot machinery --

    def _slot_values(self, template: Template, match: re.Match, task: TaskSpec) -> dict:
        groups = match.groupdict()
        override = (task.parameters or {}).get("query_override")
        values: dict = {}
        for name, spec in template.slots.items():
            source = groups.get(spec["from"], "")
            if spec.get("join"):
                tokens = _tokenize(source)
                if spec.get("correct"):
                    tokens = [self.table.corrections.get(t, t) for t in tokens]
                value = spec["join"].join(tokens)
            else:
                value = source
            if spec.get("kind") == "decimal":
                value = Decimal(value)
            elif spec.get("kind") == "integer":
                value = int(value)
            if override is not None and name == template.contingent_slot:
                value = override
            values[name] = value
        return values

    def _substitute(self, obj, values: dict):
        if isinstance(obj, dict):
            if set(obj) == {"$slot"}:
                return values[obj["$slot"]]
            return {k: self._substitute(v, values) for k, v in obj.items()}
        if isinstance(obj, list):
            return [self._substitute(v, values) for v in obj]
        if isinstance(obj, str):
            for name, value in values.items():
                if isinstance(value, str):
                    obj = obj.replace("{{" + name + "}}", value)
            return obj
        return obj

    @staticmethod
    def _number_nodes(block: list, counter: list[int]) -> None:
        for node in block:
            counter[0] += 1
            node["node_id"] = counter[0]
            for key in ("on_error", "then", "else", "body"):
                child = node.get(key)
                if isinstance(child, list):
                    TemplatePlanner._number_nodes(child, counter)

    # -- backend contract --

    def generate(self, task: TaskSpec, ctx: DiscoveryContext, conventions: list[str]) -> str:
        matched = _match_template(task, self.table)
        if matched is None:
            replan = any(
                re.search(p, _normalize_task(task.text)) for p in self.table.replan_patterns
            )
            raise TemplateMiss(
                "task requires data-driven plan generation" if replan else "no template matches",
                replan_needed=replan,
            )
        template, match = matched
        if template.site not in ctx.selected_servers:
            raise TemplateMiss(f"template targets {template.site!r}, not selected")
        catalog = next(c for c in ctx.catalogs if c.server_id == template.site)
        values = self._slot_values(template, match, task)
        body = self._substitute(template.skeleton, values)
        self._number_nodes(body, [0])
        identity = canon_dumps(
            {"task": _normalize_task(task.text), "parameters": task.parameters or {}}
        )
        plan_obj = {
            "body": body,
            "catalog_refs": [[catalog.server_id, catalog.version]],
            "declared_result": template.declared_result,
            "plan_id": f"{template.id}-{digest_text(identity)[:8]}",
            "task_text": task.text,
        }
        return canon_dumps(plan_obj)

    def variant_params(self, task: TaskSpec, n: int) -> list[dict]:
        """Query reformulations from the fixed rule set: spelling correction,
        drop the last token, strip a plural."""
        matched = _match_template(task, self.table)
        if matched is None or n <= 0:
            return []
        template, match = matched
        slot = template.contingent_slot
        if slot is None or slot not in template.slots:
            return []
        spec = template.slots[slot]
        join = spec.get("join") or " "
        tokens = _tokenize(match.groupdict().get(spec["from"], ""))
        variants: list[str] = []

        def add(candidate: list[str]) -> None:
            text = join.join(candidate)
            base = join.join(tokens)
            if candidate and text != base and text not in variants:
                variants.append(text)

        add([self.table.corrections.get(t, t) for t in tokens])
        if len(tokens) > 1:
            add(tokens[:-1])
        for i, token in enumerate(tokens):
            for synonym in self.table.synonyms.get(token, []):
                add(tokens[:i] + [synonym] + tokens[i + 1 :])
        if tokens and tokens[-1].endswith("s"):
            add(tokens[:-1] + [tokens[-1][:-1]])
        return [{"query_override": v} for v in variants[:n]]


def _match_template(task: TaskSpec, table: TemplateTable):
    normalized = _normalize_task(task.text)
    for template in table.templates:
        match = re.fullmatch(template.pattern, normalized)
        if match is not None:
            return template, match
    return None


class GenerativePlannerAdapter:
    """Network adapter for an external generative planner.

    The backend sees the task, the discovery context, and the site conventions
    verbatim; its output is plan text that still has to pass the verifier.
    """

    def __init__(self, endpoint: str, timeout_s: float = 30.0):
        self.endpoint = endpoint
        self.timeout_s = timeout_s

    def generate(self, task: TaskSpec, ctx: DiscoveryContext, conventions: list[str]) -> str:
        import requests

        from .catalog import endpoint_to_obj

        body = {
            "task": task.text,
            "parameters": task.parameters or {},
            "servers": ctx.selected_servers,
            "summaries": {
                c.server_id: [[s.id, s.summary] for s in summarize(c)] for c in ctx.catalogs
            },
            "expanded": [endpoint_to_obj(spec) for spec in ctx.expanded_specs],
            "conventions": conventions,
        }
        try:
            response = requests.post(self.endpoint, json=body, timeout=self.timeout_s)
            response.raise_for_status()
            text = response.json().get("plan_text")
        except (requests.RequestException, ValueError) as exc:
            raise BackendUnavailable(f"planner backend unreachable: {exc}") from exc
        if not isinstance(text, str):
            raise BackendUnavailable("planner backend returned no plan text")
        return text


# --- planning entry points ---------------------------------------------------------

def plan_task(
    task: TaskSpec,
    ctx: DiscoveryContext,
    backend,
    policy: Policy | None = None,
) -> VerifiedPlan:
    """Turn a task into a parsed, verified plan, or reject it."""
    text = backend.generate(task, ctx, ctx.conventions())
    try:
        plan = parse_plan(text)
        report = verify_plan(plan, ctx.catalogs, policy)
    except PlanExecError as exc:
        raise PlanRejected(exc) from exc
    return VerifiedPlan(plan=plan, report=report)


def clarify(task: TaskSpec, table: TemplateTable | None = None) -> list[str]:
    """Clarification questions for ambiguous tasks; never guesses an answer."""
    if table is None:
        table = load_templates()
    normalized = _normalize_task(task.text)
    questions: list[str] = []
    for rule in table.clarify_rules:
        if not re.search(rule["trigger"], normalized):
            continue
        unless = rule.get("unless")
        if unless and re.search(unless, normalized):
            continue
        questions.append(rule["question"])
    return questions


def make_contingents(
    task: TaskSpec,
    ctx: DiscoveryContext,
    backend,
    k: int,
    policy: Policy | None = None,
) -> list[VerifiedPlan]:
    """Up to k verified read-only plan variants for error-tolerant queries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    base = plan_task(task, ctx, backend, policy)
    writes = sorted(e for e, eff in base.report.endpoint_effects.items() if eff == "write")
    if writes:
        raise NonIdempotentContingency(
            f"task template requires write endpoint(s): {', '.join(writes)}"
        )
    results = [base]
    variant_fn = getattr(backend, "variant_params", None)
    if variant_fn is not None:
        for params in variant_fn(task, k - 1):
            variant_task = TaskSpec(
                text=task.text,
                site_hints=task.site_hints,
                parameters={**(task.parameters or {}), **params},
            )
            try:
                results.append(plan_task(variant_task, ctx, backend, policy))
            except (TemplateMiss, PlanRejected):
                continue
    return results[:k]
