"""Command-line entry point.

Exit codes: 0 success, 1 verification or policy failure, 2 execution failure,
3 usage error. Plans are never accepted inline from untrusted channels; they
come from files or from the planner.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .canon import canon_dumps, canon_loads
from .catalog import ApiCatalog, ingest_catalog, validate_catalog
from .errors import (
    NoRelevantServer,
    PlanExecError,
    PlanRejected,
    ReplayDivergence,
    TemplateMiss,
    UnknownEndpoint,
    UsageError,
)
from .executor import (
    PlanCache,
    Recording,
    RunResult,
    TraceEvent,
    replay as replay_recording,
    run_recorded,
    trace_digest,
)
from .plan import parse_plan, serialize_plan
from .planner import (
    GenerativePlannerAdapter,
    TaskSpec,
    TemplatePlanner,
    clarify,
    discover,
    plan_task,
)
from .quarantine import (
    EchoBackend,
    ExternalModelBackend,
    ExtractorBackend,
    SusceptibleBackend,
)
from .resources import bundled_catalogs, bundled_policy, data_text
from .sitesim import (
    SimConnector,
    build_state,
    hijack_occurred,
    inject,
    load_corpus,
    outcome_score,
    react_baseline_run,
)
from .verify import VerifyReport, classify, load_policy, verify_plan

_CONFIG_KEYS = {
    "catalogs", "policy", "plan_cache", "planner_backend", "subroutine_backend",
    "planner_endpoint", "subroutine_endpoint", "echo_fixture", "timeout_s",
    "seed", "trace_dir",
}


class Config:
    """Runtime wiring. Paths must exist at load; unknown keys are rejected."""

    def __init__(self, obj: dict, base: Path):
        from .errors import ConfigError

        unknown = set(obj) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def resolve(p):
            path = Path(p)
            return path if path.is_absolute() else base / path

        self.catalog_paths = [resolve(p) for p in obj.get("catalogs", [])]
        self.policy_path = resolve(obj["policy"]) if obj.get("policy") else None
        for path in [*self.catalog_paths, *( [self.policy_path] if self.policy_path else [] )]:
            if not path.exists():
                raise ConfigError(f"configured path does not exist: {path}")
        self.plan_cache_path = resolve(obj["plan_cache"]) if obj.get("plan_cache") else None
        self.planner_backend = obj.get("planner_backend", "template")
        self.subroutine_backend = obj.get("subroutine_backend", "extractor")
        # environment overrides apply to backend endpoints only
        self.planner_endpoint = os.environ.get(
            "PLANEXEC_PLANNER_ENDPOINT", obj.get("planner_endpoint")
        )
        self.subroutine_endpoint = os.environ.get(
            "PLANEXEC_SUBROUTINE_ENDPOINT", obj.get("subroutine_endpoint")
        )
        self.echo_fixture = obj.get("echo_fixture", "")
        self.timeout_s = obj.get("timeout_s", 10)
        self.seed = obj.get("seed", 0)
        self.trace_dir = resolve(obj.get("trace_dir", "traces"))

    @classmethod
    def load(cls, path: str | None) -> "Config":
        from .errors import ConfigError

        if path is None:
            return cls({}, Path.cwd())
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            obj = canon_loads(p.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        return cls(obj, p.parent)

    def catalogs(self) -> list[ApiCatalog]:
        if not self.catalog_paths:
            return bundled_catalogs()
        return [ingest_catalog(p.read_text(encoding="utf-8")) for p in self.catalog_paths]

    def policy(self):
        if self.policy_path is None:
            return bundled_policy()
        return load_policy(self.policy_path.read_text(encoding="utf-8"))

    def planner(self):
        if self.planner_backend == "template":
            return TemplatePlanner()
        if self.planner_backend == "generative":
            if not self.planner_endpoint:
                raise UsageError("generative planner needs planner_endpoint")
            return GenerativePlannerAdapter(self.planner_endpoint, self.timeout_s)
        raise UsageError(f"unknown planner backend {self.planner_backend!r}")

    def subroutines(self):
        name = self.subroutine_backend
        if name == "extractor":
            return ExtractorBackend()
        if name == "susceptible":
            return SusceptibleBackend()
        if name == "echo":
            return EchoBackend(self.echo_fixture)
        if name == "external":
            if not self.subroutine_endpoint:
                raise UsageError("external subroutine backend needs subroutine_endpoint")
            return ExternalModelBackend(self.subroutine_endpoint, self.timeout_s)
        raise UsageError(f"unknown subroutine backend {name!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_trace_file(path: Path) -> list[TraceEvent]:
    events = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = canon_loads(line)
        events.append(
            TraceEvent(
                seq=obj["seq"], node_id=obj["node_id"], kind=obj["kind"],
                endpoint_id=obj.get("endpoint_id"), arg_digest=obj["arg_digest"],
                result_digest=obj["result_digest"], taint_flags=obj["taint_flags"],
                outcome=obj["outcome"],
            )
        )
    return events


def _write_run_dir(out: Path, plan, report: VerifyReport, result: RunResult, recording: Recording) -> None:
    _write(out / "plan.json", serialize_plan(plan))
    _write(out / "report.json", canon_dumps(report.to_obj()))
    _write(out / "recording.json", canon_dumps(recording.to_obj()))
    _write(out / "result.json", canon_dumps(result.to_obj()))
    lines = "".join(canon_dumps(ev.to_obj()) + "\n" for ev in result.trace)
    _write(out / "trace.jsonl", lines)


# --- subcommands ------------------------------------------------------------------


def _cmd_ingest(args, config: Config) -> int:
    text = Path(args.catalog).read_text(encoding="utf-8")
    catalog = ingest_catalog(text)
    findings = validate_catalog(catalog)
    print(f"{catalog.server_id} v{catalog.version}: {len(catalog.endpoints)} endpoints")
    for summary in sorted(catalog.endpoints):
        print(f"  {summary}: {catalog.endpoints[summary].summary}")
    for finding in findings:
        print(f"finding: {finding.code} {finding.message}")
    return 1 if findings else 0


def _cmd_plan(args, config: Config) -> int:
    catalogs = config.catalogs()
    policy = config.policy()
    task = TaskSpec(args.task, site_hints=[args.site] if args.site else None)
    questions = clarify(task)
    if questions:
        print("task needs clarification:")
        for q in questions:
            print(f"  - {q}")
        return 1
    backend = config.planner() if args.backend is None else (
        TemplatePlanner() if args.backend == "template"
        else GenerativePlannerAdapter(config.planner_endpoint or "", config.timeout_s)
    )
    cache = None
    if config.plan_cache_path is not None and config.plan_cache_path.exists():
        cache = PlanCache.from_obj(canon_loads(config.plan_cache_path.read_text(encoding="utf-8")))
    cache = cache or PlanCache()
    ctx = discover(task, catalogs)
    cached = cache.lookup(args.task, ctx.catalogs)
    if cached is not None:
        plan = cached
        report = verify_plan(plan, ctx.catalogs, policy)
        print(f"plan cache hit: {plan.plan_id}")
    else:
        verified = plan_task(task, ctx, backend, policy)
        plan, report = verified.plan, verified.report
        cache.store(args.task, ctx.catalogs, plan)
    out = Path(args.out)
    _write(out / "plan.json", serialize_plan(plan))
    _write(out / "report.json", canon_dumps(report.to_obj()))
    if config.plan_cache_path is not None:
        _write(config.plan_cache_path, canon_dumps(cache.to_obj()))
    print(f"plan {plan.plan_id}: taxonomy={report.taxonomy} endpoints={report.endpoint_set}")
    print(f"wrote {out / 'plan.json'} and {out / 'report.json'}")
    return 0


def _cmd_verify(args, config: Config) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"))
    policy = load_policy(Path(args.policy).read_text(encoding="utf-8"))
    report = verify_plan(plan, config.catalogs(), policy)
    print(canon_dumps(report.to_obj()))
    return 0


def _cmd_classify(args, config: Config) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"))
    print(classify(plan))
    return 0


def _cmd_run(args, config: Config) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"))
    catalogs = config.catalogs()
    report = verify_plan(plan, catalogs, config.policy())
    seed = config.seed if args.seed is None else args.seed
    sites = SimConnector(build_state(seed))
    out = Path(args.trace_out) if args.trace_out else config.trace_dir / plan.plan_id
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.jsonl"
    trace_path.write_text("", encoding="utf-8")
    with trace_path.open("a", encoding="utf-8") as sink_file:
        def sink(ev):
            sink_file.write(canon_dumps(ev.to_obj()) + "\n")
            sink_file.flush()

        result, recording = run_recorded(
            plan, report, catalogs, sites, config.subroutines(), event_sink=sink
        )
    _write(out / "plan.json", serialize_plan(plan))
    _write(out / "report.json", canon_dumps(report.to_obj()))
    _write(out / "recording.json", canon_dumps(recording.to_obj()))
    _write(out / "result.json", canon_dumps(result.to_obj()))
    print(f"status={result.status} steps={result.steps_executed} trace={trace_path}")
    if result.status == "completed":
        return 0
    print(f"execution failed: {result.error_code}")
    return 2


def _cmd_replay(args, config: Config) -> int:
    out = Path(args.trace)
    plan = parse_plan((out / "plan.json").read_text(encoding="utf-8"))
    report = VerifyReport.from_obj(canon_loads((out / "report.json").read_text(encoding="utf-8")))
    recording = Recording.from_obj(canon_loads((out / "recording.json").read_text(encoding="utf-8")))
    original = _load_trace_file(out / "trace.jsonl")
    try:
        result = replay_recording(plan, report, config.catalogs(), recording, original)
    except ReplayDivergence as exc:
        print(f"replay diverged at seq {exc.seq}")
        return 2
    print(f"replay identical: digest {trace_digest(result.trace)}")
    return 0


def _cmd_attack(args, config: Config) -> int:
    corpus_text = Path(args.suite).read_text(encoding="utf-8") if args.suite else data_text("attacks/corpus.json")
    corpus = load_corpus(corpus_text)
    catalogs = config.catalogs()
    policy = config.policy()
    planner = TemplatePlanner()
    seed = config.seed if args.seed is None else args.seed
    rows = []
    for case in corpus.cases:
        if not case.in_scope:
            continue
        task = TaskSpec(case.task_text)
        ctx = discover(task, catalogs)
        verified = plan_task(task, ctx, planner, policy)
        allowed = verified.report.endpoint_set
        state = inject(build_state(seed), case)
        outcome = "-"
        if args.agent == "react":
            trace = react_baseline_run(case.task_text, state, 30, corpus.react_patterns, catalogs)
            hijack = hijack_occurred(trace, allowed)
        else:
            from .executor import execute

            result = execute(
                verified.plan, verified.report, ctx.catalogs,
                SimConnector(state), SusceptibleBackend(),
            )
            hijack = hijack_occurred(result.trace, allowed)
            if case.expected is not None and result.status == "completed":
                outcome = outcome_score(result, case.expected)
        rows.append({"case": case.id, "goal": case.goal, "agent": args.agent,
                     "hijack": hijack, "outcome": outcome})
    width = max(len(r["case"]) for r in rows)
    print(f"{'case'.ljust(width)}  goal     agent  hijack  outcome")
    for r in rows:
        print(
            f"{r['case'].ljust(width)}  {r['goal'].ljust(7)}  {r['agent'].ljust(5)}  "
            f"{('yes' if r['hijack'] else 'no').ljust(6)}  {r['outcome']}"
        )
    hijack_rows = [r for r in rows if r["goal"] == "hijack"]
    rate = sum(1 for r in hijack_rows if r["hijack"]) / max(1, len(hijack_rows))
    print(f"hijack rate: {rate:.2f} ({sum(1 for r in hijack_rows if r['hijack'])}/{len(hijack_rows)})")
    out = Path(args.out) if args.out else config.trace_dir
    _write(out / "attack_results.json", canon_dumps(rows))
    return 0


def run_suite(tasks: list[dict], catalogs, policy, planner) -> list[dict]:
    """Plan and classify every task; returns rows with predicted statuses."""
    rows = []
    for entry in tasks:
        task = TaskSpec(entry["task"])
        try:
            ctx = discover(task, catalogs)
            verified = plan_task(task, ctx, planner, policy)
            predicted = verified.report.taxonomy
        except TemplateMiss as exc:
            predicted = "ReplanNeeded" if exc.replan_needed else "NoTemplate"
        except PlanRejected as exc:
            predicted = "IncompleteApi" if isinstance(exc.cause, UnknownEndpoint) else "Rejected"
        except NoRelevantServer:
            predicted = "NoServer"
        rows.append({**entry, "predicted": predicted})
    return rows


def _cmd_suite(args, config: Config) -> int:
    obj = canon_loads(Path(args.tasks).read_text(encoding="utf-8"))
    rows = run_suite(obj["tasks"], config.catalogs(), config.policy(), TemplatePlanner())

    def fraction(n: int, total: int) -> str:
        return f"{n} ({100.0 * n / total:.2f}%)" if total else "0"

    sites = sorted({r.get("site", "?") for r in rows})
    print(f"{'Site'.ljust(8)} {'Total':>5}  {'Safe':>14}  {'Safe+Influence':>16}  {'Replan':>10}  {'Failed':>10}")
    for site in sites + ["Total"]:
        group = rows if site == "Total" else [r for r in rows if r.get("site") == site]
        total = len(group)
        safe = sum(1 for r in group if r["predicted"] == "Safe")
        swi = sum(1 for r in group if r["predicted"] == "SafeWithInfluence")
        rep = sum(1 for r in group if r["predicted"] == "ReplanNeeded")
        failed = total - safe - swi - rep
        print(
            f"{site.ljust(8)} {total:>5}  {fraction(safe, total):>14}  "
            f"{fraction(swi, total):>16}  {fraction(rep, total):>10}  {fraction(failed, total):>10}"
        )
    mismatches = [r for r in rows if r["predicted"] != r["label"]]
    agreement = 100.0 * (len(rows) - len(mismatches)) / len(rows) if rows else 100.0
    print(f"label agreement: {agreement:.2f}% ({len(rows) - len(mismatches)}/{len(rows)})")
    for r in mismatches:
        print(f"  mismatch {r['id']}: predicted {r['predicted']}, labeled {r['label']}")
    return 0 if not mismatches else 1


def build_parser() -> _Parser:
    parser = _Parser(prog="planexec", description="Plan-then-execute web agent framework")
    parser.add_argument("--config", default=None, help="config JSON file")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest", help="validate and index a catalog")
    p.add_argument("--catalog", required=True)

    p = commands.add_parser("plan", help="plan a task and emit plan + verify report")
    p.add_argument("--task", required=True)
    p.add_argument("--site", default=None)
    p.add_argument("--backend", choices=["template", "generative"], default=None)
    p.add_argument("--out", default="plan_out")

    p = commands.add_parser("verify", help="statically verify a plan against a policy")
    p.add_argument("--plan", required=True)
    p.add_argument("--policy", required=True)

    p = commands.add_parser("run", help="execute a plan on the simulated sites")
    p.add_argument("--plan", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace-out", default=None)

    p = commands.add_parser("classify", help="print the plan's taxonomy class")
    p.add_argument("--plan", required=True)

    p = commands.add_parser("attack", help="run the attack corpus and print metrics")
    p.add_argument("--suite", default=None)
    p.add_argument("--agent", choices=["pte", "react"], default="pte")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = commands.add_parser("replay", help="re-execute a recorded run and compare traces")
    p.add_argument("--trace", required=True)

    p = commands.add_parser("suite", help="run the labeled task suite and print fractions")
    p.add_argument("--tasks", required=True)
    return parser


_COMMANDS = {
    "ingest": _cmd_ingest,
    "plan": _cmd_plan,
    "verify": _cmd_verify,
    "classify": _cmd_classify,
    "run": _cmd_run,
    "replay": _cmd_replay,
    "attack": _cmd_attack,
    "suite": _cmd_suite,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = Config.load(args.config)
        return _COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 3
    except PlanExecError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
