"""planexec: a plan-then-execute web agent framework.

Tasks compile into typed programs over trusted site catalogs, are statically
verified (types, taint, policy, step bound), and run under an executor that
enforces the verified endpoint set at runtime. Untrusted web content can
influence data values and branch outcomes; it can never add actions, select
new tools, or trigger replanning.
"""

from .catalog import (
    ApiCatalog,
    EndpointSpec,
    EndpointSummary,
    TypeSchema,
    expand,
    ingest_catalog,
    serialize_catalog,
    summarize,
    validate_catalog,
)
from .executor import (
    PlanCache,
    Recording,
    RunResult,
    TraceEvent,
    contingent_execute,
    execute,
    normalize_task_text,
    replay,
    run_recorded,
    trace_digest,
)
from .plan import Plan, free_vars, parse_plan, serialize_plan, structural_hash
from .planner import (
    DiscoveryContext,
    GenerativePlannerAdapter,
    TaskSpec,
    TemplatePlanner,
    VerifiedPlan,
    clarify,
    discover,
    make_contingents,
    plan_task,
)
from .quarantine import (
    EchoBackend,
    ExternalModelBackend,
    ExtractorBackend,
    SubroutineRequest,
    SusceptibleBackend,
    invoke,
    validate_output,
)
from .values import Taint, Value, conform, taint_join
from .verify import (
    Policy,
    VerifyReport,
    classify,
    enforce_policy,
    static_bound,
    taint_analyze,
    typecheck,
    verify_plan,
)

__version__ = "0.1.0"
