"""Statistical model checking of networks of priced timed automata."""

from .expr import EvalError, eval_expr
from .model import (
    Automaton,
    Branch,
    ClockDecl,
    Diagnostic,
    Edge,
    Location,
    ModelError,
    Network,
    Sync,
    Template,
    VarDecl,
    analyze_dependencies,
    instantiate,
    validate,
)
from .monitor import (
    Eventually,
    Globally,
    MonitorFactory,
    Until,
    WmtlAnd,
    WmtlAtom,
    WmtlEventually,
    WmtlGlobally,
    WmtlNext,
    WmtlNot,
    WmtlOr,
    WmtlUntil,
    classify,
    watch_points,
)
from .output import (
    DistributionSeries,
    Histogram,
    TrajectorySeries,
    build_cdf,
    build_histogram,
    export,
    filter_trajectory,
    load_artifact,
)
from .parser import (
    CompareQuery,
    EstimateQuery,
    ExpectQuery,
    HypTestQuery,
    ParseError,
    Query,
    SimulateQuery,
    format_model,
    format_query,
    parse_model,
    parse_query,
)
from .runner import (
    RunnerError,
    StatParams,
    StatResult,
    run_naive_parallel,
    run_parallel,
    run_sequential,
    run_simulate,
)
from .simulator import (
    CostBound,
    Run,
    RunError,
    Simulator,
    StepsBound,
    TimeBound,
    sample_delay,
)
from .stat import (
    CpInterval,
    SprtParams,
    SprtState,
    clopper_pearson,
    compare,
    estimate,
    expect_minmax,
    required_runs,
)
from .wire import WorkerServer, dispatch_remote, model_hash, serve_worker

__version__ = "0.1.0"
