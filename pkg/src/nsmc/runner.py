"""Run orchestration: sequential, multi-core with bias-free batching, and a
deliberately naive completion-order mode for bias experiments.

Every run's random stream is derived from (master seed, global run index),
never from the worker that happens to execute it, so results are invariant
under core count and scheduling.  Parallel rounds hand each of the K workers
a contiguous batch of B indices; outcomes are fed to the decision procedure
in canonical index order only, and a sequential decision therefore falls at
the same stream position no matter how fast individual workers were.
"""
from __future__ import annotations

import hashlib
import heapq
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import count
from random import Random
from typing import Callable, Iterable, Iterator, Optional

from .model import Network, validate
from .monitor import MonitorFactory
from .parser import (
    CompareQuery,
    EstimateQuery,
    ExpectQuery,
    HypTestQuery,
    Query,
    SimulateQuery,
    format_model,
    format_query,
    parse_model,
    parse_query,
)
from .simulator import Run, Simulator
from .stat import (
    CompareResult,
    SprtParams,
    SprtState,
    clopper_pearson,
    estimate as stat_estimate,
    expect_minmax,
    required_runs,
)


class RunnerError(Exception):
    pass


DEFAULT_BATCH = 64


@dataclass(frozen=True)
class StatParams:
    eps: float = 0.05
    alpha: float = 0.05
    beta: float = 0.05
    delta0: float = 0.01
    delta1: float = 0.01
    max_runs: Optional[int] = None  # cap for SPRT / comparison streams
    reuse: bool = True


@dataclass(frozen=True)
class StatResult:
    """Decision or estimate plus the per-run metric samples for plotting."""

    kind: str  # 'estimate' | 'hyptest' | 'compare' | 'expect'
    query: str
    seed: int
    runs: int
    decision: Optional[str] = None
    p_hat: Optional[float] = None
    eps: Optional[float] = None
    alpha: Optional[float] = None
    ci: Optional[tuple[float, float]] = None
    successes: Optional[int] = None
    mean: Optional[float] = None
    sample_std: Optional[float] = None
    level: Optional[float] = None
    samples: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "query": self.query, "seed": self.seed, "runs": self.runs}
        for key in ("decision", "p_hat", "eps", "alpha", "successes", "mean", "sample_std", "level"):
            v = getattr(self, key)
            if v is not None:
                out[key] = v
        if self.ci is not None:
            out["ci"] = [self.ci[0], self.ci[1]]
        out["samples"] = list(self.samples)
        return out


# ---------------------------------------------------------------------------
# Seeding


def derive_seed(master: int, index: int) -> int:
    """Counter-based per-run seed: independent of worker assignment."""
    digest = hashlib.sha256(f"{master}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:16], "big")


def run_rng(master: int, index: int) -> Random:
    return Random(derive_seed(master, index))


# ---------------------------------------------------------------------------
# Per-run outcome generation (shared by all execution modes and the wire
# protocol worker)


class OutcomeEngine:
    """Turns (query, run index) into one Bernoulli outcome plus an optional
    metric sample (satisfaction time/cost, or a min/max aggregate)."""

    def __init__(self, network: Network, query: Query, master: int, reuse: bool = True):
        problems = [d for d in validate(network) if d.severity == "error"]
        if problems:
            raise RunnerError("invalid model:\n" + "\n".join(str(d) for d in problems))
        self.network = network
        self.query = query
        self.master = master
        self.sim = Simulator(network, reuse=reuse)
        self.last_cause: Optional[str] = None
        ctx = self.sim.ctx
        self._factories = {}
        if isinstance(query, (EstimateQuery, HypTestQuery)):
            self._factories[0] = MonitorFactory(query.formula, ctx)
        elif isinstance(query, CompareQuery):
            self._factories[0] = MonitorFactory(query.formula1, ctx)
            self._factories[1] = MonitorFactory(query.formula2, ctx)

    def outcome(self, index: int) -> tuple[int, Optional[float]]:
        rng = run_rng(self.master, index)
        q = self.query
        if isinstance(q, (EstimateQuery, HypTestQuery)):
            run = self.sim.simulate_run(q.bound, rng, monitor=self._factories[0].new())
            self.last_cause = run.cause
            return (1 if run.outcome else 0, run.sat_metric)
        if isinstance(q, CompareQuery):
            # even indices run the first experiment, odd the second
            side = index % 2
            bound = q.bound1 if side == 0 else q.bound2
            run = self.sim.simulate_run(bound, rng, monitor=self._factories[side].new())
            self.last_cause = run.cause
            return (1 if run.outcome else 0, run.sat_metric)
        if isinstance(q, ExpectQuery):
            run = self.sim.simulate_run(
                q.bound, rng, observe_exprs=(q.expr,), aggregate=q.mode
            )
            self.last_cause = run.cause
            return (1, run.aggregates[0])
        raise RunnerError(f"query kind {type(q).__name__} does not produce outcomes")

    def run_with_details(self, index: int) -> Run:
        rng = run_rng(self.master, index)
        q = self.query
        if not isinstance(q, (EstimateQuery, HypTestQuery)):
            raise RunnerError("detailed runs only for probability queries")
        return self.sim.simulate_run(q.bound, rng, monitor=self._factories[0].new())

    def simulate(self, index: int, record_series: bool = True) -> Run:
        q = self.query
        if not isinstance(q, SimulateQuery):
            raise RunnerError("simulate() requires a simulate query")
        rng = run_rng(self.master, index)
        return self.sim.simulate_run(
            q.bound, rng, observe_exprs=q.exprs, record_series=record_series
        )


# ---------------------------------------------------------------------------
# Decision procedures over a canonical outcome stream


def _needed_runs(query: Query, params: StatParams) -> Optional[int]:
    """Fixed sample size when the query implies one, else None."""
    if isinstance(query, EstimateQuery):
        return required_runs(params.eps, params.alpha)
    if isinstance(query, ExpectQuery):
        return query.runs
    return None


def _decide(
    query: Query,
    params: StatParams,
    stream: Iterator[tuple[int, Optional[float]]],
    query_text: str,
    seed: int,
) -> StatResult:
    if isinstance(query, EstimateQuery):
        n = required_runs(params.eps, params.alpha)
        outcomes = []
        samples = []
        for bit, value in stream:
            outcomes.append(bool(bit))
            if bit and value is not None:
                samples.append(value)
            if len(outcomes) >= n:
                break
        if len(outcomes) < n:
            raise RunnerError(f"outcome stream ended after {len(outcomes)} of {n} runs")
        est = stat_estimate(outcomes, params.eps, params.alpha)
        return StatResult(
            kind="estimate",
            query=query_text,
            seed=seed,
            runs=est.runs,
            p_hat=est.p_hat,
            eps=params.eps,
            alpha=params.alpha,
            ci=(est.ci.lo, est.ci.hi),
            successes=est.successes,
            samples=tuple(samples),
        )
    if isinstance(query, HypTestQuery):
        state = SprtState(
            SprtParams(query.threshold, params.delta0, params.delta1, params.alpha, params.beta)
        )
        samples = []
        for bit, value in stream:
            if bit and value is not None:
                samples.append(value)
            if state.feed(bool(bit)) is not None:
                break
            if params.max_runs is not None and state.runs >= params.max_runs:
                break
        decision = state.decision or "undecided"
        ci = clopper_pearson(state.successes, state.runs, params.alpha) if state.runs else None
        return StatResult(
            kind="hyptest",
            query=query_text,
            seed=seed,
            runs=state.runs,
            decision=decision,
            p_hat=state.successes / state.runs if state.runs else None,
            alpha=params.alpha,
            ci=(ci.lo, ci.hi) if ci else None,
            successes=state.successes,
            samples=tuple(samples),
        )
    if isinstance(query, CompareQuery):
        sprt = SprtState(
            SprtParams(0.5, params.delta0, params.delta1, params.alpha, params.beta)
        )
        max_pairs = params.max_runs or 10_000
        pairs = 0
        discordant = 0
        result: Optional[CompareResult] = None
        buffer: list[int] = []
        for bit, _ in stream:
            buffer.append(bit)
            if len(buffer) < 2:
                continue
            a, b = buffer
            buffer = []
            pairs += 1
            if a != b:
                discordant += 1
                decision = sprt.feed(bool(a))
                if decision == "H0":
                    result = CompareResult("greater", pairs, discordant, 1.0)
                    break
                if decision == "H1":
                    result = CompareResult("less", pairs, discordant, 0.0)
                    break
            if pairs >= max_pairs:
                break
        if result is None:
            result = CompareResult("indistinguishable", pairs, discordant, 0.5)
        return StatResult(
            kind="compare",
            query=query_text,
            seed=seed,
            runs=2 * result.pairs,
            decision=result.decision,
            level=result.level,
            alpha=params.alpha,
        )
    if isinstance(query, ExpectQuery):
        aggregates = []
        for bit, value in stream:
            aggregates.append(value if value is not None else 0.0)
            if len(aggregates) >= query.runs:
                break
        res = expect_minmax(aggregates)
        return StatResult(
            kind="expect",
            query=query_text,
            seed=seed,
            runs=res.runs,
            mean=res.mean,
            sample_std=res.sample_std,
            samples=tuple(aggregates),
        )
    raise RunnerError(f"unsupported query kind {type(query).__name__}")


# ---------------------------------------------------------------------------
# Sequential


def run_sequential(
    network: Network, query: Query, params: StatParams, seed: int
) -> StatResult:
    engine = OutcomeEngine(network, query, seed, reuse=params.reuse)
    deadlocks = 0
    checked = 0

    def stream():
        nonlocal deadlocks, checked
        for index in count():
            bit, value = engine.outcome(index)
            if checked < 100:
                checked += 1
                if engine.last_cause == "deadlock":
                    deadlocks += 1
                # a mostly-deadlocking model signals a modeling error
                if checked == 100 and deadlocks > 50:
                    raise RunnerError(
                        f"{deadlocks} of the first 100 runs deadlocked; check the model"
                    )
            yield bit, value

    return _decide(query, params, stream(), format_query(query), seed)


# ---------------------------------------------------------------------------
# Parallel (bias-free batches)

_POOL_STATE: dict = {}


def _pool_init(model_text: str, query_text: str, master: int, reuse: bool):
    network = parse_model(model_text)
    query = parse_query(query_text)
    _POOL_STATE["engine"] = OutcomeEngine(network, query, master, reuse=reuse)


def _pool_batch(indices: tuple[int, ...]) -> list[tuple[int, Optional[float]]]:
    engine = _POOL_STATE["engine"]
    return [engine.outcome(i) for i in indices]


def run_parallel(
    network: Network,
    query: Query,
    params: StatParams,
    cores: int = 2,
    batch: int = DEFAULT_BATCH,
    seed: int = 0,
    executor: str = "process",
    task_hook: Optional[Callable[[int, int], None]] = None,
) -> StatResult:
    """Same decision as run_sequential on the same canonical stream, computed
    by ``cores`` workers in rounds of equal batches.

    ``task_hook(worker, round)`` runs inside each worker task; tests use it
    to inject scheduling jitter and check order invariance.
    """
    if cores < 1 or batch < 1:
        raise RunnerError("cores and batch must be >= 1")
    model_text = format_model(network)
    query_text = format_query(query)

    def rounds() -> Iterator[tuple[int, Optional[float]]]:
        if executor == "process":
            pool = ProcessPoolExecutor(
                max_workers=cores,
                initializer=_pool_init,
                initargs=(model_text, query_text, seed, params.reuse),
            )
        elif executor == "thread":
            _pool_init(model_text, query_text, seed, params.reuse)
            pool = ThreadPoolExecutor(max_workers=cores)
        elif executor == "inline":
            _pool_init(model_text, query_text, seed, params.reuse)
            pool = None
        else:
            raise RunnerError(f"unknown executor {executor!r}")
        try:
            for rnd in count():
                base = rnd * cores * batch
                tasks = []
                for w in range(cores):
                    indices = tuple(range(base + w * batch, base + (w + 1) * batch))
                    if task_hook is not None:
                        def job(w=w, rnd=rnd, indices=indices):
                            task_hook(w, rnd)
                            return _pool_batch(indices)
                    else:
                        def job(indices=indices):
                            return _pool_batch(indices)
                    if pool is None:
                        tasks.append(job())
                    else:
                        if executor == "process":
                            tasks.append(pool.submit(_pool_batch, indices))
                        else:
                            tasks.append(pool.submit(job))
                # a round is consumed only when complete, in canonical order
                for t in tasks:
                    chunk = t if isinstance(t, list) else t.result()
                    yield from chunk
        finally:
            if pool is not None:
                pool.shutdown(wait=False, cancel_futures=True)

    gen = rounds()
    try:
        return _decide(query, params, gen, query_text, seed)
    finally:
        gen.close()


# ---------------------------------------------------------------------------
# Naive completion-order mode (test harness: reproduces the distribution bias)


def run_naive_parallel(
    network: Network,
    query: Query,
    params: StatParams,
    cores: int,
    seed: int,
    max_runs: int = 100_000,
) -> StatResult:
    """Outcomes are fed in simulated completion-time order: each virtual
    worker's next result becomes available after its run's simulated
    duration, so cheap (typically rejecting) runs reach the sequential test
    first and bias it.  Deliberately incorrect; kept for the bias study."""
    if not isinstance(query, HypTestQuery):
        raise RunnerError("naive mode is defined for hypothesis-testing queries")
    if cores < 1:
        raise RunnerError("cores must be >= 1")
    engine = OutcomeEngine(network, query, seed, reuse=params.reuse)

    def completion_stream() -> Iterator[tuple[int, Optional[float]]]:
        heap: list[tuple[float, int, int, int, Optional[float]]] = []
        next_index = [w for w in range(cores)]
        for w in range(cores):
            run = engine.run_with_details(w)
            heapq.heappush(heap, (run.duration, w, w, 1 if run.outcome else 0, run.sat_metric))
        emitted = 0
        while heap and emitted < max_runs:
            avail, w, idx, bit, value = heapq.heappop(heap)
            emitted += 1
            yield bit, value
            nxt = next_index[w] + cores
            next_index[w] = nxt
            run = engine.run_with_details(nxt)
            heapq.heappush(
                heap, (avail + run.duration, w, nxt, 1 if run.outcome else 0, run.sat_metric)
            )

    return _decide(query, params, completion_stream(), format_query(query), seed)


# ---------------------------------------------------------------------------
# Simulate queries


def run_simulate(network: Network, query: SimulateQuery, seed: int) -> list[Run]:
    engine = OutcomeEngine(network, query, seed)
    return [engine.simulate(i) for i in range(query.count)]
