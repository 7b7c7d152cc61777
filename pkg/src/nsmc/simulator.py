"""Stochastic simulation of networks under race semantics.

Each process independently samples how long to wait before acting: uniformly
over the window left by its invariant when that window is bounded, or
exponentially (shifted by the earliest guard enabling) when it may stay
forever.  The minimum-delay process wins the race, fires one of its
output/internal edges, and broadcast receivers join synchronously.

Pending delay choices are kept across steps and only re-sampled for
processes affected by the fired edges (delay reuse); a static dependency
matrix decides who is affected.  Before a delay is committed, inspection
points inside it (clock-constraint crossings of the active monitor, until
deadlines, guard enabling bounds) are visited so transient satisfaction is
never skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from random import Random
from typing import Callable, Optional, Sequence, Union

from .expr import (
    EvalError,
    LinAtom,
    NonlinearError,
    compile_fn,
    const_value,
    format_expr,
    intersect_windows,
    split_conjunction,
)
from .model import (
    Automaton,
    Network,
    TAU_CLOCK,
    analyze_dependencies,
)
from .monitor import RunMonitor, TracePoint, collect_clock_cmp_atoms

_INF = float("inf")
_TOL = 1e-9


class RunError(Exception):
    """A run could not proceed: evaluation failure or a broken model
    assumption (not a deadlock, which is a regular termination cause)."""


@dataclass(frozen=True)
class TimeBound:
    bound: float


@dataclass(frozen=True)
class CostBound:
    clock: str
    bound: float


@dataclass(frozen=True)
class StepsBound:
    bound: int


RunBound = Union[TimeBound, CostBound, StepsBound]


def format_bound(b: RunBound) -> str:
    if isinstance(b, TimeBound):
        return f"<={b.bound!r}"
    if isinstance(b, CostBound):
        return f"{b.clock}<={b.bound!r}"
    return f"#<={b.bound!r}"


@dataclass
class SimState:
    values: dict
    locations: list[int]
    time: float = 0.0
    steps: int = 0


@dataclass
class Run:
    points: list[TracePoint]
    cause: str  # 'verdict' | 'bound' | 'deadlock'
    outcome: Optional[bool]
    sat_time: Optional[float]
    sat_metric: Optional[float]  # bound metric value when the verdict fired
    duration: float
    steps: int
    race_steps: int
    resamples: int
    aggregates: Optional[list[float]] = None
    series: Optional[list[list[tuple[float, float]]]] = None


def sample_delay(interval: tuple[float, float], exp_rate: Optional[float], rng: Random) -> float:
    """Draw one delay from [lo, hi]: uniform when hi is finite, otherwise
    lo + Exponential(exp_rate) via the inverse CDF -ln(1-u)/rate."""
    lo, hi = interval
    if hi == _INF:
        if exp_rate is None:
            raise RunError("unbounded delay but no exponential rate; invalid model")
        if exp_rate <= 0.0:
            return _INF
        return lo - math.log1p(-rng.random()) / exp_rate
    if hi < lo:
        raise RunError(f"empty delay interval [{lo}, {hi}]")
    return lo + (hi - lo) * rng.random()


# ---------------------------------------------------------------------------
# Compiled network


@dataclass
class _CBranch:
    weight: Callable
    updates: list[tuple[str, str, Callable, str]]  # (target, kind, fn, source text)
    target: int


@dataclass
class _CEdge:
    index: int  # edge index within the instance (dependency key)
    label: str
    sync_kind: str
    channel: Optional[str]
    static: Callable
    atoms: list[LinAtom]
    full: Callable
    branches: list[_CBranch]
    deps: frozenset[int] = frozenset()


@dataclass
class _CLocation:
    name: str
    inv_static: Callable
    inv_atoms: list[LinAtom]
    inv_full: Optional[Callable]
    exp_rate: Optional[Callable]
    rates: list[tuple[str, Callable]]
    out_edges: list[_CEdge]
    in_edges: dict  # channel -> list[_CEdge]


@dataclass
class _CInstance:
    name: str
    locations: list[_CLocation]
    init: int


@dataclass
class _Pending:
    delay: Optional[float]  # remaining delay until this process acts
    hi: float  # remaining delay the invariant still permits
    edge: Optional[_CEdge]
    branch: int
    enable_los: list[float]  # remaining guard enabling bounds (inspection)


class Simulator:
    """Compiles a network once; generates independent runs from it.

    A Simulator instance is single-threaded; share the (immutable) Network
    across workers and build one Simulator per worker instead.
    """

    def __init__(self, network: Network, reuse: bool = True):
        self.network = network
        self.reuse = reuse
        self.ctx = network.compile_context()
        deps = analyze_dependencies(network)
        self._var_kinds = {}
        for v in network.variables:
            self._var_kinds[v.name] = v.kind
        for inst in network.instances:
            for v in inst.variables:
                self._var_kinds[v.name] = v.kind
        self._clock_names = network.all_clock_names()
        self.instances = [
            self._compile_instance(i, inst, deps) for i, inst in enumerate(network.instances)
        ]

    def set_reuse(self, enabled: bool) -> None:
        self.reuse = enabled

    # -- compilation --------------------------------------------------------

    def _compile_instance(self, idx: int, inst: Automaton, deps) -> _CInstance:
        ctx = self.ctx
        try:
            locations = []
            loc_index = {loc.name: j for j, loc in enumerate(inst.locations)}
            edges_by_source: dict[str, list] = {}
            for ei, e in enumerate(inst.edges):
                edges_by_source.setdefault(e.source, []).append((ei, e))
            for loc in inst.locations:
                inv_static, inv_atoms = split_conjunction(loc.invariant, ctx, label=f"{inst.name}.{loc.name}")
                inv_full = compile_fn(loc.invariant, ctx) if loc.invariant is not None else None
                exp_rate = compile_fn(loc.exp_rate, ctx) if loc.exp_rate is not None else None
                rates = [(cn, compile_fn(r, ctx)) for cn, r in loc.rates]
                out_edges: list[_CEdge] = []
                in_edges: dict = {}
                for ei, e in edges_by_source.get(loc.name, []):
                    static, atoms = split_conjunction(e.guard, ctx)
                    full = compile_fn(e.guard, ctx) if e.guard is not None else (lambda V, L: True)
                    branches = []
                    for b in e.branches:
                        updates = []
                        for target, value in b.updates:
                            kind = "clock" if target in ctx.clocks else self._var_kinds[target]
                            updates.append((target, kind, compile_fn(value, ctx), format_expr(value)))
                        branches.append(
                            _CBranch(compile_fn(b.weight, ctx), updates, loc_index[b.target])
                        )
                    sync = e.sync
                    if sync.kind == "out":
                        label = f"{inst.name}.{sync.channel}!"
                    elif sync.kind == "in":
                        label = f"{inst.name}.{sync.channel}?"
                    else:
                        label = f"{inst.name}.tau"
                    ce = _CEdge(
                        index=ei,
                        label=label,
                        sync_kind=sync.kind,
                        channel=sync.channel,
                        static=static,
                        atoms=atoms,
                        full=full,
                        branches=branches,
                        deps=deps.affected(idx, ei),
                    )
                    if sync.kind == "in":
                        in_edges.setdefault(sync.channel, []).append(ce)
                    else:
                        out_edges.append(ce)
                locations.append(
                    _CLocation(loc.name, inv_static, inv_atoms, inv_full, exp_rate, rates, out_edges, in_edges)
                )
            return _CInstance(inst.name, locations, inst.location_index(inst.init))
        except NonlinearError as exc:
            raise RunError(f"{inst.name}: {exc}") from exc

    # -- state construction --------------------------------------------------

    def initial_state(self) -> SimState:
        values: dict = {TAU_CLOCK: 0.0}
        for c in self.network.clocks:
            values[c.name] = float(c.init)
        for inst in self.network.instances:
            for c in inst.clocks:
                values[c.name] = float(c.init)
        locations = [ci.init for ci in self.instances]
        for decls in [self.network.variables] + [inst.variables for inst in self.network.instances]:
            for v in decls:
                cv = const_value(v.init)
                if cv is None:
                    raise RunError(f"initial value of {v.name!r} is not constant: {format_expr(v.init)}")
                values[v.name] = self._coerce(v.name, v.kind, cv)
        return SimState(values, locations)

    def _coerce(self, name: str, kind: str, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise RunError(f"numeric value required for {name!r}, got {v!r}")
        if kind == "int":
            r = round(v)
            if abs(v - r) > 1e-9:
                raise RunError(f"non-integer value {v!r} assigned to int variable {name!r}")
            return int(r)
        return float(v)

    # -- per-step machinery ---------------------------------------------------

    def _current_rates(self, state: SimState) -> dict:
        rates = {name: 1.0 for name in self._clock_names}
        V, L = state.values, state.locations
        for i, ci in enumerate(self.instances):
            loc = ci.locations[L[i]]
            for cn, fn in loc.rates:
                rates[cn] = float(fn(V, L))
        return rates

    def delay_interval(self, state: SimState, instance: int) -> tuple[float, float]:
        """[lo, hi]: hi is the supremum delay the invariant permits, lo the
        earliest delay at which some output/internal edge becomes enabled
        (inf when the instance is delay-blocked)."""
        rates = self._current_rates(state)
        hi, candidates = self._windows(state, instance, rates)
        lo = min((c[1] for c in candidates), default=_INF)
        return lo, hi

    def _windows(self, state: SimState, i: int, rates: dict):
        """Invariant supremum plus per-edge enabling windows for instance i."""
        V, L = state.values, state.locations
        loc = self.instances[i].locations[L[i]]
        if not loc.inv_static(V, L):
            raise RunError(f"{self.instances[i].name}: invariant violated in {loc.name}")
        hi = _INF
        for atom in loc.inv_atoms:
            wlo, whi = atom.window(V, rates)
            if wlo > _TOL:
                raise RunError(f"{self.instances[i].name}: invariant violated in {loc.name}")
            if whi < hi:
                hi = whi
        if hi < 0.0:
            hi = 0.0
        candidates = []
        for edge in loc.out_edges:
            if not edge.static(V, L):
                continue
            wlo, whi = intersect_windows([a.window(V, rates) for a in edge.atoms])
            if wlo > whi + _TOL or wlo > hi + _TOL:
                continue
            candidates.append((edge, wlo, whi))
        return hi, candidates

    def _sample(self, state: SimState, i: int, rates: dict, rng: Random) -> _Pending:
        V, L = state.values, state.locations
        loc = self.instances[i].locations[L[i]]
        hi, candidates = self._windows(state, i, rates)
        if not candidates:
            return _Pending(None, hi, None, 0, [])
        lo = min(c[1] for c in candidates)
        exp_rate = None
        if hi == _INF:
            if loc.exp_rate is None:
                raise RunError(
                    f"{self.instances[i].name}.{loc.name}: unbounded delay but no exprate"
                )
            exp_rate = float(loc.exp_rate(V, L))
            if exp_rate <= 0.0:
                return _Pending(None, hi, None, 0, [])
        d = sample_delay((lo, min(hi, _INF)), exp_rate, rng)
        if d == _INF:
            return _Pending(None, hi, None, 0, [])
        enabled = [c for c in candidates if c[1] - _TOL <= d <= c[2] + _TOL]
        edge_choice: Optional[_CEdge] = None
        branch_choice = 0
        if enabled:
            weights = []
            for edge, _, _ in enabled:
                bw = [max(0.0, float(b.weight(V, L))) for b in edge.branches]
                weights.append((edge, bw, sum(bw)))
            total = sum(w[2] for w in weights)
            if total <= 0.0:
                raise RunError(
                    f"{self.instances[i].name}.{loc.name}: all enabled branch weights are zero"
                )
            edge_choice, bw = self._weighted_pick(weights, total, rng)
            branch_choice = self._weighted_index(bw, rng)
        enable_los = sorted({c[1] for c in candidates if c[1] > _TOL})
        return _Pending(d, hi, edge_choice, branch_choice, enable_los)

    @staticmethod
    def _weighted_pick(weights, total: float, rng: Random):
        if len(weights) == 1:
            return weights[0][0], weights[0][1]
        x = rng.random() * total
        acc = 0.0
        for edge, bw, s in weights:
            acc += s
            if x < acc:
                return edge, bw
        return weights[-1][0], weights[-1][1]

    @staticmethod
    def _weighted_index(bw: list[float], rng: Random) -> int:
        if len(bw) == 1:
            return 0
        total = sum(bw)
        x = rng.random() * total
        acc = 0.0
        for i, w in enumerate(bw):
            acc += w
            if x < acc:
                return i
        return len(bw) - 1

    # -- the run loop ----------------------------------------------------------

    def simulate_run(
        self,
        bound: RunBound,
        rng: Random,
        monitor: Optional[RunMonitor] = None,
        observe_exprs: Sequence = (),
        aggregate: Optional[str] = None,  # 'min' | 'max' per observed expression
        record_points: bool = False,
        record_series: bool = False,
        max_steps: int = 10_000_000,
    ) -> Run:
        try:
            return self._simulate_run(
                bound, rng, monitor, observe_exprs, aggregate, record_points, record_series, max_steps
            )
        except EvalError as exc:
            raise RunError(f"evaluation failed during run: {exc}") from exc

    def _simulate_run(
        self,
        bound: RunBound,
        rng: Random,
        monitor: Optional[RunMonitor],
        observe_exprs: Sequence,
        aggregate: Optional[str],
        record_points: bool,
        record_series: bool,
        max_steps: int,
    ) -> Run:
        state = self.initial_state()
        V, L = state.values, state.locations
        obs_fns = [compile_fn(e, self.ctx) for e in observe_exprs]
        obs_atoms: list[LinAtom] = []
        for e in observe_exprs:
            obs_atoms.extend(collect_clock_cmp_atoms(e, self.ctx))
        series: Optional[list[list[tuple[float, float]]]] = (
            [[] for _ in obs_fns] if record_series else None
        )
        minmax: Optional[list[tuple[float, float]]] = None

        points: list[TracePoint] = []
        resamples = 0
        race_steps = 0

        def metric() -> float:
            if isinstance(bound, TimeBound):
                return state.time
            if isinstance(bound, CostBound):
                return float(V[bound.clock])
            return float(state.steps)

        def note_observers():
            nonlocal minmax
            if not obs_fns:
                return
            vals = [float(fn(V, L)) for fn in obs_fns]
            if series is not None:
                for s, v in zip(series, vals):
                    s.append((state.time, v))
            if aggregate is not None:
                if minmax is None:
                    minmax = [(v, v) for v in vals]
                else:
                    minmax = [(min(lo, v), max(hi, v)) for (lo, hi), v in zip(minmax, vals)]

        def record(kind: str, label: str):
            if record_points or kind in ("init",) or not points:
                points.append(TracePoint(state.time, kind, label, dict(V), tuple(L)))
            note_observers()

        def final_point(kind: str, label: str):
            if not record_points:
                points.append(TracePoint(state.time, kind, label, dict(V), tuple(L)))

        def finish(cause: str) -> Run:
            outcome = None
            sat_time = None
            sat_metric = None
            if monitor is not None:
                if monitor.verdict is None:
                    monitor.finalize()
                else:
                    sat_time = monitor.sat_time
                outcome = monitor.verdict
                if outcome and sat_time is not None:
                    sat_metric = sat_metrics.get("value")
            return Run(
                points=points,
                cause=cause,
                outcome=outcome,
                sat_time=sat_time,
                sat_metric=sat_metric,
                duration=state.time,
                steps=state.steps,
                race_steps=race_steps,
                resamples=resamples,
                aggregates=[mm[0] if aggregate == "min" else mm[1] for mm in minmax]
                if minmax is not None and aggregate in ("min", "max")
                else None,
                series=series,
            )

        sat_metrics: dict = {}

        def check_verdict() -> bool:
            if monitor is not None and monitor.verdict is not None:
                if monitor.verdict and "value" not in sat_metrics:
                    sat_metrics["value"] = metric()
                return True
            return False

        record("init", "init")
        if monitor is not None:
            monitor.start(V, L, state.time)
            if check_verdict():
                final_point("init", "verdict")
                return finish("verdict")
        if isinstance(bound, StepsBound) and state.steps >= bound.bound:
            final_point("init", "bound")
            return finish("bound")

        pendings: list[Optional[_Pending]] = [None] * len(self.instances)

        def advance(dt: float, rate_items):
            if dt <= 0.0:
                return
            for name, r in rate_items:
                V[name] += r * dt
            state.time += dt
            for p in pendings:
                if p is None:
                    continue
                if p.delay is not None:
                    p.delay -= dt
                if p.hi != _INF:
                    p.hi -= dt
                if p.enable_los:
                    p.enable_los = [x - dt for x in p.enable_los if x - dt > _TOL]

        for _ in range(max_steps):
            rates = self._current_rates(state)
            rate_items = [(n, r) for n, r in rates.items() if r != 0.0]

            for i in range(len(self.instances)):
                if pendings[i] is None or not self.reuse:
                    pendings[i] = self._sample(state, i, rates, rng)
                    resamples += 1

            cap = _INF
            best: Optional[float] = None
            winners: list[int] = []
            for i, p in enumerate(pendings):
                if p.hi < cap:
                    cap = p.hi
                if p.delay is not None:
                    if best is None or p.delay < best:
                        best = p.delay
                        winners = [i]
                    elif p.delay == best:
                        winners.append(i)

            # classify the next event: fire, timelock, bound truncation, or
            # pure drift towards the monitor's next inspection point
            if best is not None and best <= cap + _TOL:
                event, d_eff = "fire", max(best, 0.0)
            elif cap < _INF:
                event, d_eff = "timelock", max(cap, 0.0)
            else:
                # no process will ever fire again; drift if the monitor can
                # still flip or observers need the final bound point, stop
                # early otherwise (the rest of the run is unobservable)
                wd = (
                    monitor.watch_delays(V, rates)
                    if monitor is not None and monitor.delay_sensitive
                    else []
                )
                if wd:
                    event, d_eff = "drift", min(wd)
                elif obs_fns and isinstance(bound, (TimeBound, CostBound)):
                    event, d_eff = "drift", _INF
                else:
                    final_point("delay", "deadlock")
                    return finish("deadlock")

            if isinstance(bound, TimeBound):
                remaining = bound.bound - state.time
                if d_eff > remaining:
                    event, d_eff = "bound", max(remaining, 0.0)
            elif isinstance(bound, CostBound):
                slope = rates.get(bound.clock, 1.0)
                if slope > 0.0:
                    crossing = (bound.bound - V[bound.clock]) / slope
                    if d_eff > crossing:
                        event, d_eff = "bound", max(crossing, 0.0)

            if d_eff == _INF:
                # a cost bound that can no longer advance
                final_point("delay", "deadlock")
                return finish("deadlock")

            # inspection points strictly inside (0, d_eff)
            inspect: list[float] = []
            if monitor is not None and monitor.delay_sensitive:
                inspect.extend(monitor.watch_delays(V, rates))
                for p in pendings:
                    inspect.extend(p.enable_los)
            if obs_atoms:
                for atom in obs_atoms:
                    a, b = atom.fn(V, rates)
                    if b != 0.0:
                        d = -a / b
                        if d > _TOL:
                            inspect.append(d)
            elif record_series:
                for p in pendings:
                    inspect.extend(p.enable_los)

            elapsed = 0.0
            stopped = False
            for d in sorted(set(x for x in inspect if _TOL < x < d_eff - _TOL)):
                advance(d - elapsed, rate_items)
                elapsed = d
                record("delay", "inspect")
                if monitor is not None:
                    monitor.observe(V, L, state.time, "delay")
                    if check_verdict():
                        final_point("delay", "verdict")
                        stopped = True
                        break
            if stopped:
                return finish("verdict")
            advance(d_eff - elapsed, rate_items)

            if event == "bound":
                if isinstance(bound, CostBound) and rates.get(bound.clock, 1.0) > 0.0:
                    V[bound.clock] = float(bound.bound)  # land exactly on the bound
                record("delay", "bound")
                if monitor is not None:
                    monitor.observe(V, L, state.time, "delay")
                    if check_verdict():
                        final_point("delay", "verdict")
                        return finish("verdict")
                final_point("delay", "bound")
                return finish("bound")

            if event == "timelock":
                record("delay", "timelock")
                if monitor is not None:
                    monitor.observe(V, L, state.time, "delay")
                    if check_verdict():
                        final_point("delay", "verdict")
                        return finish("verdict")
                final_point("delay", "deadlock")
                return finish("deadlock")

            if event == "drift":
                race_steps += 1
                record("delay", "drift")
                if monitor is not None:
                    monitor.observe(V, L, state.time, "delay")
                    if check_verdict():
                        final_point("delay", "verdict")
                        return finish("verdict")
                continue

            # fire
            race_steps += 1
            winner = winners[0] if len(winners) == 1 else winners[rng.randrange(len(winners))]
            pw = pendings[winner]
            if pw.edge is None:
                # sampled delay missed every enabling window: time passes, the
                # process re-samples, nobody else is disturbed
                pendings[winner] = None
                record("delay", "skip")
                if monitor is not None:
                    monitor.observe(V, L, state.time, "delay")
                    if check_verdict():
                        final_point("delay", "verdict")
                        return finish("verdict")
                continue

            fired: list[tuple[int, _CEdge, int]] = [(winner, pw.edge, pw.branch)]
            if pw.edge.sync_kind == "out":
                ch = pw.edge.channel
                for q in range(len(self.instances)):
                    if q == winner:
                        continue
                    loc_q = self.instances[q].locations[L[q]]
                    ins = loc_q.in_edges.get(ch)
                    if not ins:
                        continue
                    enabled = [e for e in ins if e.full(V, L)]
                    if not enabled:
                        continue
                    weights = []
                    for e in enabled:
                        bw = [max(0.0, float(b.weight(V, L))) for b in e.branches]
                        weights.append((e, bw, sum(bw)))
                    total = sum(w[2] for w in weights)
                    if total <= 0.0:
                        raise RunError(
                            f"{self.instances[q].name}: all receiving branch weights are zero on {ch!r}"
                        )
                    e, bw = self._weighted_pick(weights, total, rng)
                    b = self._weighted_index(bw, rng)
                    fired.append((q, e, b))

            # updates: emitter first, then receivers in canonical order
            try:
                for q, edge, bidx in fired:
                    branch = edge.branches[bidx]
                    for target, kind, fn, src in branch.updates:
                        val = fn(V, L)
                        V[target] = self._coerce(target, "real" if kind == "clock" else kind, val)
            except EvalError as exc:
                raise RunError(f"update failed: {exc}") from exc
            for q, edge, bidx in fired:
                L[q] = edge.branches[bidx].target
            state.steps += 1

            for q, edge, bidx in fired:
                loc_q = self.instances[q].locations[L[q]]
                if loc_q.inv_full is not None and not loc_q.inv_full(V, L):
                    raise RunError(
                        f"{self.instances[q].name}: invariant of {loc_q.name} violated on entry"
                    )

            record("transition", pw.edge.label)
            if monitor is not None:
                monitor.observe(V, L, state.time, "transition")
                if check_verdict():
                    final_point("transition", "verdict")
                    return finish("verdict")

            if isinstance(bound, StepsBound) and state.steps >= bound.bound:
                final_point("transition", "bound")
                return finish("bound")
            if isinstance(bound, CostBound) and V[bound.clock] > bound.bound:
                # a discrete update jumped past the bound
                final_point("transition", "bound")
                return finish("bound")

            affected = set()
            for q, edge, bidx in fired:
                affected |= edge.deps
            for q in affected:
                pendings[q] = None

        raise RunError(f"run exceeded {max_steps} steps; model may be zeno")
