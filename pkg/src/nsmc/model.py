"""Domain model: networks of priced timed automata.

Templates are instantiated into automata with locals renamed apart
("Inst.x"); the resulting :class:`Network` is immutable and safe to share
across concurrent simulation workers.  Static analysis here covers
validation diagnostics and the edge-to-process dependency matrix that
drives delay reuse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .expr import (
    Binary,
    Cond,
    Const,
    Expr,
    Name,
    Unary,
    CompileContext,
    NonlinearError,
    conjuncts,
    const_value,
    format_expr,
    free_names,
    subst,
)

TAU_CLOCK = "tau"  # implicit rate-1 never-reset clock, always available


class ModelError(Exception):
    """Raised for structural problems that prevent building a network."""


@dataclass(frozen=True)
class ClockDecl:
    name: str
    init: float = 0.0


@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: str  # 'int' | 'real'
    init: Expr = Const(0)


@dataclass(frozen=True)
class Location:
    name: str
    invariant: Optional[Expr] = None
    rates: tuple[tuple[str, Expr], ...] = ()  # clock -> rate expression
    exp_rate: Optional[Expr] = None


@dataclass(frozen=True)
class Sync:
    kind: str  # 'out' | 'in' | 'internal'
    channel: Optional[str] = None


INTERNAL = Sync("internal")


@dataclass(frozen=True)
class Branch:
    target: str
    weight: Expr = Const(1)
    updates: tuple[tuple[str, Expr], ...] = ()


@dataclass(frozen=True)
class Edge:
    source: str
    sync: Sync = INTERNAL
    guard: Optional[Expr] = None
    branches: tuple[Branch, ...] = ()


@dataclass(frozen=True)
class Template:
    name: str
    params: tuple[str, ...] = ()
    clocks: tuple[ClockDecl, ...] = ()
    variables: tuple[VarDecl, ...] = ()
    locations: tuple[Location, ...] = ()
    init: str = ""
    edges: tuple[Edge, ...] = ()


@dataclass(frozen=True)
class Automaton:
    """An instantiated template: parameters substituted, locals qualified."""

    name: str
    template: str
    clocks: tuple[ClockDecl, ...]
    variables: tuple[VarDecl, ...]
    locations: tuple[Location, ...]
    init: str
    edges: tuple[Edge, ...]

    def location_index(self, name: str) -> int:
        for i, loc in enumerate(self.locations):
            if loc.name == name:
                return i
        raise ModelError(f"{self.name}: no location named {name!r}")


@dataclass(frozen=True)
class Network:
    """Global declarations plus instantiated automata in canonical order.

    The instance order is the order of the ``system`` line; it drives
    deterministic tie-breaking and update application, so it must never be
    permuted once a model is built.
    """

    clocks: tuple[ClockDecl, ...] = ()
    variables: tuple[VarDecl, ...] = ()
    channels: tuple[str, ...] = ()
    templates: tuple[Template, ...] = ()
    system: tuple[tuple[str, tuple[int, ...]], ...] = ()
    instances: tuple[Automaton, ...] = ()

    def template(self, name: str) -> Template:
        for t in self.templates:
            if t.name == name:
                return t
        raise ModelError(f"no template named {name!r}")

    def instance_index(self, name: str) -> int:
        for i, inst in enumerate(self.instances):
            if inst.name == name:
                return i
        raise ModelError(f"no instance named {name!r}")

    def all_clock_names(self) -> list[str]:
        names = [c.name for c in self.clocks]
        for inst in self.instances:
            names.extend(c.name for c in inst.clocks)
        names.append(TAU_CLOCK)
        return names

    def all_variable_names(self) -> list[str]:
        names = [v.name for v in self.variables]
        for inst in self.instances:
            names.extend(v.name for v in inst.variables)
        return names

    def compile_context(self) -> CompileContext:
        locs = {
            f"{inst.name}.{loc.name}": (i, j)
            for i, inst in enumerate(self.instances)
            for j, loc in enumerate(inst.locations)
        }
        return CompileContext(
            clocks=frozenset(self.all_clock_names()),
            variables=frozenset(self.all_variable_names()),
            locations=locs,
        )


def instance_name(template: str, args: tuple[int, ...]) -> str:
    if not args:
        return template
    return f"{template}({','.join(str(a) for a in args)})"


def instantiate(template: Template, args: tuple[int, ...], name: Optional[str] = None) -> Automaton:
    """Substitute integer parameters and rename locals apart.

    Locals become "Name.x" so two instances of the same template never share
    clock or variable identities.
    """
    if len(args) != len(template.params):
        raise ModelError(
            f"template {template.name} takes {len(template.params)} argument(s), got {len(args)}"
        )
    name = name or instance_name(template.name, args)
    mapping: dict[str, Expr] = {p: Const(int(a)) for p, a in zip(template.params, args)}
    for c in template.clocks:
        mapping[c.name] = Name(f"{name}.{c.name}")
    for v in template.variables:
        mapping[v.name] = Name(f"{name}.{v.name}")

    def sub(e: Optional[Expr]) -> Optional[Expr]:
        return None if e is None else subst(e, mapping)

    def sub_clock(cn: str) -> str:
        m = mapping.get(cn)
        return m.ident if isinstance(m, Name) else cn

    locations = tuple(
        Location(
            name=loc.name,
            invariant=sub(loc.invariant),
            rates=tuple((sub_clock(cn), subst(r, mapping)) for cn, r in loc.rates),
            exp_rate=sub(loc.exp_rate),
        )
        for loc in template.locations
    )
    edges = tuple(
        Edge(
            source=e.source,
            sync=e.sync,
            guard=sub(e.guard),
            branches=tuple(
                Branch(
                    target=b.target,
                    weight=subst(b.weight, mapping),
                    updates=tuple(
                        (sub_clock(t) if t in mapping else t, subst(v, mapping))
                        for t, v in b.updates
                    ),
                )
                for b in e.branches
            ),
        )
        for e in template.edges
    )
    return Automaton(
        name=name,
        template=template.name,
        clocks=tuple(ClockDecl(f"{name}.{c.name}", c.init) for c in template.clocks),
        variables=tuple(
            VarDecl(f"{name}.{v.name}", v.kind, subst(v.init, mapping)) for v in template.variables
        ),
        locations=locations,
        init=template.init,
        edges=edges,
    )


def build_network(
    clocks: tuple[ClockDecl, ...],
    variables: tuple[VarDecl, ...],
    channels: tuple[str, ...],
    templates: tuple[Template, ...],
    system: tuple[tuple[str, tuple[int, ...]], ...],
) -> Network:
    by_name = {t.name: t for t in templates}
    instances = []
    seen = set()
    for tname, args in system:
        if tname not in by_name:
            raise ModelError(f"system instantiates unknown template {tname!r}")
        inst = instantiate(by_name[tname], args)
        if inst.name in seen:
            raise ModelError(f"duplicate instance {inst.name!r} in system line")
        seen.add(inst.name)
        instances.append(inst)
    return Network(clocks, variables, channels, templates, tuple(system), tuple(instances))


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # 'error' | 'warning'
    message: str
    where: str = ""

    def __str__(self) -> str:
        w = f" [{self.where}]" if self.where else ""
        return f"{self.severity}:{w} {self.message}"


def _known_names(network: Network, inst: Automaton) -> frozenset[str]:
    names = set(c.name for c in network.clocks)
    names.update(v.name for v in network.variables)
    names.update(c.name for c in inst.clocks)
    names.update(v.name for v in inst.variables)
    names.add(TAU_CLOCK)
    return frozenset(names)


def _clock_names(network: Network, inst: Automaton) -> frozenset[str]:
    names = set(c.name for c in network.clocks)
    names.update(c.name for c in inst.clocks)
    names.add(TAU_CLOCK)
    return frozenset(names)


def _has_upper_bound_atom(invariant: Optional[Expr], clocks: frozenset[str]) -> bool:
    if invariant is None:
        return False
    for c in conjuncts(invariant):
        if isinstance(c, Binary) and c.op in ("<", "<=", ">", ">=", "==") and free_names(c) & clocks:
            return True
    return False


def _check_clock_constraint(e: Optional[Expr], clocks: frozenset[str], diags, where: str, what: str):
    if e is None:
        return
    for c in conjuncts(e):
        if not free_names(c) & clocks:
            continue
        ok = isinstance(c, Binary) and c.op in ("<", "<=", ">", ">=", "==")
        if ok:
            # both sides must be linear in the clocks
            try:
                _linear_degree(c.left, clocks)
                _linear_degree(c.right, clocks)
            except NonlinearError:
                ok = False
        if not ok:
            diags.append(
                Diagnostic(
                    "error",
                    f"{what} mixes clocks with unsupported structure "
                    f"(only conjunctions of linear comparisons are allowed): {format_expr(c)}",
                    where,
                )
            )


def _linear_degree(e: Expr, clocks: frozenset[str]) -> int:
    """0 for clock-free, 1 for linear in clocks; raises NonlinearError otherwise."""
    if isinstance(e, Const):
        return 0
    if isinstance(e, Name):
        return 1 if e.ident in clocks else 0
    if isinstance(e, Unary):
        if e.op == "neg":
            return _linear_degree(e.operand, clocks)
        raise NonlinearError("'!' in clock arithmetic")
    if isinstance(e, Binary):
        if e.op in ("+", "-"):
            return max(_linear_degree(e.left, clocks), _linear_degree(e.right, clocks))
        if e.op == "*":
            d = _linear_degree(e.left, clocks) + _linear_degree(e.right, clocks)
            if d > 1:
                raise NonlinearError("product of clocks")
            return d
        if e.op == "/":
            if _linear_degree(e.right, clocks) > 0:
                raise NonlinearError("clock in divisor")
            return _linear_degree(e.left, clocks)
        raise NonlinearError(f"operator {e.op!r} in clock arithmetic")
    if isinstance(e, Cond):
        raise NonlinearError("conditional in clock arithmetic")
    raise NonlinearError(f"not an expression: {e!r}")


def validate(network: Network) -> list[Diagnostic]:
    """Static checks; returns diagnostics (never raises).

    An empty list means the model passed every check.  Warnings do not make
    a model invalid.
    """
    diags: list[Diagnostic] = []
    global_names = set(c.name for c in network.clocks) | set(v.name for v in network.variables)
    if TAU_CLOCK in global_names:
        diags.append(Diagnostic("error", f"{TAU_CLOCK!r} is reserved for the implicit global clock"))
    seen_globals: set[str] = set()
    for n in [c.name for c in network.clocks] + [v.name for v in network.variables]:
        if n in seen_globals:
            diags.append(Diagnostic("error", f"duplicate global declaration {n!r}"))
        seen_globals.add(n)

    # clock rate ownership: at most one instance may drive a given clock
    rate_owner: dict[str, str] = {}
    for inst in network.instances:
        for loc in inst.locations:
            for cn, _ in loc.rates:
                owner = rate_owner.setdefault(cn, inst.name)
                if owner != inst.name:
                    diags.append(
                        Diagnostic(
                            "error",
                            f"clock {cn!r} has rate declarations in both {owner!r} and "
                            f"{inst.name!r}; a clock's rate may be driven by one process only",
                        )
                    )

    for idx, inst in enumerate(network.instances):
        where = inst.name
        known = _known_names(network, inst)
        clocks = _clock_names(network, inst)
        loc_names = {loc.name for loc in inst.locations}
        if inst.init not in loc_names:
            diags.append(Diagnostic("error", f"initial location {inst.init!r} does not exist", where))

        def check_names(e: Optional[Expr], what: str, w: str):
            if e is None:
                return
            for n in sorted(free_names(e) - known):
                diags.append(Diagnostic("error", f"undeclared name {n!r} in {what}", w))

        for loc in inst.locations:
            lw = f"{where}.{loc.name}"
            check_names(loc.invariant, "invariant", lw)
            _check_clock_constraint(loc.invariant, clocks, diags, lw, "invariant")
            for cn, r in loc.rates:
                if cn not in clocks:
                    diags.append(Diagnostic("error", f"rate declared for undeclared clock {cn!r}", lw))
                if cn == TAU_CLOCK:
                    diags.append(Diagnostic("error", f"the implicit clock {TAU_CLOCK!r} always has rate 1", lw))
                check_names(r, "rate", lw)
                if free_names(r) & clocks:
                    diags.append(
                        Diagnostic("error", "clock rates may depend on variables only (no clocks)", lw)
                    )
            if loc.exp_rate is not None:
                check_names(loc.exp_rate, "exprate", lw)
                if free_names(loc.exp_rate) & clocks:
                    diags.append(
                        Diagnostic("error", "exprate may depend on variables only (no clocks)", lw)
                    )
                cv = const_value(loc.exp_rate)
                if cv is not None and not (isinstance(cv, (int, float)) and cv > 0):
                    diags.append(Diagnostic("error", "constant exprate must be > 0", lw))
                if _has_upper_bound_atom(loc.invariant, clocks):
                    diags.append(
                        Diagnostic(
                            "error",
                            "exprate is only permitted when the invariant leaves the delay unbounded",
                            lw,
                        )
                    )
            has_out = any(e.source == loc.name and e.sync.kind != "in" for e in inst.edges)
            if has_out and loc.exp_rate is None and not _has_upper_bound_atom(loc.invariant, clocks):
                diags.append(
                    Diagnostic(
                        "error",
                        "location can delay unboundedly but has no exprate; "
                        "add an invariant or an exprate",
                        lw,
                    )
                )

        for e in inst.edges:
            ew = f"{where}.{e.source}->" + ",".join(b.target for b in e.branches)
            if e.source not in loc_names:
                diags.append(Diagnostic("error", f"edge source {e.source!r} does not exist", ew))
            if not e.branches:
                diags.append(Diagnostic("error", "edge has no branches", ew))
            if e.sync.channel is not None and e.sync.channel not in network.channels:
                diags.append(Diagnostic("error", f"undeclared channel {e.sync.channel!r}", ew))
            check_names(e.guard, "guard", ew)
            _check_clock_constraint(e.guard, clocks, diags, ew, "guard")
            for b in e.branches:
                if b.target not in loc_names:
                    diags.append(Diagnostic("error", f"branch target {b.target!r} does not exist", ew))
                check_names(b.weight, "weight", ew)
                w = const_value(b.weight)
                if w is not None and (isinstance(w, bool) or w < 0):
                    diags.append(Diagnostic("error", f"constant branch weight is negative: {format_expr(b.weight)}", ew))
                for target, value in b.updates:
                    if target not in known or target == TAU_CLOCK:
                        diags.append(Diagnostic("error", f"update assigns undeclared name {target!r}", ew))
                    check_names(value, "update", ew)
            # non-zeno heuristic: a guard-free self-loop with no exponential
            # delay can fire infinitely often without time progress
            src_loc = next((l for l in inst.locations if l.name == e.source), None)
            if (
                e.guard is None
                and src_loc is not None
                and src_loc.exp_rate is None
                and all(b.target == e.source for b in e.branches)
            ):
                diags.append(Diagnostic("warning", "guard-free self-loop may be zeno", ew))

    return diags


# ---------------------------------------------------------------------------
# Dependency analysis (process granularity)


@dataclass
class DependencyMatrix:
    """For each edge (instance index, edge index): the set of process indices
    whose pending delay must be invalidated when that edge fires.

    Conservative over-approximation; the firing process is always included.
    """

    sets: dict[tuple[int, int], frozenset[int]] = field(default_factory=dict)

    def affected(self, inst: int, edge: int) -> frozenset[int]:
        return self.sets[(inst, edge)]


def _pending_read_set(network: Network, inst: Automaton) -> frozenset[str]:
    """Names whose change can invalidate this process's pending choice:
    everything read by invariants, guards, weights, rates and exprates."""
    names: set[str] = set()
    for loc in inst.locations:
        if loc.invariant is not None:
            names |= free_names(loc.invariant)
        for _, r in loc.rates:
            names |= free_names(r)
        if loc.exp_rate is not None:
            names |= free_names(loc.exp_rate)
    for e in inst.edges:
        if e.guard is not None:
            names |= free_names(e.guard)
        for b in e.branches:
            names |= free_names(b.weight)
    return frozenset(names)


def _input_channels(inst: Automaton) -> frozenset[str]:
    return frozenset(e.sync.channel for e in inst.edges if e.sync.kind == "in" and e.sync.channel)


def _rate_driven_clocks(inst: Automaton) -> frozenset[str]:
    return frozenset(cn for loc in inst.locations for cn, _ in loc.rates)


def analyze_dependencies(network: Network) -> DependencyMatrix:
    reads = [_pending_read_set(network, inst) for inst in network.instances]
    listens = [_input_channels(inst) for inst in network.instances]
    matrix = DependencyMatrix()
    for p, inst in enumerate(network.instances):
        # clocks whose slope can change when this process moves
        slope_clocks = _rate_driven_clocks(inst)
        for ei, edge in enumerate(inst.edges):
            writes: set[str] = set()
            for b in edge.branches:
                writes.update(t for t, _ in b.updates)
            affected = {p}
            for q in range(len(network.instances)):
                if q == p:
                    continue
                if edge.sync.kind == "out" and edge.sync.channel in listens[q]:
                    affected.add(q)
                elif reads[q] & writes:
                    affected.add(q)
                elif reads[q] & slope_clocks:
                    affected.add(q)
            matrix.sets[(p, ei)] = frozenset(affected)
    return matrix
