"""Run classification: path formulas and clock-bounded temporal formulas.

Runs are classified on the fly by formula progression: at every observed
point (discrete transition, or an inspection point inside a delay) the
residual obligation is rewritten.  A verdict, once True or False, is stable.

Inspection points are derived from the formula itself: every clock
comparison contributes the delay at which its truth flips, and every active
bounded-until contributes its deadline crossing.  Between consecutive
inspection points atom truth values are constant, so evaluating at the
points is exact for the supported fragment.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

from .expr import (
    Binary,
    CompileContext,
    Cond,
    Const,
    Expr,
    LinAtom,
    Name,
    Unary,
    compile_fn,
    compile_lin_atom,
    format_expr,
    free_names,
)

# ---------------------------------------------------------------------------
# Path formulas (predicates over one bound-limited run)


@dataclass(frozen=True)
class Eventually:
    pred: Expr


@dataclass(frozen=True)
class Globally:
    pred: Expr


@dataclass(frozen=True)
class Until:
    pred_p: Expr
    pred_q: Expr


PathFormula = Union[Eventually, Globally, Until]


# ---------------------------------------------------------------------------
# WMTL-style formulas with clock-bounded until


@dataclass(frozen=True)
class WmtlAtom:
    pred: Expr


@dataclass(frozen=True)
class WmtlNot:
    child: "WmtlFormula"


@dataclass(frozen=True)
class WmtlAnd:
    left: "WmtlFormula"
    right: "WmtlFormula"


@dataclass(frozen=True)
class WmtlOr:
    left: "WmtlFormula"
    right: "WmtlFormula"


@dataclass(frozen=True)
class WmtlNext:
    child: "WmtlFormula"


@dataclass(frozen=True)
class WmtlUntil:
    clock: str
    bound: float
    left: "WmtlFormula"
    right: "WmtlFormula"


@dataclass(frozen=True)
class WmtlEventually:
    clock: str
    bound: float
    child: "WmtlFormula"


@dataclass(frozen=True)
class WmtlGlobally:
    clock: str
    bound: float
    child: "WmtlFormula"


WmtlFormula = Union[
    WmtlAtom, WmtlNot, WmtlAnd, WmtlOr, WmtlNext, WmtlUntil, WmtlEventually, WmtlGlobally
]


def format_wmtl(f, parens: bool = False) -> str:
    if isinstance(f, WmtlAtom):
        return format_expr(f.pred, parent_prec=5)
    if isinstance(f, WmtlNot):
        return f"!({format_wmtl(f.child)})"
    if isinstance(f, WmtlAnd):
        s = f"({format_wmtl(f.left)}) && ({format_wmtl(f.right)})"
    elif isinstance(f, WmtlOr):
        s = f"({format_wmtl(f.left)}) || ({format_wmtl(f.right)})"
    elif isinstance(f, WmtlNext):
        return f"O ({format_wmtl(f.child)})"
    elif isinstance(f, WmtlUntil):
        s = f"({format_wmtl(f.left)}) U[{f.clock}<={f.bound!r}] ({format_wmtl(f.right)})"
    elif isinstance(f, WmtlEventually):
        return f"<>[{f.clock}<={f.bound!r}] ({format_wmtl(f.child)})"
    elif isinstance(f, WmtlGlobally):
        return f"[][{f.clock}<={f.bound!r}] ({format_wmtl(f.child)})"
    else:
        raise TypeError(f"not a formula: {f!r}")
    return f"({s})" if parens else s


# ---------------------------------------------------------------------------
# Compilation


def collect_clock_cmp_atoms(e: Expr, ctx: CompileContext) -> list[LinAtom]:
    """All clock-referencing comparisons inside a predicate, compiled so
    their truth-flip delays are computable.  Boolean structure around the
    comparisons is unrestricted here (only flip points are needed)."""
    out: list[LinAtom] = []

    def walk(x: Expr):
        if isinstance(x, Binary):
            if x.op in ("<", "<=", ">", ">=", "=="):
                if free_names(x) & ctx.clocks:
                    out.append(compile_lin_atom(x, ctx))
                return
            if x.op == "!=" and free_names(x) & ctx.clocks:
                # flips at the same point as ==
                out.append(compile_lin_atom(Binary("==", x.left, x.right), ctx))
                return
            walk(x.left)
            walk(x.right)
        elif isinstance(x, Unary):
            walk(x.operand)
        elif isinstance(x, Cond):
            walk(x.test)
            walk(x.then)
            walk(x.other)

    walk(e)
    return out


@dataclass(frozen=True)
class CAtom:
    fn: Callable
    atoms: tuple[LinAtom, ...]
    source: Expr

    def __repr__(self):
        return f"CAtom({format_expr(self.source)})"


@dataclass(frozen=True)
class CNot:
    child: object


@dataclass(frozen=True)
class CAnd:
    left: object
    right: object


@dataclass(frozen=True)
class COr:
    left: object
    right: object


@dataclass(frozen=True)
class CNext:
    child: object


@dataclass(frozen=True)
class CUntil:
    clock: str
    bound: float
    left: object
    right: object


def compile_wmtl(f: WmtlFormula, ctx: CompileContext):
    if isinstance(f, WmtlAtom):
        return CAtom(compile_fn(f.pred, ctx), tuple(collect_clock_cmp_atoms(f.pred, ctx)), f.pred)
    if isinstance(f, WmtlNot):
        return CNot(compile_wmtl(f.child, ctx))
    if isinstance(f, WmtlAnd):
        return CAnd(compile_wmtl(f.left, ctx), compile_wmtl(f.right, ctx))
    if isinstance(f, WmtlOr):
        return COr(compile_wmtl(f.left, ctx), compile_wmtl(f.right, ctx))
    if isinstance(f, WmtlNext):
        return CNext(compile_wmtl(f.child, ctx))
    if isinstance(f, WmtlUntil):
        _check_clock(f.clock, ctx)
        return CUntil(f.clock, float(f.bound), compile_wmtl(f.left, ctx), compile_wmtl(f.right, ctx))
    if isinstance(f, WmtlEventually):
        _check_clock(f.clock, ctx)
        true_atom = CAtom(lambda V, L: True, (), Const(True))
        return CUntil(f.clock, float(f.bound), true_atom, compile_wmtl(f.child, ctx))
    if isinstance(f, WmtlGlobally):
        # [] f == not (true U not f)
        _check_clock(f.clock, ctx)
        true_atom = CAtom(lambda V, L: True, (), Const(True))
        return CNot(CUntil(f.clock, float(f.bound), true_atom, CNot(compile_wmtl(f.child, ctx))))
    raise TypeError(f"not a formula: {f!r}")


def _check_clock(name: str, ctx: CompileContext):
    if name not in ctx.clocks:
        raise ValueError(f"until bound references undeclared clock {name!r}")


# ---------------------------------------------------------------------------
# Progression residuals


@dataclass(frozen=True)
class RNot:
    child: object


@dataclass(frozen=True)
class RAnd:
    children: tuple


@dataclass(frozen=True)
class ROr:
    children: tuple


@dataclass(frozen=True)
class RNext:
    child: object  # compiled formula, activates at the next transition


@dataclass(frozen=True)
class RUntil:
    """An activated bounded until: satisfied if `right` holds at some point
    where the clock has not grown by more than `bound` since `ref`."""

    clock: str
    bound: float
    ref: float
    left: object
    right: object


def _neg(r):
    if r is True:
        return False
    if r is False:
        return True
    if isinstance(r, RNot):
        return r.child
    return RNot(r)


def _conj(*parts):
    flat = []
    for p in parts:
        if p is False:
            return False
        if p is True:
            continue
        if isinstance(p, RAnd):
            flat.extend(p.children)
        else:
            flat.append(p)
    out = []
    for p in flat:
        if p not in out:
            out.append(p)
    if not out:
        return True
    if len(out) == 1:
        return out[0]
    return RAnd(tuple(out))


def _disj(*parts):
    flat = []
    for p in parts:
        if p is True:
            return True
        if p is False:
            continue
        if isinstance(p, ROr):
            flat.extend(p.children)
        else:
            flat.append(p)
    out = []
    for p in flat:
        if p not in out:
            out.append(p)
    if not out:
        return False
    if len(out) == 1:
        return out[0]
    return ROr(tuple(out))


def _activate(c, V, L):
    """Progress a compiled formula that becomes an obligation at the current
    point: evaluate what it requires of this point and of the future."""
    if isinstance(c, CAtom):
        return bool(c.fn(V, L))
    if isinstance(c, CNot):
        return _neg(_activate(c.child, V, L))
    if isinstance(c, CAnd):
        return _conj(_activate(c.left, V, L), _activate(c.right, V, L))
    if isinstance(c, COr):
        return _disj(_activate(c.left, V, L), _activate(c.right, V, L))
    if isinstance(c, CNext):
        return RNext(c.child)
    if isinstance(c, CUntil):
        active = RUntil(c.clock, c.bound, V[c.clock], c.left, c.right)
        now = _activate(c.right, V, L)
        keep = _conj(_activate(c.left, V, L), active)
        return _disj(now, keep)
    raise TypeError(f"not a compiled formula: {c!r}")


def _step(r, V, L, kind: str):
    """Progress a residual over a new observed point."""
    if r is True or r is False:
        return r
    if isinstance(r, RNot):
        return _neg(_step(r.child, V, L, kind))
    if isinstance(r, RAnd):
        return _conj(*(_step(c, V, L, kind) for c in r.children))
    if isinstance(r, ROr):
        return _disj(*(_step(c, V, L, kind) for c in r.children))
    if isinstance(r, RNext):
        if kind == "transition":
            return _activate(r.child, V, L)
        return r
    if isinstance(r, RUntil):
        if V[r.clock] - r.ref > r.bound:
            return False
        now = _activate(r.right, V, L)
        keep = _conj(_activate(r.left, V, L), r)
        return _disj(now, keep)
    raise TypeError(f"not a residual: {r!r}")


def _finalize(r) -> bool:
    """Resolve what is left of the obligation when the run ends (bound
    reached or deadlock): pending next/until obligations fail."""
    if r is True or r is False:
        return r
    if isinstance(r, RNot):
        return not _finalize(r.child)
    if isinstance(r, RAnd):
        return all(_finalize(c) for c in r.children)
    if isinstance(r, ROr):
        return any(_finalize(c) for c in r.children)
    if isinstance(r, (RNext, RUntil)):
        return False
    raise TypeError(f"not a residual: {r!r}")


def _watch_atoms(node, acc: list):
    if isinstance(node, CAtom):
        acc.extend(node.atoms)
    elif isinstance(node, (CNot, CNext)):
        _watch_atoms(node.child, acc)
    elif isinstance(node, (CAnd, COr)):
        _watch_atoms(node.left, acc)
        _watch_atoms(node.right, acc)
    elif isinstance(node, CUntil):
        _watch_atoms(node.left, acc)
        _watch_atoms(node.right, acc)
    elif isinstance(node, RNot):
        _watch_atoms(node.child, acc)
    elif isinstance(node, (RAnd, ROr)):
        for c in node.children:
            _watch_atoms(c, acc)
    elif isinstance(node, RNext):
        _watch_atoms(node.child, acc)
    elif isinstance(node, RUntil):
        _watch_atoms(node.left, acc)
        _watch_atoms(node.right, acc)


def _active_untils(r, acc: list):
    if isinstance(r, RNot):
        _active_untils(r.child, acc)
    elif isinstance(r, (RAnd, ROr)):
        for c in r.children:
            _active_untils(c, acc)
    elif isinstance(r, RUntil):
        acc.append(r)
        _active_untils(r.left, acc)
        _active_untils(r.right, acc)


def atom_flip_delays(atoms: Sequence[LinAtom], values: Mapping, rates: Mapping) -> list[float]:
    """Delays (strictly positive) at which the given comparisons flip."""
    out = []
    for atom in atoms:
        a, b = atom.fn(values, rates)
        if b != 0.0:
            d = -a / b
            if d > 1e-12:
                out.append(d)
    return out


# ---------------------------------------------------------------------------
# Monitors (one per run)


class RunMonitor:
    """Common protocol: feed observed points, read the verdict.

    ``verdict`` is None while inconclusive.  ``finalize()`` resolves the
    remaining obligation at the end of a bounded run (also used at
    deadlock: an unfulfilled eventually fails, an unviolated globally
    holds)."""

    delay_sensitive = False

    def start(self, values, locations, time: float):
        raise NotImplementedError

    def observe(self, values, locations, time: float, kind: str):
        raise NotImplementedError

    def watch_delays(self, values, rates) -> list[float]:
        return []

    def finalize(self):
        raise NotImplementedError

    verdict: Optional[bool] = None
    sat_time: Optional[float] = None


class EventuallyMonitor(RunMonitor):
    def __init__(self, fn, atoms):
        self._fn = fn
        self._atoms = atoms
        self.delay_sensitive = bool(atoms)
        self.verdict = None
        self.sat_time = None

    def start(self, values, locations, time):
        self.observe(values, locations, time, "init")

    def observe(self, values, locations, time, kind):
        if self.verdict is None and self._fn(values, locations):
            self.verdict = True
            self.sat_time = time

    def watch_delays(self, values, rates):
        return atom_flip_delays(self._atoms, values, rates)

    def finalize(self):
        if self.verdict is None:
            self.verdict = False
        return self.verdict


class GloballyMonitor(RunMonitor):
    def __init__(self, fn, atoms):
        self._fn = fn
        self._atoms = atoms
        self.delay_sensitive = bool(atoms)
        self.verdict = None
        self.sat_time = None

    def start(self, values, locations, time):
        self.observe(values, locations, time, "init")

    def observe(self, values, locations, time, kind):
        if self.verdict is None and not self._fn(values, locations):
            self.verdict = False
            self.sat_time = time

    def watch_delays(self, values, rates):
        return atom_flip_delays(self._atoms, values, rates)

    def finalize(self):
        if self.verdict is None:
            self.verdict = True
        return self.verdict


class UntilMonitor(RunMonitor):
    """p U q: early cut as soon as p stops holding without q."""

    def __init__(self, p_fn, q_fn, atoms):
        self._p = p_fn
        self._q = q_fn
        self._atoms = atoms
        self.delay_sensitive = bool(atoms)
        self.verdict = None
        self.sat_time = None

    def start(self, values, locations, time):
        self.observe(values, locations, time, "init")

    def observe(self, values, locations, time, kind):
        if self.verdict is not None:
            return
        if self._q(values, locations):
            self.verdict = True
            self.sat_time = time
        elif not self._p(values, locations):
            self.verdict = False
            self.sat_time = time

    def watch_delays(self, values, rates):
        return atom_flip_delays(self._atoms, values, rates)

    def finalize(self):
        if self.verdict is None:
            self.verdict = False
        return self.verdict


class WmtlMonitor(RunMonitor):
    def __init__(self, compiled):
        self._compiled = compiled
        self._residual = None
        self._static_atoms: list[LinAtom] = []
        _watch_atoms(compiled, self._static_atoms)
        self.delay_sensitive = True  # until deadlines always evolve with time
        self.verdict = None
        self.sat_time = None

    def start(self, values, locations, time):
        self._residual = _activate(self._compiled, values, locations)
        self._settle(time)

    def observe(self, values, locations, time, kind):
        if self.verdict is not None:
            return
        self._residual = _step(self._residual, values, locations, kind)
        self._settle(time)

    def _settle(self, time):
        if self._residual is True:
            self.verdict = True
            self.sat_time = time
        elif self._residual is False:
            self.verdict = False
            self.sat_time = time

    def watch_delays(self, values, rates):
        delays = atom_flip_delays(self._static_atoms, values, rates)
        untils: list[RUntil] = []
        if self._residual not in (True, False, None):
            _active_untils(self._residual, untils)
        for u in untils:
            slope = rates.get(u.clock, 1.0)
            if slope > 0.0:
                d = (u.ref + u.bound - values[u.clock]) / slope
                if d > 1e-12:
                    delays.append(d)
        return delays

    def finalize(self):
        if self.verdict is None:
            self.verdict = _finalize(self._residual)
        return self.verdict

    @property
    def residual(self):
        return self._residual


class MonitorFactory:
    """Compiles a formula once; hands out a fresh monitor per run."""

    def __init__(self, formula: Union[PathFormula, WmtlFormula], ctx: CompileContext):
        self.formula = formula
        if isinstance(formula, Eventually):
            self._make = lambda: EventuallyMonitor(
                compile_fn(formula.pred, ctx), collect_clock_cmp_atoms(formula.pred, ctx)
            )
        elif isinstance(formula, Globally):
            self._make = lambda: GloballyMonitor(
                compile_fn(formula.pred, ctx), collect_clock_cmp_atoms(formula.pred, ctx)
            )
        elif isinstance(formula, Until):
            atoms = collect_clock_cmp_atoms(formula.pred_p, ctx) + collect_clock_cmp_atoms(
                formula.pred_q, ctx
            )
            self._make = lambda: UntilMonitor(
                compile_fn(formula.pred_p, ctx), compile_fn(formula.pred_q, ctx), atoms
            )
        else:
            compiled = compile_wmtl(formula, ctx)
            self._make = lambda: WmtlMonitor(compiled)

    def new(self) -> RunMonitor:
        return self._make()


# ---------------------------------------------------------------------------
# Operations on recorded runs


@dataclass(frozen=True)
class TracePoint:
    time: float
    kind: str  # 'init' | 'delay' | 'transition'
    label: str
    values: dict
    locations: tuple[int, ...]


def classify(points: Sequence[TracePoint], formula, ctx: CompileContext) -> bool:
    """Verdict of one recorded (finite, bounded) run."""
    monitor = MonitorFactory(formula, ctx).new()
    first, rest = points[0], points[1:]
    monitor.start(first.values, first.locations, first.time)
    for p in rest:
        if monitor.verdict is not None:
            break
        monitor.observe(p.values, p.locations, p.time, p.kind)
    return monitor.finalize()


def watch_points(formula, ctx: CompileContext, values: Mapping, rates: Mapping) -> list[float]:
    """Positive delays at which any clock comparison in the formula changes
    truth value, given linear clock evolution at the current rates."""
    atoms: list[LinAtom] = []
    if isinstance(formula, Eventually):
        atoms = collect_clock_cmp_atoms(formula.pred, ctx)
    elif isinstance(formula, Globally):
        atoms = collect_clock_cmp_atoms(formula.pred, ctx)
    elif isinstance(formula, Until):
        atoms = collect_clock_cmp_atoms(formula.pred_p, ctx) + collect_clock_cmp_atoms(
            formula.pred_q, ctx
        )
    else:
        _watch_atoms(compile_wmtl(formula, ctx), atoms)
    return sorted(set(atom_flip_delays(atoms, values, rates)))
