"""Expression ASTs for guards, invariants, rates, weights, updates and queries.

Expressions evaluate against a valuation dict (clocks and variables by
qualified name) plus the current location vector.  The same AST is reused in
three regimes:

* plain evaluation (``eval_expr`` / ``compile_fn``),
* constant folding for static validation (``fold``),
* linear-in-delay analysis (``compile_linear`` / ``split_conjunction``), which
  turns clock constraints into solvable ``A + B*d ? 0`` lines so that delay
  windows can be computed without zones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

Value = Union[bool, int, float]


class EvalError(Exception):
    """Evaluation failed: division by zero, unresolved name, or type misuse."""


class NonlinearError(Exception):
    """Expression is not linear in the clocks; delay windows cannot be solved."""


@dataclass(frozen=True)
class Const:
    value: Value


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Unary:
    op: str  # 'not' | 'neg'
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # '+' '-' '*' '/' '<' '<=' '>' '>=' '==' '!=' 'and' 'or'
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Cond:
    test: "Expr"
    then: "Expr"
    other: "Expr"


Expr = Union[Const, Name, Unary, Binary, Cond]

TRUE = Const(True)
FALSE = Const(False)

_CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")
_ARITH_OPS = ("+", "-", "*", "/")
_BOOL_OPS = ("and", "or")


def _require_number(v: Value, what: str) -> Value:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EvalError(f"{what} requires a numeric operand, got {v!r}")
    return v


def _require_bool(v: Value, what: str) -> bool:
    if not isinstance(v, bool):
        raise EvalError(f"{what} requires a boolean operand, got {v!r}")
    return v


def eval_expr(
    e: Expr,
    values: Mapping[str, Value],
    locations: Sequence[int] = (),
    location_index: Optional[Mapping[str, tuple[int, int]]] = None,
) -> Value:
    """Evaluate an expression against a valuation.

    ``location_index`` maps qualified location names ("Inst.Loc") to
    (instance index, location index) pairs so that location predicates read
    as booleans.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Name):
        if location_index is not None and e.ident in location_index:
            i, j = location_index[e.ident]
            return locations[i] == j
        try:
            return values[e.ident]
        except KeyError:
            raise EvalError(f"unresolved name {e.ident!r}") from None
    if isinstance(e, Unary):
        v = eval_expr(e.operand, values, locations, location_index)
        if e.op == "neg":
            return -_require_number(v, "unary '-'")
        return not _require_bool(v, "'!'")
    if isinstance(e, Binary):
        if e.op == "and":
            if not _require_bool(eval_expr(e.left, values, locations, location_index), "'&&'"):
                return False
            return _require_bool(eval_expr(e.right, values, locations, location_index), "'&&'")
        if e.op == "or":
            if _require_bool(eval_expr(e.left, values, locations, location_index), "'||'"):
                return True
            return _require_bool(eval_expr(e.right, values, locations, location_index), "'||'")
        a = eval_expr(e.left, values, locations, location_index)
        b = eval_expr(e.right, values, locations, location_index)
        if e.op in ("==", "!="):
            eq = a == b
            return eq if e.op == "==" else not eq
        a = _require_number(a, f"'{e.op}'")
        b = _require_number(b, f"'{e.op}'")
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0:
                raise EvalError("division by zero")
            return a / b
        if e.op == "<":
            return a < b
        if e.op == "<=":
            return a <= b
        if e.op == ">":
            return a > b
        if e.op == ">=":
            return a >= b
        raise EvalError(f"unknown operator {e.op!r}")
    if isinstance(e, Cond):
        t = _require_bool(eval_expr(e.test, values, locations, location_index), "'?:'")
        branch = e.then if t else e.other
        return eval_expr(branch, values, locations, location_index)
    raise EvalError(f"not an expression: {e!r}")


def free_names(e: Expr) -> frozenset[str]:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Name):
        return frozenset((e.ident,))
    if isinstance(e, Unary):
        return free_names(e.operand)
    if isinstance(e, Binary):
        return free_names(e.left) | free_names(e.right)
    if isinstance(e, Cond):
        return free_names(e.test) | free_names(e.then) | free_names(e.other)
    raise TypeError(f"not an expression: {e!r}")


def subst(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace names by expressions (used for template parameters and locals)."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Name):
        return mapping.get(e.ident, e)
    if isinstance(e, Unary):
        return Unary(e.op, subst(e.operand, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, subst(e.left, mapping), subst(e.right, mapping))
    if isinstance(e, Cond):
        return Cond(subst(e.test, mapping), subst(e.then, mapping), subst(e.other, mapping))
    raise TypeError(f"not an expression: {e!r}")


def fold(e: Expr) -> Expr:
    """Constant-fold where possible; used by static validation."""
    if isinstance(e, (Const, Name)):
        return e
    if isinstance(e, Unary):
        a = fold(e.operand)
        if isinstance(a, Const):
            try:
                return Const(eval_expr(Unary(e.op, a), {}))
            except EvalError:
                return Unary(e.op, a)
        return Unary(e.op, a)
    if isinstance(e, Binary):
        a, b = fold(e.left), fold(e.right)
        if isinstance(a, Const) and isinstance(b, Const):
            try:
                return Const(eval_expr(Binary(e.op, a, b), {}))
            except EvalError:
                return Binary(e.op, a, b)
        return Binary(e.op, a, b)
    if isinstance(e, Cond):
        t, a, b = fold(e.test), fold(e.then), fold(e.other)
        if isinstance(t, Const) and isinstance(t.value, bool):
            return a if t.value else b
        return Cond(t, a, b)
    raise TypeError(f"not an expression: {e!r}")


def const_value(e: Expr) -> Optional[Value]:
    folded = fold(e)
    return folded.value if isinstance(folded, Const) else None


# ---------------------------------------------------------------------------
# Pretty printing (round-trips through the parser).

_PREC = {
    "?:": 1,
    "or": 2,
    "and": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4, "==": 4, "!=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6,
    "neg": 7, "not": 7,
}

_OP_TEXT = {"and": "&&", "or": "||"}


def format_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, Const):
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        return repr(e.value)
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Unary):
        p = _PREC[e.op]
        sym = "-" if e.op == "neg" else "!"
        s = sym + format_expr(e.operand, p)
        return f"({s})" if p < parent_prec else s
    if isinstance(e, Binary):
        p = _PREC[e.op]
        sym = _OP_TEXT.get(e.op, e.op)
        # comparisons are non-associative; arithmetic is left-associative
        s = f"{format_expr(e.left, p)} {sym} {format_expr(e.right, p + 1)}"
        return f"({s})" if p < parent_prec else s
    if isinstance(e, Cond):
        p = _PREC["?:"]
        s = f"{format_expr(e.test, p + 1)} ? {format_expr(e.then, p + 1)} : {format_expr(e.other, p)}"
        return f"({s})" if p < parent_prec else s
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Compilation to plain Python callables.

@dataclass(frozen=True)
class CompileContext:
    """Name resolution for compilation: which identifiers are clocks,
    variables, or location predicates."""

    clocks: frozenset[str]
    variables: frozenset[str]
    locations: Mapping[str, tuple[int, int]]

    def resolve(self, ident: str) -> str:
        if ident in self.locations:
            return "location"
        if ident in self.clocks:
            return "clock"
        if ident in self.variables:
            return "variable"
        raise EvalError(f"unresolved name {ident!r}")


_counter = itertools.count()


def _emit(e: Expr, ctx: CompileContext) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Name):
        kind = ctx.resolve(e.ident)
        if kind == "location":
            i, j = ctx.locations[e.ident]
            return f"(L[{i}] == {j})"
        return f"V[{e.ident!r}]"
    if isinstance(e, Unary):
        a = _emit(e.operand, ctx)
        return f"(-{a})" if e.op == "neg" else f"(not {a})"
    if isinstance(e, Binary):
        a, b = _emit(e.left, ctx), _emit(e.right, ctx)
        sym = {"and": "and", "or": "or"}.get(e.op, e.op)
        return f"({a} {sym} {b})"
    if isinstance(e, Cond):
        return f"(({_emit(e.then, ctx)}) if ({_emit(e.test, ctx)}) else ({_emit(e.other, ctx)}))"
    raise TypeError(f"not an expression: {e!r}")


def compile_fn(e: Expr, ctx: CompileContext, label: str = "") -> Callable[[Mapping, Sequence], Value]:
    """Compile to a fast callable ``f(values, locations) -> value``."""
    body = _emit(e, ctx)
    name = f"_expr_{next(_counter)}"
    src = (
        f"def {name}(V, L):\n"
        f"    try:\n"
        f"        return {body}\n"
        f"    except ZeroDivisionError:\n"
        f"        raise EvalError('division by zero in ' + {format_expr(e)!r})\n"
    )
    ns: dict = {"EvalError": EvalError}
    exec(compile(src, f"<expr:{label or format_expr(e)}>", "exec"), ns)
    return ns[name]


# ---------------------------------------------------------------------------
# Linear-in-delay compilation.
#
# During a delay d every clock x evolves as x + rate(x)*d while variables stay
# fixed, so an expression that is linear in the clocks evaluates to A + B*d.
# ``compile_linear`` emits a callable returning the pair (A, B) for the
# current valuation V and rate map R.


def _emit_linear(e: Expr, ctx: CompileContext) -> tuple[str, str, bool]:
    """Return (value_src, slope_src, has_slope)."""
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, bool):
            raise NonlinearError("boolean constant in a clock constraint")
        return repr(v), "0.0", False
    if isinstance(e, Name):
        kind = ctx.resolve(e.ident)
        if kind == "clock":
            return f"V[{e.ident!r}]", f"R[{e.ident!r}]", True
        if kind == "variable":
            return f"V[{e.ident!r}]", "0.0", False
        raise NonlinearError(f"location predicate {e.ident!r} in a clock constraint")
    if isinstance(e, Unary):
        if e.op != "neg":
            raise NonlinearError("'!' inside a clock constraint")
        v, s, hs = _emit_linear(e.operand, ctx)
        return f"(-{v})", (f"(-{s})" if hs else "0.0"), hs
    if isinstance(e, Binary):
        if e.op in ("+", "-"):
            va, sa, ha = _emit_linear(e.left, ctx)
            vb, sb, hb = _emit_linear(e.right, ctx)
            v = f"({va} {e.op} {vb})"
            if not ha and not hb:
                return v, "0.0", False
            return v, f"({sa} {e.op} {sb})", True
        if e.op == "*":
            va, sa, ha = _emit_linear(e.left, ctx)
            vb, sb, hb = _emit_linear(e.right, ctx)
            if ha and hb:
                raise NonlinearError("product of two clock-dependent terms")
            v = f"({va} * {vb})"
            if ha:
                return v, f"({sa} * {vb})", True
            if hb:
                return v, f"({va} * {sb})", True
            return v, "0.0", False
        if e.op == "/":
            va, sa, ha = _emit_linear(e.left, ctx)
            vb, sb, hb = _emit_linear(e.right, ctx)
            if hb:
                raise NonlinearError("clock-dependent divisor")
            v = f"({va} / {vb})"
            return v, (f"({sa} / {vb})" if ha else "0.0"), ha
        raise NonlinearError(f"operator {e.op!r} inside a clock constraint")
    raise NonlinearError("conditional inside a clock constraint")


@dataclass
class LinAtom:
    """One clock comparison ``lhs op rhs``, compiled as the line
    (lhs - rhs) = A + B*d over the pending delay d."""

    fn: Callable[[Mapping, Mapping], tuple[float, float]]
    op: str
    source: Expr

    def window(self, values: Mapping, rates: Mapping) -> tuple[float, float]:
        """The (closed) interval of delays d on which the atom holds."""
        a, b = self.fn(values, rates)
        return _atom_interval(a, b, self.op)


_INF = float("inf")
EMPTY_WINDOW = (1.0, 0.0)  # lo > hi


def _atom_interval(a: float, b: float, op: str) -> tuple[float, float]:
    # truth of (a + b*d op 0) as an interval of d
    if op in ("<", "<="):
        if b > 0.0:
            return (-_INF, -a / b)
        if b < 0.0:
            return (-a / b, _INF)
        return (-_INF, _INF) if a <= 0.0 else EMPTY_WINDOW
    if op in (">", ">="):
        if b > 0.0:
            return (-a / b, _INF)
        if b < 0.0:
            return (-_INF, -a / b)
        return (-_INF, _INF) if a >= 0.0 else EMPTY_WINDOW
    if op == "==":
        if b == 0.0:
            return (-_INF, _INF) if a == 0.0 else EMPTY_WINDOW
        d = -a / b
        return (d, d)
    raise NonlinearError(f"operator {op!r} not allowed on clocks")


def compile_lin_atom(e: Binary, ctx: CompileContext) -> LinAtom:
    if not isinstance(e, Binary) or e.op not in ("<", "<=", ">", ">=", "=="):
        raise NonlinearError(f"clock constraint must be a comparison: {format_expr(e)}")
    va, sa, ha = _emit_linear(e.left, ctx)
    vb, sb, hb = _emit_linear(e.right, ctx)
    v = f"({va} - {vb})"
    s = f"({sa} - {sb})" if (ha or hb) else "0.0"
    name = f"_lin_{next(_counter)}"
    src = f"def {name}(V, R):\n    return ({v}, {s})\n"
    ns: dict = {}
    exec(compile(src, f"<lin:{format_expr(e)}>", "exec"), ns)
    return LinAtom(ns[name], e.op, e)


def conjuncts(e: Expr) -> list[Expr]:
    """Flatten nested '&&' into a list."""
    if isinstance(e, Binary) and e.op == "and":
        return conjuncts(e.left) + conjuncts(e.right)
    return [e]


def split_conjunction(
    e: Optional[Expr], ctx: CompileContext, label: str = ""
) -> tuple[Callable, list[LinAtom]]:
    """Split a guard/invariant into a clock-free part (compiled to a bool
    callable) and a list of linear clock atoms.

    Raises NonlinearError for constraints outside the supported fragment
    (anything that mixes clocks with disjunction, negation, conditionals or
    nonlinear arithmetic).
    """
    if e is None:
        return (lambda V, L: True), []
    static_parts: list[Expr] = []
    atoms: list[LinAtom] = []
    for c in conjuncts(e):
        if free_names(c) & ctx.clocks:
            if not isinstance(c, Binary) or c.op not in ("<", "<=", ">", ">=", "=="):
                raise NonlinearError(
                    f"clock constraint must be a conjunction of comparisons: {format_expr(c)}"
                )
            atoms.append(compile_lin_atom(c, ctx))
        else:
            static_parts.append(c)
    if static_parts:
        acc = static_parts[0]
        for p in static_parts[1:]:
            acc = Binary("and", acc, p)
        static_fn = compile_fn(acc, ctx, label=label)
    else:
        static_fn = lambda V, L: True  # noqa: E731
    return static_fn, atoms


def intersect_windows(
    windows: Sequence[tuple[float, float]], lo: float = 0.0, hi: float = _INF
) -> tuple[float, float]:
    for wlo, whi in windows:
        if wlo > lo:
            lo = wlo
        if whi < hi:
            hi = whi
    return lo, hi
