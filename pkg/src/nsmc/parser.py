"""Textual modeling language (.npta) and query language.

The model grammar is line-oriented and diffable; the query grammar follows
the verifier's surface syntax (Pr[...], E[...;N], simulate) so published
queries paste in unchanged.  See docs/grammar.md for the full EBNF.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .expr import Binary, Cond, Const, Expr, Name, Unary, format_expr
from .model import (
    Branch,
    ClockDecl,
    Edge,
    Location,
    ModelError,
    Network,
    Sync,
    Template,
    VarDecl,
    build_network,
)
from .monitor import (
    Eventually,
    Globally,
    PathFormula,
    Until,
    WmtlAnd,
    WmtlAtom,
    WmtlEventually,
    WmtlFormula,
    WmtlGlobally,
    WmtlNext,
    WmtlNot,
    WmtlOr,
    WmtlUntil,
    format_wmtl,
)
from .simulator import CostBound, RunBound, StepsBound, TimeBound, format_bound


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Tokenizer

_PUNCT2 = ("<=", ">=", "==", "!=", "&&", "||", "->", "<>")
_PUNCT1 = "<>=!+-*/?:'#.,;(){}[]"


@dataclass(frozen=True)
class Token:
    kind: str  # 'ident' | 'int' | 'real' | 'punct' | 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token("ident", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            is_real = False
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                is_real = True
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    is_real = True
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tokens.append(Token("real" if is_real else "int", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        two = text[i : i + 2]
        if two in _PUNCT2:
            tokens.append(Token("punct", two, line, start_col))
            i += 2
            col += 2
            continue
        if c in _PUNCT1:
            tokens.append(Token("punct", c, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)
    last_line = tokens[-1].line if tokens else 1
    tokens.append(Token("eof", "", last_line, col))
    return tokens


class _TokenStream:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 0) -> Token:
        j = min(self.i + offset, len(self.tokens) - 1)
        return self.tokens[j]

    def next(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("punct", "ident")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}, got {self.tok.text!r}" if self.tok.kind != "eof" else f"expected {text!r}, got end of input")
        return self.next()

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            self.error(f"expected {what}, got {self.tok.text!r}")
        return self.next()

    def error(self, message: str):
        raise ParseError(message, self.tok.line, self.tok.col)


# ---------------------------------------------------------------------------
# Expressions


class _ExprParser:
    """Pratt-free recursive descent over the shared expression grammar.

    ``dotted`` enables instance-qualified names (Train(0).Cross), which only
    make sense in queries; model expressions use bare identifiers.
    """

    def __init__(self, ts: _TokenStream, dotted: bool = False):
        self.ts = ts
        self.dotted = dotted

    def parse(self) -> Expr:
        return self._ternary()

    def _ternary(self) -> Expr:
        cond = self._or()
        if self.ts.accept("?"):
            then = self._ternary()
            self.ts.expect(":")
            other = self._ternary()
            return Cond(cond, then, other)
        return cond

    def _or(self) -> Expr:
        e = self._and()
        while True:
            if self.ts.accept("||") or (self.ts.tok.kind == "ident" and self.ts.accept("or")):
                e = Binary("or", e, self._and())
            else:
                return e

    def _and(self) -> Expr:
        e = self._cmp()
        while True:
            if self.ts.accept("&&") or (self.ts.tok.kind == "ident" and self.ts.accept("and")):
                e = Binary("and", e, self._cmp())
            else:
                return e

    def _cmp(self) -> Expr:
        e = self._sum()
        for op in ("<=", ">=", "==", "!=", "<", ">"):
            if self.ts.at(op):
                self.ts.next()
                return Binary(op, e, self._sum())
        return e

    def _sum(self) -> Expr:
        e = self._term()
        while self.ts.at("+") or self.ts.at("-"):
            op = self.ts.next().text
            e = Binary(op, e, self._term())
        return e

    def _term(self) -> Expr:
        e = self._unary()
        while self.ts.at("*") or self.ts.at("/"):
            op = self.ts.next().text
            e = Binary(op, e, self._unary())
        return e

    def _unary(self) -> Expr:
        if self.ts.accept("!"):
            return Unary("not", self._unary())
        if self.ts.accept("-"):
            return Unary("neg", self._unary())
        if self.ts.tok.kind == "ident" and self.ts.tok.text == "not":
            self.ts.next()
            return Unary("not", self._unary())
        return self._primary()

    def _primary(self) -> Expr:
        t = self.ts.tok
        if t.kind == "int":
            self.ts.next()
            return Const(int(t.text))
        if t.kind == "real":
            self.ts.next()
            return Const(float(t.text))
        if t.kind == "ident":
            if t.text == "true":
                self.ts.next()
                return Const(True)
            if t.text == "false":
                self.ts.next()
                return Const(False)
            self.ts.next()
            name = t.text
            if self.dotted:
                if self.ts.at("("):
                    self.ts.next()
                    args = []
                    if not self.ts.at(")"):
                        while True:
                            neg = self.ts.accept("-")
                            at = self.ts.tok
                            if at.kind != "int":
                                self.ts.error("instance arguments must be integers")
                            self.ts.next()
                            args.append(-int(at.text) if neg else int(at.text))
                            if not self.ts.accept(","):
                                break
                    self.ts.expect(")")
                    name = f"{name}({','.join(str(a) for a in args)})"
                if self.ts.accept("."):
                    member = self.ts.expect_ident("member name")
                    name = f"{name}.{member.text}"
            return Name(name)
        if self.ts.accept("("):
            e = self.parse()
            self.ts.expect(")")
            return e
        self.ts.error(f"expected an expression, got {t.text!r}" if t.kind != "eof" else "expected an expression, got end of input")


def parse_expression(text: str, dotted: bool = True) -> Expr:
    ts = _TokenStream(text)
    e = _ExprParser(ts, dotted=dotted).parse()
    if ts.tok.kind != "eof":
        ts.error(f"unexpected trailing input {ts.tok.text!r}")
    return e


# ---------------------------------------------------------------------------
# Model parser


class _ModelParser:
    def __init__(self, text: str):
        self.ts = _TokenStream(text)

    def _expr(self) -> Expr:
        return _ExprParser(self.ts, dotted=False).parse()

    def parse(self) -> Network:
        clocks: list[ClockDecl] = []
        variables: list[VarDecl] = []
        channels: list[str] = []
        templates: list[Template] = []
        system: Optional[list] = None
        while self.ts.tok.kind != "eof":
            t = self.ts.tok
            if t.text in ("clock", "int", "real", "broadcast"):
                self._decl(clocks, variables, channels)
            elif t.text == "template":
                templates.append(self._template())
            elif t.text == "system":
                system = self._system(templates)
                break
            else:
                self.ts.error(f"expected a declaration, template, or system line, got {t.text!r}")
        if system is None:
            self.ts.error("missing 'system' line")
        if self.ts.tok.kind != "eof":
            self.ts.error(f"unexpected input after system line: {self.ts.tok.text!r}")
        try:
            return build_network(
                tuple(clocks), tuple(variables), tuple(channels), tuple(templates), tuple(system)
            )
        except ModelError as exc:
            raise ParseError(str(exc), self.ts.tok.line, self.ts.tok.col) from exc

    def _decl(self, clocks, variables, channels):
        t = self.ts.next()
        if t.text == "clock":
            while True:
                name = self.ts.expect_ident("clock name").text
                init = 0.0
                if self.ts.accept("="):
                    neg = self.ts.accept("-")
                    num = self.ts.tok
                    if num.kind not in ("int", "real"):
                        self.ts.error("clock initializer must be a number")
                    self.ts.next()
                    init = float(num.text)
                    if neg:
                        init = -init
                clocks.append(ClockDecl(name, init))
                if not self.ts.accept(","):
                    break
            self.ts.expect(";")
        elif t.text in ("int", "real"):
            kind = t.text
            while True:
                name = self.ts.expect_ident("variable name").text
                init: Expr = Const(0)
                if self.ts.accept("="):
                    init = self._expr()
                variables.append(VarDecl(name, kind, init))
                if not self.ts.accept(","):
                    break
            self.ts.expect(";")
        else:  # broadcast
            self.ts.expect("chan")
            while True:
                channels.append(self.ts.expect_ident("channel name").text)
                if not self.ts.accept(","):
                    break
            self.ts.expect(";")

    def _template(self) -> Template:
        self.ts.expect("template")
        name = self.ts.expect_ident("template name").text
        params: list[str] = []
        if self.ts.accept("("):
            if not self.ts.at(")"):
                while True:
                    params.append(self.ts.expect_ident("parameter name").text)
                    if not self.ts.accept(","):
                        break
            self.ts.expect(")")
        self.ts.expect("{")
        clocks: list[ClockDecl] = []
        variables: list[VarDecl] = []
        while self.ts.tok.text in ("clock", "int", "real"):
            self._decl(clocks, variables, [])
        locations: list[Location] = []
        while self.ts.at("location"):
            locations.append(self._location())
        self.ts.expect("init")
        init = self.ts.expect_ident("initial location").text
        self.ts.expect(";")
        edges: list[Edge] = []
        while not self.ts.at("}"):
            edges.append(self._edge())
        self.ts.expect("}")
        return Template(
            name,
            tuple(params),
            tuple(clocks),
            tuple(variables),
            tuple(locations),
            init,
            tuple(edges),
        )

    def _location(self) -> Location:
        self.ts.expect("location")
        name = self.ts.expect_ident("location name").text
        invariant = None
        rates: list[tuple[str, Expr]] = []
        exp_rate = None
        if self.ts.accept(";"):
            return Location(name)
        self.ts.expect("{")
        while not self.ts.at("}"):
            key = self.ts.expect_ident("'invariant', 'rate', or 'exprate'").text
            if key == "invariant":
                invariant = self._expr()
            elif key == "rate":
                clock = self.ts.expect_ident("clock name").text
                self.ts.expect("'")
                self.ts.expect("==")
                rates.append((clock, self._expr()))
            elif key == "exprate":
                exp_rate = self._expr()
            else:
                self.ts.error(f"unknown location item {key!r}")
            self.ts.expect(";")
        self.ts.expect("}")
        return Location(name, invariant, tuple(rates), exp_rate)

    def _edge(self) -> Edge:
        source = self.ts.expect_ident("edge source location").text
        self.ts.expect("->")
        if self.ts.at("{"):
            # multi-branch form: header then '-> target { ... }' arms
            guard, sync, _, _ = self._edge_body(header_only=True)
            branches: list[Branch] = []
            while self.ts.at("->"):
                self.ts.next()
                target = self.ts.expect_ident("branch target").text
                _, _, weight, updates = self._edge_body(branch_only=True)
                branches.append(Branch(target, weight, updates))
            if len(branches) < 1:
                self.ts.error("expected at least one '-> target { ... }' branch")
            return Edge(source, sync, guard, tuple(branches))
        target = self.ts.expect_ident("edge target location").text
        guard, sync, weight, updates = self._edge_body()
        return Edge(source, sync, guard, (Branch(target, weight, updates),))

    def _edge_body(self, header_only: bool = False, branch_only: bool = False):
        guard: Optional[Expr] = None
        sync = Sync("internal")
        weight: Expr = Const(1)
        updates: tuple = ()
        self.ts.expect("{")
        while not self.ts.at("}"):
            key = self.ts.expect_ident("edge item").text
            if key == "guard" and not branch_only:
                guard = self._expr()
            elif key == "sync" and not branch_only:
                chan = self.ts.expect_ident("channel name").text
                if self.ts.accept("!"):
                    sync = Sync("out", chan)
                elif self.ts.accept("?"):
                    sync = Sync("in", chan)
                else:
                    self.ts.error("expected '!' or '?' after channel name")
            elif key == "weight" and not header_only:
                weight = self._expr()
            elif key == "update" and not header_only:
                ups = []
                while True:
                    target = self.ts.expect_ident("update target").text
                    self.ts.expect("=")
                    ups.append((target, self._expr()))
                    if not self.ts.accept(","):
                        break
                updates = tuple(ups)
            else:
                self.ts.error(f"unexpected edge item {key!r} here")
            self.ts.expect(";")
        self.ts.expect("}")
        return guard, sync, weight, updates

    def _system(self, templates) -> list:
        self.ts.expect("system")
        by_name = {t.name: t for t in templates}
        out = []
        while True:
            t = self.ts.tok
            name = self.ts.expect_ident("template name").text
            if name not in by_name:
                raise ParseError(f"unknown template {name!r}", t.line, t.col)
            args: list[int] = []
            if self.ts.accept("("):
                if not self.ts.at(")"):
                    while True:
                        neg = self.ts.accept("-")
                        at = self.ts.tok
                        if at.kind != "int":
                            self.ts.error("instance arguments must be integer literals")
                        self.ts.next()
                        args.append(-int(at.text) if neg else int(at.text))
                        if not self.ts.accept(","):
                            break
                self.ts.expect(")")
            if len(args) != len(by_name[name].params):
                raise ParseError(
                    f"template {name!r} takes {len(by_name[name].params)} argument(s), got {len(args)}",
                    t.line,
                    t.col,
                )
            out.append((name, tuple(args)))
            if not self.ts.accept(","):
                break
        self.ts.expect(";")
        return out


def parse_model(text: str) -> Network:
    """Parse a .npta model; raises ParseError with line/column on bad syntax.

    Semantic issues (unresolved names, broken invariants) are reported by
    ``model.validate`` instead.
    """
    return _ModelParser(text).parse()


# ---------------------------------------------------------------------------
# Queries


@dataclass(frozen=True)
class EstimateQuery:
    bound: RunBound
    formula: Union[PathFormula, WmtlFormula]


@dataclass(frozen=True)
class HypTestQuery:
    bound: RunBound
    formula: Union[PathFormula, WmtlFormula]
    threshold: float


@dataclass(frozen=True)
class CompareQuery:
    bound1: RunBound
    formula1: Union[PathFormula, WmtlFormula]
    bound2: RunBound
    formula2: Union[PathFormula, WmtlFormula]


@dataclass(frozen=True)
class ExpectQuery:
    bound: RunBound
    runs: int
    mode: str  # 'min' | 'max'
    expr: Expr


@dataclass(frozen=True)
class SimulateQuery:
    count: int
    bound: RunBound
    exprs: tuple[Expr, ...]


Query = Union[EstimateQuery, HypTestQuery, CompareQuery, ExpectQuery, SimulateQuery]

_TEMPORAL = (WmtlNot, WmtlAnd, WmtlOr, WmtlNext, WmtlUntil, WmtlEventually, WmtlGlobally)


class _QueryParser:
    def __init__(self, text: str):
        self.ts = _TokenStream(text)

    def _expr(self) -> Expr:
        return _ExprParser(self.ts, dotted=True).parse()

    def _cmp_expr(self) -> Expr:
        return _ExprParser(self.ts, dotted=True)._cmp()

    def parse(self) -> Query:
        t = self.ts.tok
        if t.text == "Pr":
            q = self._pr()
        elif t.text == "E":
            q = self._expect()
        elif t.text == "simulate":
            q = self._simulate()
        else:
            self.ts.error("expected 'Pr', 'E', or 'simulate'")
        if self.ts.tok.kind != "eof":
            self.ts.error(f"unexpected trailing input {self.ts.tok.text!r}")
        return q

    def _number(self) -> float:
        neg = self.ts.accept("-")
        t = self.ts.tok
        if t.kind not in ("int", "real"):
            self.ts.error("expected a number")
        self.ts.next()
        v = float(t.text)
        return -v if neg else v

    def _bound(self) -> RunBound:
        t = self.ts.tok
        if self.ts.accept("<="):
            m = self._number()
            if m <= 0:
                raise ParseError("bound must be positive", t.line, t.col)
            return TimeBound(m)
        if self.ts.accept("#"):
            self.ts.expect("<=")
            nt = self.ts.tok
            if nt.kind != "int":
                self.ts.error("step bound must be an integer")
            self.ts.next()
            m = int(nt.text)
            if m < 0:
                raise ParseError("step bound must be >= 0", nt.line, nt.col)
            return StepsBound(m)
        name_expr = self._expr()
        if not isinstance(name_expr, Binary) or name_expr.op != "<=" or not isinstance(name_expr.left, Name):
            raise ParseError("bound must be '<=M', '#<=M', or 'clock<=M'", t.line, t.col)
        m_expr = name_expr.right
        if not isinstance(m_expr, Const) or isinstance(m_expr.value, bool):
            raise ParseError("cost bound must be a numeric constant", t.line, t.col)
        m = float(m_expr.value)
        if m <= 0:
            raise ParseError("bound must be positive", t.line, t.col)
        return CostBound(name_expr.left.ident, m)

    def _pr(self):
        self.ts.expect("Pr")
        self.ts.expect("[")
        bound = self._bound()
        self.ts.expect("]")
        self.ts.expect("(")
        formula = self._prop()
        self.ts.expect(")")
        if self.ts.accept(">="):
            if self.ts.at("Pr"):
                self.ts.expect("Pr")
                self.ts.expect("[")
                bound2 = self._bound()
                self.ts.expect("]")
                self.ts.expect("(")
                formula2 = self._prop()
                self.ts.expect(")")
                return CompareQuery(bound, formula, bound2, formula2)
            t = self.ts.tok
            p0 = self._number()
            if not 0.0 <= p0 <= 1.0:
                raise ParseError(f"threshold {p0} outside [0, 1]", t.line, t.col)
            return HypTestQuery(bound, formula, p0)
        return EstimateQuery(bound, formula)

    def _expect(self):
        self.ts.expect("E")
        self.ts.expect("[")
        bound = self._bound()
        self.ts.expect(";")
        nt = self.ts.tok
        if nt.kind != "int":
            self.ts.error("expected the run count N")
        self.ts.next()
        runs = int(nt.text)
        if runs < 1:
            raise ParseError("run count must be >= 1", nt.line, nt.col)
        self.ts.expect("]")
        self.ts.expect("(")
        mode_t = self.ts.expect_ident("'min' or 'max'")
        if mode_t.text not in ("min", "max"):
            raise ParseError("expected 'min' or 'max'", mode_t.line, mode_t.col)
        self.ts.expect(":")
        expr = self._expr()
        self.ts.expect(")")
        return ExpectQuery(bound, runs, mode_t.text, expr)

    def _simulate(self):
        self.ts.expect("simulate")
        ct = self.ts.tok
        if ct.kind != "int":
            self.ts.error("expected the run count")
        self.ts.next()
        count = int(ct.text)
        if count < 1:
            raise ParseError("simulate count must be >= 1", ct.line, ct.col)
        self.ts.expect("[")
        bound = self._bound()
        self.ts.expect("]")
        self.ts.expect("{")
        exprs = [self._expr()]
        while self.ts.accept(","):
            exprs.append(self._expr())
        self.ts.expect("}")
        return SimulateQuery(count, bound, tuple(exprs))

    # -- temporal properties -------------------------------------------------

    def _prop(self):
        ts = self.ts
        if ts.at("<>") and ts.peek(1).text != "[":
            ts.next()
            return Eventually(self._expr())
        if ts.at("[") and ts.peek(1).text == "]" and ts.peek(2).text != "[":
            ts.next()
            ts.next()
            return Globally(self._expr())
        f = self._wmtl()
        if ts.tok.kind == "ident" and ts.tok.text == "U" and ts.peek(1).text != "[":
            if not isinstance(f, WmtlAtom):
                ts.error("the left side of an unbounded until must be a state predicate")
            ts.next()
            q = self._expr()
            return Until(f.pred, q)
        if isinstance(f, WmtlAtom):
            ts.error("expected a temporal property (<>, [], U, or a bounded formula)")
        return f

    def _clock_bound(self) -> tuple[str, float]:
        self.ts.expect("[")
        name = self.ts.expect_ident("clock name").text
        if self.ts.accept("."):
            name = f"{name}.{self.ts.expect_ident('clock name').text}"
        self.ts.expect("<=")
        t = self.ts.tok
        d = self._number()
        if d < 0:
            raise ParseError("until bound must be >= 0", t.line, t.col)
        self.ts.expect("]")
        return name, d

    def _wmtl(self):
        return self._wuntil()

    def _wuntil(self):
        left = self._wor()
        if self.ts.tok.kind == "ident" and self.ts.tok.text == "U" and self.ts.peek(1).text == "[":
            self.ts.next()
            clock, d = self._clock_bound()
            right = self._wuntil()
            return WmtlUntil(clock, d, left, right)
        return left

    def _wor(self):
        f = self._wand()
        while self.ts.accept("||"):
            f = WmtlOr(f, self._wand())
        return f

    def _wand(self):
        f = self._wunary()
        while self.ts.accept("&&"):
            f = WmtlAnd(f, self._wunary())
        return f

    def _wunary(self):
        ts = self.ts
        if ts.at("!"):
            ts.next()
            return WmtlNot(self._wunary())
        if ts.tok.kind == "ident" and ts.tok.text == "O":
            ts.next()
            return WmtlNext(self._wunary())
        if ts.at("<>"):
            ts.next()
            clock, d = self._clock_bound()
            return WmtlEventually(clock, d, self._wunary())
        if ts.at("[") and ts.peek(1).text == "]":
            ts.next()
            ts.next()
            clock, d = self._clock_bound()
            return WmtlGlobally(clock, d, self._wunary())
        return self._watom()

    def _watom(self):
        ts = self.ts
        if ts.at("("):
            save = ts.i
            ts.next()
            try:
                f = self._wuntil()
                ts.expect(")")
            except ParseError:
                ts.i = save
                return WmtlAtom(self._cmp_expr())
            if isinstance(f, WmtlAtom) and ts.tok.text in ("+", "-", "*", "/", "<", "<=", ">", ">=", "==", "!=", "?"):
                ts.i = save
                return WmtlAtom(self._cmp_expr())
            return f
        return WmtlAtom(self._cmp_expr())


def parse_query(text: str) -> Query:
    """Parse one query; raises ParseError with line/column positions."""
    return _QueryParser(text).parse()


# ---------------------------------------------------------------------------
# Pretty printing (canonical form; reparsing yields a structurally equal AST)


def _format_decls(clocks, variables, channels, indent: str = "") -> list[str]:
    out = []
    for c in clocks:
        if c.init != 0.0:
            out.append(f"{indent}clock {c.name} = {c.init!r};")
        else:
            out.append(f"{indent}clock {c.name};")
    for v in variables:
        out.append(f"{indent}{v.kind} {v.name} = {format_expr(v.init)};")
    if channels:
        out.append(f"{indent}broadcast chan {', '.join(channels)};")
    return out


def _format_edge(e: Edge, indent: str) -> list[str]:
    def body_items(header: bool, branch: Optional[Branch]) -> list[str]:
        items = []
        if header:
            if e.guard is not None:
                items.append(f"guard {format_expr(e.guard)};")
            if e.sync.kind == "out":
                items.append(f"sync {e.sync.channel}!;")
            elif e.sync.kind == "in":
                items.append(f"sync {e.sync.channel}?;")
        if branch is not None:
            if branch.weight != Const(1):
                items.append(f"weight {format_expr(branch.weight)};")
            if branch.updates:
                ups = ", ".join(f"{t} = {format_expr(v)}" for t, v in branch.updates)
                items.append(f"update {ups};")
        return items

    if len(e.branches) == 1:
        b = e.branches[0]
        items = body_items(True, b)
        return [f"{indent}{e.source} -> {b.target} {{ {' '.join(items)} }}".replace("{  }", "{}")]
    lines = [f"{indent}{e.source} -> {{ {' '.join(body_items(True, None))} }}".replace("{  }", "{}")]
    for b in e.branches:
        items = body_items(False, b)
        lines.append(f"{indent}    -> {b.target} {{ {' '.join(items)} }}".replace("{  }", "{}"))
    return lines


def format_model(network: Network) -> str:
    lines = _format_decls(network.clocks, network.variables, network.channels)
    if lines:
        lines.append("")
    for t in network.templates:
        params = f"({', '.join(t.params)})" if t.params else ""
        lines.append(f"template {t.name}{params} {{")
        lines.extend(_format_decls(t.clocks, t.variables, [], "    "))
        for loc in t.locations:
            items = []
            if loc.invariant is not None:
                items.append(f"invariant {format_expr(loc.invariant)};")
            for cn, r in loc.rates:
                items.append(f"rate {cn}' == {format_expr(r)};")
            if loc.exp_rate is not None:
                items.append(f"exprate {format_expr(loc.exp_rate)};")
            if items:
                lines.append(f"    location {loc.name} {{ {' '.join(items)} }}")
            else:
                lines.append(f"    location {loc.name};")
        lines.append(f"    init {t.init};")
        for e in t.edges:
            lines.extend(_format_edge(e, "    "))
        lines.append("}")
        lines.append("")
    sys_items = []
    for name, args in network.system:
        sys_items.append(f"{name}({', '.join(str(a) for a in args)})" if args else name)
    lines.append(f"system {', '.join(sys_items)};")
    return "\n".join(lines) + "\n"


def _format_prop(f) -> str:
    if isinstance(f, Eventually):
        return f"<> {format_expr(f.pred)}"
    if isinstance(f, Globally):
        return f"[] {format_expr(f.pred)}"
    if isinstance(f, Until):
        return f"{format_expr(f.pred_p, parent_prec=5)} U {format_expr(f.pred_q, parent_prec=5)}"
    return format_wmtl(f)


def format_query(q: Query) -> str:
    if isinstance(q, EstimateQuery):
        return f"Pr[{format_bound(q.bound)}]({_format_prop(q.formula)})"
    if isinstance(q, HypTestQuery):
        return f"Pr[{format_bound(q.bound)}]({_format_prop(q.formula)}) >= {q.threshold!r}"
    if isinstance(q, CompareQuery):
        return (
            f"Pr[{format_bound(q.bound1)}]({_format_prop(q.formula1)}) >= "
            f"Pr[{format_bound(q.bound2)}]({_format_prop(q.formula2)})"
        )
    if isinstance(q, ExpectQuery):
        return f"E[{format_bound(q.bound)};{q.runs}]({q.mode}: {format_expr(q.expr)})"
    if isinstance(q, SimulateQuery):
        exprs = ",".join(format_expr(e) for e in q.exprs)
        return f"simulate {q.count} [{format_bound(q.bound)}]{{{exprs}}}"
    raise TypeError(f"not a query: {q!r}")
