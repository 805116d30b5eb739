"""Tokenizer, AST and recursive-descent parser for the BUGS model subset.

The grammar covers ``model { ... }`` blocks made of ``for`` loops,
stochastic relations (``~``) and logical relations (``<-``), with
arithmetic expressions, a handful of functions and nested indexing::

    model {
      for (i in 1:N) {
        r[i] ~ dbin(p[i], n[i])
        logit(p[i]) <- alpha0 + b[i]
      }
    }

``logit(x) <- e`` is normalised to ``x <- ilogit(e)`` while parsing, so
the rest of the package only ever sees plain logical relations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from .errors import ModelError, ModelSyntaxError

#: distribution name -> number of parameters
DISTRIBUTIONS = {"dnorm": 2, "dbin": 2, "dunif": 2}

#: function name -> arity
FUNCTIONS = {
    "pow": 2,
    "logit": 1,
    "ilogit": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
}

_FUNCTION_ALIASES = {"inverse.logit": "ilogit", "inv.logit": "ilogit"}


# --------------------------------------------------------------------------
# AST


def _pos():
    return field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Num:
    value: float
    pos: tuple = _pos()


@dataclass(frozen=True)
class Var:
    """A (possibly indexed) name reference, e.g. ``beta[region[i]]``."""

    name: str
    indices: tuple = ()
    pos: tuple = _pos()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: tuple = _pos()


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: tuple = _pos()


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: tuple = _pos()


Expr = Union[Num, Var, BinOp, Neg, Call]


@dataclass(frozen=True)
class Distribution:
    name: str
    args: tuple
    pos: tuple = _pos()


@dataclass(frozen=True)
class Stochastic:
    target: Var
    dist: Distribution
    pos: tuple = _pos()


@dataclass(frozen=True)
class Logical:
    target: Var
    expr: Expr
    pos: tuple = _pos()


@dataclass(frozen=True)
class ForLoop:
    var: str
    lower: Expr
    upper: Expr
    body: tuple
    pos: tuple = _pos()


Statement = Union[Stochastic, Logical, ForLoop]


@dataclass(frozen=True)
class ModelAst:
    statements: tuple = ()

    def relations(self):
        """Yield ``(relation, loop_vars)`` for every relation, depth first."""

        def walk(stmts, loops):
            for s in stmts:
                if isinstance(s, ForLoop):
                    yield from walk(s.body, loops + (s.var,))
                else:
                    yield s, loops

        yield from walk(self.statements, ())

    def loops(self):
        def walk(stmts):
            for s in stmts:
                if isinstance(s, ForLoop):
                    yield s
                    yield from walk(s.body)

        return list(walk(self.statements))


# --------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z][A-Za-z0-9._]*)
  | (?P<op><-|[{}()\[\],:~+\-*/;])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'number', 'name', 'op', 'eof'
    text: str
    line: int
    col: int


def tokenize(source):
    tokens = []
    line, line_start = 1, 0
    i, n = 0, len(source)
    while i < n:
        m = _TOKEN_RE.match(source, i)
        if m is None:
            raise ModelSyntaxError(
                f"unexpected character {source[i]!r}", line, i - line_start + 1
            )
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        i = m.end()
    tokens.append(Token("eof", "", line, n - line_start + 1))
    return tokens


# --------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, source):
        self.tokens = tokenize(source)
        self.i = 0

    # token helpers
    @property
    def tok(self):
        return self.tokens[self.i]

    def _describe(self, tok):
        return "end of input" if tok.kind == "eof" else repr(tok.text)

    def fail(self, expected, tok=None):
        tok = tok or self.tok
        raise ModelSyntaxError(
            f"unexpected {self._describe(tok)}", tok.line, tok.col, expected
        )

    def at(self, text):
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def expect(self, text):
        if not self.at(text):
            self.fail([repr(text)])
        tok = self.tok
        self.i += 1
        return tok

    def expect_name(self):
        if self.tok.kind != "name":
            self.fail(["name"])
        tok = self.tok
        self.i += 1
        return tok

    # grammar
    def parse(self):
        self.expect("model")
        self.expect("{")
        body = self.statements()
        self.expect("}")
        if self.tok.kind != "eof":
            self.fail(["end of input"])
        return ModelAst(tuple(body))

    def statements(self):
        out = []
        while True:
            while self.at(";"):
                self.i += 1
            if self.at("}") or self.tok.kind == "eof":
                return out
            out.append(self.statement())

    def statement(self):
        tok = self.tok
        if self.at("for"):
            return self.for_loop()
        if tok.kind != "name":
            self.fail(["'for'", "relation"])
        target = self.target()
        if self.at("~"):
            self.i += 1
            if isinstance(target, tuple):
                raise ModelSyntaxError(
                    "a link function is only allowed on the left of '<-'",
                    tok.line,
                    tok.col,
                )
            dist = self.distribution()
            return Stochastic(target, dist, pos=(tok.line, tok.col))
        if self.at("<-"):
            self.i += 1
            expr = self.expr()
            if isinstance(target, tuple):
                _, var = target
                return Logical(
                    var, Call("ilogit", (expr,), pos=expr.pos), pos=(tok.line, tok.col)
                )
            return Logical(target, expr, pos=(tok.line, tok.col))
        self.fail(["'~'", "'<-'"])

    def target(self):
        tok = self.expect_name()
        if self.at("("):
            if tok.text != "logit":
                raise ModelSyntaxError(
                    f"unsupported link function {tok.text!r}; only 'logit' is allowed",
                    tok.line,
                    tok.col,
                )
            self.i += 1
            inner = self.expect_name()
            var = Var(inner.text, self.indices(), pos=(inner.line, inner.col))
            self.expect(")")
            return ("logit", var)
        return Var(tok.text, self.indices(), pos=(tok.line, tok.col))

    def indices(self):
        if not self.at("["):
            return ()
        self.i += 1
        idx = [self.expr()]
        while self.at(","):
            self.i += 1
            idx.append(self.expr())
        self.expect("]")
        return tuple(idx)

    def for_loop(self):
        tok = self.expect("for")
        self.expect("(")
        var = self.expect_name().text
        self.expect("in")
        lower = self.expr()
        self.expect(":")
        upper = self.expr()
        self.expect(")")
        self.expect("{")
        body = self.statements()
        self.expect("}")
        return ForLoop(var, lower, upper, tuple(body), pos=(tok.line, tok.col))

    def distribution(self):
        tok = self.expect_name()
        if tok.text not in DISTRIBUTIONS:
            raise ModelSyntaxError(
                f"unknown distribution {tok.text!r}", tok.line, tok.col,
                [repr(d) for d in sorted(DISTRIBUTIONS)],
            )
        args = self.arguments()
        if len(args) != DISTRIBUTIONS[tok.text]:
            raise ModelSyntaxError(
                f"{tok.text} takes {DISTRIBUTIONS[tok.text]} parameters, got {len(args)}",
                tok.line,
                tok.col,
            )
        if self.tok.kind == "name" and self.tok.text in ("T", "I", "C") and (
            self.tokens[self.i + 1].text == "("
        ):
            raise ModelSyntaxError(
                "truncation and censoring are not supported", self.tok.line, self.tok.col
            )
        return Distribution(tok.text, args, pos=(tok.line, tok.col))

    def arguments(self):
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.at(","):
                self.i += 1
                args.append(self.expr())
        self.expect(")")
        return tuple(args)

    def expr(self):
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.tok
            self.i += 1
            left = BinOp(op.text, left, self.term(), pos=(op.line, op.col))
        return left

    def term(self):
        left = self.unary()
        while self.at("*") or self.at("/"):
            op = self.tok
            self.i += 1
            left = BinOp(op.text, left, self.unary(), pos=(op.line, op.col))
        return left

    def unary(self):
        if self.at("-"):
            tok = self.tok
            self.i += 1
            return Neg(self.unary(), pos=(tok.line, tok.col))
        if self.at("+"):
            self.i += 1
            return self.unary()
        return self.primary()

    def primary(self):
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            value = float(tok.text)
            if value == float("inf"):
                raise ModelSyntaxError("number out of range", tok.line, tok.col)
            return Num(value, pos=(tok.line, tok.col))
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "name":
            self.i += 1
            if self.at("("):
                func = _FUNCTION_ALIASES.get(tok.text, tok.text)
                if func in DISTRIBUTIONS:
                    raise ModelSyntaxError(
                        f"distribution {tok.text!r} used inside an expression",
                        tok.line,
                        tok.col,
                    )
                if func not in FUNCTIONS:
                    raise ModelSyntaxError(
                        f"unknown function {tok.text!r}", tok.line, tok.col,
                        [repr(f) for f in sorted(FUNCTIONS)],
                    )
                args = self.arguments()
                if len(args) != FUNCTIONS[func]:
                    raise ModelSyntaxError(
                        f"{tok.text} takes {FUNCTIONS[func]} arguments, got {len(args)}",
                        tok.line,
                        tok.col,
                    )
                return Call(func, args, pos=(tok.line, tok.col))
            return Var(tok.text, self.indices(), pos=(tok.line, tok.col))
        self.fail(["number", "name", "'('", "'-'"])


def _check_scoping(ast):
    stochastic, logical = {}, {}

    def walk(stmts, bound):
        for s in stmts:
            if isinstance(s, ForLoop):
                if s.var in bound:
                    raise ModelError(
                        f"loop index {s.var!r} is already bound in an enclosing loop",
                        *s.pos,
                    )
                walk(s.body, bound | {s.var})
            elif isinstance(s, Stochastic):
                stochastic.setdefault(s.target.name, s.pos)
            else:
                logical.setdefault(s.target.name, s.pos)

    walk(ast.statements, frozenset())
    for name in stochastic:
        if name in logical:
            line, col = max(stochastic[name], logical[name])
            raise ModelError(
                f"{name!r} is the target of both a '~' and a '<-' relation", line, col
            )


def parse_model(source):
    """Parse model source text into a :class:`ModelAst`.

    Raises
    ------
    ModelError
        For any problem with the text; :class:`ModelSyntaxError` carries
        the offending position and the tokens that would have been
        accepted there.
    """
    if not isinstance(source, str):
        raise ModelError("model source must be text")
    try:
        ast = _Parser(source).parse()
    except RecursionError:
        raise ModelError("expression nesting too deep") from None
    _check_scoping(ast)
    return ast


# --------------------------------------------------------------------------
# Pretty printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_expr(e, prec=0):
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        if not e.indices:
            return e.name
        return f"{e.name}[{', '.join(format_expr(i) for i in e.indices)}]"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, Neg):
        return f"-{format_expr(e.operand, 3)}"
    p = _PREC[e.op]
    # left-associative: right operand at the same level needs parentheses
    s = f"{format_expr(e.left, p)} {e.op} {format_expr(e.right, p + 1)}"
    return f"({s})" if p < prec else s


def format_model(ast, indent="  "):
    """Render an AST back to source text that re-parses to an equal AST."""
    lines = ["model {"]

    def emit(stmts, depth):
        pad = indent * depth
        for s in stmts:
            if isinstance(s, ForLoop):
                lines.append(
                    f"{pad}for ({s.var} in {format_expr(s.lower)}:{format_expr(s.upper)}) {{"
                )
                emit(s.body, depth + 1)
                lines.append(pad + "}")
            elif isinstance(s, Stochastic):
                args = ", ".join(format_expr(a) for a in s.dist.args)
                lines.append(f"{pad}{format_expr(s.target)} ~ {s.dist.name}({args})")
            else:
                lines.append(f"{pad}{format_expr(s.target)} <- {format_expr(s.expr)}")

    emit(ast.statements, 1)
    lines.append("}")
    return "\n".join(lines) + "\n"
