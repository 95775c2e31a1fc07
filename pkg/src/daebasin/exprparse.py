"""Parser and evaluator for the problem-file expression language.

Grammar (whitespace is insignificant)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right-associative
    primary := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

``VAR`` is ``x1..xn``, ``u1..um``, ``t`` or any extra scalar symbol the
caller declares (the quadrature kernels use ``z`` and ``s``).  ``FUNC`` is one
of ``sin cos exp ln sqrt abs``.  There is no implicit multiplication and no
named constants.
"""
import math
import re
from dataclasses import dataclass
from functools import cached_property

from .errors import (DimensionError, DomainError, ExprSyntaxError,
                     UnknownIdentifierError)

__all__ = [
    "Expr", "Num", "Var", "Neg", "BinOp", "Call",
    "EvalContext", "parse", "evaluate", "to_text", "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "abs")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class Expr:
    """Base class of AST nodes. Nodes are immutable and hashable."""

    def __str__(self):
        return to_text(self)

    @cached_property
    def compiled(self):
        """Closure ``f(x, u, t, env) -> float`` equivalent to :func:`evaluate`."""
        return _compile(self)

    def __call__(self, x=(), u=(), t=0.0, **symbols):
        return self.compiled(x, u, t, symbols)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    kind: str          # 'x', 'u', or a scalar symbol name such as 't'
    index: int = 0     # 1-based for 'x' / 'u', 0 for scalar symbols


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    func: str
    arg: Expr


@dataclass(frozen=True)
class EvalContext:
    x: tuple = ()
    u: tuple = ()
    t: float = 0.0
    symbols: dict = None


# -- parsing ----------------------------------------------------------------

class _Parser:
    def __init__(self, text, n, m, symbols):
        self.text = text
        self.n, self.m = n, m
        self.symbols = frozenset(symbols)
        self.tokens = self._tokenize(text)
        self.i = 0

    def _tokenize(self, text):
        toks = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            mt = _TOKEN.match(text, pos)
            if mt is None or mt.end() == pos:
                raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
            kind = mt.lastgroup
            toks.append((kind, mt.group(kind), mt.start(kind)))
            pos = mt.end()
        toks.append(("eof", "", len(text)))
        return toks

    @property
    def tok(self):
        return self.tokens[self.i]

    def _advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def _expect(self, value):
        kind, val, pos = self.tok
        if kind != "op" or val != value:
            found = "end of input" if kind == "eof" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)
        self._advance()

    def parse(self):
        node = self.expr()
        kind, val, pos = self.tok
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected token {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self._advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self._advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok[0] == "op" and self.tok[1] == "-":
            self._advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self._advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self):
        kind, val, pos = self.tok
        if kind == "num":
            self._advance()
            return Num(float(val))
        if kind == "name":
            self._advance()
            if val in FUNCTIONS:
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return Call(val, arg)
            return self._variable(val, pos)
        if kind == "op" and val == "(":
            self._advance()
            node = self.expr()
            self._expect(")")
            return node
        found = "end of input" if kind == "eof" else repr(val)
        raise ExprSyntaxError(f"expected operand, found {found}", pos)

    def _variable(self, name, pos):
        if name in self.symbols:
            return Var(name)
        mt = re.fullmatch(r"([xu])([1-9][0-9]*)", name)
        if mt is None:
            raise UnknownIdentifierError(f"unknown identifier {name!r}", pos)
        kind, idx = mt.group(1), int(mt.group(2))
        limit = self.n if kind == "x" else self.m
        if idx > limit:
            raise UnknownIdentifierError(
                f"variable {name!r} out of range ({kind}1..{kind}{limit})", pos)
        return Var(kind, idx)


def parse(text, n, m, symbols=("t",)):
    """Parse ``text`` into an :class:`Expr` over ``x1..xn``, ``u1..um``
    and the scalar ``symbols``."""
    if not isinstance(text, str) or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    try:
        return _Parser(text, n, m, symbols).parse()
    except ExprSyntaxError as exc:
        nbytes = len(text[: exc.offset].encode("utf-8"))
        if nbytes != exc.offset:
            msg = str(exc).rsplit(" at offset ", 1)[0]
            raise type(exc)(msg, nbytes) from None
        raise


# -- printing ---------------------------------------------------------------

def to_text(e):
    """Fully parenthesized text; ``parse(to_text(e))`` reproduces ``e``."""
    if isinstance(e, Num):
        if e.value < 0 or not math.isfinite(e.value):
            raise ValueError(f"literal {e.value!r} has no textual form")
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.kind if e.index == 0 else f"{e.kind}{e.index}"
    if isinstance(e, Neg):
        return f"(-{to_text(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


# -- evaluation ---------------------------------------------------------------

def _pow(a, b, node):
    if a < 0.0 and b != math.floor(b):
        raise DomainError("negative base with non-integer exponent", node)
    if a == 0.0 and b < 0.0:
        raise DomainError("zero raised to a negative power", node)
    try:
        return math.pow(a, b)
    except OverflowError:
        return math.copysign(math.inf, a) if b == math.floor(b) and b % 2 == 1 else math.inf


def _div(a, b, node):
    if b == 0.0:
        raise DomainError("division by zero", node)
    return a / b


def _ln(a, node):
    if not a > 0.0:
        raise DomainError("logarithm of non-positive value", node)
    return math.log(a)


def _sqrt(a, node):
    if a < 0.0:
        raise DomainError("square root of negative value", node)
    return math.sqrt(a)


def _exp(a, node):
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _trig(fn):
    def apply(a, node):
        if math.isinf(a):
            raise DomainError("trigonometric function of infinite value", node)
        return fn(a)
    return apply


_CALLS = {
    "sin": _trig(math.sin),
    "cos": _trig(math.cos),
    "exp": _exp,
    "ln": _ln,
    "sqrt": _sqrt,
    "abs": lambda a, node: abs(a),
}


def _compile(e):
    if isinstance(e, Num):
        v = float(e.value)
        return lambda x, u, t, env: v
    if isinstance(e, Var):
        if e.kind == "x":
            i = e.index - 1
            return lambda x, u, t, env: x[i]
        if e.kind == "u":
            i = e.index - 1
            return lambda x, u, t, env: u[i]
        if e.kind == "t":
            return lambda x, u, t, env: t
        name = e.kind

        def sym(x, u, t, env):
            try:
                return env[name]
            except (KeyError, TypeError):
                raise DimensionError(f"symbol {name!r} not bound") from None
        return sym
    if isinstance(e, Neg):
        f = _compile(e.operand)
        return lambda x, u, t, env: -f(x, u, t, env)
    if isinstance(e, BinOp):
        fa, fb = _compile(e.left), _compile(e.right)
        if e.op == "+":
            return lambda x, u, t, env: fa(x, u, t, env) + fb(x, u, t, env)
        if e.op == "-":
            return lambda x, u, t, env: fa(x, u, t, env) - fb(x, u, t, env)
        if e.op == "*":
            return lambda x, u, t, env: fa(x, u, t, env) * fb(x, u, t, env)
        text = to_text(e)
        if e.op == "/":
            return lambda x, u, t, env: _div(fa(x, u, t, env), fb(x, u, t, env), text)
        if e.op == "^":
            return lambda x, u, t, env: _pow(fa(x, u, t, env), fb(x, u, t, env), text)
    if isinstance(e, Call):
        f = _compile(e.arg)
        g = _CALLS[e.func]
        text = to_text(e)
        return lambda x, u, t, env: g(f(x, u, t, env), text)
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e, ctx):
    """Evaluate ``e`` in ``ctx``; raises :class:`DomainError` on invalid operations."""
    return float(e.compiled(ctx.x, ctx.u, ctx.t, ctx.symbols or {}))


def variables(e):
    """Set of ``(kind, index)`` pairs referenced by ``e``."""
    if isinstance(e, Var):
        return {(e.kind, e.index)}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Call):
        return variables(e.arg)
    raise TypeError(f"not an expression node: {e!r}")
