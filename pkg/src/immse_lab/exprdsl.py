"""Channel-function expressions: parsing, evaluation and symbolic derivatives.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor ('*' factor)*
    factor := ['-'] atom
    atom   := number | 'w' | 'y' '[' int ']' | 't' | func '(' expr ')' | '(' expr ')'
    func   := 'tanh' | 'sin' | 'exp'

Trees are immutable. Evaluation broadcasts over numpy arrays: ``w`` may be
any array, and ``y`` is an array whose last axis is the output history
(``y[..., j - 1]`` holds ``y[j]``).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Const", "W", "Y", "T", "Neg", "Add", "Sub", "Mul", "Func",
    "Binding", "ExprSyntaxError", "UnboundVariableError",
    "parse_expr", "eval_expr", "evaluate", "diff_expr", "to_text",
    "variables", "y_indices", "substitute", "is_zero", "is_constant",
]

FUNCTIONS = ("tanh", "sin", "exp")
_HALF_PI = math.pi / 2.0


class ExprSyntaxError(ValueError):
    """Raised for malformed expression text; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnboundVariableError(KeyError):
    pass


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class W(Expr):
    pass


@dataclass(frozen=True, eq=True)
class Y(Expr):
    index: int


@dataclass(frozen=True, eq=True)
class T(Expr):
    pass


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr


ChannelExpr = Expr
VarId = Union[str, tuple]


def _var_key(var: VarId) -> VarId:
    """Normalize ``'w'``, ``'t'``, ``'y[3]'`` or ``('y', 3)``."""
    if isinstance(var, tuple):
        if len(var) == 2 and var[0] == "y" and int(var[1]) >= 1:
            return ("y", int(var[1]))
        raise ValueError(f"bad variable id {var!r}")
    if var in ("w", "t"):
        return var
    m = re.fullmatch(r"y\[(\d+)\]", var.replace(" ", ""))
    if m and int(m.group(1)) >= 1:
        return ("y", int(m.group(1)))
    raise ValueError(f"bad variable id {var!r}")


@dataclass(frozen=True)
class Binding:
    """Values for the free variables of an expression.

    ``y`` is indexed from 1 in expressions, so ``y[0]`` here is ``y[1]`` there.
    """
    w: float = 0.0
    y: Sequence[float] = ()
    t: float | None = None


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*()\[\]]))"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                pos += len(text[pos:]) - len(text[pos:].lstrip())
                raise ExprSyntaxError(f"unexpected character {text[pos]!r}", self._byte(pos))
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def _byte(self, pos: int) -> int:
        return len(self.text[:pos].encode("utf-8"))

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg: str, tok=None):
        tok = tok or self.peek()
        return ExprSyntaxError(msg, self._byte(tok[2]))

    def expect(self, op: str):
        tok = self.take()
        if tok[0] != "op" or tok[1] != op:
            raise self.error(f"expected {op!r}", tok)

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] == "*":
            self.take()
            e = Mul(e, self.factor())
        return e

    def factor(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.atom())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.take()
        kind, val, _ = tok
        if kind == "num":
            x = float(val)
            if not math.isfinite(x):
                raise self.error("numeric literal overflows", tok)
            return Const(x)
        if kind == "id":
            if val == "w":
                return W()
            if val == "t":
                return T()
            if val == "y":
                self.expect("[")
                idx = self.take()
                if idx[0] != "num":
                    raise self.error("y-index must be an integer", idx)
                if not re.fullmatch(r"\d+", idx[1]):
                    raise self.error("y-index must be an integer", idx)
                if int(idx[1]) < 1:
                    raise self.error("y-index must be >= 1", idx)
                self.expect("]")
                return Y(int(idx[1]))
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(val, arg)
            raise self.error(f"unknown identifier {val!r}", tok)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise self.error("unexpected end of input", tok)
        raise self.error(f"unexpected token {val!r}", tok)


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises
    ------
    ExprSyntaxError
        On malformed input, unknown identifiers or a bad ``y`` index.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# traversal helpers; sums produced by discretization can be hundreds of
# terms deep, so Add/Sub spines are walked iteratively.

def _spine(e: Expr) -> tuple[Expr, list[tuple[str, Expr]]]:
    terms = []
    while isinstance(e, (Add, Sub)):
        terms.append(("+" if isinstance(e, Add) else "-", e.right))
        e = e.left
    terms.reverse()
    return e, terms


def _nodes(e: Expr) -> Iterator[Expr]:
    stack = [e]
    seen: set[int] = set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        if isinstance(node, (Add, Sub, Mul)):
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, (Neg, Func)):
            stack.append(node.arg)


def variables(e: Expr) -> set:
    """Free variables as ``'w'``, ``'t'`` and ``('y', j)``."""
    out: set = set()
    for node in _nodes(e):
        if isinstance(node, W):
            out.add("w")
        elif isinstance(node, T):
            out.add("t")
        elif isinstance(node, Y):
            out.add(("y", node.index))
    return out


def y_indices(e: Expr) -> list[int]:
    return sorted(v[1] for v in variables(e) if isinstance(v, tuple))


def is_constant(e: Expr) -> bool:
    return not variables(e)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


# ---------------------------------------------------------------------------
# evaluation

_FUNCS = {"tanh": np.tanh, "sin": np.sin, "exp": np.exp}


def evaluate(e: Expr, w=0.0, y=None, t=None):
    """Vectorized evaluation; returns a float or an ndarray."""
    if isinstance(e, (Add, Sub)):
        base, terms = _spine(e)
        acc = evaluate(base, w, y, t)
        for op, term in terms:
            v = evaluate(term, w, y, t)
            acc = acc + v if op == "+" else acc - v
        return acc
    if isinstance(e, Const):
        return e.value
    if isinstance(e, W):
        if w is None:
            raise UnboundVariableError("w")
        return w
    if isinstance(e, Y):
        if y is None or np.shape(y)[-1] < e.index:
            raise UnboundVariableError(f"y[{e.index}]")
        return y[..., e.index - 1]
    if isinstance(e, T):
        if t is None:
            raise UnboundVariableError("t")
        return t
    if isinstance(e, Mul):
        return evaluate(e.left, w, y, t) * evaluate(e.right, w, y, t)
    if isinstance(e, Neg):
        return -evaluate(e.arg, w, y, t)
    if isinstance(e, Func):
        return _FUNCS[e.name](evaluate(e.arg, w, y, t))
    raise TypeError(f"not an expression node: {e!r}")


def eval_expr(e: Expr, b: Binding) -> float:
    """Evaluate ``e`` at a scalar binding."""
    y = np.asarray(b.y, dtype=float) if len(b.y) else np.zeros(0)
    return float(evaluate(e, b.w, y, b.t))


# ---------------------------------------------------------------------------
# folding constructors used by diff/substitute

def _c(e: Expr) -> float | None:
    return e.value if isinstance(e, Const) else None


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return Const(0.0)
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    return Mul(a, b)


def neg(a: Expr) -> Expr:
    ca = _c(a)
    if ca is not None:
        return Const(-ca)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def func(name: str, a: Expr) -> Expr:
    ca = _c(a)
    if ca is not None:
        return Const(float(_FUNCS[name](ca)))
    return Func(name, a)


# ---------------------------------------------------------------------------
# differentiation

def diff_expr(e: Expr, var: VarId) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to ``var``.

    ``var`` is ``'w'``, ``'t'``, ``'y[j]'`` or ``('y', j)``. The result is
    constant-folded; ``cos`` is written as ``sin(u + pi/2)`` to stay inside
    the grammar.
    """
    key = _var_key(var)
    return _diff(e, key, {})


def _diff(e: Expr, key, memo: dict) -> Expr:
    hit = memo.get(id(e))
    if hit is not None:
        return hit[1]
    if isinstance(e, (Add, Sub)):
        base, terms = _spine(e)
        acc = _diff(base, key, memo)
        for op, term in terms:
            d = _diff(term, key, memo)
            acc = add(acc, d) if op == "+" else sub(acc, d)
        out = acc
    elif isinstance(e, Const):
        out = Const(0.0)
    elif isinstance(e, W):
        out = Const(1.0 if key == "w" else 0.0)
    elif isinstance(e, T):
        out = Const(1.0 if key == "t" else 0.0)
    elif isinstance(e, Y):
        out = Const(1.0 if key == ("y", e.index) else 0.0)
    elif isinstance(e, Neg):
        out = neg(_diff(e.arg, key, memo))
    elif isinstance(e, Mul):
        dl = _diff(e.left, key, memo)
        dr = _diff(e.right, key, memo)
        out = add(mul(dl, e.right), mul(e.left, dr))
    elif isinstance(e, Func):
        du = _diff(e.arg, key, memo)
        if is_zero(du):
            out = Const(0.0)
        elif e.name == "tanh":
            th = func("tanh", e.arg)
            out = mul(sub(Const(1.0), mul(th, th)), du)
        elif e.name == "sin":
            out = mul(func("sin", add(e.arg, Const(_HALF_PI))), du)
        elif e.name == "exp":
            out = mul(func("exp", e.arg), du)
        else:
            raise TypeError(e.name)
    else:
        raise TypeError(f"not an expression node: {e!r}")
    memo[id(e)] = (e, out)
    return out


# ---------------------------------------------------------------------------
# substitution

def substitute(e: Expr, mapping: Mapping[VarId, Expr]) -> Expr:
    """Replace free variables; keys as accepted by :func:`diff_expr`."""
    table = {_var_key(k): v for k, v in mapping.items()}
    return _subst(e, table, {})


def _subst(e: Expr, table: dict, memo: dict) -> Expr:
    hit = memo.get(id(e))
    if hit is not None:
        return hit[1]
    if isinstance(e, (Add, Sub)):
        base, terms = _spine(e)
        acc = _subst(base, table, memo)
        for op, term in terms:
            v = _subst(term, table, memo)
            acc = add(acc, v) if op == "+" else sub(acc, v)
        out = acc
    elif isinstance(e, Const):
        out = e
    elif isinstance(e, W):
        out = table.get("w", e)
    elif isinstance(e, T):
        out = table.get("t", e)
    elif isinstance(e, Y):
        out = table.get(("y", e.index), e)
    elif isinstance(e, Neg):
        out = neg(_subst(e.arg, table, memo))
    elif isinstance(e, Mul):
        out = mul(_subst(e.left, table, memo), _subst(e.right, table, memo))
    elif isinstance(e, Func):
        out = func(e.name, _subst(e.arg, table, memo))
    else:
        raise TypeError(f"not an expression node: {e!r}")
    memo[id(e)] = (e, out)
    return out


# ---------------------------------------------------------------------------
# canonical printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Neg: 3}


def _prec(e: Expr) -> int:
    if isinstance(e, Const) and e.value < 0:
        return 3
    return _PREC.get(type(e), 4)


def to_text(e: Expr) -> str:
    """Canonical text; ``parse_expr(to_text(e))`` rebuilds parser output exactly."""
    if isinstance(e, (Add, Sub)):
        base, terms = _spine(e)
        parts = [to_text(base)]
        for op, term in terms:
            s = to_text(term)
            if _prec(term) <= 1:
                s = f"({s})"
            parts.append(f" {op} {s}")
        return "".join(parts)
    if isinstance(e, Const):
        s = repr(float(e.value))
        return f"({s})" if e.value < 0 else s
    if isinstance(e, W):
        return "w"
    if isinstance(e, T):
        return "t"
    if isinstance(e, Y):
        return f"y[{e.index}]"
    if isinstance(e, Mul):
        left, right = to_text(e.left), to_text(e.right)
        if _prec(e.left) < 2:
            left = f"({left})"
        if _prec(e.right) <= 2:
            right = f"({right})" if _prec(e.right) < 2 or isinstance(e.right, Mul) else right
        return f"{left}*{right}"
    if isinstance(e, Neg):
        s = to_text(e.arg)
        if _prec(e.arg) < 4:
            s = f"({s})"
        return f"-{s}"
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")
