"""Small expression language for vector fields, measurements and eigenfunctions.

Expressions are immutable trees over 1-based state variables ``x1 .. xn``.
The grammar is deliberately tiny::

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := atom ("^" ["-"] integer)? | "-" factor
    atom   := number | "x" integer | func "(" expr ")" | "(" expr ")"
    func   := "sin" | "cos" | "sqrt" | "abs"

Equality between expressions is structural; semantic equality is checked
pointwise on random samples (see :func:`pointwise_equal`).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, ClassVar, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Pow", "Neg",
    "Sin", "Cos", "Sqrt", "Abs", "ExprVector",
    "ExprSyntaxError", "EvaluationError",
    "parse", "to_text", "evaluate", "evaluate_many", "differentiate",
    "gradient", "lie_derivative", "substitute", "permute_vars",
    "max_var_index", "node_count", "compile_exprs", "pointwise_equal",
]


class ExprSyntaxError(ValueError):
    """Raised for malformed source text or out-of-range variables."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EvaluationError(ArithmeticError):
    """Evaluation fault (division by zero, sqrt of a negative, ...)."""

    def __init__(self, message: str, subtree: "Expr | None" = None, point=None):
        detail = message
        if subtree is not None:
            detail += f" in subexpression '{to_text(subtree)}'"
        super().__init__(detail)
        self.subtree = subtree
        self.point = point


class Expr:
    """Base class of expression nodes.

    Arithmetic operators build raw nodes (no simplification), which keeps
    hand-written models printing the way they were written.
    """

    __slots__ = ()

    def __add__(self, other): return Add(self, _lift(other))
    def __radd__(self, other): return Add(_lift(other), self)
    def __sub__(self, other): return Sub(self, _lift(other))
    def __rsub__(self, other): return Sub(_lift(other), self)
    def __mul__(self, other): return Mul(self, _lift(other))
    def __rmul__(self, other): return Mul(_lift(other), self)
    def __truediv__(self, other): return Div(self, _lift(other))
    def __rtruediv__(self, other): return Div(_lift(other), self)
    def __neg__(self): return Neg(self)

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
            raise TypeError("exponents must be integers")
        return Pow(self, int(k))

    def __str__(self):
        return to_text(self)


def _lift(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
        return Const(float(value))
    raise TypeError(f"cannot use {type(value).__name__} in an expression")


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("constants must be finite")


@dataclass(frozen=True)
class Var(Expr):
    index: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("variable indices are 1-based")


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class _Func(Expr):
    arg: Expr
    name: ClassVar[str] = ""


@dataclass(frozen=True)
class Sin(_Func):
    name: ClassVar[str] = "sin"


@dataclass(frozen=True)
class Cos(_Func):
    name: ClassVar[str] = "cos"


@dataclass(frozen=True)
class Sqrt(_Func):
    name: ClassVar[str] = "sqrt"


@dataclass(frozen=True)
class Abs(_Func):
    name: ClassVar[str] = "abs"


_FUNCS = {"sin": Sin, "cos": Cos, "sqrt": Sqrt, "abs": Abs}
_BINARY = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


@dataclass(frozen=True)
class ExprVector:
    """Ordered components over a state of dimension ``dim``."""

    components: tuple[Expr, ...]
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        for comp in self.components:
            if max_var_index(comp) > self.dim:
                raise ValueError(
                    f"component '{to_text(comp)}' uses a variable beyond x{self.dim}")

    @classmethod
    def parse(cls, sources: Iterable[str], dim: int) -> "ExprVector":
        return cls(tuple(parse(s, dim) for s in sources), dim)

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def texts(self) -> list[str]:
        return [to_text(c) for c in self.components]


# ---------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<var>x(?P<vidx>\d+))
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "vidx":
            kind = "var"
        text = m.group()
        if kind == "ws":
            for off, ch in enumerate(text):
                if ch == "\n":
                    line += 1
                    line_start = pos + off + 1
        else:
            tokens.append(_Token(kind, text, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, n: int | None):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.n = n

    def peek(self, offset: int = 0) -> _Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok.line, tok.col)

    def expect_op(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            found = tok.text or "end of input"
            self.fail(f"expected '{text}' but found '{found}'")
        return self.take()

    def parse(self) -> Expr:
        if self.peek().kind == "eof":
            self.fail("empty expression")
        node = self.expr()
        if self.peek().kind != "eof":
            self.fail(f"unexpected '{self.peek().text}'")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            rhs = self.factor()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def factor(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            nxt, after = self.peek(), self.peek(1)
            # "-2.5" is a negative literal unless it is the base of a power
            if nxt.kind == "number" and not (after.kind == "op" and after.text == "^"):
                self.take()
                return Const(-float(nxt.text))
            return Neg(self.factor())
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            sign = 1
            if self.peek().kind == "op" and self.peek().text == "-":
                self.take()
                sign = -1
            exp_tok = self.peek()
            if exp_tok.kind != "number" or not exp_tok.text.isdigit():
                self.fail("exponent must be an integer literal")
            self.take()
            return Pow(base, sign * int(exp_tok.text))
        return base

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "number":
            self.take()
            return Const(float(tok.text))
        if tok.kind == "var":
            self.take()
            idx = int(tok.text[1:])
            if idx < 1:
                self.fail("variable indices start at x1", tok)
            if self.n is not None and idx > self.n:
                self.fail(f"variable x{idx} out of range for state dimension {self.n}", tok)
            return Var(idx)
        if tok.kind == "name":
            if tok.text not in _FUNCS:
                self.fail(f"unknown function or name '{tok.text}'", tok)
            self.take()
            self.expect_op("(")
            arg = self.expr()
            self.expect_op(")")
            return _FUNCS[tok.text](arg)
        if tok.kind == "op" and tok.text == "(":
            self.take()
            node = self.expr()
            self.expect_op(")")
            return node
        found = tok.text or "end of input"
        self.fail(f"unexpected '{found}'")


def parse(source: str, n: int | None = None) -> Expr:
    """Parse ``source`` into an expression tree.

    ``n`` is the state dimension; variables beyond it are rejected.
    """
    return _Parser(source, n).parse()


# --------------------------------------------------------------- printing

_LEVEL = {Add: 1, Sub: 1, Mul: 2, Div: 2}


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _level(e: Expr) -> int:
    """1: sum, 2: product, 3: factor (negation, power, negative literal), 4: atom."""
    if type(e) in _LEVEL:
        return _LEVEL[type(e)]
    if isinstance(e, (Neg, Pow)):
        return 3
    if isinstance(e, Const) and math.copysign(1.0, e.value) < 0:
        return 3
    return 4


def to_text(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_text(e)) == e`` structurally."""
    if isinstance(e, Const):
        v = e.value
        if math.copysign(1.0, v) < 0:
            return "-" + _fmt_number(-v)
        return _fmt_number(v)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, _Func):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        # a bare positive literal after "-" would re-parse as a negative constant
        if _level(e.arg) < 3 or isinstance(e.arg, Const) and _level(e.arg) == 4:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(e, Pow):
        base = to_text(e.base)
        if _level(e.base) < 4:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if type(e) in _BINARY:
        lvl = _LEVEL[type(e)]
        left, right = to_text(e.left), to_text(e.right)
        if _level(e.left) < lvl:
            left = f"({left})"
        if _level(e.right) <= lvl:
            right = f"({right})"
        return f"{left} {_BINARY[type(e)]} {right}"
    raise TypeError(f"not an expression: {e!r}")


# ------------------------------------------------------------- evaluation

def _walk(e: Expr, x: Sequence[float], point) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x[e.index - 1]
    if isinstance(e, Add):
        return _walk(e.left, x, point) + _walk(e.right, x, point)
    if isinstance(e, Sub):
        return _walk(e.left, x, point) - _walk(e.right, x, point)
    if isinstance(e, Mul):
        return _walk(e.left, x, point) * _walk(e.right, x, point)
    if isinstance(e, Div):
        num = _walk(e.left, x, point)
        den = _walk(e.right, x, point)
        if den == 0.0:
            raise EvaluationError("division by zero", e, point)
        return num / den
    if isinstance(e, Pow):
        base = _walk(e.base, x, point)
        if base == 0.0 and e.exponent < 0:
            raise EvaluationError("negative power of zero", e, point)
        try:
            return base ** e.exponent
        except OverflowError as exc:
            raise EvaluationError("overflow", e, point) from exc
    if isinstance(e, Neg):
        return -_walk(e.arg, x, point)
    if isinstance(e, Sin):
        return math.sin(_walk(e.arg, x, point))
    if isinstance(e, Cos):
        return math.cos(_walk(e.arg, x, point))
    if isinstance(e, Sqrt):
        v = _walk(e.arg, x, point)
        if v < 0.0:
            raise EvaluationError("square root of a negative number", e, point)
        return math.sqrt(v)
    if isinstance(e, Abs):
        return abs(_walk(e.arg, x, point))
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, x: Sequence[float]) -> float:
    """Evaluate ``e`` at the point ``x`` (``x[0]`` is ``x1``)."""
    needed = max_var_index(e)
    if len(x) < needed:
        raise ValueError(f"point has {len(x)} coordinates but expression uses x{needed}")
    pt = [float(v) for v in x]
    return _walk(e, pt, tuple(pt))


def evaluate_many(exprs: Sequence[Expr] | Expr, X: np.ndarray) -> np.ndarray:
    """Vectorised evaluation on the rows of ``X`` (shape ``(m, n)``).

    Returns shape ``(m,)`` for a single expression, ``(m, k)`` for a list.
    """
    single = isinstance(exprs, Expr)
    items = [exprs] if single else list(exprs)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    fn = compile_exprs(items, backend="numpy")
    out = fn(X)
    return out[:, 0] if single else out


# ---------------------------------------------------------- simplifiers

def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def s_add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def s_sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return s_neg(b)
    return Sub(a, b)


def s_mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return s_neg(b)
    if _is_const(b, -1.0):
        return s_neg(a)
    return Mul(a, b)


def s_div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return Const(0.0)
    return Div(a, b)


def s_neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value if a.value != 0.0 else 0.0)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def s_pow(a: Expr, k: int) -> Expr:
    if k == 0:
        return Const(1.0)
    if k == 1:
        return a
    if isinstance(a, Const) and not (a.value == 0.0 and k < 0):
        return Const(a.value ** k)
    return Pow(a, k)


# -------------------------------------------------------- differentiation

def differentiate(e: Expr, i: int, _memo: dict | None = None) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``x_i``.

    Only constant folding and zero/one elimination are applied. ``abs`` is
    differentiated as ``u / abs(u) * u'``, so its kink surfaces as an
    evaluation fault at ``u = 0`` rather than at construction.
    """
    if i < 1:
        raise ValueError("variable indices are 1-based")
    memo = {} if _memo is None else _memo
    return _diff(e, i, memo)


def _diff(e: Expr, i: int, memo: dict) -> Expr:
    key = id(e)
    hit = memo.get(key)
    if hit is not None and hit[0] is e:
        return hit[1]
    d = _diff_node(e, i, memo)
    memo[key] = (e, d)
    return d


def _diff_node(e: Expr, i: int, memo: dict) -> Expr:
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.index == i else 0.0)
    if isinstance(e, Add):
        return s_add(_diff(e.left, i, memo), _diff(e.right, i, memo))
    if isinstance(e, Sub):
        return s_sub(_diff(e.left, i, memo), _diff(e.right, i, memo))
    if isinstance(e, Mul):
        du, dv = _diff(e.left, i, memo), _diff(e.right, i, memo)
        return s_add(s_mul(du, e.right), s_mul(e.left, dv))
    if isinstance(e, Div):
        du, dv = _diff(e.left, i, memo), _diff(e.right, i, memo)
        if _is_const(dv, 0.0):
            return s_div(du, e.right)
        return s_div(s_sub(s_mul(du, e.right), s_mul(e.left, dv)), s_pow(e.right, 2))
    if isinstance(e, Pow):
        du = _diff(e.base, i, memo)
        if _is_const(du, 0.0):
            return Const(0.0)
        return s_mul(s_mul(Const(float(e.exponent)), s_pow(e.base, e.exponent - 1)), du)
    if isinstance(e, Neg):
        return s_neg(_diff(e.arg, i, memo))
    du = _diff(e.arg, i, memo)
    if _is_const(du, 0.0):
        return Const(0.0)
    if isinstance(e, Sin):
        return s_mul(Cos(e.arg), du)
    if isinstance(e, Cos):
        return s_mul(s_neg(Sin(e.arg)), du)
    if isinstance(e, Sqrt):
        return s_div(du, s_mul(Const(2.0), e))
    if isinstance(e, Abs):
        return s_mul(s_div(e.arg, e), du)
    raise TypeError(f"not an expression: {e!r}")


def gradient(e: Expr, n: int) -> ExprVector:
    return ExprVector(tuple(differentiate(e, i) for i in range(1, n + 1)), n)


def lie_derivative(h: Expr, f: ExprVector) -> Expr:
    """Directional derivative of ``h`` along the vector field ``f``."""
    if len(f) != f.dim:
        raise ValueError(f"vector field has {len(f)} components for dimension {f.dim}")
    if max_var_index(h) > f.dim:
        raise ValueError(f"expression uses x{max_var_index(h)} but the field has dimension {f.dim}")
    total: Expr = Const(0.0)
    for i, fi in enumerate(f.components, start=1):
        total = s_add(total, s_mul(differentiate(h, i), fi))
    return total


# ----------------------------------------------------------- utilities

def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Const, Var)):
        return ()
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    if isinstance(e, Pow):
        return (e.base,)
    return (e.arg,)


def _unique_nodes(e: Expr):
    seen: set[int] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(_children(node))


def max_var_index(e: Expr) -> int:
    return max((node.index for node in _unique_nodes(e) if isinstance(node, Var)), default=0)


def node_count(e: Expr) -> int:
    """Number of distinct node objects (shared subtrees counted once)."""
    return sum(1 for _ in _unique_nodes(e))


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace ``Var(i)`` by ``mapping[i]`` wherever ``i`` is a key."""
    memo: dict[int, Expr] = {}

    def go(node: Expr) -> Expr:
        if id(node) in memo:
            return memo[id(node)]
        if isinstance(node, Var):
            out = mapping.get(node.index, node)
        elif isinstance(node, Const):
            out = node
        elif isinstance(node, (Add, Sub, Mul, Div)):
            out = type(node)(go(node.left), go(node.right))
        elif isinstance(node, Pow):
            out = Pow(go(node.base), node.exponent)
        else:
            out = type(node)(go(node.arg))
        memo[id(node)] = out
        return out

    return go(e)


def permute_vars(e: Expr, source_of: Sequence[int]) -> Expr:
    """Return ``e`` with ``x_k`` replaced by ``x_{source_of[k-1]}``."""
    return substitute(e, {k: Var(int(src)) for k, src in enumerate(source_of, start=1)})


# ------------------------------------------------------------ compilation

_NP_FUNCS = {"sin": "_np.sin", "cos": "_np.cos", "sqrt": "_np.sqrt", "abs": "_np.abs"}
_MATH_FUNCS = {"sin": "_math.sin", "cos": "_math.cos", "sqrt": "_math.sqrt", "abs": "abs"}


def _codegen(exprs: Sequence[Expr], backend: str) -> str:
    lines: list[str] = []
    by_key: dict[tuple, str] = {}
    by_id: dict[int, tuple[Expr, str]] = {}
    funcs = _NP_FUNCS if backend == "numpy" else _MATH_FUNCS

    def name_of(e: Expr) -> str:
        hit = by_id.get(id(e))
        if hit is not None and hit[0] is e:
            return hit[1]
        # post-order without recursion so deep trees compile
        stack = [(e, False)]
        while stack:
            node, ready = stack.pop()
            hit = by_id.get(id(node))
            if hit is not None and hit[0] is node:
                continue
            kids = _children(node)
            if not ready:
                stack.append((node, True))
                stack.extend((k, False) for k in kids)
                continue
            kid_names = tuple(by_id[id(k)][1] for k in kids)
            if isinstance(node, Const):
                key = ("c", repr(node.value))
                src = repr(node.value)
            elif isinstance(node, Var):
                key = ("v", node.index)
                src = f"x[{node.index - 1}]"
            elif isinstance(node, Pow):
                key = ("pow", node.exponent) + kid_names
                src = f"{kid_names[0]} ** {node.exponent}"
                if backend == "numpy":
                    src = f"_np.power({kid_names[0]}, {float(node.exponent)!r})"
            elif type(node) in _BINARY:
                key = (type(node).__name__,) + kid_names
                src = f"{kid_names[0]} {_BINARY[type(node)]} {kid_names[1]}"
            elif isinstance(node, Neg):
                key = ("neg",) + kid_names
                src = f"-{kid_names[0]}"
            else:
                key = (node.name,) + kid_names
                src = f"{funcs[node.name]}({kid_names[0]})"
            name = by_key.get(key)
            if name is None:
                name = f"t{len(by_key)}"
                by_key[key] = name
                lines.append(f"    {name} = {src}")
            by_id[id(node)] = (node, name)
        return by_id[id(e)][1]

    outs = [name_of(e) for e in exprs]
    body = "\n".join(lines)
    if backend == "numpy":
        ret = "    return _stack([" + ", ".join(outs) + "], x)"
    else:
        ret = "    return (" + "".join(o + ", " for o in outs) + ")"
    return "def _compiled(x):\n" + (body + "\n" if body else "") + ret + "\n"


def _np_stack(cols, x):
    m = x[0].shape[0] if len(x) else 0
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), (m,)) for c in cols], axis=1) \
        if cols else np.zeros((m, 0))


def compile_exprs(exprs: Sequence[Expr], backend: str = "math") -> Callable:
    """Compile expressions into a fast callable.

    ``backend="math"`` gives ``f(x) -> tuple`` on one point (python floats);
    ``backend="numpy"`` gives ``f(X) -> array (m, k)`` on the rows of ``X``.
    Faults are re-raised as :class:`EvaluationError` naming the subtree.
    """
    exprs = list(exprs)
    if backend not in ("math", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    source = _codegen(exprs, backend)
    namespace = {"_math": math, "_np": np, "_stack": _np_stack}
    exec(compile(source, "<koopobs-expr>", "exec"), namespace)
    raw = namespace["_compiled"]
    needed = max((max_var_index(e) for e in exprs), default=0)

    if backend == "math":
        def fn(x):
            try:
                return raw(x)
            except (ZeroDivisionError, ValueError, OverflowError):
                _locate_fault(exprs, x)
                raise
        fn.n_vars = needed
        return fn

    def fn_np(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] < needed:
            raise ValueError(f"points have {X.shape[1]} coordinates but expressions use x{needed}")
        cols = [X[:, j] for j in range(X.shape[1])]
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                return raw(cols)
        except FloatingPointError:
            for row in X:
                _locate_fault(exprs, row)
            raise
    fn_np.n_vars = needed
    return fn_np


def _locate_fault(exprs: Sequence[Expr], x) -> None:
    pt = [float(v) for v in x]
    for e in exprs:
        _walk(e, pt, tuple(pt))


def pointwise_equal(a: Expr, b: Expr, n: int, samples: int = 100, box=(-2.0, 2.0),
                    rtol: float = 1e-9, seed: int = 0) -> bool:
    """Check ``a == b`` at random points of ``box^n``."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(box[0], box[1], size=(samples, n))
    va, vb = evaluate_many([a, b], X).T
    return bool(np.all(np.abs(va - vb) <= rtol * (1.0 + np.abs(va))))
