"""Closed-form C1 expressions: parsing, vectorised evaluation and forward-mode derivatives.

Expressions are immutable trees over variables ``x1 .. xd``.  Evaluation works on
whole batches of points at once; derivatives are accumulated with dual numbers
whose tangent part carries an arbitrary seed, so composite maps (a cell
parametrisation feeding a graph map, say) differentiate through the chain rule
without any symbolic manipulation.

The aliases ``x, y, z`` (and ``t, u, v, w``) name the first variables, ``pi`` is a
constant, ``^`` raises to an integer power.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "DomainError",
    "ExprSyntaxError",
    "Dual",
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "parse_expr",
    "as_expr",
    "VectorMap",
    "eval_map",
    "derivative_matrix",
]

FUNCTIONS = ("sqrt", "sin", "cos", "exp", "abs", "min", "max")
ALIASES = {"x": 0, "y": 1, "z": 2, "t": 0, "u": 0, "v": 1, "w": 2}
_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")


class DomainError(ValueError):
    """Evaluation left the domain of an expression (sqrt of a negative, division by zero)."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = None if witness is None else np.asarray(witness, dtype=float).tolist()


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, line: int = 1, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


# --------------------------------------------------------------------------- duals


class Dual:
    """Batched dual number: ``val`` has shape (N,), ``grad`` has shape (k, N)."""

    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = val
        self.grad = grad

    @classmethod
    def seed(cls, X: np.ndarray) -> list["Dual"]:
        """One dual per column of ``X`` (shape (N, d)) with identity tangents."""
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        eye = np.eye(d)
        return [cls(X[:, i].copy(), np.repeat(eye[:, i : i + 1], n, axis=1)) for i in range(d)]

    @classmethod
    def constant(cls, c: float, n: int, k: int) -> "Dual":
        return cls(np.full(n, float(c)), np.zeros((k, n)))

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.grad + other.grad)
        return Dual(self.val + other, self.grad)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.grad - other.grad)
        return Dual(self.val - other, self.grad)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.grad)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.grad * other.val + other.grad * self.val)
        return Dual(self.val * other, self.grad * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, (self.grad - other.grad * val) * inv)
        return Dual(self.val / other, self.grad / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -self.grad * (val * inv))

    def __pow__(self, k: int):
        if k == 0:
            return Dual(np.ones_like(self.val), np.zeros_like(self.grad))
        if k == 1:
            return self
        return Dual(self.val**k, self.grad * (k * self.val ** (k - 1)))

    def sqrt(self):
        r = np.sqrt(self.val)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = self.grad * (0.5 / r)
        # locally constant arguments (e.g. clamped by max) stay differentiable at 0
        return Dual(r, np.where(self.grad == 0, 0.0, g))

    def sin(self):
        return Dual(np.sin(self.val), self.grad * np.cos(self.val))

    def cos(self):
        return Dual(np.cos(self.val), self.grad * -np.sin(self.val))

    def exp(self):
        ev = np.exp(self.val)
        return Dual(ev, self.grad * ev)

    def abs(self):
        # left branch at the kink
        sign = np.where(self.val > 0, 1.0, -1.0)
        return Dual(np.abs(self.val), self.grad * sign)


def _as_dual(a, like: Dual) -> Dual:
    if isinstance(a, Dual):
        return a
    return Dual(np.full_like(like.val, a), np.zeros_like(like.grad))


def _select(mask, a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(mask, a, b)
    like = a if isinstance(a, Dual) else b
    a, b = _as_dual(a, like), _as_dual(b, like)
    return Dual(np.where(mask, a.val, b.val), np.where(mask, a.grad, b.grad))


def _value(a):
    return a.val if isinstance(a, Dual) else a


def _call(name: str, args):
    if name == "min":
        out = args[0]
        for b in args[1:]:
            out = _select(_value(out) <= _value(b), out, b)
        return out
    if name == "max":
        out = args[0]
        for b in args[1:]:
            out = _select(_value(out) >= _value(b), out, b)
        return out
    (a,) = args
    if isinstance(a, Dual):
        return getattr(a, name)()
    return getattr(np, name)(a)


# --------------------------------------------------------------------------- expressions


class Expr:
    """Base class of expression nodes; supports arithmetic for programmatic construction."""

    precedence = 5

    def _eval(self, env):
        raise NotImplementedError

    def substitute(self, mapping: dict[int, "Expr"]) -> "Expr":
        raise NotImplementedError

    def variables(self) -> frozenset[int]:
        raise NotImplementedError

    # construction helpers --------------------------------------------------
    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __neg__(self):
        if isinstance(self, Const):
            return Const(-self.value)
        return Neg(self)

    def __pow__(self, k: int):
        return Pow(self, int(k))

    # evaluation ------------------------------------------------------------
    def evaluate(self, X) -> np.ndarray:
        """Values at the rows of ``X`` (shape (N, d)); NaN marks points outside the domain."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        env = [X[:, i] for i in range(X.shape[1])]
        with np.errstate(all="ignore"):
            out = self._eval(env)
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    def dual(self, inputs: Sequence[Dual]) -> Dual:
        with np.errstate(all="ignore"):
            out = self._eval(list(inputs))
        return _as_dual(out, inputs[0]) if inputs else out

    def __str__(self) -> str:
        return self.to_str()

    def to_str(self) -> str:
        raise NotImplementedError

    def _wrap(self, child: "Expr", strict: bool = False) -> str:
        s = child.to_str()
        if child.precedence < self.precedence or (strict and child.precedence == self.precedence):
            return f"({s})"
        return s


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def _eval(self, env):
        return self.value

    def substitute(self, mapping):
        return self

    def variables(self):
        return frozenset()

    def to_str(self):
        s = repr(float(self.value))
        return f"({s})" if self.value < 0 or s.startswith("-") else s


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int

    def _eval(self, env):
        if self.index >= len(env):
            raise DomainError(f"variable x{self.index + 1} not bound")
        return env[self.index]

    def substitute(self, mapping):
        return mapping.get(self.index, self)

    def variables(self):
        return frozenset({self.index})

    def to_str(self):
        return f"x{self.index + 1}"


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    precedence = 3

    def _eval(self, env):
        return -self.arg._eval(env)

    def substitute(self, mapping):
        return Neg(self.arg.substitute(mapping))

    def variables(self):
        return self.arg.variables()

    def to_str(self):
        return "-" + self._wrap(self.arg)


@dataclass(frozen=True, eq=True)
class _Binary(Expr):
    left: Expr
    right: Expr
    symbol = "?"

    def substitute(self, mapping):
        return type(self)(self.left.substitute(mapping), self.right.substitute(mapping))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def to_str(self):
        strict = isinstance(self, (Sub, Div))
        return f"{self._wrap(self.left)} {self.symbol} {self._wrap(self.right, strict)}"


class Add(_Binary):
    precedence = 1
    symbol = "+"

    def _eval(self, env):
        return self.left._eval(env) + self.right._eval(env)


class Sub(_Binary):
    precedence = 1
    symbol = "-"

    def _eval(self, env):
        return self.left._eval(env) - self.right._eval(env)


class Mul(_Binary):
    precedence = 2
    symbol = "*"

    def _eval(self, env):
        return self.left._eval(env) * self.right._eval(env)


class Div(_Binary):
    precedence = 2
    symbol = "/"

    def _eval(self, env):
        den = self.right._eval(env)
        if not isinstance(den, (Dual, np.ndarray)) and den == 0:
            return math.nan
        return self.left._eval(env) / den


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = 4

    def _eval(self, env):
        b = self.base._eval(env)
        if self.exponent < 0:
            return 1.0 / (b ** (-self.exponent)) if isinstance(b, Dual) else np.float64(1.0) / (
                np.asarray(b, dtype=float) ** (-self.exponent)
            )
        if isinstance(b, Dual):
            return b**self.exponent
        return np.asarray(b, dtype=float) ** self.exponent

    def substitute(self, mapping):
        return Pow(self.base.substitute(mapping), self.exponent)

    def variables(self):
        return self.base.variables()

    def to_str(self):
        k = str(self.exponent) if self.exponent >= 0 else f"({self.exponent})"
        return f"{self._wrap(self.base, strict=True)}^{k}"


@dataclass(frozen=True, eq=True)
class Call(Expr):
    name: str
    args: tuple[Expr, ...]

    def _eval(self, env):
        vals = [a._eval(env) for a in self.args]
        if not any(isinstance(v, (Dual, np.ndarray)) for v in vals):
            vals = [np.float64(v) for v in vals]
        return _call(self.name, vals)

    def substitute(self, mapping):
        return Call(self.name, tuple(a.substitute(mapping) for a in self.args))

    def variables(self):
        out = frozenset()
        for a in self.args:
            out |= a.variables()
        return out

    def to_str(self):
        return f"{self.name}({', '.join(a.to_str() for a in self.args)})"


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse_expr(value)
    if isinstance(value, (int, float, np.floating, np.integer)):
        v = float(value)
        if not math.isfinite(v):
            raise ValueError(f"non-finite constant {value!r}")
        return Const(v)
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


# --------------------------------------------------------------------------- parsing


def parse_expr(text: str) -> Expr:
    """Parse an infix expression string (``^`` is integer power)."""
    if not isinstance(text, str):
        return as_expr(text)
    source = text.replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        line = exc.lineno or 1
        raise ExprSyntaxError(f"cannot parse {text!r}: {exc.msg}", line, _column(text, line, (exc.offset or 1) - 1)) from None
    return _convert(tree.body, text)


def _column(text: str, line: int, offset: int) -> int:
    """1-based column in ``text`` of a 0-based offset into the rewritten source line."""
    lines = text.split("\n")
    original = lines[line - 1] if 0 < line <= len(lines) else ""
    pos = 0
    col = 0
    for ch in original:
        step = 2 if ch == "^" else 1
        if pos + step > offset:
            break
        pos += step
        col += 1
    return col + 1


def _fail(node, text, message):
    line = getattr(node, "lineno", 1)
    raise ExprSyntaxError(f"{message} in {text!r}", line, _column(text, line, getattr(node, "col_offset", 0)))


def _int_exponent(node, text) -> int:
    sign = 1
    while isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        sign *= -1 if isinstance(node.op, ast.USub) else 1
        node = node.operand
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and float(node.value).is_integer():
        return sign * int(node.value)
    _fail(node, text, "exponent must be an integer literal")


_BINOPS = {ast.Add: Add, ast.Sub: Sub, ast.Mult: Mul, ast.Div: Div}


def _convert(node, text) -> Expr:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            _fail(node, text, f"unsupported literal {node.value!r}")
        return Const(float(node.value))
    if isinstance(node, ast.Name):
        name = node.id
        if name == "pi":
            return Const(math.pi)
        if name in ALIASES:
            return Var(ALIASES[name])
        m = _VAR_RE.match(name)
        if m:
            return Var(int(m.group(1)) - 1)
        _fail(node, text, f"unknown name {name!r}")
    if isinstance(node, ast.UnaryOp):
        if isinstance(node.op, ast.UAdd):
            return _convert(node.operand, text)
        if isinstance(node.op, ast.USub):
            inner = _convert(node.operand, text)
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        _fail(node, text, "unsupported unary operator")
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            return Pow(_convert(node.left, text), _int_exponent(node.right, text))
        cls = _BINOPS.get(type(node.op))
        if cls is None:
            _fail(node, text, "unsupported operator")
        return cls(_convert(node.left, text), _convert(node.right, text))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
            _fail(node, text, "unsupported function call")
        name = node.func.id
        args = tuple(_convert(a, text) for a in node.args)
        if name in ("min", "max"):
            if len(args) < 2:
                _fail(node, text, f"{name} needs at least two arguments")
        elif len(args) != 1:
            _fail(node, text, f"{name} takes one argument")
        return Call(name, args)
    _fail(node, text, f"unsupported syntax {type(node).__name__}")


# --------------------------------------------------------------------------- vector maps


@dataclass(frozen=True)
class VectorMap:
    """A map R^d -> R^m given by closed-form components, optionally with a bound on |Df|."""

    components: tuple[Expr, ...]
    domain_dim: int
    declared_bound: float | None = None

    def __post_init__(self):
        comps = tuple(as_expr(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        for c in comps:
            if c.variables() and max(c.variables()) >= self.domain_dim:
                raise ValueError(f"component {c} uses a variable beyond x{self.domain_dim}")

    @classmethod
    def parse(cls, texts: Sequence[str], domain_dim: int, bound: float | None = None) -> "VectorMap":
        return cls(tuple(parse_expr(t) if isinstance(t, str) else as_expr(t) for t in texts), domain_dim, bound)

    @classmethod
    def identity(cls, d: int) -> "VectorMap":
        return cls(tuple(Var(i) for i in range(d)), d)

    @property
    def codomain_dim(self) -> int:
        return len(self.components)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        if X2.shape[1] != self.domain_dim:
            raise ValueError(f"expected points of dimension {self.domain_dim}, got {X2.shape[1]}")
        out = np.stack([c.evaluate(X2) for c in self.components], axis=1) if self.components else np.zeros((len(X2), 0))
        return out[0] if single else out

    def dual(self, inputs: Sequence[Dual]) -> list[Dual]:
        return [c.dual(inputs) for c in self.components]

    def jacobian(self, X) -> np.ndarray:
        """Derivative matrices at the rows of ``X``: shape (N, m, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.domain_dim == 0:
            return np.zeros((len(X), self.codomain_dim, 0))
        seeds = Dual.seed(X)
        outs = self.dual(seeds)
        if not outs:
            return np.zeros((len(X), 0, self.domain_dim))
        return np.stack([o.grad.T for o in outs], axis=1)

    def compose(self, inner: "VectorMap") -> "VectorMap":
        """``self`` after ``inner``."""
        if inner.codomain_dim != self.domain_dim:
            raise ValueError("dimension mismatch in composition")
        mapping = dict(enumerate(inner.components))
        return VectorMap(tuple(c.substitute(mapping) for c in self.components), inner.domain_dim)

    def with_bound(self, bound: float | None) -> "VectorMap":
        return VectorMap(self.components, self.domain_dim, bound)

    def texts(self) -> list[str]:
        return [c.to_str() for c in self.components]


def eval_map(F: VectorMap, u) -> np.ndarray:
    """Evaluate ``F`` at one point; raises :class:`DomainError` outside the domain."""
    u = np.asarray(u, dtype=float).reshape(-1)
    val = F(u)
    if not np.all(np.isfinite(val)):
        raise DomainError(f"evaluation outside the domain at {u.tolist()}", u)
    return val


def derivative_matrix(F: VectorMap, u) -> np.ndarray:
    """The m x d derivative of ``F`` at ``u`` by forward accumulation."""
    u = np.asarray(u, dtype=float).reshape(1, -1)
    eval_map(F, u[0])
    D = F.jacobian(u)[0]
    if not np.all(np.isfinite(D)):
        raise DomainError(f"not differentiable at {u[0].tolist()}", u[0])
    return D
