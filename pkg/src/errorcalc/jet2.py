"""Second-order jets and the test-function algebra C^2_b.

A :class:`Jet2` holds value, gradient and Hessian of a function at one point or
at a batch of points (leading axes).  Test functions are small expression trees
over the primitives ``+ - * /``, ``sin cos exp sq win`` and coordinates
``x0 .. x{d-1}``; they evaluate either to plain values (fast path for Monte
Carlo) or to jets by forward truncated-Taylor arithmetic.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

Array = np.ndarray


def _outer(a: Array, b: Array) -> Array:
    return np.einsum("...i,...j->...ij", a, b)


@dataclass(frozen=True, eq=False)
class Jet2:
    """Value, gradient and (optionally) Hessian.

    ``hessian`` is ``None`` in C^1-only mode.  The Hessian is symmetrised on
    construction so ``H[i, j] == H[j, i]`` holds bit for bit.
    """

    value: Array
    gradient: Array
    hessian: Array | None = None

    def __post_init__(self):
        value = np.array(self.value, dtype=float)
        grad = np.array(self.gradient, dtype=float)
        if grad.ndim < 1 or grad.shape[-1] < 1:
            raise ValueError("gradient must have a trailing dimension d >= 1")
        if grad.shape[:-1] != value.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match value shape {value.shape}")
        hess = self.hessian
        if hess is not None:
            hess = np.array(hess, dtype=float)
            d = grad.shape[-1]
            if hess.shape != value.shape + (d, d):
                raise ValueError(f"hessian shape {hess.shape} inconsistent with d={d}")
            hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
            hess.setflags(write=False)
        value.setflags(write=False)
        grad.setflags(write=False)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "gradient", grad)
        object.__setattr__(self, "hessian", hess)

    @property
    def dimension(self) -> int:
        return self.gradient.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def order(self) -> int:
        return 1 if self.hessian is None else 2

    @classmethod
    def constant(cls, c, dimension: int, batch_shape: tuple[int, ...] = (), order: int = 2) -> "Jet2":
        value = np.broadcast_to(np.asarray(c, dtype=float), batch_shape)
        grad = np.zeros(batch_shape + (dimension,))
        hess = np.zeros(batch_shape + (dimension, dimension)) if order == 2 else None
        return cls(value, grad, hess)

    @classmethod
    def variables(cls, x, order: int = 2) -> list["Jet2"]:
        """Coordinate jets ``x_0 .. x_{d-1}`` seeded at the points ``x`` (shape ``(..., d)``)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        d = x.shape[-1]
        batch = x.shape[:-1]
        jets = []
        for i in range(d):
            grad = np.zeros(batch + (d,))
            grad[..., i] = 1.0
            hess = np.zeros(batch + (d, d)) if order == 2 else None
            jets.append(cls(x[..., i], grad, hess))
        return jets

    def _check(self, other: "Jet2") -> None:
        if self.dimension != other.dimension:
            raise ValueError(f"dimension mismatch: {self.dimension} vs {other.dimension}")

    def _lift(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            self._check(other)
            return other
        return Jet2.constant(other, self.dimension, np.broadcast_shapes(self.batch_shape, np.shape(other)), self.order)

    def apply(self, f0: Array, f1: Array, f2: Array | None) -> "Jet2":
        """Push the jet through a scalar function with derivatives ``f0, f1, f2`` at ``self.value``."""
        f1 = np.asarray(f1, dtype=float)
        grad = f1[..., None] * self.gradient
        hess = None
        if self.hessian is not None and f2 is not None:
            f2 = np.asarray(f2, dtype=float)
            hess = f2[..., None, None] * _outer(self.gradient, self.gradient) + f1[..., None, None] * self.hessian
        return Jet2(f0, grad, hess)

    def __add__(self, other) -> "Jet2":
        other = self._lift(other)
        hess = None if self.hessian is None or other.hessian is None else self.hessian + other.hessian
        return Jet2(self.value + other.value, self.gradient + other.gradient, hess)

    __radd__ = __add__

    def __neg__(self) -> "Jet2":
        return Jet2(-self.value, -self.gradient, None if self.hessian is None else -self.hessian)

    def __sub__(self, other) -> "Jet2":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Jet2":
        return self._lift(other) - self

    def __mul__(self, other) -> "Jet2":
        other = self._lift(other)
        a, b = self.value, other.value
        grad = a[..., None] * other.gradient + b[..., None] * self.gradient
        hess = None
        if self.hessian is not None and other.hessian is not None:
            cross = _outer(self.gradient, other.gradient)
            hess = (
                a[..., None, None] * other.hessian
                + b[..., None, None] * self.hessian
                + cross
                + np.swapaxes(cross, -1, -2)
            )
        return Jet2(a * b, grad, hess)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet2":
        v = self.value
        return self.apply(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def __truediv__(self, other) -> "Jet2":
        return self * self._lift(other).reciprocal()

    def __rtruediv__(self, other) -> "Jet2":
        return self._lift(other) * self.reciprocal()

    def __getitem__(self, idx) -> "Jet2":
        return Jet2(
            self.value[idx],
            self.gradient[idx],
            None if self.hessian is None else self.hessian[idx],
        )

    def allclose(self, other: "Jet2", rtol: float = 1e-12, atol: float = 1e-12) -> bool:
        if self.dimension != other.dimension:
            return False
        ok = np.allclose(self.value, other.value, rtol=rtol, atol=atol) and np.allclose(
            self.gradient, other.gradient, rtol=rtol, atol=atol
        )
        if self.hessian is not None and other.hessian is not None:
            ok = ok and np.allclose(self.hessian, other.hessian, rtol=rtol, atol=atol)
        return bool(ok)

    def __repr__(self) -> str:
        return f"Jet2(value={self.value!r}, gradient={self.gradient!r}, hessian={self.hessian!r})"


def jet_add(a: Jet2, b: Jet2) -> Jet2:
    a._check(b)
    return a + b


def jet_mul(a: Jet2, b: Jet2) -> Jet2:
    a._check(b)
    return a * b


# --- primitives -------------------------------------------------------------


def _win(u):
    t = np.clip(np.abs(u) - 1.0, 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _dwin(u):
    t = np.clip(np.abs(u) - 1.0, 0.0, 1.0)
    return -np.sign(u) * 30.0 * t**2 * (1.0 - t) ** 2


def _d2win(u):
    t = np.clip(np.abs(u) - 1.0, 0.0, 1.0)
    return -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


# name -> (f, f', f'')
PRIMITIVES: dict[str, tuple[Callable, Callable, Callable]] = {
    "sin": (np.sin, np.cos, lambda u: -np.sin(u)),
    "cos": (np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u)),
    "exp": (np.exp, np.exp, np.exp),
    "sq": (np.square, lambda u: 2.0 * u, lambda u: np.full_like(np.asarray(u, dtype=float), 2.0)),
    # C^2 plateau: 1 on |u| <= 1, 0 on |u| >= 2, quintic smoothstep in between
    "win": (_win, _dwin, _d2win),
}


# --- expressions ------------------------------------------------------------


class Expr:
    """Node of a test-function expression tree."""

    def evaluate(self, env: Sequence):
        raise NotImplementedError

    def max_index(self) -> int:
        return -1

    def substitute(self, inner: Sequence["Expr"]) -> "Expr":
        raise NotImplementedError


@dataclass(frozen=True)
class Var(Expr):
    index: int

    def evaluate(self, env):
        return env[self.index]

    def max_index(self):
        return self.index

    def substitute(self, inner):
        return inner[self.index]

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def evaluate(self, env):
        return self.value

    def substitute(self, inner):
        return self

    def __str__(self):
        if self.value == math.pi:
            return "pi"
        text = repr(float(self.value))
        return f"({text})" if self.value < 0 else text


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def max_index(self):
        return self.arg.max_index()

    def substitute(self, inner):
        return Neg(self.arg.substitute(inner))

    def __str__(self):
        return f"(-{self.arg})"


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
}


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env):
        return _BINOPS[self.op](self.left.evaluate(env), self.right.evaluate(env))

    def max_index(self):
        return max(self.left.max_index(), self.right.max_index())

    def substitute(self, inner):
        return BinOp(self.op, self.left.substitute(inner), self.right.substitute(inner))

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call(Expr):
    name: str
    arg: Expr

    def evaluate(self, env):
        f, df, d2f = PRIMITIVES[self.name]
        u = self.arg.evaluate(env)
        if isinstance(u, Jet2):
            return u.apply(f(u.value), df(u.value), d2f(u.value) if u.hessian is not None else None)
        return f(u)

    def max_index(self):
        return self.arg.max_index()

    def substitute(self, inner):
        return Call(self.name, self.arg.substitute(inner))

    def __str__(self):
        return f"{self.name}({self.arg})"


_VAR = re.compile(r"x(\d+)$")
_AST_OPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/"}


def parse_expr(text: str) -> Expr:
    """Parse the test-function grammar into an :class:`Expr`.

    >>> str(parse_expr("sin(x0)*x1 + sq(x0)"))
    '((sin(x0) * x1) + sq(x0))'
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None
    return _convert(tree.body, text)


def _convert(node: ast.AST, text: str) -> Expr:
    if isinstance(node, ast.BinOp) and type(node.op) in _AST_OPS:
        return BinOp(_AST_OPS[type(node.op)], _convert(node.left, text), _convert(node.right, text))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        arg = _convert(node.operand, text)
        if isinstance(node.op, ast.UAdd):
            return arg
        if isinstance(arg, Const):
            return Const(-arg.value)
        return Neg(arg)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return Const(float(node.value))
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return Const(math.pi)
        m = _VAR.match(node.id)
        if m:
            return Var(int(m.group(1)))
        raise ValueError(f"unknown identifier {node.id!r} in {text!r}")
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        if node.func.id not in PRIMITIVES:
            raise ValueError(f"unknown function {node.func.id!r} in {text!r}")
        if len(node.args) != 1 or node.keywords:
            raise ValueError(f"{node.func.id} takes exactly one argument")
        return Call(node.func.id, _convert(node.args[0], text))
    raise ValueError(f"unsupported syntax in {text!r}: {ast.dump(node)}")


# --- test functions ---------------------------------------------------------


@dataclass(frozen=True)
class Bounds:
    """Declared sup-norm bounds: |f|, Euclidean norm of the gradient, Frobenius norm of the Hessian."""

    value: float
    gradient: float
    hessian: float

    def __post_init__(self):
        for name in ("value", "gradient", "hessian"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"bound {name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class TestFunction:
    """An element of the test algebra: a scalar expression in ``dimension`` variables."""

    __test__ = False  # keep pytest from collecting this class

    expr: Expr
    dimension: int
    bounds: Bounds | None = None
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.expr.max_index() >= self.dimension:
            raise ValueError(f"expression {self.expr} uses x{self.expr.max_index()} but dimension is {self.dimension}")

    @classmethod
    def parse(cls, text: str, dimension: int | None = None, bounds: Bounds | None = None, name: str | None = None):
        expr = parse_expr(text)
        d = dimension if dimension is not None else max(expr.max_index() + 1, 1)
        return cls(expr, d, bounds, name or text)

    @classmethod
    def constant(cls, c: float, dimension: int = 1) -> "TestFunction":
        return cls(Const(float(c)), dimension, Bounds(abs(c), 0.0, 0.0), repr(float(c)))

    @classmethod
    def coordinate(cls, i: int, dimension: int) -> "TestFunction":
        return cls(Var(i), dimension, None, f"x{i}")

    @property
    def label(self) -> str:
        return self.name if self.name is not None else str(self.expr)

    def _points(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.dimension:
            raise ValueError(f"dimension mismatch: point has {x.shape[-1]} coordinates, function has {self.dimension}")
        return x

    def __call__(self, x) -> Array:
        """Values at the points ``x`` of shape ``(..., d)``."""
        x = self._points(x)
        env = [x[..., i] for i in range(self.dimension)]
        out = self.expr.evaluate(env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    def jet(self, x, order: int = 2) -> Jet2:
        x = self._points(x)
        out = self.expr.evaluate(Jet2.variables(x, order=order))
        if not isinstance(out, Jet2):
            return Jet2.constant(out, self.dimension, x.shape[:-1], order)
        return out

    def compose(self, *inner: "TestFunction") -> "TestFunction":
        """``self(inner_0(x), ..., inner_{p-1}(x))`` as a test function of ``x``."""
        if len(inner) != self.dimension:
            raise ValueError(f"dimension mismatch: need {self.dimension} inner functions, got {len(inner)}")
        dims = {f.dimension for f in inner}
        if len(dims) != 1:
            raise ValueError("inner functions must share one dimension")
        return TestFunction(self.expr.substitute([f.expr for f in inner]), dims.pop())

    def _combine(self, other, op: str) -> "TestFunction":
        if not isinstance(other, TestFunction):
            other = TestFunction.constant(float(other), self.dimension)
        if other.dimension != self.dimension:
            raise ValueError(f"dimension mismatch: {self.dimension} vs {other.dimension}")
        bounds = None
        a, b = self.bounds, other.bounds
        if a is not None and b is not None and op in "+-":
            bounds = Bounds(a.value + b.value, a.gradient + b.gradient, a.hessian + b.hessian)
        elif a is not None and b is not None and op == "*":
            bounds = Bounds(
                a.value * b.value,
                a.value * b.gradient + b.value * a.gradient,
                a.value * b.hessian + b.value * a.hessian + 2.0 * a.gradient * b.gradient,
            )
        name = f"({self.label} {op} {other.label})"
        return TestFunction(BinOp(op, self.expr, other.expr), self.dimension, bounds, name)

    def __add__(self, other):
        return self._combine(other, "+")

    def __sub__(self, other):
        return self._combine(other, "-")

    def __mul__(self, other):
        return self._combine(other, "*")

    def __radd__(self, other):
        return TestFunction.constant(float(other), self.dimension)._combine(self, "+")

    def __rmul__(self, other):
        return TestFunction.constant(float(other), self.dimension)._combine(self, "*")

    def __str__(self):
        return str(self.expr)


FunctionLike = Union[TestFunction, str]


def as_function(f: FunctionLike, dimension: int | None = None) -> TestFunction:
    if isinstance(f, TestFunction):
        if dimension is not None and f.dimension != dimension:
            raise ValueError(f"dimension mismatch: {f.dimension} vs {dimension}")
        return f
    return TestFunction.parse(str(f), dimension)


def evaluate(f: TestFunction, x, order: int = 2) -> Jet2:
    """Jet of ``f`` at ``x``; ``order=1`` is the C^1-only mode (no Hessian)."""
    return f.jet(x, order=order)


def compose(F: TestFunction, inner: Sequence[Jet2]) -> Jet2:
    """Second-order chain rule for ``F(g_1, ..., g_p)`` given the inner jets.

    gradient = J^T grad F,  hessian = J^T (Hess F) J + sum_k dF/du_k H_k
    """
    if len(inner) != F.dimension:
        raise ValueError(f"dimension mismatch: F takes {F.dimension} arguments, got {len(inner)} jets")
    dims = {j.dimension for j in inner}
    if len(dims) != 1:
        raise ValueError("dimension mismatch among inner jets")
    batch = np.broadcast_shapes(*(j.batch_shape for j in inner))
    u = np.stack([np.broadcast_to(j.value, batch) for j in inner], axis=-1)
    outer = F.jet(u)
    J = np.stack([np.broadcast_to(j.gradient, batch + (j.dimension,)) for j in inner], axis=-2)
    grad = np.einsum("...k,...kd->...d", outer.gradient, J)
    if any(j.hessian is None for j in inner):
        return Jet2(outer.value, grad, None)
    H = np.stack([np.broadcast_to(j.hessian, batch + j.hessian.shape[-2:]) for j in inner], axis=-3)
    hess = np.einsum("...ki,...kl,...lj->...ij", J, outer.hessian, J) + np.einsum("...k,...kij->...ij", outer.gradient, H)
    return Jet2(outer.value, grad, hess)


def sample_bounds(f: TestFunction, points) -> Bounds:
    """Observed sup norms over ``points``; used to spot-check declared bounds."""
    j = f.jet(points)
    return Bounds(
        float(np.max(np.abs(j.value))),
        float(np.max(np.linalg.norm(j.gradient, axis=-1))),
        float(np.max(np.linalg.norm(j.hessian, axis=(-2, -1)))),
    )
