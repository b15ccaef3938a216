"""
Symbolic expressions for dynamics, costs and Lyapunov candidates.

Expressions are immutable trees over state variables ``x1..xn`` (and input
variables ``u1..uk`` where a caller declares them), real constants, the
arithmetic operators, non-negative integer powers and the functions
sqrt, exp, sin, cos and tanh.

Grammar (see README)::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := ('-' | '+') unary | power
    power := atom (('^' | '**') INTEGER)?
    atom  := NUMBER | 'pi' | VARIABLE | FUNCTION '(' expr ')' | '(' expr ')'

Evaluation goes through :class:`Program`, which schedules the distinct
sub-expressions of one or more trees once and evaluates them either on
float arrays (many points at a time) or on :class:`Interval` arrays (many
boxes at a time).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ArityError,
    ExpressionEvaluationError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
)
from .interval import Box, Interval

Number = Union[int, float]
Polynomial = Dict[Tuple[int, ...], float]

FUNCTIONS: Tuple[str, ...] = ("sqrt", "exp", "sin", "cos", "tanh")


# =============================================================================
# Nodes
# =============================================================================

class Expression:
    """Base class of all expression nodes."""

    __slots__ = ()

    def children(self) -> Tuple[Expression, ...]:
        return ()

    def _key(self) -> tuple:
        raise NotImplementedError

    def _init_hash(self) -> None:
        object.__setattr__(self, "_hash", hash((type(self).__name__,) + self._key()))

    def __hash__(self) -> int:
        return self._hash  # type: ignore[attr-defined]

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if type(self) is not type(other):
            return False
        return hash(self) == hash(other) and self._key() == other._key()  # type: ignore[attr-defined]

    # Operators build through the folding constructors below
    def __add__(self, other: Union[Expression, Number]) -> Expression:
        return add(self, as_expression(other))

    def __radd__(self, other: Number) -> Expression:
        return add(as_expression(other), self)

    def __sub__(self, other: Union[Expression, Number]) -> Expression:
        return sub(self, as_expression(other))

    def __rsub__(self, other: Number) -> Expression:
        return sub(as_expression(other), self)

    def __mul__(self, other: Union[Expression, Number]) -> Expression:
        return mul(self, as_expression(other))

    def __rmul__(self, other: Number) -> Expression:
        return mul(as_expression(other), self)

    def __truediv__(self, other: Union[Expression, Number]) -> Expression:
        return div(self, as_expression(other))

    def __rtruediv__(self, other: Number) -> Expression:
        return div(as_expression(other), self)

    def __neg__(self) -> Expression:
        return neg(self)

    def __pow__(self, exponent: int) -> Expression:
        return power(self, exponent)

    def __str__(self) -> str:
        return to_infix(self)

    # Per-node evaluation, used by Program
    def _values(self, X: np.ndarray, *args: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _enclose(self, lo: np.ndarray, hi: np.ndarray, strict: bool, *args: Interval) -> Interval:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Const(Expression):
    value: float
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        value = float(self.value)
        if not math.isfinite(value):
            raise ValueError(f"constants must be finite, got {value}")
        object.__setattr__(self, "value", value)
        self._init_hash()

    def _key(self) -> tuple:
        return (self.value,)

    def _values(self, X, *args):
        return np.full(X.shape[0], self.value)

    def _enclose(self, lo, hi, strict, *args):
        return Interval.point(np.full(lo.shape[0], self.value))


@dataclass(frozen=True, eq=False)
class Var(Expression):
    index: int
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("variable index must be non-negative")
        self._init_hash()

    def _key(self) -> tuple:
        return (self.index,)

    def _values(self, X, *args):
        return X[:, self.index]

    def _enclose(self, lo, hi, strict, *args):
        return Interval(lo[:, self.index], hi[:, self.index])


@dataclass(frozen=True, eq=False)
class Add(Expression):
    left: Expression
    right: Expression
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._init_hash()

    def children(self):
        return (self.left, self.right)

    def _key(self) -> tuple:
        return (self.left, self.right)

    def _values(self, X, a, b):
        return a + b

    def _enclose(self, lo, hi, strict, a, b):
        return a + b


@dataclass(frozen=True, eq=False)
class Sub(Expression):
    left: Expression
    right: Expression
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._init_hash()

    def children(self):
        return (self.left, self.right)

    def _key(self) -> tuple:
        return (self.left, self.right)

    def _values(self, X, a, b):
        return a - b

    def _enclose(self, lo, hi, strict, a, b):
        return a - b


@dataclass(frozen=True, eq=False)
class Mul(Expression):
    left: Expression
    right: Expression
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._init_hash()

    def children(self):
        return (self.left, self.right)

    def _key(self) -> tuple:
        return (self.left, self.right)

    def _values(self, X, a, b):
        return a * b

    def _enclose(self, lo, hi, strict, a, b):
        if self.left == self.right:
            return a.sq()
        return a * b


@dataclass(frozen=True, eq=False)
class Div(Expression):
    left: Expression
    right: Expression
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._init_hash()

    def children(self):
        return (self.left, self.right)

    def _key(self) -> tuple:
        return (self.left, self.right)

    def _values(self, X, a, b):
        if np.any(b == 0.0):
            raise ExpressionEvaluationError(f"division by zero in '{to_infix(self)}'")
        return a / b

    def _enclose(self, lo, hi, strict, a, b):
        return a.divide(b, strict=strict)


@dataclass(frozen=True, eq=False)
class Neg(Expression):
    arg: Expression
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._init_hash()

    def children(self):
        return (self.arg,)

    def _key(self) -> tuple:
        return (self.arg,)

    def _values(self, X, a):
        return -a

    def _enclose(self, lo, hi, strict, a):
        return -a


@dataclass(frozen=True, eq=False)
class Pow(Expression):
    base: Expression
    exponent: int
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if int(self.exponent) != self.exponent or self.exponent < 0:
            raise ValueError("only non-negative integer exponents are supported")
        object.__setattr__(self, "exponent", int(self.exponent))
        self._init_hash()

    def children(self):
        return (self.base,)

    def _key(self) -> tuple:
        return (self.base, self.exponent)

    def _values(self, X, a):
        return a ** self.exponent

    def _enclose(self, lo, hi, strict, a):
        return a.power(self.exponent)


@dataclass(frozen=True, eq=False)
class Func(Expression):
    name: str
    arg: Expression
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown function '{self.name}'")
        self._init_hash()

    def children(self):
        return (self.arg,)

    def _key(self) -> tuple:
        return (self.name, self.arg)

    def _values(self, X, a):
        if self.name == "sqrt":
            if np.any(a < 0.0):
                raise ExpressionEvaluationError(f"sqrt of a negative number in '{to_infix(self)}'")
            return np.sqrt(a)
        return _NUMPY_FUNCS[self.name](a)

    def _enclose(self, lo, hi, strict, a):
        if self.name == "sqrt":
            return a.sqrt(strict=strict)
        return getattr(a, self.name)()


_NUMPY_FUNCS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
}

_MATH_FUNCS: Dict[str, Callable[[float], float]] = {
    "sqrt": math.sqrt,
    "exp": math.exp,
    "sin": math.sin,
    "cos": math.cos,
    "tanh": math.tanh,
}

ZERO = Const(0.0)
ONE = Const(1.0)


# =============================================================================
# Folding constructors
# =============================================================================

def as_expression(value: Union[Expression, Number]) -> Expression:
    if isinstance(value, Expression):
        return value
    return Const(float(value))


def const(value: Number) -> Const:
    return Const(float(value))


def var(index: int) -> Var:
    """Variable with zero-based index (``x1`` is ``var(0)``)."""
    return Var(index)


def _is_const(e: Expression, value: Optional[float] = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(b, Const) and b.value != 0.0:
        if isinstance(a, Const):
            return Const(a.value / b.value)
        if b.value == 1.0:
            return a
        if _is_const(a, 0.0):
            return ZERO
    return Div(a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(base: Expression, exponent: int) -> Expression:
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value ** exponent)
    return Pow(base, exponent)


def func(name: str, arg: Expression) -> Expression:
    if isinstance(arg, Const) and not (name == "sqrt" and arg.value < 0.0):
        return Const(_MATH_FUNCS[name](arg.value))
    return Func(name, arg)


def sqrt(e: Expression) -> Expression:
    return func("sqrt", e)


def exp(e: Expression) -> Expression:
    return func("exp", e)


def sin(e: Expression) -> Expression:
    return func("sin", e)


def cos(e: Expression) -> Expression:
    return func("cos", e)


def tanh(e: Expression) -> Expression:
    return func("tanh", e)


def sum_of(terms: Iterable[Expression]) -> Expression:
    total: Expression = ZERO
    for term in terms:
        total = add(total, term)
    return total


def dot(a: Sequence[Expression], b: Sequence[Expression]) -> Expression:
    if len(a) != len(b):
        raise ValueError("dot product of sequences with different lengths")
    return sum_of(mul(x, y) for x, y in zip(a, b))


def quadratic_form(P: np.ndarray) -> Expression:
    """xᵀPx for a symmetric matrix, written as Σ P_ii x_i² + Σ_{i<j} 2P_ij x_i x_j."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    terms: List[Expression] = []
    for i in range(n):
        if P[i, i] != 0.0:
            terms.append(mul(Const(P[i, i]), power(Var(i), 2)))
        for j in range(i + 1, n):
            coef = P[i, j] + P[j, i]
            if coef != 0.0:
                terms.append(mul(Const(coef), mul(Var(i), Var(j))))
    return sum_of(terms)


# =============================================================================
# Parser
# =============================================================================

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()])"
    r")"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(text: str) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.lastgroup is None:
            raise ExpressionSyntaxError(f"unexpected character '{text[pos]}'", pos)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, arity: int, inputs: int):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.arity = arity
        self.inputs = inputs

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _unexpected(self) -> ExpressionSyntaxError:
        token = self.current
        if token.kind == "end":
            return ExpressionSyntaxError("unexpected end of input", token.position)
        return ExpressionSyntaxError(f"unexpected token '{token.text}'", token.position)

    def _expect(self, text: str) -> None:
        if self.current.text != text or self.current.kind == "end":
            raise self._unexpected()
        self._advance()

    def parse(self) -> Expression:
        result = self._expr()
        if self.current.kind != "end":
            raise self._unexpected()
        return result

    def _expr(self) -> Expression:
        result = self._term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self._advance().text
            rhs = self._term()
            result = add(result, rhs) if op == "+" else sub(result, rhs)
        return result

    def _term(self) -> Expression:
        result = self._unary()
        while self.current.kind == "op" and self.current.text in ("*", "/"):
            op = self._advance().text
            rhs = self._unary()
            result = mul(result, rhs) if op == "*" else div(result, rhs)
        return result

    def _unary(self) -> Expression:
        if self.current.kind == "op" and self.current.text in "+-":
            op = self._advance().text
            operand = self._unary()
            return neg(operand) if op == "-" else operand
        return self._power()

    def _power(self) -> Expression:
        base = self._atom()
        if self.current.kind == "op" and self.current.text in ("^", "**"):
            self._advance()
            token = self.current
            if token.kind != "number" or not token.text.isdigit():
                raise ExpressionSyntaxError("exponent must be a non-negative integer", token.position)
            self._advance()
            return power(base, int(token.text))
        return base

    def _atom(self) -> Expression:
        token = self.current
        if token.kind == "number":
            self._advance()
            return Const(float(token.text))
        if token.kind == "ident":
            self._advance()
            return self._identifier(token)
        if token.kind == "op" and token.text == "(":
            self._advance()
            inner = self._expr()
            self._expect(")")
            return inner
        raise self._unexpected()

    def _identifier(self, token: _Token) -> Expression:
        name = token.text
        if name in FUNCTIONS:
            self._expect("(")
            arg = self._expr()
            self._expect(")")
            return func(name, arg)
        if name == "pi":
            return Const(math.pi)
        match = re.fullmatch(r"([xu])(\d+)", name)
        if match is None:
            raise UnknownIdentifierError(f"unknown identifier '{name}'", token.position)
        letter, number = match.group(1), int(match.group(2))
        if letter == "x":
            if number < 1 or number > self.arity:
                raise ArityError(
                    f"variable '{name}' exceeds declared arity {self.arity}", token.position
                )
            return Var(number - 1)
        if self.inputs == 0:
            raise UnknownIdentifierError(
                f"input '{name}' is not permitted in this expression", token.position
            )
        if number < 1 or number > self.inputs:
            raise ArityError(
                f"input '{name}' exceeds declared input count {self.inputs}", token.position
            )
        return Var(self.arity + number - 1)


def parse_expression(text: str, arity: int, inputs: int = 0) -> Expression:
    """
    Parse an infix expression over ``x1..x<arity>``.

    Args:
        text: Expression source, e.g. ``"-x1 + x2*(1 - x1^2)"``
        arity: Number of state variables
        inputs: Number of input variables ``u1..u<inputs>`` permitted; they
            map to indices ``arity .. arity+inputs-1``

    Raises:
        ExpressionSyntaxError: malformed text (carries the offending offset)
        UnknownIdentifierError: identifier is not a variable, function or ``pi``
        ArityError: variable index outside the declared range
    """
    return _Parser(text, arity, inputs).parse()


# =============================================================================
# Evaluation
# =============================================================================

class Program:
    """
    Evaluation schedule for one or more expressions sharing sub-expressions.

    Each distinct node is evaluated once per call, in post-order.
    """

    def __init__(self, outputs: Sequence[Expression]):
        self.outputs: Tuple[Expression, ...] = tuple(outputs)
        slots: Dict[Expression, int] = {}
        nodes: List[Expression] = []
        args: List[Tuple[int, ...]] = []

        def visit(e: Expression) -> int:
            slot = slots.get(e)
            if slot is not None:
                return slot
            child_slots = tuple(visit(c) for c in e.children())
            slots[e] = len(nodes)
            nodes.append(e)
            args.append(child_slots)
            return slots[e]

        self._out_slots = [visit(e) for e in self.outputs]
        self._nodes = nodes
        self._args = args
        self.arity = max((n.index + 1 for n in nodes if isinstance(n, Var)), default=0)

    def __len__(self) -> int:
        return len(self.outputs)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """
        Values at one point (shape (n,) → (k,)) or many (shape (m, n) → (m, k)).

        Raises:
            ExpressionEvaluationError: division by zero or sqrt of a negative
        """
        X = np.asarray(points, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] < self.arity:
            raise ExpressionEvaluationError(
                f"point has {X.shape[1]} coordinates, expression needs {self.arity}"
            )
        values: List[np.ndarray] = []
        with np.errstate(over="ignore", invalid="ignore"):
            for node, slots in zip(self._nodes, self._args):
                values.append(node._values(X, *(values[s] for s in slots)))
        result = np.stack([values[s] for s in self._out_slots], axis=-1) if self.outputs \
            else np.zeros((X.shape[0], 0))
        return result[0] if single else result

    def enclose(self, lo: np.ndarray, hi: np.ndarray, strict: bool = False) -> Interval:
        """
        Interval enclosures over boxes given by corner arrays of shape (m, n).

        Returns an Interval of shape (m, k). With ``strict=False`` undefined
        operations give infinite or NaN endpoints instead of raising.
        """
        lo = np.atleast_2d(np.asarray(lo, dtype=np.float64))
        hi = np.atleast_2d(np.asarray(hi, dtype=np.float64))
        values: List[Interval] = []
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for node, slots in zip(self._nodes, self._args):
                values.append(node._enclose(lo, hi, strict, *(values[s] for s in slots)))
        outs = [values[s] for s in self._out_slots]
        if not outs:
            return Interval(np.zeros((lo.shape[0], 0)), np.zeros((lo.shape[0], 0)))
        return Interval(np.stack([o.lo for o in outs], axis=-1),
                        np.stack([o.hi for o in outs], axis=-1))


@lru_cache(maxsize=4096)
def _program(outputs: Tuple[Expression, ...]) -> Program:
    return Program(outputs)


def compile_vector(exprs: Sequence[Expression]) -> Program:
    """Cached evaluation program for a tuple of expressions."""
    return _program(tuple(exprs))


def compile_expression(e: Expression) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized callable: (m, n) points → (m,) values, (n,) → scalar array."""
    program = _program((e,))

    def evaluate_points(points: np.ndarray) -> np.ndarray:
        return program.evaluate(points)[..., 0]

    return evaluate_points


def evaluate(e: Expression, point: Sequence[float]) -> float:
    """IEEE-754 evaluation at a single point; raises instead of returning NaN."""
    return float(_program((e,)).evaluate(np.asarray(point, dtype=np.float64))[0])


def enclose(e: Expression, lo: np.ndarray, hi: np.ndarray, strict: bool = False) -> Interval:
    """Enclosures of one expression over many boxes; returns shape (m,)."""
    return _program((e,)).enclose(lo, hi, strict=strict)[:, 0]


def eval_interval(e: Expression, box: Box) -> Interval:
    """
    Sound enclosure of e over a box.

    Raises:
        EnclosureError: division by an interval containing 0 or sqrt of an
            interval reaching below 0
    """
    result = _program((e,)).enclose(box.lo[None, :], box.hi[None, :], strict=True)
    return result[0, 0]


# =============================================================================
# Structure
# =============================================================================

def variables(e: Expression) -> set[int]:
    """Indices of the variables occurring in e."""
    found: set[int] = set()
    seen: set[Expression] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if isinstance(node, Var):
            found.add(node.index)
        stack.extend(node.children())
    return found


def contains_function(e: Expression, names: Iterable[str] = FUNCTIONS) -> bool:
    wanted = set(names)
    return any(isinstance(n, Func) and n.name in wanted for n in _nodes(e))


def _nodes(e: Expression) -> List[Expression]:
    return list(Program([e])._nodes)


# =============================================================================
# Differentiation
# =============================================================================

def differentiate(e: Expression, i: int) -> Expression:
    """Symbolic ∂e/∂x_i (zero-based index)."""
    cache: Dict[Expression, Expression] = {}

    def d(node: Expression) -> Expression:
        hit = cache.get(node)
        if hit is not None:
            return hit
        if isinstance(node, Const):
            out: Expression = ZERO
        elif isinstance(node, Var):
            out = ONE if node.index == i else ZERO
        elif isinstance(node, Add):
            out = add(d(node.left), d(node.right))
        elif isinstance(node, Sub):
            out = sub(d(node.left), d(node.right))
        elif isinstance(node, Mul):
            out = add(mul(d(node.left), node.right), mul(node.left, d(node.right)))
        elif isinstance(node, Div):
            da, db = d(node.left), d(node.right)
            if _is_const(db, 0.0):
                out = div(da, node.right)
            else:
                out = div(sub(mul(da, node.right), mul(node.left, db)), power(node.right, 2))
        elif isinstance(node, Neg):
            out = neg(d(node.arg))
        elif isinstance(node, Pow):
            out = mul(mul(Const(node.exponent), power(node.base, node.exponent - 1)), d(node.base))
        elif isinstance(node, Func):
            da = d(node.arg)
            if _is_const(da, 0.0):
                out = ZERO
            elif node.name == "sqrt":
                out = div(da, mul(Const(2.0), node))
            elif node.name == "exp":
                out = mul(node, da)
            elif node.name == "sin":
                out = mul(cos(node.arg), da)
            elif node.name == "cos":
                out = neg(mul(sin(node.arg), da))
            else:
                out = mul(sub(ONE, power(node, 2)), da)
        else:
            raise TypeError(f"unsupported node {type(node).__name__}")
        cache[node] = out
        return out

    return d(e)


def gradient(e: Expression, n: int) -> List[Expression]:
    return [differentiate(e, i) for i in range(n)]


def jacobian(exprs: Sequence[Expression], n: int) -> List[List[Expression]]:
    return [[differentiate(e, j) for j in range(n)] for e in exprs]


# =============================================================================
# Polynomials
# =============================================================================

def _poly_add(a: Polynomial, b: Polynomial, sign: float = 1.0) -> Polynomial:
    out = dict(a)
    for mono, coef in b.items():
        out[mono] = out.get(mono, 0.0) + sign * coef
    return {m: c for m, c in out.items() if c != 0.0}


def _poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    out: Polynomial = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            mono = tuple(x + y for x, y in zip(ma, mb))
            out[mono] = out.get(mono, 0.0) + ca * cb
    return {m: c for m, c in out.items() if c != 0.0}


def to_polynomial(e: Expression, n: int) -> Optional[Polynomial]:
    """
    Expand e into monomials ``{exponents: coefficient}`` over n variables.

    Returns None when e is not a polynomial (functions, division by a
    non-constant).
    """
    zero_mono = (0,) * n
    cache: Dict[Expression, Optional[Polynomial]] = {}

    def expand(node: Expression) -> Optional[Polynomial]:
        if node in cache:
            return cache[node]
        out: Optional[Polynomial]
        if isinstance(node, Const):
            out = {zero_mono: node.value} if node.value != 0.0 else {}
        elif isinstance(node, Var):
            if node.index >= n:
                return None
            mono = [0] * n
            mono[node.index] = 1
            out = {tuple(mono): 1.0}
        elif isinstance(node, (Add, Sub, Mul)):
            a, b = expand(node.left), expand(node.right)
            if a is None or b is None:
                out = None
            elif isinstance(node, Add):
                out = _poly_add(a, b)
            elif isinstance(node, Sub):
                out = _poly_add(a, b, -1.0)
            else:
                out = _poly_mul(a, b)
        elif isinstance(node, Div):
            a = expand(node.left)
            if a is None or not isinstance(node.right, Const) or node.right.value == 0.0:
                out = None
            else:
                out = {m: c / node.right.value for m, c in a.items()}
        elif isinstance(node, Neg):
            a = expand(node.arg)
            out = None if a is None else {m: -c for m, c in a.items()}
        elif isinstance(node, Pow):
            a = expand(node.base)
            if a is None:
                out = None
            else:
                out = {zero_mono: 1.0}
                for _ in range(node.exponent):
                    out = _poly_mul(out, a)
        else:
            out = None
        cache[node] = out
        return out

    return expand(e)


def polynomial_degree(poly: Polynomial) -> int:
    return max((sum(m) for m in poly), default=0)


# =============================================================================
# Printing
# =============================================================================

def _precedence(e: Expression) -> int:
    if isinstance(e, (Add, Sub)):
        return 1
    if isinstance(e, (Mul, Div)):
        return 2
    if isinstance(e, Neg) or (isinstance(e, Const) and e.value < 0):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def to_infix(e: Expression, n_states: Optional[int] = None) -> str:
    """
    Render e in the parser's grammar; parse(to_infix(e)) rebuilds e.

    Variables with index ≥ n_states print as inputs ``u1, u2, ...``.
    """

    def name(index: int) -> str:
        if n_states is not None and index >= n_states:
            return f"u{index - n_states + 1}"
        return f"x{index + 1}"

    def wrap(node: Expression, minimum: int) -> str:
        text = render(node)
        return f"({text})" if _precedence(node) < minimum else text

    def render(node: Expression) -> str:
        if isinstance(node, Const):
            return repr(node.value)
        if isinstance(node, Var):
            return name(node.index)
        if isinstance(node, Add):
            return f"{wrap(node.left, 1)} + {wrap(node.right, 2)}"
        if isinstance(node, Sub):
            return f"{wrap(node.left, 1)} - {wrap(node.right, 2)}"
        if isinstance(node, Mul):
            return f"{wrap(node.left, 2)}*{wrap(node.right, 3)}"
        if isinstance(node, Div):
            return f"{wrap(node.left, 2)}/{wrap(node.right, 3)}"
        if isinstance(node, Neg):
            return f"-{wrap(node.arg, 3)}"
        if isinstance(node, Pow):
            return f"{wrap(node.base, 5)}^{node.exponent}"
        if isinstance(node, Func):
            return f"{node.name}({render(node.arg)})"
        raise TypeError(f"unsupported node {type(node).__name__}")

    return render(e)
