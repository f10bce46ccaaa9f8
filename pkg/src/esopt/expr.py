"""Immutable symbolic expressions.

Every quantity in a model is an :class:`Expr`: constants, symbols, n-ary sums
and products, powers and a small set of named functions.  Nodes are immutable,
structurally comparable and hashed with a process-independent digest, so
child ordering and printed output are stable across runs.

Deeply nested models (neural-network surrogates feeding each other) produce
trees that are far larger than the object graph representing them, so every
traversal in this module memoizes on node identity.
"""
from __future__ import annotations

import enum
import hashlib
import math
import re
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence


class ExprError(Exception):
    """Base class for expression errors."""


class MissingBinding(ExprError):
    def __init__(self, symbol):
        super().__init__(f"no value bound for symbol {symbol!r}")
        self.symbol = symbol


class DomainError(ExprError):
    pass


class NonSmooth(ExprError):
    def __init__(self, tag):
        super().__init__(f"cannot differentiate nonsmooth function {tag!r}")
        self.tag = tag


class UnsupportedTag(ExprError):
    def __init__(self, tag):
        super().__init__(f"dialect has no mapping for {tag!r}")
        self.tag = tag


class ParseError(ExprError):
    pass


class SymbolKind(enum.Enum):
    PARAMETER = "parameter"
    DESIGN = "design"
    OPERATIONAL = "operational"

    @property
    def is_variable(self):
        return self is not SymbolKind.PARAMETER


class Domain(enum.Enum):
    REAL = "real"
    INTEGER = "integer"
    BINARY = "binary"


class StageClass(enum.Enum):
    FIRST = "first"
    SECOND = "second"


FUNCTIONS = ("exp", "log", "tanh", "sqrt", "min", "max", "abs")
NONSMOOTH = frozenset({"min", "max", "abs"})

# node-kind rank used for canonical child ordering
_RANK_CONST, _RANK_SYMBOL, _RANK_SUM, _RANK_PRODUCT, _RANK_POWER, _RANK_FUNC = range(6)


def _mix(*parts: int) -> int:
    # tuple-of-int hashing is independent of PYTHONHASHSEED
    return hash(parts)


def _str_digest(s: str) -> int:
    return int.from_bytes(hashlib.blake2b(s.encode(), digest_size=8).digest(), "little")


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ("_digest",)
    rank: int = -1

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return mul(self, power(other, -1))

    def __rtruediv__(self, other):
        return mul(other, power(self, -1))

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    # -- structure --------------------------------------------------------
    @property
    def children(self) -> tuple:
        return ()

    def __hash__(self):
        return self._digest

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return structurally_equal(self, other)

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return f"<{type(self).__name__} {print_generic(self)}>"

    def __str__(self):
        return print_generic(self)

    @property
    def is_constant(self) -> bool:
        return False


class Const(Expr):
    __slots__ = ("value",)
    rank = _RANK_CONST

    def __init__(self, value: float):
        value = float(value)
        if value == 0.0:
            value = 0.0  # normalise -0.0
        self.value = value
        self._digest = _mix(_RANK_CONST, struct.unpack("<q", struct.pack("<d", value))[0])

    @property
    def is_constant(self):
        return True


class Symbol(Expr):
    """A named placeholder for a parameter or a decision variable.

    Identity is the qualified ``name`` together with the ``kind``; bounds,
    domain and initial value are metadata.
    """

    __slots__ = ("name", "kind", "domain", "lb", "ub", "init")
    rank = _RANK_SYMBOL

    def __init__(self, name: str, kind: SymbolKind = SymbolKind.PARAMETER,
                 domain: Domain = Domain.REAL, lb: float | None = None,
                 ub: float | None = None, init: float | None = None):
        if kind is SymbolKind.PARAMETER and domain is not Domain.REAL:
            raise ValueError(f"parameter {name!r} cannot have domain {domain.value}")
        if domain is Domain.BINARY:
            lb = 0.0 if lb is None else max(float(lb), 0.0)
            ub = 1.0 if ub is None else min(float(ub), 1.0)
        if lb is not None and ub is not None and lb > ub:
            raise ValueError(f"bad bounds for {name!r}: [{lb}, {ub}]")
        self.name = name
        self.kind = kind
        self.domain = domain
        self.lb = None if lb is None else float(lb)
        self.ub = None if ub is None else float(ub)
        self.init = None if init is None else float(init)
        self._digest = _mix(_RANK_SYMBOL, _str_digest(kind.value + ":" + name))

    @property
    def id(self) -> str:
        return self.name

    @property
    def bounds(self):
        return (self.lb, self.ub)

    def renamed(self, name: str, kind: SymbolKind | None = None, **meta) -> "Symbol":
        kw = dict(domain=self.domain, lb=self.lb, ub=self.ub, init=self.init)
        kw.update(meta)
        return Symbol(name, self.kind if kind is None else kind, **kw)


class _Nary(Expr):
    __slots__ = ("args",)

    def __init__(self, args: tuple):
        self.args = args
        self._digest = _mix(self.rank, *(a._digest for a in args))

    @property
    def children(self):
        return self.args


class Sum(_Nary):
    __slots__ = ()
    rank = _RANK_SUM


class Product(_Nary):
    __slots__ = ()
    rank = _RANK_PRODUCT


class Power(Expr):
    __slots__ = ("base", "exponent")
    rank = _RANK_POWER

    def __init__(self, base: Expr, exponent: Expr):
        self.base = base
        self.exponent = exponent
        self._digest = _mix(_RANK_POWER, base._digest, exponent._digest)

    @property
    def children(self):
        return (self.base, self.exponent)


class Func(Expr):
    __slots__ = ("tag", "args")
    rank = _RANK_FUNC

    def __init__(self, tag: str, args: tuple):
        if tag not in FUNCTIONS:
            raise ValueError(f"unknown function {tag!r}")
        self.tag = tag
        self.args = args
        self._digest = _mix(_RANK_FUNC, _str_digest(tag), *(a._digest for a in args))

    @property
    def children(self):
        return self.args


# ---------------------------------------------------------------------------
# construction

def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, bool):
        return Const(float(value))
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite constant {value!r}")
        return Const(value)
    try:  # numpy scalars
        return Const(float(value))
    except (TypeError, ValueError):
        raise TypeError(f"cannot convert {value!r} to an expression") from None


def sort_key(e: Expr):
    """Canonical ordering key: node kind, then symbol name, constant value or digest."""
    if isinstance(e, Symbol):
        return (e.rank, e.name, e.kind.value)
    if isinstance(e, Const):
        return (e.rank, e.value)
    return (e.rank, e._digest)


def _collect(cls, args) -> list:
    flat = []
    for a in args:
        a = as_expr(a)
        if type(a) is cls:
            flat.extend(a.args)
        else:
            flat.append(a)
    return flat


def add(*args) -> Expr:
    """n-ary sum; merges constant terms and flattens nested sums."""
    terms = _collect(Sum, args)
    const = 0.0
    rest = []
    for t in terms:
        if isinstance(t, Const):
            const += t.value
        else:
            rest.append(t)
    if const != 0.0 or not rest:
        rest.append(Const(const))
    if len(rest) == 1:
        return rest[0]
    rest.sort(key=sort_key)
    return Sum(tuple(rest))


def mul(*args) -> Expr:
    """n-ary product; merges constant factors and flattens nested products."""
    factors = _collect(Product, args)
    const = 1.0
    rest = []
    for f in factors:
        if isinstance(f, Const):
            const *= f.value
        else:
            rest.append(f)
    if const != 1.0 or not rest:
        rest.append(Const(const))
    if len(rest) == 1:
        return rest[0]
    rest.sort(key=sort_key)
    return Product(tuple(rest))


def neg(e) -> Expr:
    return mul(Const(-1.0), e)


def power(base, exponent) -> Expr:
    base, exponent = as_expr(base), as_expr(exponent)
    if isinstance(exponent, Const) and exponent.value == 1.0:
        return base
    if isinstance(base, Const) and isinstance(exponent, Const):
        return Const(_pow(base.value, exponent.value))
    return Power(base, exponent)


def func(tag: str, *args) -> Expr:
    args = tuple(as_expr(a) for a in args)
    arity = 2 if tag in ("min", "max") else 1
    if tag in ("min", "max"):
        if len(args) < 2:
            raise ValueError(f"{tag} needs at least two arguments")
    elif len(args) != arity:
        raise ValueError(f"{tag} takes exactly one argument")
    if all(isinstance(a, Const) for a in args):
        return Const(_apply(tag, [a.value for a in args]))
    if tag in ("min", "max"):
        args = tuple(sorted(args, key=sort_key))
    return Func(tag, args)


def exp(x):
    return func("exp", x)


def log(x):
    return func("log", x)


def tanh(x):
    return func("tanh", x)


def sqrt(x):
    return func("sqrt", x)


def emin(*xs):
    return func("min", *xs)


def emax(*xs):
    return func("max", *xs)


def eabs(x):
    return func("abs", x)


def _pow(b: float, x: float) -> float:
    if b == 0.0 and x < 0:
        raise DomainError("0 raised to a negative power")
    if b < 0 and not float(x).is_integer():
        raise DomainError(f"negative base {b} with non-integer exponent {x}")
    try:
        return math.pow(b, x)
    except OverflowError as err:
        raise DomainError(str(err)) from None


def _apply(tag: str, vals: list) -> float:
    try:
        if tag == "exp":
            return math.exp(vals[0])
        if tag == "log":
            if vals[0] <= 0:
                raise DomainError(f"log of non-positive value {vals[0]}")
            return math.log(vals[0])
        if tag == "tanh":
            return math.tanh(vals[0])
        if tag == "sqrt":
            if vals[0] < 0:
                raise DomainError(f"sqrt of negative value {vals[0]}")
            return math.sqrt(vals[0])
        if tag == "min":
            return min(vals)
        if tag == "max":
            return max(vals)
        if tag == "abs":
            return abs(vals[0])
    except OverflowError as err:
        raise DomainError(str(err)) from None
    raise ValueError(tag)


# ---------------------------------------------------------------------------
# traversal helpers

def structurally_equal(a: Expr, b: Expr) -> bool:
    seen = set()
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x is y:
            continue
        if type(x) is not type(y) or x._digest != y._digest:
            return False
        key = (id(x), id(y))
        if key in seen:
            continue
        seen.add(key)
        if isinstance(x, Const):
            if x.value != y.value:
                return False
        elif isinstance(x, Symbol):
            if x.name != y.name or x.kind is not y.kind:
                return False
        else:
            if isinstance(x, Func) and x.tag != y.tag:
                return False
            cx, cy = x.children, y.children
            if len(cx) != len(cy):
                return False
            stack.extend(zip(cx, cy))
    return True


def postorder(e: Expr | Sequence[Expr]) -> list:
    """Unique nodes (by identity) in post-order, children before parents."""
    roots = [e] if isinstance(e, Expr) else list(e)
    out, seen = [], set()
    for root in roots:
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded or not node.children:
                seen.add(id(node))
                out.append(node)
                continue
            stack.append((node, True))
            for c in reversed(node.children):
                if id(c) not in seen:
                    stack.append((c, False))
    return out


def symbols(e: Expr | Sequence[Expr]) -> list:
    """Distinct symbols in first-seen order."""
    found = {}
    for node in postorder(e):
        if isinstance(node, Symbol):
            found.setdefault(node, None)
    return list(found)


def map_nodes(e: Expr, fn: Callable, memo: dict | None = None) -> Expr:
    """Rebuild ``e`` bottom-up; ``fn(node, new_children)`` returns the new node or None."""
    memo = {} if memo is None else memo
    for node in postorder(e):
        if id(node) in memo:
            continue
        kids = tuple(memo[id(c)] for c in node.children)
        res = fn(node, kids)
        if res is None:
            res = rebuild(node, kids)
        memo[id(node)] = res
    return memo[id(e)]


def rebuild(node: Expr, kids: tuple) -> Expr:
    if not node.children:
        return node
    if all(k is c for k, c in zip(kids, node.children)):
        return node
    if isinstance(node, Sum):
        return add(*kids)
    if isinstance(node, Product):
        return mul(*kids)
    if isinstance(node, Power):
        return power(*kids)
    return func(node.tag, *kids)


# ---------------------------------------------------------------------------
# evaluation

def _binding_table(bindings: Mapping) -> dict:
    table = {}
    for k, v in bindings.items():
        table[k.name if isinstance(k, Symbol) else k] = float(v)
    return table


def evaluate(e, bindings: Mapping | None = None) -> float:
    """Evaluate ``e`` with symbol values looked up by symbol or name."""
    e = as_expr(e)
    table = _binding_table(bindings or {})
    vals = {}
    for node in postorder(e):
        if isinstance(node, Const):
            v = node.value
        elif isinstance(node, Symbol):
            try:
                v = table[node.name]
            except KeyError:
                raise MissingBinding(node.name) from None
        else:
            kv = [vals[id(c)] for c in node.children]
            if isinstance(node, Sum):
                v = sum(kv)
            elif isinstance(node, Product):
                v = 1.0
                for x in kv:
                    v *= x
            elif isinstance(node, Power):
                v = _pow(kv[0], kv[1])
            else:
                v = _apply(node.tag, kv)
        vals[id(node)] = v
    return vals[id(e)]


def lambdify(e: Expr, order: Sequence[Symbol]) -> Callable:
    """Return ``f(values)`` evaluating ``e`` with positional values for ``order``."""
    names = [s.name for s in order]

    def f(values):
        return evaluate(e, dict(zip(names, values)))
    return f


# ---------------------------------------------------------------------------
# differentiation

def differentiate(e, s: Symbol) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to ``s``."""
    e = as_expr(e)
    if not s.kind.is_variable:
        raise ValueError(f"cannot differentiate with respect to parameter {s.name!r}")
    zero = Const(0.0)
    d = {}
    for node in postorder(e):
        if isinstance(node, Const):
            r = zero
        elif isinstance(node, Symbol):
            r = Const(1.0) if node == s else zero
        else:
            dk = [d[id(c)] for c in node.children]
            if all(x is zero for x in dk):
                r = zero
            elif isinstance(node, Sum):
                r = add(*[x for x in dk if x is not zero])
            elif isinstance(node, Product):
                terms = []
                for i, x in enumerate(dk):
                    if x is zero:
                        continue
                    others = node.args[:i] + node.args[i + 1:]
                    terms.append(mul(x, *others))
                r = add(*terms)
            elif isinstance(node, Power):
                b, x = node.base, node.exponent
                db, dx = dk
                terms = []
                if db is not zero:
                    terms.append(mul(x, power(b, add(x, -1.0)), db))
                if dx is not zero:
                    terms.append(mul(node, log(b), dx))
                r = add(*terms)
            else:
                if node.tag in NONSMOOTH:
                    raise NonSmooth(node.tag)
                a, da = node.args[0], dk[0]
                if node.tag == "exp":
                    r = mul(node, da)
                elif node.tag == "log":
                    r = mul(da, power(a, -1.0))
                elif node.tag == "tanh":
                    r = mul(add(1.0, neg(power(node, 2.0))), da)
                else:  # sqrt
                    r = mul(0.5, power(node, -1.0), da)
        d[id(node)] = r
    return d[id(e)]


# ---------------------------------------------------------------------------
# substitution and classification

def substitute(e, mapping: Mapping) -> Expr:
    """Simultaneously replace subexpressions (usually symbols) by expressions.

    Keys may be :class:`Expr` nodes or symbol names.  Replacement results are
    not substituted into again.
    """
    e = as_expr(e)
    if not mapping:
        return e
    table = {}
    for k, v in mapping.items():
        table[k.name if isinstance(k, Symbol) else k] = as_expr(v)
    only_symbols = all(isinstance(k, (Symbol, str)) for k in mapping)

    def fn(node, kids):
        if isinstance(node, Symbol):
            return table.get(node.name)
        if not only_symbols and node.children:
            hit = table.get(node)
            if hit is not None:
                return hit
        return None

    if not only_symbols:
        # compound keys must match the original subtree, so test before rebuilding
        memo = {}
        for node in postorder(e):
            if id(node) in memo:
                continue
            hit = table.get(node) if node.children else None
            if hit is not None:
                memo[id(node)] = hit
                continue
            kids = tuple(memo[id(c)] for c in node.children)
            res = table.get(node.name) if isinstance(node, Symbol) else None
            memo[id(node)] = res if res is not None else rebuild(node, kids)
        return memo[id(e)]
    return map_nodes(e, fn)


def classify_stage(e, indexed: Iterable = ()) -> StageClass:
    """First stage iff ``e`` has no operational variable and no indexed parameter.

    ``indexed`` names parameters whose data varies over scenarios or time.
    """
    e = as_expr(e)
    idx = {s.name if isinstance(s, Symbol) else s for s in indexed}
    for sym in symbols(e):
        if sym.kind is SymbolKind.OPERATIONAL:
            return StageClass.SECOND
        if sym.kind is SymbolKind.PARAMETER and sym.name in idx:
            return StageClass.SECOND
    return StageClass.FIRST


def solve_linear(e, s: Symbol) -> Expr:
    """Isolate ``s`` from ``e == 0`` when ``e`` is affine in ``s``."""
    e = as_expr(e)
    coef = differentiate(e, s)
    if s in symbols(coef):
        raise ExprError(f"expression is not affine in {s.name!r}")
    if isinstance(coef, Const) and coef.value == 0.0:
        raise ExprError(f"expression does not depend on {s.name!r}")
    rest = substitute(e, {s: 0.0})
    return mul(-1.0, rest, power(coef, -1.0))


# ---------------------------------------------------------------------------
# affine extraction

def affine_form(e) -> tuple | None:
    """Return ``(coefficients, constant)`` if ``e`` is affine in its symbols.

    The scan is structural: a product is affine only when at most one factor
    is non-constant.  Returns ``None`` for nonlinear expressions.
    """
    e = as_expr(e)
    res = {}
    for node in postorder(e):
        if isinstance(node, Const):
            r = ({}, node.value)
        elif isinstance(node, Symbol):
            r = ({node.name: 1.0}, 0.0)
        else:
            kids = [res[id(c)] for c in node.children]
            if any(k is None for k in kids):
                r = None
            elif isinstance(node, Sum):
                coefs, const = {}, 0.0
                for kc, k0 in kids:
                    for n, c in kc.items():
                        coefs[n] = coefs.get(n, 0.0) + c
                    const += k0
                r = (coefs, const)
            elif isinstance(node, Product):
                nonconst = [k for k in kids if k[0]]
                if len(nonconst) > 1:
                    r = None
                else:
                    scale = 1.0
                    for kc, k0 in kids:
                        if not kc:
                            scale *= k0
                    if nonconst:
                        kc, k0 = nonconst[0]
                        r = ({n: c * scale for n, c in kc.items()}, k0 * scale)
                    else:
                        r = ({}, scale)
            else:
                r = None
        res[id(node)] = r
    return res[id(e)]


# ---------------------------------------------------------------------------
# common subexpression elimination

def eliminate_common_subexpressions(exprs: Sequence, prefix: str = "cse.t",
                                    start: int = 0) -> tuple:
    """Replace repeated compound subtrees by auxiliary symbols.

    A subtree counts as repeated when it is reached from at least two
    distinct parent positions (or roots).  Subtrees that only repeat because
    an enclosing subtree repeats are defined once, inside that enclosing
    definition.  Returns ``(defs, reduced)`` with ``defs`` ordered so every
    definition only refers to earlier ones.
    """
    exprs = [as_expr(x) for x in exprs]
    indeg: dict = {}
    first: dict = {}
    expanded = set()

    def visit(node):
        stack = [node]
        while stack:
            n = stack.pop()
            if not n.children:
                continue
            indeg[n] = indeg.get(n, 0) + 1
            first.setdefault(n, n)
            if n in expanded:
                continue
            expanded.add(n)
            stack.extend(reversed(n.children))

    for x in exprs:
        visit(x)
    repeated = {n for n, c in indeg.items() if c >= 2}
    if not repeated:
        return [], list(exprs)

    defs = []
    aux = {}
    memo: dict = {}
    counter = [start]

    def reduce(node):
        for n in postorder(node):
            if id(n) in memo:
                continue
            kids = tuple(memo[id(c)] for c in n.children)
            if n.children and n in aux:
                memo[id(n)] = aux[n]
                continue
            new = rebuild(n, kids)
            if n.children and n in repeated:
                stage = classify_stage(n)
                kind = SymbolKind.DESIGN if stage is StageClass.FIRST else SymbolKind.OPERATIONAL
                sym = Symbol(f"{prefix}{counter[0]}", kind)
                counter[0] += 1
                defs.append((sym, new))
                aux[n] = sym
                new = sym
            memo[id(n)] = new
        return memo[id(node)]

    reduced = [reduce(x) for x in exprs]
    return defs, reduced


def expand_definitions(defs: Sequence, exprs: Sequence) -> list:
    """Inverse of CSE: substitute definitions back, latest first."""
    out = list(exprs)
    for sym, d in reversed(list(defs)):
        out = [substitute(x, {sym: d}) for x in out]
    return out


# ---------------------------------------------------------------------------
# printing

def format_number(v: float) -> str:
    """Shortest round-trip decimal representation."""
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


@dataclass(frozen=True)
class Dialect:
    """Operator and function spellings used by :func:`print_generic`."""
    pow_op: str = "**"
    functions: Mapping = field(default_factory=lambda: {f: f for f in FUNCTIONS})
    number: Callable = format_number
    symbol: Callable = lambda s: s.name


DEFAULT_DIALECT = Dialect()
CARET_DIALECT = Dialect(pow_op="^")

_PREC_SUM, _PREC_PROD, _PREC_UNARY, _PREC_POW, _PREC_ATOM = range(5)


def print_generic(e, dialect: Dialect = DEFAULT_DIALECT) -> str:
    """Deterministic infix rendering of ``e``."""
    e = as_expr(e)
    out: dict = {}
    for node in postorder(e):
        out[id(node)] = _render(node, out, dialect)
    return out[id(e)][0]


def _neg_coeff(node):
    """(-c, rest) if node is a product with a negative leading constant."""
    if isinstance(node, Product) and isinstance(node.args[0], Const) and node.args[0].value < 0:
        rest = node.args[1:]
        c = -node.args[0].value
        return c, rest
    return None


def _wrap(text_prec, prec):
    text, p = text_prec
    return f"({text})" if p < prec else text


def _render(node, out, d: Dialect):
    if isinstance(node, Const):
        s = d.number(node.value)
        return (s, _PREC_UNARY if node.value < 0 else _PREC_ATOM)
    if isinstance(node, Symbol):
        return (d.symbol(node), _PREC_ATOM)
    if isinstance(node, Sum):
        parts = []
        for i, a in enumerate(node.args):
            nc = _neg_coeff(a)
            if nc is not None:
                c, rest = nc
                body = _product_text(rest, c, out, d)
                parts.append(("-", body))
            elif isinstance(a, Const) and a.value < 0:
                parts.append(("-", d.number(-a.value)))
            else:
                parts.append(("+", _wrap(out[id(a)], _PREC_SUM + 1)))
        text = parts[0][1] if parts[0][0] == "+" else "-" + parts[0][1]
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return (text, _PREC_SUM)
    if isinstance(node, Product):
        nc = _neg_coeff(node)
        if nc is not None:
            c, rest = nc
            return ("-" + _product_text(rest, c, out, d), _PREC_UNARY)
        return (_product_text(node.args, 1.0, out, d), _PREC_PROD)
    if isinstance(node, Power):
        exp_node = node.exponent
        base = _wrap(out[id(node.base)], _PREC_ATOM)
        ex = _wrap(out[id(exp_node)], _PREC_ATOM)
        return (f"{base}{d.pow_op}{ex}", _PREC_POW)
    try:
        name = d.functions[node.tag]
    except KeyError:
        raise UnsupportedTag(node.tag) from None
    args = ", ".join(out[id(a)][0] for a in node.args)
    return (f"{name}({args})", _PREC_ATOM)


def _product_text(factors, coeff, out, d):
    num, den = [], []
    if coeff != 1.0:
        num.append(d.number(coeff))
    for f in factors:
        if (isinstance(f, Power) and isinstance(f.exponent, Const)
                and f.exponent.value == -1.0):
            den.append(_wrap(out[id(f.base)], _PREC_POW))
        else:
            num.append(_wrap(out[id(f)], _PREC_PROD + 1 if not isinstance(f, Product) else _PREC_ATOM))
    text = "*".join(num) if num else "1"
    for x in den:
        text += "/" + x
    return text


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_%][A-Za-z0-9_.%~]*(?:\[[^\]\s]*\])?)
  | (?P<op>\*\*|[-+*/^(),])
""", re.VERBOSE)


def tokenize(text: str) -> list:
    pos, toks = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r} at {pos}")
        pos = m.end()
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group()))
    return toks


class _Parser:
    def __init__(self, text, lookup):
        self.toks = tokenize(text)
        self.i = 0
        self.lookup = lookup

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ParseError(f"expected {value or 'token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        e = self.sum()
        if self.peek()[0] is not None:
            raise ParseError(f"trailing input at token {self.peek()[1]!r}")
        return e

    def sum(self):
        terms = [self.product()]
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            t = self.product()
            terms.append(t if op == "+" else neg(t))
        return add(*terms) if len(terms) > 1 else terms[0]

    def product(self):
        factors = [self.unary()]
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            f = self.unary()
            factors.append(f if op == "*" else power(f, -1.0))
        return mul(*factors) if len(factors) > 1 else factors[0]

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("**", "^"):
            self.take()
            return power(base, self.unary())  # right associative
        return base

    def atom(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return Const(float(val))
        if kind == "name":
            self.take()
            if self.peek()[1] == "(" and val in FUNCTIONS:
                self.take("(")
                args = [self.sum()]
                while self.peek()[1] == ",":
                    self.take(",")
                    args.append(self.sum())
                self.take(")")
                return func(val, *args)
            return self.lookup(val)
        if val == "(":
            self.take("(")
            e = self.sum()
            self.take(")")
            return e
        raise ParseError(f"unexpected token {val!r}")


def parse(text: str, symbols_by_name: Mapping | None = None,
          default_kind: SymbolKind = SymbolKind.OPERATIONAL) -> Expr:
    """Parse the infix grammar written by :func:`print_generic`.

    Names not found in ``symbols_by_name`` become fresh symbols of
    ``default_kind``.
    """
    table = dict(symbols_by_name or {})

    def lookup(name):
        sym = table.get(name)
        if sym is None:
            sym = table[name] = Symbol(name, default_kind)
        return sym
    return _Parser(text, lookup).parse()
