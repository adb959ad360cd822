"""
Hash-consed expression DAG.

Every expression lives in an ExprStore. Nodes are interned, so structurally
identical subexpressions share one identifier and structural equality is
identifier equality. The builders (add, mul, pow, func) keep nodes in canonical
form: n-ary Add/Mul are flattened, integer constants folded, like terms and like
bases collected, and children sorted by a fixed total order.
"""
from __future__ import annotations

import math
import re
from enum import IntEnum
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from .exceptions import (
    EvaluationDomainError,
    ParseError,
    UnboundVariableError,
    UnknownFunctionError,
)


class Kind(IntEnum):
    """Node kinds; the integer value is the rank used by the canonical order"""

    INTEGER = 0
    CONST = 1
    VARIABLE = 2
    FUNC = 3
    POW = 4
    MUL = 5
    ADD = 6


FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt", "arctan", "arcsin")
CONST_TOKENS = ("CONST", "CONST2", "CONST3")

# Integer powers are folded only while the result stays below this many bits.
MAX_FOLD_BITS = 4096

Node = Tuple[Kind, object, Tuple[int, ...]]
Operand = Union["Expr", int, Fraction]


class Expr:
    """Handle to a node of an ExprStore"""

    __slots__ = ("store", "id")

    def __init__(self, store: "ExprStore", ident: int):
        self.store = store
        self.id = ident

    @property
    def kind(self) -> Kind:
        return self.store.node(self.id)[0]

    @property
    def payload(self):
        return self.store.node(self.id)[1]

    @property
    def child_ids(self) -> Tuple[int, ...]:
        return self.store.node(self.id)[2]

    @property
    def children(self) -> Tuple["Expr", ...]:
        return tuple(Expr(self.store, c) for c in self.child_ids)

    @property
    def value(self) -> int:
        if self.kind is not Kind.INTEGER:
            raise TypeError(f"{self} is not an integer")
        return self.payload

    @property
    def name(self) -> str:
        if self.kind not in (Kind.VARIABLE, Kind.FUNC, Kind.CONST):
            raise TypeError(f"{self} has no name")
        return self.payload

    def is_integer(self, value: Optional[int] = None) -> bool:
        if self.kind is not Kind.INTEGER:
            return False
        return value is None or self.payload == value

    def __eq__(self, other) -> bool:
        return isinstance(other, Expr) and self.id == other.id and self.store is other.store

    def __hash__(self) -> int:
        return hash(self.id)

    def __repr__(self) -> str:
        return f"Expr({print_infix(self)!r})"

    def __str__(self) -> str:
        return print_infix(self)

    def __add__(self, other: Operand) -> "Expr":
        return self.store.add(self, other)

    def __radd__(self, other: Operand) -> "Expr":
        return self.store.add(other, self)

    def __sub__(self, other: Operand) -> "Expr":
        return self.store.add(self, self.store.mul(-1, other))

    def __rsub__(self, other: Operand) -> "Expr":
        return self.store.add(other, self.store.mul(-1, self))

    def __mul__(self, other: Operand) -> "Expr":
        return self.store.mul(self, other)

    def __rmul__(self, other: Operand) -> "Expr":
        return self.store.mul(other, self)

    def __truediv__(self, other: Operand) -> "Expr":
        return self.store.mul(self, self.store.pow(other, -1))

    def __rtruediv__(self, other: Operand) -> "Expr":
        return self.store.mul(other, self.store.pow(self, -1))

    def __pow__(self, other: Operand) -> "Expr":
        return self.store.pow(self, other)

    def __neg__(self) -> "Expr":
        return self.store.mul(-1, self)


class ExprStore:
    """Interning table plus append-only node arena"""

    def __init__(self):
        self._nodes: List[Node] = []
        self._index: Dict[Node, int] = {}
        self._keys: List[tuple] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, ident: int) -> Node:
        return self._nodes[ident]

    def expr(self, ident: int) -> Expr:
        return Expr(self, ident)

    def sort_key(self, e: Expr) -> tuple:
        return self._keys[e.id]

    # -- interning -------------------------------------------------------

    def intern_raw(self, kind: Kind, payload, children: Tuple[int, ...]) -> Expr:
        """Intern a node exactly as given, without canonicalisation"""
        key = (Kind(kind), payload, tuple(children))
        ident = self._index.get(key)
        if ident is None:
            ident = len(self._nodes)
            self._nodes.append(key)
            self._index[key] = ident
            self._keys.append(self._make_key(*key))
        return Expr(self, ident)

    def _make_key(self, kind: Kind, payload, children: Tuple[int, ...]) -> tuple:
        if kind in (Kind.INTEGER, Kind.CONST, Kind.VARIABLE):
            return (int(kind), payload)
        if kind is Kind.FUNC:
            return (int(kind), payload, self._keys[children[0]])
        return (int(kind), tuple(self._keys[c] for c in children))

    def _coerce(self, value: Operand) -> Expr:
        if isinstance(value, Expr):
            if value.store is not self:
                raise ValueError("expression belongs to a different store")
            return value
        if isinstance(value, bool):
            raise TypeError("booleans are not expressions")
        if isinstance(value, int):
            return self.integer(value)
        if isinstance(value, Fraction):
            return self.rational(value)
        raise TypeError(f"cannot build an expression from {type(value).__name__}")

    def _assemble(self, kind: Kind, items: Sequence[Expr]) -> Expr:
        if not items:
            return self.integer(0 if kind is Kind.ADD else 1)
        if len(items) == 1:
            return items[0]
        ordered = sorted(items, key=lambda e: self._keys[e.id])
        return self.intern_raw(kind, None, tuple(e.id for e in ordered))

    # -- leaves ----------------------------------------------------------

    def integer(self, value: int) -> Expr:
        return self.intern_raw(Kind.INTEGER, int(value), ())

    def rational(self, value: Fraction) -> Expr:
        value = Fraction(value)
        if value.denominator == 1:
            return self.integer(value.numerator)
        inverse = self.intern_raw(
            Kind.POW, None, (self.integer(value.denominator).id, self.integer(-1).id)
        )
        if value.numerator == 1:
            return inverse
        return self.intern_raw(Kind.MUL, None, (self.integer(value.numerator).id, inverse.id))

    def const(self, token: str) -> Expr:
        if token not in CONST_TOKENS:
            raise ValueError(f"unknown constant token {token!r}")
        return self.intern_raw(Kind.CONST, token, ())

    def var(self, name: str) -> Expr:
        return self.intern_raw(Kind.VARIABLE, name, ())

    # -- numeric views ---------------------------------------------------

    def numeric_value(self, e: Expr) -> Optional[Fraction]:
        """Exact rational value of a constant node, or None"""
        kind, payload, children = self._nodes[e.id]
        if kind is Kind.INTEGER:
            return Fraction(payload)
        if kind is Kind.POW:
            base, exponent = (self._nodes[c] for c in children)
            if (
                base[0] is Kind.INTEGER
                and exponent[0] is Kind.INTEGER
                and base[1] != 0
                and abs(exponent[1]) * abs(base[1]).bit_length() <= MAX_FOLD_BITS
            ):
                return Fraction(base[1]) ** exponent[1]
            return None
        if kind is Kind.MUL:
            total = Fraction(1)
            for c in children:
                v = self.numeric_value(Expr(self, c))
                if v is None:
                    return None
                total *= v
            return total
        return None

    def split_coefficient(self, e: Expr) -> Tuple[Fraction, Tuple[int, ...]]:
        """(numeric coefficient, non-numeric factor ids) of a term"""
        value = self.numeric_value(e)
        if value is not None:
            return value, ()
        kind, _, children = self._nodes[e.id]
        if kind is not Kind.MUL:
            return Fraction(1), (e.id,)
        coeff = Fraction(1)
        rest = []
        for c in children:
            v = self.numeric_value(Expr(self, c))
            if v is None:
                rest.append(c)
            else:
                coeff *= v
        return coeff, tuple(rest)

    # -- canonical builders ----------------------------------------------

    def add(self, *terms: Operand) -> Expr:
        constant = Fraction(0)
        collected: Dict[Tuple[int, ...], Fraction] = {}
        pending = [self._coerce(t) for t in terms]
        while pending:
            term = pending.pop()
            if term.kind is Kind.ADD:
                pending.extend(term.children)
                continue
            coeff, rest = self.split_coefficient(term)
            if not rest:
                constant += coeff
            else:
                collected[rest] = collected.get(rest, Fraction(0)) + coeff
        out = []
        for rest, coeff in collected.items():
            if coeff == 0:
                continue
            factors = [Expr(self, r) for r in rest]
            if coeff == 1 and len(factors) == 1:
                out.append(factors[0])
            else:
                out.append(self.mul(self.rational(coeff), *factors))
        if constant != 0:
            out.append(self.rational(constant))
        return self._assemble(Kind.ADD, out)

    def mul(self, *factors: Operand) -> Expr:
        coeff = Fraction(1)
        exponents: Dict[int, List[Expr]] = {}
        pending = [self._coerce(f) for f in factors]
        while pending:
            factor = pending.pop()
            if factor.kind is Kind.MUL:
                pending.extend(factor.children)
                continue
            value = self.numeric_value(factor)
            if value is not None:
                coeff *= value
                continue
            if factor.kind is Kind.POW:
                base, exponent = factor.children
            else:
                base, exponent = factor, self.integer(1)
            exponents.setdefault(base.id, []).append(exponent)
        if coeff == 0:
            return self.integer(0)

        out: List[Expr] = []
        regroup = False
        for base_id, exps in exponents.items():
            total = exps[0] if len(exps) == 1 else self.add(*exps)
            combined = self.pow(Expr(self, base_id), total)
            value = self.numeric_value(combined)
            if value is not None:
                coeff *= value
                continue
            # sqrt(u)^2 -> u or a distributed product: merge again with the other factors
            if combined.id != base_id and not (
                combined.kind is Kind.POW and combined.child_ids[0] == base_id
            ):
                regroup = True
            out.append(combined)
        if coeff == 0:
            return self.integer(0)
        if regroup:
            return self.mul(self.rational(coeff), *out)
        if not out:
            return self.rational(coeff)
        if coeff != 1 and len(out) == 1 and out[0].kind is Kind.ADD:
            return self.add(*[self.mul(self.rational(coeff), t) for t in out[0].children])
        items = list(out)
        if coeff.numerator != 1:
            items.append(self.integer(coeff.numerator))
        if coeff.denominator != 1:
            items.append(self.rational(Fraction(1, coeff.denominator)))
        return self._assemble(Kind.MUL, items)

    def pow(self, base: Operand, exponent: Operand) -> Expr:
        b = self._coerce(base)
        e = self._coerce(exponent)
        ev = self.numeric_value(e)
        if ev is not None:
            if ev == 0:
                return self.integer(1)
            if ev == 1:
                return b
        bv = self.numeric_value(b)
        if bv is not None:
            if bv == 1:
                return self.integer(1)
            if bv == 0 and ev is not None:
                if ev > 0:
                    return self.integer(0)
                # every negative power of zero shares the node 0^-1
                return self.intern_raw(Kind.POW, None, (self.integer(0).id, self.integer(-1).id))
            if ev is not None and ev.denominator == 1 and bv != 0:
                n = ev.numerator
                bits = max(bv.numerator.bit_length(), bv.denominator.bit_length())
                if abs(n) * bits <= MAX_FOLD_BITS:
                    return self.rational(bv ** n)
        if ev is not None and ev.denominator == 1:
            if b.kind is Kind.POW:
                inner_base, inner_exp = b.children
                return self.pow(inner_base, self.mul(inner_exp, e))
            if b.kind is Kind.MUL:
                return self.mul(*[self.pow(f, e) for f in b.children])
            if b.kind is Kind.FUNC and b.payload == "sqrt" and ev.numerator % 2 == 0:
                return self.pow(b.children[0], self.integer(ev.numerator // 2))
        return self.intern_raw(Kind.POW, None, (b.id, e.id))

    def func(self, name: str, arg: Operand) -> Expr:
        if name not in FUNCTIONS:
            raise UnknownFunctionError(f"unknown function {name!r}", 0)
        a = self._coerce(arg)
        value = self.numeric_value(a)
        if value == 0:
            if name in ("cos", "exp"):
                return self.integer(1)
            if name != "ln":
                return self.integer(0)
        if name == "ln":
            if value == 1:
                return self.integer(0)
            if a.kind is Kind.FUNC and a.payload == "exp":
                return a.children[0]
        if name == "sqrt" and value is not None and value > 0:
            num, den = math.isqrt(value.numerator), math.isqrt(value.denominator)
            if num * num == value.numerator and den * den == value.denominator:
                return self.rational(Fraction(num, den))
        return self.intern_raw(Kind.FUNC, name, (a.id,))

    def build(self, kind: Kind, payload, children: Sequence[Expr]) -> Expr:
        """Rebuild a node of the given shape through the canonical builders"""
        if kind is Kind.ADD:
            return self.add(*children)
        if kind is Kind.MUL:
            return self.mul(*children)
        if kind is Kind.POW:
            return self.pow(children[0], children[1])
        if kind is Kind.FUNC:
            return self.func(payload, children[0])
        return self.intern_raw(kind, payload, ())


# ---------------------------------------------------------------------------
# Structural utilities


def iter_ids(e: Expr) -> Iterator[int]:
    """Distinct node identifiers reachable from e"""
    seen = set()
    stack = [e.id]
    nodes = e.store
    while stack:
        ident = stack.pop()
        if ident in seen:
            continue
        seen.add(ident)
        yield ident
        stack.extend(nodes.node(ident)[2])


def dag_size(e: Expr) -> int:
    """Number of distinct nodes reachable from e; shared nodes count once"""
    return sum(1 for _ in iter_ids(e))


def tree_size(e: Expr) -> int:
    """Node count of the tree unfolding of e"""
    counts: Dict[int, int] = {}
    store = e.store
    for ident in sorted(iter_ids(e)):
        # children are always interned before their parents
        counts[ident] = 1 + sum(counts[c] for c in store.node(ident)[2])
    return counts[e.id]


def free_of(e: Expr, var: Union[str, Expr]) -> bool:
    name = var if isinstance(var, str) else var.name
    store = e.store
    for ident in iter_ids(e):
        kind, payload, _ = store.node(ident)
        if kind is Kind.VARIABLE and payload == name:
            return False
    return True


def replace_subterm(e: Expr, target: Expr, replacement: Expr) -> Expr:
    """Replace every occurrence of the node `target` and rebuild canonically"""
    store = e.store
    memo: Dict[int, Expr] = {}

    def walk(ident: int) -> Expr:
        if ident == target.id:
            return replacement
        cached = memo.get(ident)
        if cached is not None:
            return cached
        kind, payload, children = store.node(ident)
        if not children:
            result = Expr(store, ident)
        else:
            rebuilt = [walk(c) for c in children]
            if all(r.id == c for r, c in zip(rebuilt, children)):
                result = Expr(store, ident)
            else:
                result = store.build(kind, payload, rebuilt)
        memo[ident] = result
        return result

    return walk(e.id)


def substitute(e: Expr, var: Union[str, Expr], replacement: Operand) -> Expr:
    """Replace every occurrence of a variable; the result is canonical"""
    store = e.store
    target = store.var(var) if isinstance(var, str) else var
    return replace_subterm(e, target, store._coerce(replacement))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^()]))")


def _tokenize(text: str) -> List[Tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            offset = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[offset]!r}", offset)
        number, name, op = match.groups()
        start = match.start(1) if number else match.start(2) if name else match.start(3)
        if number:
            tokens.append(("int", number, start))
        elif name:
            tokens.append(("name", name, start))
        else:
            tokens.append(("op", "^" if op == "**" else op, start))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str, store: ExprStore):
        self.text = text
        self.store = store
        self.tokens = _tokenize(text)
        self.i = 0

    def parse(self) -> Expr:
        if not self.tokens:
            raise ParseError("empty expression", 0)
        result = self.expression()
        if self.i < len(self.tokens):
            _, value, pos = self.tokens[self.i]
            raise ParseError(f"unexpected token {value!r}", pos)
        return result

    def _peek(self, *ops: str) -> bool:
        if self.i >= len(self.tokens):
            return False
        kind, value, _ = self.tokens[self.i]
        return kind == "op" and value in ops

    def _next(self) -> Tuple[str, str, int]:
        if self.i >= len(self.tokens):
            raise ParseError("unexpected end of input", len(self.text))
        token = self.tokens[self.i]
        self.i += 1
        return token

    def _expect(self, op: str) -> None:
        kind, value, pos = self._next()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}, found {value!r}", pos)

    def expression(self) -> Expr:
        terms = [self.term()]
        while self._peek("+", "-"):
            _, op, _ = self._next()
            term = self.term()
            terms.append(term if op == "+" else self.store.mul(-1, term))
        return terms[0] if len(terms) == 1 else self.store.add(*terms)

    def term(self) -> Expr:
        factors = [self.unary()]
        while self._peek("*", "/"):
            _, op, _ = self._next()
            factor = self.unary()
            factors.append(factor if op == "*" else self.store.pow(factor, -1))
        return factors[0] if len(factors) == 1 else self.store.mul(*factors)

    def unary(self) -> Expr:
        if self._peek("-"):
            self._next()
            return self.store.mul(-1, self.unary())
        if self._peek("+"):
            self._next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._peek("^"):
            self._next()
            return self.store.pow(base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, value, pos = self._next()
        if kind == "int":
            return self.store.integer(int(value))
        if kind == "name":
            if self._peek("("):
                if value not in FUNCTIONS:
                    raise UnknownFunctionError(f"unknown function {value!r}", pos)
                self._next()
                arg = self.expression()
                self._expect(")")
                return self.store.func(value, arg)
            if value in FUNCTIONS:
                raise ParseError(f"function {value!r} needs a parenthesised argument", pos)
            if value in CONST_TOKENS:
                return self.store.const(value)
            return self.store.var(value)
        if value == "(":
            inner = self.expression()
            self._expect(")")
            return inner
        raise ParseError(f"unexpected token {value!r}", pos)


def parse(text: str, store: Optional[ExprStore] = None) -> Expr:
    """Parse an infix expression into canonical form"""
    return _Parser(text, store if store is not None else ExprStore()).parse()


# ---------------------------------------------------------------------------
# Printing

PREC_ADD, PREC_MUL, PREC_POW, PREC_ATOM = 1, 2, 3, 4


def _number_text(value: Fraction, parent: int) -> str:
    if value.denominator == 1:
        text = str(value.numerator)
        return f"({text})" if value < 0 and parent > PREC_ADD else text
    text = f"{value.numerator}/{value.denominator}"
    if parent > PREC_MUL or (value < 0 and parent > PREC_ADD):
        return f"({text})"
    return text


class _Printer:
    def __init__(self, store: ExprStore):
        self.store = store

    def render(self, ident: int, parent: int) -> str:
        store = self.store
        kind, payload, children = store.node(ident)
        if kind is Kind.INTEGER:
            return _number_text(Fraction(payload), parent)
        if kind in (Kind.CONST, Kind.VARIABLE):
            return payload
        value = store.numeric_value(Expr(store, ident))
        if value is not None:
            return _number_text(value, parent)
        if kind is Kind.FUNC:
            return f"{payload}({self.render(children[0], 0)})"
        if kind is Kind.POW:
            text = f"{self.render(children[0], PREC_ATOM)}^{self.render(children[1], PREC_ATOM)}"
            return f"({text})" if parent > PREC_POW else text
        if kind is Kind.MUL:
            coeff, factors = store.split_coefficient(Expr(store, ident))
            text = self.product(coeff, factors)
            if parent > PREC_MUL or (coeff < 0 and parent > PREC_ADD):
                return f"({text})"
            return text
        parts = []
        for i, child in enumerate(reversed(children)):
            coeff, factors = store.split_coefficient(Expr(store, child))
            if i == 0:
                parts.append(self.render(child, PREC_ADD))
            elif coeff < 0:
                parts.append(" - " + self.product(-coeff, factors))
            else:
                parts.append(" + " + self.render(child, PREC_ADD))
        text = "".join(parts)
        return f"({text})" if parent > PREC_ADD else text

    def product(self, coeff: Fraction, factors: Sequence[int]) -> str:
        store = self.store
        numerator: List[str] = []
        denominator: List[str] = []
        for f in factors:
            kind, _, children = store.node(f)
            if kind is Kind.POW:
                exponent = store.numeric_value(Expr(store, children[1]))
                if exponent is not None and exponent < 0:
                    base = self.render(children[0], PREC_ATOM)
                    if exponent == -1:
                        denominator.append(base)
                    else:
                        denominator.append(f"{base}^{_number_text(-exponent, PREC_ATOM)}")
                    continue
            numerator.append(self.render(f, PREC_MUL))
        magnitude = abs(coeff)
        if magnitude.numerator != 1 or not numerator:
            numerator.insert(0, str(magnitude.numerator))
        if magnitude.denominator != 1:
            denominator.insert(0, str(magnitude.denominator))
        # one divisor at a time: a grouped "/(2*(a + b))" would parse with the 2 distributed
        text = "*".join(numerator) + "".join("/" + d for d in denominator)
        return ("-" if coeff < 0 else "") + text


def print_infix(e: Expr) -> str:
    return _Printer(e.store).render(e.id, 0)


# ---------------------------------------------------------------------------
# Prefix serialization


def to_prefix(e: Expr) -> str:
    """Whitespace-separated prefix form with explicit n-ary arity (`Add 3 a b c`)"""
    store = e.store
    tokens: List[str] = []
    stack = [e.id]
    while stack:
        ident = stack.pop()
        kind, payload, children = store.node(ident)
        if kind is Kind.INTEGER:
            tokens.append(str(payload))
        elif kind in (Kind.CONST, Kind.VARIABLE):
            tokens.append(payload)
        elif kind is Kind.FUNC:
            tokens.append(payload.capitalize())
        elif kind is Kind.POW:
            tokens.append("Pow")
        else:
            tokens.extend(("Mul" if kind is Kind.MUL else "Add", str(len(children))))
        stack.extend(reversed(children))
    return " ".join(tokens)


_PREFIX_FUNCS = {name.capitalize(): name for name in FUNCTIONS}
_INT_RE = re.compile(r"-?\d+$")


def from_prefix(text: str, store: ExprStore, raw: bool = False) -> Expr:
    """Read a prefix serialization.

    With raw=True nodes are interned with the exact shape given (used for
    normalized forms); otherwise they are rebuilt canonically.
    """
    tokens = text.split()
    pos = 0

    def read() -> Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("truncated prefix expression", pos)
        token = tokens[pos]
        pos += 1
        if _INT_RE.match(token):
            return store.integer(int(token))
        if token in CONST_TOKENS:
            return store.const(token)
        if token in _PREFIX_FUNCS:
            arg = read()
            if raw:
                return store.intern_raw(Kind.FUNC, _PREFIX_FUNCS[token], (arg.id,))
            return store.func(_PREFIX_FUNCS[token], arg)
        if token == "Pow":
            base = read()
            exponent = read()
            if raw:
                return store.intern_raw(Kind.POW, None, (base.id, exponent.id))
            return store.pow(base, exponent)
        if token in ("Add", "Mul"):
            if pos >= len(tokens) or not tokens[pos].isdigit():
                raise ParseError(f"missing arity after {token}", pos)
            arity = int(tokens[pos])
            pos += 1
            if arity < 2:
                raise ParseError(f"arity {arity} below 2", pos - 1)
            args = [read() for _ in range(arity)]
            kind = Kind.ADD if token == "Add" else Kind.MUL
            if raw:
                return store.intern_raw(kind, None, tuple(a.id for a in args))
            return store.build(kind, None, args)
        if re.match(r"[A-Za-z_][A-Za-z_0-9]*$", token):
            return store.var(token)
        raise ParseError(f"bad token {token!r}", pos - 1)

    result = read()
    if pos != len(tokens):
        raise ParseError("trailing tokens after prefix expression", pos)
    return result


# ---------------------------------------------------------------------------
# Numeric evaluation


def eval_numeric(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate in double precision; domain violations raise EvaluationDomainError"""
    store = e.store
    cache: Dict[int, float] = {}

    def fail(ident: int, reason: str):
        raise EvaluationDomainError(Expr(store, ident), reason)

    def ev(ident: int) -> float:
        if ident in cache:
            return cache[ident]
        kind, payload, children = store.node(ident)
        try:
            if kind is Kind.INTEGER:
                result = float(payload)
            elif kind in (Kind.VARIABLE, Kind.CONST):
                if payload not in bindings:
                    raise UnboundVariableError(payload)
                result = float(bindings[payload])
            elif kind is Kind.ADD:
                result = math.fsum(ev(c) for c in children)
            elif kind is Kind.MUL:
                result = 1.0
                for c in children:
                    result *= ev(c)
            elif kind is Kind.POW:
                result = _eval_pow(store, ident, ev(children[0]), children[1], ev, fail)
            else:
                result = _eval_func(payload, ev(children[0]), ident, fail)
        except OverflowError:
            fail(ident, "overflow")
        except ZeroDivisionError:
            fail(ident, "division by zero")
        if not math.isfinite(result):
            fail(ident, "non-finite value")
        cache[ident] = result
        return result

    return ev(e.id)


def _eval_pow(store: ExprStore, ident: int, base: float, exponent_id: int, ev, fail) -> float:
    exp_kind, exp_payload, _ = store.node(exponent_id)
    if exp_kind is Kind.INTEGER:
        if base == 0.0 and exp_payload < 0:
            fail(ident, "division by zero")
        return base ** exp_payload
    exponent = ev(exponent_id)
    if base == 0.0 and exponent <= 0:
        fail(ident, "division by zero")
    if base < 0 and not float(exponent).is_integer():
        fail(ident, "fractional power of a negative number")
    return math.pow(base, exponent)


def _eval_func(name: str, arg: float, ident: int, fail) -> float:
    if name == "sin":
        return math.sin(arg)
    if name == "cos":
        return math.cos(arg)
    if name == "tan":
        return math.tan(arg)
    if name == "exp":
        return math.exp(arg)
    if name == "ln":
        if arg <= 0:
            fail(ident, "logarithm of a non-positive number")
        return math.log(arg)
    if name == "sqrt":
        if arg < 0:
            fail(ident, "square root of a negative number")
        return math.sqrt(arg)
    if name == "arctan":
        return math.atan(arg)
    if abs(arg) > 1:
        fail(ident, "arcsin outside [-1, 1]")
    return math.asin(arg)
