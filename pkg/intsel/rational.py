"""
Rational-function integration: PartialFractions and Hermite.

Polynomial arithmetic runs on sympy.Poly over QQ; expressions cross the
boundary through as_rational_function and poly_to_expr only.
"""
import logging
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import sympy
from sympy import QQ, Poly, Rational

from .calculus import NotApplicable, StepBudget
from .expr import Expr, ExprStore, Kind

logger = logging.getLogger(__name__)

_X = sympy.Symbol("x")
# Rational root search gives up on constant terms with more divisors than this
MAX_ROOT_CANDIDATES = 4096

RationalFunction = Tuple[Poly, Poly]


def _poly(value) -> Poly:
    return Poly(value, _X, domain=QQ)


def _fraction(value) -> Fraction:
    r = Rational(value)
    return Fraction(int(r.p), int(r.q))


def _normalize(num: Poly, den: Poly) -> RationalFunction:
    if num.is_zero:
        return num, _poly(1)
    g = num.gcd(den)
    num, den = num.quo(g), den.quo(g)
    lc = den.LC()
    return num.quo_ground(lc), den.monic()


def as_rational_function(
    e: Expr, var: str, budget: Optional[StepBudget] = None
) -> Optional[RationalFunction]:
    """(numerator, monic denominator) over QQ, or None if e is not rational in var"""
    store = e.store
    memo: Dict[int, Optional[RationalFunction]] = {}

    def conv(ident: int) -> Optional[RationalFunction]:
        if ident in memo:
            return memo[ident]
        if budget is not None:
            budget.tick()
        kind, payload, children = store.node(ident)
        result: Optional[RationalFunction] = None
        if kind is Kind.INTEGER:
            result = (_poly(payload), _poly(1))
        elif kind is Kind.VARIABLE and payload == var:
            result = (_poly(_X), _poly(1))
        elif kind in (Kind.ADD, Kind.MUL):
            acc = (_poly(0 if kind is Kind.ADD else 1), _poly(1))
            for c in children:
                part = conv(c)
                if part is None:
                    acc = None
                    break
                if kind is Kind.ADD:
                    acc = _normalize(acc[0] * part[1] + part[0] * acc[1], acc[1] * part[1])
                else:
                    acc = _normalize(acc[0] * part[0], acc[1] * part[1])
            result = acc
        elif kind is Kind.POW:
            n = store.numeric_value(Expr(store, children[1]))
            base = conv(children[0])
            if base is not None and n is not None and n.denominator == 1:
                k = n.numerator
                if k >= 0:
                    result = _normalize(base[0] ** k, base[1] ** k)
                elif not base[0].is_zero:
                    result = _normalize(base[1] ** -k, base[0] ** -k)
        memo[ident] = result
        return result

    return conv(e.id)


def poly_to_expr(p: Poly, store: ExprStore, var: str) -> Expr:
    x = store.var(var)
    terms = [
        store.mul(store.rational(_fraction(c)), store.pow(x, k))
        for (k,), c in p.terms()
    ]
    return store.add(*terms)


def fraction_to_expr(num: Poly, den: Poly, store: ExprStore, var: str) -> Expr:
    return store.mul(poly_to_expr(num, store, var), store.pow(poly_to_expr(den, store, var), -1))


def rational_roots(g: Poly, budget: StepBudget) -> List[Fraction]:
    """Rational roots of a square-free polynomial by the rational root theorem"""
    _, scaled = g.clear_denoms()
    coeffs = [int(c) for c in scaled.all_coeffs()]
    roots = []
    while coeffs and coeffs[-1] == 0:
        coeffs.pop()
        if Fraction(0) not in roots:
            roots.append(Fraction(0))
    if len(coeffs) < 2:
        return roots
    lead, const = abs(coeffs[0]), abs(coeffs[-1])
    numerators = sympy.divisors(const)
    denominators = sympy.divisors(lead)
    if len(numerators) * len(denominators) > MAX_ROOT_CANDIDATES:
        raise NotApplicable("too many rational root candidates")
    for p in numerators:
        for q in denominators:
            for sign in (1, -1):
                budget.tick()
                candidate = Fraction(sign * p, q)
                if candidate in roots:
                    continue
                if g.eval(Rational(candidate.numerator, candidate.denominator)) == 0:
                    roots.append(candidate)
    return sorted(roots)


def _discriminant(quadratic: Poly) -> Fraction:
    a, b, c = (_fraction(v) for v in quadratic.all_coeffs())
    return b * b - 4 * a * c


def factor_denominator(den: Poly, budget: StepBudget) -> List[Tuple[Poly, int]]:
    """Monic linear and irreducible quadratic factors with multiplicities"""
    _, square_free = den.sqf_list()
    out = []
    for g, multiplicity in square_free:
        g = g.monic()
        for root in rational_roots(g, budget):
            linear = _poly(_X - Rational(root.numerator, root.denominator))
            out.append((linear, multiplicity))
            g = g.quo(linear)
        if g.degree() <= 0:
            continue
        for factor, _ in g.factor_list()[1]:
            budget.tick()
            factor = factor.monic()
            if factor.degree() == 2 and _discriminant(factor) < 0:
                out.append((factor, multiplicity))
            else:
                raise NotApplicable(f"denominator factor {factor.as_expr()} is not linear or quadratic")
    return out


def decompose(
    num: Poly, den: Poly, factors: List[Tuple[Poly, int]], budget: StepBudget
) -> List[Tuple[Poly, Poly, int]]:
    """Terms (r, f, k) with num/den == sum r / f^k and deg r < deg f"""
    out = []
    for f, multiplicity in factors:
        budget.tick()
        block = f ** multiplicity
        other = den.quo(block)
        s, _, h = other.gcdex(block)
        part = (num * s).quo_ground(h.LC()).rem(block)
        k = multiplicity
        while k >= 1 and not part.is_zero:
            part, r = part.div(f)
            if not r.is_zero:
                out.append((r, f, k))
            k -= 1
    return out


def integrate_fraction(r: Poly, f: Poly, k: int, store: ExprStore, var: str) -> Expr:
    """Antiderivative of r / f^k for a linear f, or a quadratic f with k == 1"""
    base = poly_to_expr(f, store, var)
    if f.degree() == 1:
        a = _fraction(r.nth(0))
        if k == 1:
            return store.mul(store.rational(a), store.func("ln", base))
        return store.mul(store.rational(-a / (k - 1)), store.pow(base, 1 - k))
    if k != 1:
        raise NotApplicable("repeated quadratic factor")
    p, q = _fraction(f.nth(1)), _fraction(f.nth(0))
    b, c = _fraction(r.nth(1)), _fraction(r.nth(0))
    x = store.var(var)
    root = store.func("sqrt", store.rational(4 * q - p * p))
    inverse_root = store.pow(root, -1)
    log_term = store.mul(store.rational(b / 2), store.func("ln", base))
    arctan = store.func("arctan", store.mul(store.add(store.mul(2, x), store.rational(p)), inverse_root))
    return store.add(log_term, store.mul(store.rational(2 * c - b * p), inverse_root, arctan))


def _log_part(num: Poly, den: Poly, store: ExprStore, var: str, budget: StepBudget, square_free: bool) -> List[Expr]:
    factors = factor_denominator(den, budget)
    if not square_free and any(f.degree() == 2 and m > 1 for f, m in factors):
        raise NotApplicable("repeated irreducible quadratic factor")
    return [integrate_fraction(r, f, k, store, var) for r, f, k in decompose(num, den, factors, budget)]


def _split_polynomial(e: Expr, var: str, budget: StepBudget) -> Tuple[Expr, Poly, Poly]:
    rf = as_rational_function(e, var, budget)
    if rf is None:
        raise NotApplicable("not a rational function")
    num, den = rf
    poly_part, remainder = num.div(den)
    return poly_to_expr(poly_part.integrate(), e.store, var), remainder, den


def partial_fractions(e: Expr, var: str, budget: StepBudget) -> Expr:
    """Full partial fraction expansion integrated term by term"""
    store = e.store
    polynomial, remainder, den = _split_polynomial(e, var, budget)
    pieces = [polynomial]
    if not remainder.is_zero:
        pieces.extend(_log_part(remainder, den, store, var, budget, square_free=False))
    return store.add(*pieces)


def _solve_diophantine(a: Poly, b: Poly, c: Poly) -> Tuple[Poly, Poly]:
    """(s, t) with s*a + t*b == c and deg s < deg b, for coprime a, b"""
    s0, _, h = a.gcdex(b)
    s = (s0 * c).quo_ground(h.LC()).rem(b)
    t = (c - s * a).quo(b)
    return s, t


def hermite_reduce(
    a: Poly, d: Poly, budget: StepBudget
) -> Tuple[RationalFunction, RationalFunction]:
    """Split a/d into (rational part g, remainder h) with h's denominator square-free
    and integral(a/d) == g + integral(h)"""
    g_num, g_den = _poly(0), _poly(1)
    d_minus = d.gcd(d.diff())
    d_star = d.quo(d_minus)
    while d_minus.degree() > 0:
        budget.tick()
        d_minus2 = d_minus.gcd(d_minus.diff())
        d_minus_star = d_minus.quo(d_minus2)
        coefficient = -(d_star * d_minus.diff()).quo(d_minus)
        b, c = _solve_diophantine(coefficient, d_minus_star, a)
        a = c - b.diff() * d_star.quo(d_minus_star)
        g_num, g_den = _normalize(g_num * d_minus + b * g_den, g_den * d_minus)
        d_minus = d_minus2
    return (g_num, g_den), _normalize(a, d_star)


def hermite(e: Expr, var: str, budget: StepBudget) -> Expr:
    """Hermite reduction for the rational part, partial fractions for the rest"""
    store = e.store
    polynomial, remainder, den = _split_polynomial(e, var, budget)
    pieces = [polynomial]
    if not remainder.is_zero:
        (g_num, g_den), (h_num, h_den) = hermite_reduce(remainder, den, budget)
        if not g_num.is_zero:
            pieces.append(fraction_to_expr(g_num, g_den, store, var))
        if not h_num.is_zero:
            pieces.extend(_log_part(h_num, h_den, store, var, budget, square_free=True))
    return store.add(*pieces)
