"""
Pattern-driven integration sub-algorithms: RuleTable, DerivDivides and Parts.

Each entry point has the signature (integrand, var, budget) -> antiderivative
and raises NotApplicable when the method does not handle the integrand.
"""
from fractions import Fraction
from typing import List, Optional, Tuple

from .calculus import NotApplicable, StepBudget, differentiate, linear_coefficients
from .expr import Expr, ExprStore, Kind, dag_size, free_of, iter_ids, replace_subterm, substitute

MAX_DERIV_DIVIDES_DEPTH = 3
MAX_PARTS_DEPTH = 4

# (function name or "id", argument, exponent)
FuncPower = Tuple[str, Expr, Fraction]


def split_terms(e: Expr) -> Tuple[Expr, ...]:
    return e.children if e.kind is Kind.ADD else (e,)


def split_constant(term: Expr, var: str) -> Tuple[Expr, Optional[Expr]]:
    """(factor free of var, var-dependent core); core is None for constants"""
    store = term.store
    if free_of(term, var):
        return term, None
    if term.kind is not Kind.MUL:
        return store.integer(1), term
    const = [c for c in term.children if free_of(c, var)]
    dependent = [c for c in term.children if not free_of(c, var)]
    return store.mul(*const), store.mul(*dependent)


def factors_of(core: Expr) -> Tuple[Expr, ...]:
    return core.children if core.kind is Kind.MUL else (core,)


def func_power(f: Expr) -> Optional[FuncPower]:
    """View a factor as name(arg)^n; sqrt folds into a half exponent of "id" """
    store = f.store
    exponent = Fraction(1)
    if f.kind is Kind.POW:
        n = store.numeric_value(f.children[1])
        if n is None:
            return None
        f, exponent = f.children[0], n
    if f.kind is Kind.FUNC:
        if f.payload == "sqrt":
            return "id", f.children[0], exponent / 2
        return f.payload, f.children[0], exponent
    return "id", f, exponent


def power_expr(store: ExprStore, base: Expr, exponent: Fraction) -> Expr:
    if exponent.denominator == 2:
        return store.pow(store.func("sqrt", base), exponent.numerator)
    return store.pow(base, store.rational(exponent))


def is_polynomial(e: Expr, var: str) -> bool:
    store = e.store
    for ident in iter_ids(e):
        kind, _, children = store.node(ident)
        if kind is Kind.FUNC and not free_of(Expr(store, ident), var):
            return False
        if kind is Kind.POW and not free_of(Expr(store, ident), var):
            n = store.numeric_value(Expr(store, children[1]))
            if n is None or n < 0 or n.denominator != 1:
                return False
    return True


# ---------------------------------------------------------------------------
# RuleTable


def _single_rule(store: ExprStore, name: str, u: Expr, n: Fraction) -> Optional[Expr]:
    """G(u) with G' = name(u)^n, for a linear u"""
    half = store.rational(Fraction(1, 2))
    if name == "id":
        if n == -1:
            return store.func("ln", u)
        return store.mul(store.rational(1 / (n + 1)), power_expr(store, u, n + 1))
    if name == "exp":
        return store.mul(store.rational(1 / n), store.pow(store.func("exp", u), store.rational(n)))
    sin, cos = store.func("sin", u), store.func("cos", u)
    if name == "sin":
        if n == 1:
            return -cos
        if n == 2:
            return store.add(store.mul(half, u), store.mul(Fraction(-1, 4), store.func("sin", 2 * u)))
        if n == -1:
            return store.func("ln", store.func("tan", store.mul(half, u)))
        if n == -2:
            return store.mul(-1, cos, store.pow(sin, -1))
    if name == "cos":
        if n == 1:
            return sin
        if n == 2:
            return store.add(store.mul(half, u), store.mul(Fraction(1, 4), store.func("sin", 2 * u)))
        if n == -1:
            return store.func("ln", store.add(store.func("tan", u), store.pow(cos, -1)))
        if n == -2:
            return store.func("tan", u)
    if name == "tan":
        if n == 1:
            return -store.func("ln", cos)
        if n == 2:
            return store.add(store.func("tan", u), -u)
    if name == "ln":
        ln = store.func("ln", u)
        if n == 1:
            return store.add(store.mul(u, ln), -u)
        if n == 2:
            return store.add(store.mul(u, store.pow(ln, 2)), store.mul(-2, u, ln), store.mul(2, u))
    if name == "arctan" and n == 1:
        return store.add(
            store.mul(u, store.func("arctan", u)),
            store.mul(Fraction(-1, 2), store.func("ln", store.add(1, store.pow(u, 2)))),
        )
    if name == "arcsin" and n == 1:
        return store.add(
            store.mul(u, store.func("arcsin", u)),
            store.func("sqrt", store.add(1, store.mul(-1, store.pow(u, 2)))),
        )
    return None


def _pair_rule(store: ExprStore, first: FuncPower, second: FuncPower) -> Optional[Expr]:
    """G(u) for two-factor products of the same linear u"""
    pattern = {(first[0], first[2]), (second[0], second[2])}
    u = first[1]
    sin, cos = store.func("sin", u), store.func("cos", u)
    one, minus_one, minus_two = Fraction(1), Fraction(-1), Fraction(-2)
    if pattern == {("ln", one), ("id", minus_one)}:
        return store.mul(Fraction(1, 2), store.pow(store.func("ln", u), 2))
    if pattern == {("sin", one), ("cos", one)}:
        return store.mul(Fraction(1, 2), store.pow(sin, 2))
    if pattern == {("sin", one), ("cos", minus_one)}:
        return -store.func("ln", cos)
    if pattern == {("cos", one), ("sin", minus_one)}:
        return store.func("ln", sin)
    if pattern == {("sin", one), ("cos", minus_two)}:
        return store.pow(cos, -1)
    if pattern == {("cos", one), ("sin", minus_two)}:
        return -store.pow(sin, -1)
    if pattern == {("tan", one), ("cos", minus_two)}:
        return store.mul(Fraction(1, 2), store.pow(store.func("tan", u), 2))
    return None


def _quadratic_parts(base: Expr, var: str) -> Optional[Tuple[Fraction, Fraction, Expr]]:
    """(c, k, w) with base == c + k*w^2, w linear, c and k nonzero rationals"""
    store = base.store
    if base.kind is not Kind.ADD or len(base.children) != 2:
        return None
    c = None
    square = None
    for term in base.children:
        value = store.numeric_value(term)
        if value is not None:
            c = value
        else:
            square = term
    if c is None or square is None:
        return None
    k, rest = store.split_coefficient(square)
    if len(rest) != 1:
        return None
    sq = Expr(store, rest[0])
    if sq.kind is not Kind.POW or not sq.children[1].is_integer(2):
        return None
    w = sq.children[0]
    if linear_coefficients(w, var) is None:
        return None
    return c, k, w


def _quadratic_rule(store: ExprStore, base: Expr, n: Fraction, var: str) -> Optional[Expr]:
    parts = _quadratic_parts(base, var)
    if parts is None:
        return None
    c, k, w = parts
    a, _ = linear_coefficients(w, var)

    def sqrt_of(value: Fraction) -> Expr:
        return store.func("sqrt", store.rational(value))

    if n == -1 and c > 0 and k > 0:
        # arctan(w sqrt(k/c)) / (a sqrt(k c))
        inner = store.func("arctan", store.mul(w, sqrt_of(k / c)))
        return store.mul(inner, store.pow(store.mul(a, sqrt_of(k * c)), -1))
    if n == Fraction(-1, 2) and c > 0 and k < 0:
        inner = store.func("arcsin", store.mul(w, sqrt_of(-k / c)))
        return store.mul(inner, store.pow(store.mul(a, sqrt_of(-k)), -1))
    if n == Fraction(-1, 2) and k > 0:
        root = store.func("sqrt", base)
        inner = store.func("ln", store.add(store.mul(sqrt_of(k), w), root))
        return store.mul(inner, store.pow(store.mul(a, sqrt_of(k)), -1))
    return None


def table_lookup(core: Expr, var: str, budget: StepBudget) -> Expr:
    """Antiderivative of a single var-dependent core from the pattern table"""
    budget.tick()
    store = core.store
    factors = factors_of(core)

    # two factors of the same linear argument
    if len(factors) == 2:
        views = [func_power(f) for f in factors]
        if all(v is not None for v in views) and views[0][1] == views[1][1]:
            lin = linear_coefficients(views[0][1], var)
            if lin is not None:
                found = _pair_rule(store, views[0], views[1])
                if found is not None:
                    return store.mul(found, store.pow(lin[0], -1))

    if len(factors) == 1:
        # k^u
        if core.kind is Kind.POW:
            k = store.numeric_value(core.children[0])
            lin = linear_coefficients(core.children[1], var)
            if k is not None and k > 0 and k != 1 and lin is not None:
                ln_k = store.func("ln", core.children[0])
                return store.mul(core, store.pow(store.mul(lin[0], ln_k), -1))
        view = func_power(core)
        # name(u)^n: quadratic bases first, then linear u with the chain factor 1/a
        if view is not None:
            name, arg, n = view
            if name == "id":
                found = _quadratic_rule(store, arg, n, var)
                if found is not None:
                    return found
            lin = linear_coefficients(arg, var)
            if lin is not None:
                found = _single_rule(store, name, arg, n)
                if found is not None:
                    return store.mul(found, store.pow(lin[0], -1))
    raise NotApplicable(f"no table pattern for {core}")


def rule_table(e: Expr, var: str, budget: StepBudget) -> Expr:
    """Linearity plus pattern table"""
    store = e.store
    pieces = []
    for term in split_terms(e):
        coeff, core = split_constant(term, var)
        if core is None:
            pieces.append(store.mul(coeff, store.var(var)))
        else:
            pieces.append(store.mul(coeff, table_lookup(core, var, budget)))
    return store.add(*pieces)


# ---------------------------------------------------------------------------
# DerivDivides


def _proportional(f: Expr, g: Expr) -> Optional[Fraction]:
    """r with f == r*g for two sums, or None"""
    store = f.store
    g_coeff, g_rest = store.split_coefficient(split_terms(g)[0])
    for term in split_terms(f):
        coeff, rest = store.split_coefficient(term)
        if rest == g_rest:
            ratio = coeff / g_coeff
            if store.add(f, store.mul(-ratio, g)).is_integer(0):
                return ratio
            return None
    return None


def divide(e: Expr, d: Expr) -> Expr:
    """e / d, cancelling a sum factor of e proportional to a sum d"""
    store = e.store
    quotient = store.mul(e, store.pow(d, -1))
    d_coeff, d_rest = store.split_coefficient(d)
    if len(d_rest) != 1 or store.node(d_rest[0])[0] is not Kind.ADD:
        return quotient
    d_sum = Expr(store, d_rest[0])
    factors = factors_of(e)
    for i, f in enumerate(factors):
        if f.kind is Kind.ADD and f != d_sum:
            ratio = _proportional(f, d_sum)
            if ratio is not None:
                others = [o for j, o in enumerate(factors) if j != i]
                return store.mul(store.rational(ratio / d_coeff), *others)
    return quotient


def substitution_candidates(e: Expr, var: str) -> List[Expr]:
    """Distinct var-dependent subterms, largest first; var itself last"""
    store = e.store
    x = store.var(var)
    found = []
    for ident in iter_ids(e):
        sub = Expr(store, ident)
        if ident == e.id or sub == x or free_of(sub, var):
            continue
        found.append(sub)
    found.sort(key=lambda s: (-dag_size(s), store.sort_key(s)))
    found.append(x)
    return found


def deriv_divides(e: Expr, var: str, budget: StepBudget, depth: int = 0) -> Expr:
    """Find g with e == f(g) * g' and integrate f via the table"""
    if depth > MAX_DERIV_DIVIDES_DEPTH or free_of(e, var):
        raise NotApplicable("nothing to substitute")
    store = e.store
    fresh = f"_u{depth}"
    u = store.var(fresh)
    for g in substitution_candidates(e, var):
        budget.tick()
        dg = differentiate(g, var, budget)
        if dg.is_integer(0):
            continue
        # e / g' with g replaced by u must be free of var
        outer = replace_subterm(divide(e, dg), g, u)
        if not free_of(outer, var):
            continue
        try:
            result = rule_table(outer, fresh, budget)
        except NotApplicable:
            # nested substitution on the outer function
            try:
                result = deriv_divides(outer, fresh, budget, depth + 1)
            except NotApplicable:
                continue
        return substitute(result, fresh, g)
    raise NotApplicable(f"no inner function divides {e}")


# ---------------------------------------------------------------------------
# Parts

LIATE_OTHER = 5


def liate_rank(f: Expr, var: str) -> int:
    store = f.store
    if f.kind is Kind.POW and store.numeric_value(f.children[0]) is not None:
        return 4
    view = func_power(f)
    if view is None:
        return LIATE_OTHER
    name, arg, n = view
    positive_int = n > 0 and n.denominator == 1
    if name == "ln" and positive_int:
        return 0
    if name in ("arctan", "arcsin") and n == 1:
        return 1
    if name == "id" and positive_int and is_polynomial(arg, var):
        return 2
    if name in ("sin", "cos", "tan"):
        return 3
    if name == "exp":
        return 4
    return LIATE_OTHER


def wants_parts(core: Expr, var: str) -> bool:
    factors = factors_of(core)
    if len(factors) >= 2:
        return True
    return liate_rank(core, var) in (0, 1)


def _splits(core: Expr, var: str) -> List[Tuple[Expr, Expr]]:
    """(u, dv) choices in LIATE order"""
    store = core.store
    factors = factors_of(core)
    if len(factors) == 1:
        return [(core, store.integer(1))]
    ranked = sorted(factors, key=lambda f: (liate_rank(f, var), store.sort_key(f)))
    out = []
    for u in ranked:
        rest = list(factors)
        rest.remove(u)
        out.append((u, store.mul(*rest)))
    return out


def _parts_core(core: Expr, var: str, budget: StepBudget, depth: int, root: Expr) -> Tuple[Expr, Expr]:
    """(P, s) with integral(core) == P + s * integral(root)"""
    store = core.store
    budget.tick()
    if depth > 0 and core == root:
        return store.integer(0), store.integer(1)
    if depth > MAX_PARTS_DEPTH:
        raise NotApplicable("parts recursion too deep")
    for u, dv in _splits(core, var):
        try:
            v = rule_table(dv, var, budget)
        except NotApplicable:
            continue
        uv = store.mul(u, v)
        rest = store.mul(v, differentiate(u, var, budget))
        if rest.is_integer(0):
            return uv, store.integer(0)
        try:
            rest_p, rest_s = _parts_sum(rest, var, budget, depth + 1, root)
        except NotApplicable:
            continue
        return store.add(uv, -rest_p), -rest_s
    raise NotApplicable(f"no parts split for {core}")


def _parts_sum(e: Expr, var: str, budget: StepBudget, depth: int, root: Expr) -> Tuple[Expr, Expr]:
    store = e.store
    total_p = store.integer(0)
    total_s = store.integer(0)
    for term in split_terms(e):
        coeff, core = split_constant(term, var)
        if core is None:
            total_p = store.add(total_p, store.mul(coeff, store.var(var)))
        elif core == root:
            total_s = store.add(total_s, coeff)
        elif wants_parts(core, var):
            p, s = _parts_core(core, var, budget, depth, root)
            total_p = store.add(total_p, store.mul(coeff, p))
            total_s = store.add(total_s, store.mul(coeff, s))
        else:
            total_p = store.add(total_p, store.mul(coeff, table_lookup(core, var, budget)))
    return total_p, total_s


def _solve_cycle(p: Expr, s: Expr) -> Expr:
    """I == P + s*I  =>  I == P / (1 - s)"""
    store = p.store
    if s.is_integer(0):
        return p
    denominator = store.add(1, -s)
    if denominator.is_integer(0):
        raise NotApplicable("integral cancels itself")
    return store.mul(p, store.pow(denominator, -1))


def parts(e: Expr, var: str, budget: StepBudget) -> Expr:
    """Integration by parts with LIATE ordering and cycle solving"""
    store = e.store
    terms = [split_constant(t, var) for t in split_terms(e)]
    if not any(core is not None and wants_parts(core, var) for _, core in terms):
        raise NotApplicable("no product to split")
    pieces = []
    for coeff, core in terms:
        if core is None:
            pieces.append(store.mul(coeff, store.var(var)))
        elif wants_parts(core, var):
            p, s = _parts_core(core, var, budget, 0, core)
            pieces.append(store.mul(coeff, _solve_cycle(p, s)))
        else:
            pieces.append(store.mul(coeff, table_lookup(core, var, budget)))
    return store.add(*pieces)
