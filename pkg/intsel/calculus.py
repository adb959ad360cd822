"""
Symbolic differentiation, step budgets and the differentiate-and-check oracle.

The integration sub-algorithms live in integrators.py and rational.py; the
dispatcher over them is portfolio.py.
"""
import logging
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .exceptions import EvaluationDomainError, InconclusiveDomainError
from .expr import Expr, Kind, eval_numeric, free_of

logger = logging.getLogger(__name__)

VERIFY_SEED = 20_240_917
VERIFY_TOLERANCE = 1e-6
SAMPLE_SCALES = (1.0, 4.0, 16.0)


class NotApplicable(Exception):
    """The sub-algorithm does not handle this integrand"""


class BudgetExceeded(Exception):
    def __init__(self, used: int):
        super().__init__(f"step budget exhausted after {used} steps")
        self.used = used


class StepBudget:
    """Counts elementary rewrite steps of one sub-algorithm call"""

    def __init__(self, limit: int):
        if limit <= 0:
            raise ValueError("budget must be positive")
        self.limit = limit
        self.used = 0

    def tick(self, steps: int = 1) -> None:
        self.used += steps
        if self.used > self.limit:
            raise BudgetExceeded(self.used)


def differentiate(e: Expr, var: Union[str, Expr] = "x", budget: Optional[StepBudget] = None) -> Expr:
    """Exact derivative d e / d var in canonical form"""
    store = e.store
    name = var if isinstance(var, str) else var.name
    memo: Dict[int, Expr] = {}
    zero = store.integer(0)

    def d(ident: int) -> Expr:
        cached = memo.get(ident)
        if cached is not None:
            return cached
        if budget is not None:
            budget.tick()
        kind, payload, children = store.node(ident)
        if kind in (Kind.INTEGER, Kind.CONST):
            result = zero
        elif kind is Kind.VARIABLE:
            result = store.integer(1 if payload == name else 0)
        elif kind is Kind.ADD:
            result = store.add(*[d(c) for c in children])
        elif kind is Kind.MUL:
            terms = []
            for i, c in enumerate(children):
                dc = d(c)
                if dc == zero:
                    continue
                others = [Expr(store, o) for j, o in enumerate(children) if j != i]
                terms.append(store.mul(dc, *others))
            result = store.add(*terms)
        elif kind is Kind.POW:
            result = _d_pow(store, Expr(store, children[0]), Expr(store, children[1]), name, d)
        else:
            arg = Expr(store, children[0])
            darg = d(children[0])
            result = zero if darg == zero else store.mul(_d_outer(store, payload, arg), darg)
        memo[ident] = result
        return result

    return d(e.id)


def _d_pow(store, base: Expr, exponent: Expr, name: str, d) -> Expr:
    dbase = d(base.id)
    if free_of(exponent, name):
        if dbase.is_integer(0):
            return store.integer(0)
        return store.mul(exponent, store.pow(base, store.add(exponent, -1)), dbase)
    # b^p * (p' ln b + p b'/b)
    dexp = d(exponent.id)
    inner = store.add(
        store.mul(dexp, store.func("ln", base)),
        store.mul(exponent, dbase, store.pow(base, -1)),
    )
    return store.mul(store.pow(base, exponent), inner)


def _d_outer(store, name: str, u: Expr) -> Expr:
    if name == "sin":
        return store.func("cos", u)
    if name == "cos":
        return store.mul(-1, store.func("sin", u))
    if name == "tan":
        return store.pow(store.func("cos", u), -2)
    if name == "exp":
        return store.func("exp", u)
    if name == "ln":
        return store.pow(u, -1)
    if name == "sqrt":
        return store.mul(store.pow(2, -1), store.pow(store.func("sqrt", u), -1))
    if name == "arctan":
        return store.pow(store.add(1, store.pow(u, 2)), -1)
    # arcsin
    return store.pow(store.func("sqrt", store.add(1, store.mul(-1, store.pow(u, 2)))), -1)


def linear_coefficients(e: Expr, var: str) -> Optional[Tuple[Expr, Expr]]:
    """(a, b) with e == a*var + b and a, b free of var, a != 0; None otherwise"""
    if free_of(e, var):
        return None
    store = e.store
    a = differentiate(e, var)
    if not free_of(a, var) or a.is_integer(0):
        return None
    b = store.add(e, store.mul(-1, a, store.var(var)))
    if not free_of(b, var):
        return None
    return a, b


def sample_point(rng: np.random.Generator) -> float:
    """Draw from +-U(0.05, 1) * s with s in {1, 4, 16}"""
    scale = SAMPLE_SCALES[int(rng.integers(len(SAMPLE_SCALES)))]
    sign = -1.0 if rng.random() < 0.5 else 1.0
    return sign * float(rng.uniform(0.05, 1.0)) * scale


def verify_pair(
    integrand: Expr,
    antiderivative: Expr,
    var: str = "x",
    trials: int = 20,
    rng: Optional[np.random.Generator] = None,
) -> bool:
    """Check d/dvar antiderivative == integrand numerically at `trials` points.

    Points where either side leaves the real domain are redrawn, at most
    10 x trials times. Fewer than max(1, trials // 4) valid points is
    inconclusive.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if rng is None:
        rng = np.random.default_rng(VERIFY_SEED)
    derivative = differentiate(antiderivative, var)
    valid = 0
    retries = 0
    while valid < trials and retries <= 10 * trials:
        point = sample_point(rng)
        bindings = {var: point}
        try:
            expected = eval_numeric(integrand, bindings)
            actual = eval_numeric(derivative, bindings)
        except EvaluationDomainError:
            retries += 1
            continue
        scale = max(1.0, abs(expected), abs(actual))
        if abs(actual - expected) > VERIFY_TOLERANCE * scale:
            logger.debug("verification failed at %s=%r: %r != %r", var, point, actual, expected)
            return False
        valid += 1
    if valid < max(1, trials // 4):
        raise InconclusiveDomainError(
            f"only {valid} valid sample points for {integrand} after {retries} retries"
        )
    return True
