"""
Dispatcher over the five integration sub-algorithms.
"""
import logging
from typing import Callable, Dict, Optional

from .calculus import BudgetExceeded, NotApplicable, StepBudget, verify_pair
from .exceptions import InconclusiveDomainError
from .expr import Expr, Kind, free_of
from .integrators import deriv_divides, parts, rule_table
from .models import ALGORITHMS, IntegrationOutcome, SubAlgorithm
from .rational import hermite, partial_fractions

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10_000

Method = Callable[[Expr, str, StepBudget], Expr]

METHODS: Dict[SubAlgorithm, Method] = {
    SubAlgorithm.RULE_TABLE: rule_table,
    SubAlgorithm.DERIV_DIVIDES: deriv_divides,
    SubAlgorithm.PARTS: parts,
    SubAlgorithm.PARTIAL_FRACTIONS: partial_fractions,
    SubAlgorithm.HERMITE: hermite,
}


def drop_constant_terms(e: Expr, var: str) -> Expr:
    """Remove additive terms free of var (the constant of integration)"""
    if e.kind is not Kind.ADD:
        return e
    kept = [t for t in e.children if not free_of(t, var)]
    if len(kept) == len(e.children):
        return e
    return e.store.add(*kept)


def integrate_with(
    alg: SubAlgorithm,
    e: Expr,
    var: str = "x",
    budget: int = DEFAULT_BUDGET,
    verify_trials: int = 20,
) -> IntegrationOutcome:
    """Run one sub-algorithm under a step budget.

    Args:
        alg: the sub-algorithm to run.
        e: integrand.
        var: integration variable.
        budget: step cap, must be positive.
        verify_trials: sample points for the numeric derivative check.

    Returns:
        Success with the antiderivative (constant terms dropped) when the output
        verifies, BudgetExceeded when the cap was hit, Failure otherwise.

    Raises:
        ValueError: budget is not positive.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    steps = StepBudget(budget)
    try:
        output = METHODS[alg](e, var, steps)
    except NotApplicable as exc:
        logger.debug("%s does not apply to %s: %s", alg.label, e, exc)
        return IntegrationOutcome.failure(steps.used)
    except BudgetExceeded:
        return IntegrationOutcome.budget_exceeded(min(steps.used, budget))
    except RecursionError:
        logger.warning("%s hit the recursion limit on %s", alg.label, e)
        return IntegrationOutcome.failure(steps.used)
    output = drop_constant_terms(output, var)
    try:
        verified = verify_pair(e, output, var, verify_trials)
    except InconclusiveDomainError:
        verified = False
    if not verified:
        logger.debug("%s produced an unverifiable antiderivative %s for %s", alg.label, output, e)
        return IntegrationOutcome.failure(steps.used)
    return IntegrationOutcome.success(output, steps.used)


def integrate_all(
    e: Expr, var: str = "x", budget: int = DEFAULT_BUDGET, verify_trials: int = 20
) -> Dict[SubAlgorithm, IntegrationOutcome]:
    return {alg: integrate_with(alg, e, var, budget, verify_trials) for alg in ALGORITHMS}


def integrate_first(
    e: Expr, var: str = "x", budget: int = DEFAULT_BUDGET, verify_trials: int = 20
) -> Optional[Expr]:
    """First successful output over the portfolio in fixed order"""
    for alg in ALGORITHMS:
        outcome = integrate_with(alg, e, var, budget, verify_trials)
        if outcome.succeeded:
            return outcome.output
    return None
