from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, Optional, Tuple

from .expr import Expr, dag_size


class Generator(str, Enum):
    """Dataset generator tags"""

    FWD = "FWD"
    BWD = "BWD"
    IBP = "IBP"
    SUB = "SUB"
    # held-out textbook integrands, never produced by a generator
    SUITE = "SUITE"


_ALGORITHM_LABELS = ("RuleTable", "DerivDivides", "Parts", "PartialFractions", "Hermite")


class SubAlgorithm(IntEnum):
    """Portfolio members; the integer value is the fixed label index"""

    RULE_TABLE = 0
    DERIV_DIVIDES = 1
    PARTS = 2
    PARTIAL_FRACTIONS = 3
    HERMITE = 4

    @property
    def label(self) -> str:
        return _ALGORITHM_LABELS[self.value]

    @classmethod
    def from_label(cls, label: str) -> "SubAlgorithm":
        try:
            return cls(_ALGORITHM_LABELS.index(label))
        except ValueError:
            raise ValueError(f"unknown sub-algorithm {label!r}") from None

    @classmethod
    def labels(cls) -> Tuple[str, ...]:
        return _ALGORITHM_LABELS


ALGORITHMS: Tuple[SubAlgorithm, ...] = tuple(SubAlgorithm)


class OutcomeStatus(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    BUDGET_EXCEEDED = "BudgetExceeded"


@dataclass(frozen=True)
class IntegrationOutcome:
    """Outcome model representing one sub-algorithm run on one integrand"""

    status: OutcomeStatus
    steps_used: int
    output: Optional[Expr] = None
    size: Optional[int] = None

    @classmethod
    def success(cls, output: Expr, steps_used: int) -> "IntegrationOutcome":
        return cls(OutcomeStatus.SUCCESS, steps_used, output, dag_size(output))

    @classmethod
    def failure(cls, steps_used: int) -> "IntegrationOutcome":
        return cls(OutcomeStatus.FAILURE, steps_used)

    @classmethod
    def budget_exceeded(cls, steps_used: int) -> "IntegrationOutcome":
        return cls(OutcomeStatus.BUDGET_EXCEEDED, steps_used)

    @property
    def succeeded(self) -> bool:
        return self.status is OutcomeStatus.SUCCESS


@dataclass(frozen=True)
class GeneratedPair:
    """Pair model representing a verified (integrand, antiderivative) sample"""

    integrand: Expr
    antiderivative: Expr
    generator: Generator
    seed: int


def optimal_labels(
    outcomes: Dict[SubAlgorithm, IntegrationOutcome],
) -> Tuple[Tuple[bool, ...], Optional[int]]:
    """Label vector in SubAlgorithm order plus the minimal successful size"""
    sizes = [o.size for o in outcomes.values() if o.succeeded]
    if not sizes:
        return tuple(False for _ in ALGORITHMS), None
    best = min(sizes)
    labels = tuple(
        alg in outcomes and outcomes[alg].succeeded and outcomes[alg].size == best
        for alg in ALGORITHMS
    )
    return labels, best


@dataclass
class IntegrandRecord:
    """Record model representing a labeled integrand"""

    id: str
    integrand: Expr
    generator: Generator
    outcomes: Dict[SubAlgorithm, IntegrationOutcome]
    labels: Tuple[bool, ...]
    optimal_size: int
    antiderivative: Optional[Expr] = None

    @classmethod
    def from_outcomes(
        cls,
        record_id: str,
        integrand: Expr,
        generator: Generator,
        outcomes: Dict[SubAlgorithm, IntegrationOutcome],
        antiderivative: Optional[Expr] = None,
    ) -> Optional["IntegrandRecord"]:
        """Build a labeled record; None when no sub-algorithm succeeded"""
        labels, best = optimal_labels(outcomes)
        if best is None:
            return None
        return cls(record_id, integrand, generator, dict(outcomes), labels, best, antiderivative)

    def labels_consistent(self) -> bool:
        labels, best = optimal_labels(self.outcomes)
        return labels == tuple(self.labels) and best == self.optimal_size

    @property
    def optimal_algorithms(self) -> Tuple[SubAlgorithm, ...]:
        return tuple(alg for alg in ALGORITHMS if self.labels[alg])


@dataclass(frozen=True)
class SelectionResult:
    """Selection model representing one strategy decision on one record"""

    attempts: Tuple[SubAlgorithm, ...]
    chosen: Optional[SubAlgorithm]
    outcome: Optional[IntegrationOutcome]
    optimal_size: Optional[int]
    strategy: str = ""
    probabilities: Tuple[float, ...] = field(default=())

    @property
    def all_failed(self) -> bool:
        return self.chosen is None

    @property
    def achieved_size(self) -> Optional[int]:
        return self.outcome.size if self.outcome is not None and self.outcome.succeeded else None

    @property
    def ratio(self) -> Optional[float]:
        if self.achieved_size is None or not self.optimal_size:
            return None
        return self.achieved_size / self.optimal_size
