"""
Sub-algorithm selection strategies and their evaluation.

Strategies work on labeled records only; they read the stored outcomes and
never integrate again.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from rich.table import Table

from .artifacts import provenance_line, write_jsonl
from .exceptions import DataError
from .models import ALGORITHMS, IntegrandRecord, SelectionResult, SubAlgorithm
from .schemas import GeneratorCounts, ReportRecord

logger = logging.getLogger(__name__)

Strategy = Callable[[IntegrandRecord], SelectionResult]

DEFAULT_BASELINE_ORDER: Tuple[SubAlgorithm, ...] = (
    SubAlgorithm.RULE_TABLE,
    SubAlgorithm.DERIV_DIVIDES,
    SubAlgorithm.PARTIAL_FRACTIONS,
    SubAlgorithm.HERMITE,
    SubAlgorithm.PARTS,
)
# Fixed row order of comparison tables
STRATEGY_ORDER = ("oracle", "treelstm", "lstm", "baseline", "anti_oracle")
# The oracle is optimal by construction and never competes for unique wins
NON_COMPETING = frozenset({"oracle"})


def _try_in_order(
    order: Iterable[SubAlgorithm],
    record: IntegrandRecord,
    strategy: str,
    probabilities: Sequence[float] = (),
) -> SelectionResult:
    attempts: List[SubAlgorithm] = []
    for alg in order:
        attempts.append(alg)
        outcome = record.outcomes[alg]
        if outcome.succeeded:
            return SelectionResult(tuple(attempts), alg, outcome, record.optimal_size, strategy, tuple(probabilities))
    return SelectionResult(tuple(attempts), None, None, record.optimal_size, strategy, tuple(probabilities))


def fallback_order(probs: Sequence[float]) -> Tuple[SubAlgorithm, ...]:
    """Sub-algorithms by decreasing probability, ties broken by label order"""
    probs = [float(p) for p in probs]
    if len(probs) != len(ALGORITHMS):
        raise ValueError(f"expected {len(ALGORITHMS)} probabilities, got {len(probs)}")
    return tuple(sorted(ALGORITHMS, key=lambda alg: (-probs[alg], alg.value)))


def select_with_fallback(probs: Sequence[float], record: IntegrandRecord, strategy: str = "model") -> SelectionResult:
    """
    Try sub-algorithms by decreasing probability until one succeeds.

    Args:
        probs: One probability per sub-algorithm, in label order
        record: Labeled record whose stored outcomes are consulted
        strategy: Name stored on the result

    Returns:
        SelectionResult; `chosen` is None only when every sub-algorithm failed
    """
    probs = [float(p) for p in probs]
    return _try_in_order(fallback_order(probs), record, strategy, probs)


def baseline_meta(record: IntegrandRecord, order: Sequence[SubAlgorithm] = DEFAULT_BASELINE_ORDER) -> SelectionResult:
    """Fixed-priority meta-algorithm: first success in `order`, blind to output size"""
    return _try_in_order(order, record, "baseline")


def make_baseline(labels: Sequence[str]) -> Strategy:
    order = tuple(SubAlgorithm.from_label(label) for label in labels)
    return lambda record: baseline_meta(record, order)


def oracle(record: IntegrandRecord) -> SelectionResult:
    """Pick an optimal sub-algorithm directly"""
    optimal = record.optimal_algorithms
    if not optimal:
        return _try_in_order(ALGORITHMS, record, "oracle")
    return _try_in_order(optimal[:1], record, "oracle")


def anti_oracle(record: IntegrandRecord) -> SelectionResult:
    """Pick the largest successful output"""
    successes = [alg for alg in ALGORITHMS if record.outcomes[alg].succeeded]
    if not successes:
        return _try_in_order(ALGORITHMS, record, "anti_oracle")
    worst = max(successes, key=lambda alg: (record.outcomes[alg].size, -alg.value))
    return _try_in_order((worst,), record, "anti_oracle")


def model_strategy(name: str, probabilities: Mapping[str, Sequence[float]]) -> Strategy:
    """Strategy reading precomputed probability vectors keyed by record id"""

    def select(record: IntegrandRecord) -> SelectionResult:
        return select_with_fallback(probabilities[record.id], record, name)

    return select


def within_margin(achieved: int, optimal: int, percent: int) -> bool:
    """achieved <= optimal * (1 + percent / 100), in exact integer arithmetic"""
    return achieved * 100 <= optimal * (100 + percent)


def is_exact(result: SelectionResult) -> bool:
    return result.achieved_size is not None and result.achieved_size == result.optimal_size


@dataclass
class EvalReport:
    strategy: str
    slice: str
    total: int = 0
    exact_optimal: int = 0
    within_5pct: int = 0
    within_10pct: int = 0
    all_failed: int = 0
    unique_wins: int = 0
    mean_attempts: float = 0.0
    per_generator: Dict[str, GeneratorCounts] = field(default_factory=dict)

    def to_record(self, corpus_hash: str = "", config_hash: str = "", model_hash: str = "") -> ReportRecord:
        return ReportRecord(
            strategy=self.strategy,
            slice=self.slice,
            total=self.total,
            exact_optimal=self.exact_optimal,
            within_5pct=self.within_5pct,
            within_10pct=self.within_10pct,
            all_failed=self.all_failed,
            unique_wins=self.unique_wins,
            mean_attempts=self.mean_attempts,
            per_generator=dict(sorted(self.per_generator.items())),
            corpus_hash=corpus_hash,
            config_hash=config_hash,
            model_hash=model_hash,
        )


def _count(counts, result: SelectionResult) -> None:
    counts.total += 1
    if result.achieved_size is None:
        counts.all_failed += 1
        return
    optimal = result.optimal_size
    counts.exact_optimal += int(result.achieved_size == optimal)
    counts.within_5pct += int(within_margin(result.achieved_size, optimal, 5))
    counts.within_10pct += int(within_margin(result.achieved_size, optimal, 10))


def evaluate(
    name: str, strategy: Strategy, records: Sequence[IntegrandRecord], slice_name: str = "test"
) -> Tuple[EvalReport, List[SelectionResult]]:
    """Score one strategy on a slice.

    Args:
        name: strategy name carried into the report.
        strategy: maps a labeled record to the attempts it makes and their outcome.
        records: the slice, every record already labeled.
        slice_name: slice label for the report, "test" or "suite".

    Returns:
        The aggregate report and one SelectionResult per record, in record order.
        The 5% and 10% margins are cumulative, so exact hits count in both.
    """
    report = EvalReport(name, slice_name)
    results = []
    for record in records:
        result = strategy(record)
        results.append(result)
        _count(report, result)
        _count(report.per_generator.setdefault(record.generator.value, GeneratorCounts()), result)
    if results:
        report.mean_attempts = round(float(np.mean([len(r.attempts) for r in results])), 6)
    return report, results


def _order_key(name: str) -> Tuple[int, str]:
    return (STRATEGY_ORDER.index(name) if name in STRATEGY_ORDER else len(STRATEGY_ORDER), name)


def compare(
    strategies: Mapping[str, Strategy], records: Sequence[IntegrandRecord], slice_name: str = "test"
) -> List[EvalReport]:
    """Evaluate several strategies on the same slice and fill in their unique wins.

    Args:
        strategies: strategy name to strategy.
        records: the slice to score on.
        slice_name: label written into every report.

    Returns:
        One report per strategy in STRATEGY_ORDER. A unique win is a record where
        exactly one strategy other than the oracle is exactly optimal.
    """
    reports: Dict[str, EvalReport] = {}
    exact: Dict[str, List[bool]] = {}
    for name in sorted(strategies, key=_order_key):
        report, results = evaluate(name, strategies[name], records, slice_name)
        reports[name] = report
        exact[name] = [is_exact(r) for r in results]
    # a record counts for a strategy only when no other competitor is also exact
    competitors = [name for name in reports if name not in NON_COMPETING]
    for i in range(len(records)):
        winners = [name for name in competitors if exact[name][i]]
        if len(winners) == 1:
            reports[winners[0]].unique_wins += 1
    for report in reports.values():
        logger.info(
            "%s on %s: %d/%d exact, %d within 5%%, %d within 10%%, %d unique wins",
            report.strategy, slice_name, report.exact_optimal, report.total,
            report.within_5pct, report.within_10pct, report.unique_wins,
        )
    return list(reports.values())


def pairwise_unique_wins(a: Strategy, b: Strategy, records: Sequence[IntegrandRecord]) -> Tuple[int, int]:
    """Records where only a (first) or only b (second) is exactly optimal"""
    only_a = only_b = 0
    for record in records:
        exact_a, exact_b = is_exact(a(record)), is_exact(b(record))
        only_a += int(exact_a and not exact_b)
        only_b += int(exact_b and not exact_a)
    return only_a, only_b


# ---------------------------------------------------------------------------
# Output


def write_report(path: Path, records: Sequence[ReportRecord]) -> None:
    write_jsonl(path, records)


def _shared_hash(records: Sequence[ReportRecord], name: str) -> str:
    values = {getattr(r, name) for r in records}
    if len(values) > 1:
        raise DataError(f"report rows disagree on {name}: {', '.join(sorted(values))}")
    return values.pop() if values else ""


def write_bars(path: Path, records: Sequence[ReportRecord]) -> None:
    """Columnar bar-chart data, one row per strategy and slice.

    The first line carries the config and corpus hashes shared by all rows.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        provenance_line(_shared_hash(records, "config_hash"), _shared_hash(records, "corpus_hash")),
        "slice\tstrategy\texact\twithin_5pct\twithin_10pct",
    ]
    lines.extend(
        f"{r.slice}\t{r.strategy}\t{r.exact_optimal}\t{r.within_5pct}\t{r.within_10pct}" for r in records
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _percent(count: int, total: int) -> str:
    return f"{count} ({100.0 * count / total:.1f}%)" if total else str(count)


def render_table(records: Sequence[ReportRecord], title: Optional[str] = None) -> Table:
    table = Table(title=title)
    for column in ("slice", "strategy", "exact", "within 5%", "within 10%", "all failed", "unique wins", "attempts"):
        table.add_column(column, justify="left" if column in ("slice", "strategy") else "right")
    for r in records:
        table.add_row(
            r.slice,
            r.strategy,
            _percent(r.exact_optimal, r.total),
            _percent(r.within_5pct, r.total),
            _percent(r.within_10pct, r.total),
            str(r.all_failed),
            str(r.unique_wins),
            f"{r.mean_attempts:.2f}",
        )
    return table
