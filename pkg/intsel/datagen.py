"""
Dataset generation for the workbench.

Four generators produce verified (integrand, antiderivative) pairs:

- FWD samples f and integrates it with the portfolio itself
- BWD samples F and differentiates it
- IBP combines two samples through integration by parts
- SUB composes an earlier FWD/BWD pair with a random inner function

Every accepted pair is labeled by running the whole portfolio, deduplicated on
its constant-normalized form and split into train and test sets.
"""
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .artifacts import record_to_schema
from .calculus import differentiate, verify_pair
from .config import BINARY_OPERATORS, OPERATORS, RunConfig, SamplerParams
from .exceptions import DataError, GenerationError, InconclusiveDomainError, ParseError
from .expr import Expr, ExprStore, Kind, dag_size, free_of, from_prefix, parse, substitute, to_prefix
from .models import ALGORITHMS, GeneratedPair, Generator, IntegrandRecord
from .portfolio import integrate_all, integrate_first
from .schemas import CorpusManifest, CorpusRecord, GeneratorStats

logger = logging.getLogger(__name__)

VAR = "x"
MAX_BWD_ATTEMPTS = 1_000
# Portfolio disagreement is only enforced on corpora at least this large
MIN_RECORDS_FOR_DISAGREEMENT = 100

# Seed-stream namespaces; fixed so that adding a generator never shifts another one's seeds
GENERATOR_CODES = {Generator.FWD: 0, Generator.BWD: 1, Generator.IBP: 2, Generator.SUB: 3}
SPLIT_STREAM = 101

SUITE_PATH = Path(__file__).parent / "data" / "validation_suite.txt"

Pool = Sequence[Tuple[str, str]]


class RandomExprSampler:
    """Draws random univariate expressions over the supported inventory.

    The number of operators is uniform in [1, max_ops]; each operator is drawn
    independently from the configured weights, so `op_counts` follows them.
    """

    def __init__(self, params: SamplerParams, rng: np.random.Generator, store: Optional[ExprStore] = None):
        self.params = params
        self.rng = rng
        self.store = store if store is not None else ExprStore()
        self.op_counts: Counter = Counter()
        weighted = [(op, params.operator_weights.get(op, 0.0)) for op in OPERATORS]
        self._operators = [op for op, w in weighted if w > 0]
        weights = np.array([w for _, w in weighted if w > 0], dtype=float)
        self._operator_p = weights / weights.sum()
        leaf_weights = np.array(
            [params.leaf_weights.get("x", 0.0), params.leaf_weights.get("int", 0.0)], dtype=float
        )
        self._leaf_p = leaf_weights / leaf_weights.sum()
        self._integers = [v for v in range(params.int_low, params.int_high + 1) if v != 0]

    def sample(self, max_ops: Optional[int] = None) -> Expr:
        max_ops = self.params.max_ops if max_ops is None else max_ops
        if max_ops < 1:
            raise ValueError("max_ops must be at least 1")
        n = int(self.rng.integers(1, max_ops + 1))
        return self._build(n)

    def _leaf(self) -> Expr:
        if self.rng.choice(2, p=self._leaf_p) == 0:
            return self.store.var(VAR)
        return self.store.integer(self._integers[int(self.rng.integers(len(self._integers)))])

    def _build(self, n: int) -> Expr:
        if n == 0:
            return self._leaf()
        op = self._operators[int(self.rng.choice(len(self._operators), p=self._operator_p))]
        self.op_counts[op] += 1
        store = self.store
        if op in BINARY_OPERATORS:
            left = int(self.rng.integers(0, n))
            a = self._build(left)
            b = self._build(n - 1 - left)
            if op == "add":
                return store.add(a, b)
            if op == "sub":
                return store.add(a, store.mul(-1, b))
            if op == "mul":
                return store.mul(a, b)
            # a zero divisor leaves the numerator alone
            return a if b.is_integer(0) else store.mul(a, store.pow(b, -1))
        a = self._build(n - 1)
        if op == "neg":
            return store.mul(-1, a)
        if op == "pow":
            exponents = self.params.pow_exponents
            k = exponents[int(self.rng.integers(len(exponents)))]
            # no negative powers of zero
            return a if k < 0 and a.is_integer(0) else store.pow(a, k)
        return store.func(op, a)


def sample_random_expr(
    params: SamplerParams, rng: np.random.Generator, store: Optional[ExprStore] = None
) -> Expr:
    return RandomExprSampler(params, rng, store).sample()


@dataclass
class GenerationContext:
    """Everything one generation task needs; one store per task"""

    store: ExprStore
    sampler: RandomExprSampler
    seed: int = 0
    node_cap: int = 200
    step_budget: int = 10_000
    verify_trials: int = 20
    sub_inner_max_ops: int = 4
    resamples: int = 0

    @classmethod
    def create(cls, config: RunConfig, seed: int, store: Optional[ExprStore] = None) -> "GenerationContext":
        store = store if store is not None else ExprStore()
        sampler = RandomExprSampler(config.sampler, np.random.default_rng(seed), store)
        return cls(
            store=store,
            sampler=sampler,
            seed=seed,
            node_cap=config.corpus.node_cap,
            step_budget=config.step_budget,
            verify_trials=config.corpus.verify_trials,
            sub_inner_max_ops=config.corpus.sub_inner_max_ops,
        )

    @property
    def rng(self) -> np.random.Generator:
        return self.sampler.rng

    def usable(self, integrand: Expr) -> bool:
        return not integrand.is_integer(0) and not free_of(integrand, VAR) and dag_size(integrand) <= self.node_cap

    def verified(self, integrand: Expr, antiderivative: Expr) -> bool:
        try:
            return verify_pair(integrand, antiderivative, VAR, self.verify_trials)
        except InconclusiveDomainError:
            return False


# ---------------------------------------------------------------------------
# Generators. The *_pair helpers take their inputs explicitly; gen_* sample them.


def fwd_pair(ctx: GenerationContext, f: Expr) -> Optional[GeneratedPair]:
    if not ctx.usable(f):
        return None
    antiderivative = integrate_first(f, VAR, ctx.step_budget, ctx.verify_trials)
    if antiderivative is None:
        return None
    return GeneratedPair(f, antiderivative, Generator.FWD, ctx.seed)


def bwd_pair(ctx: GenerationContext, antiderivative: Expr) -> Optional[GeneratedPair]:
    if free_of(antiderivative, VAR):
        return None
    integrand = differentiate(antiderivative, VAR)
    if not ctx.usable(integrand) or not ctx.verified(integrand, antiderivative):
        return None
    return GeneratedPair(integrand, antiderivative, Generator.BWD, ctx.seed)


def ibp_pair(ctx: GenerationContext, f: Expr, g: Expr) -> Optional[GeneratedPair]:
    """(f g', f g - integral(f' g)) when the portfolio can integrate f' g"""
    store = ctx.store
    if free_of(g, VAR):
        return None
    integrand = store.mul(f, differentiate(g, VAR))
    if not ctx.usable(integrand):
        return None
    correction = store.mul(differentiate(f, VAR), g)
    if correction.is_integer(0):
        known = correction
    else:
        known = integrate_first(correction, VAR, ctx.step_budget, ctx.verify_trials)
        if known is None:
            return None
    antiderivative = store.add(store.mul(f, g), store.mul(-1, known))
    if not ctx.verified(integrand, antiderivative):
        return None
    return GeneratedPair(integrand, antiderivative, Generator.IBP, ctx.seed)


def sub_pair(ctx: GenerationContext, f: Expr, antiderivative: Expr, g: Expr) -> Optional[GeneratedPair]:
    """(f(g) g', F(g)) for a known pair (f, F)"""
    store = ctx.store
    if free_of(g, VAR):
        return None
    integrand = store.mul(substitute(f, VAR, g), differentiate(g, VAR))
    if not ctx.usable(integrand):
        return None
    composed = substitute(antiderivative, VAR, g)
    if not ctx.verified(integrand, composed):
        return None
    return GeneratedPair(integrand, composed, Generator.SUB, ctx.seed)


def gen_fwd(ctx: GenerationContext) -> Optional[GeneratedPair]:
    return fwd_pair(ctx, ctx.sampler.sample())


def gen_bwd(ctx: GenerationContext) -> GeneratedPair:
    """Resample until a usable antiderivative turns up; rejected draws add to ctx.resamples"""
    for attempt in range(MAX_BWD_ATTEMPTS):
        pair = bwd_pair(ctx, ctx.sampler.sample())
        if pair is not None:
            ctx.resamples += attempt
            return pair
    ctx.resamples += MAX_BWD_ATTEMPTS
    raise GenerationError(f"BWD found no usable sample in {MAX_BWD_ATTEMPTS} attempts (seed {ctx.seed})")


def gen_ibp(ctx: GenerationContext) -> Optional[GeneratedPair]:
    half = max(1, ctx.sampler.params.max_ops // 2)
    f = ctx.sampler.sample(half)
    g = ctx.sampler.sample(half)
    return ibp_pair(ctx, f, g)


def gen_sub(ctx: GenerationContext, pool: Pool) -> Optional[GeneratedPair]:
    if not pool:
        raise DataError("SUB needs a non-empty pool of FWD/BWD pairs")
    integrand_prefix, antiderivative_prefix = pool[int(ctx.rng.integers(len(pool)))]
    f = from_prefix(integrand_prefix, ctx.store)
    antiderivative = from_prefix(antiderivative_prefix, ctx.store)
    g = ctx.sampler.sample(ctx.sub_inner_max_ops)
    return sub_pair(ctx, f, antiderivative, g)


# ---------------------------------------------------------------------------
# Normalization and dedup


def constant_token(value: int) -> Optional[str]:
    """CONST token replacing an integer, None when it is kept as is"""
    if -2 <= value <= 2:
        return None
    digits = len(str(abs(value)))
    if digits == 1:
        return "CONST"
    if digits == 2:
        return "CONST2"
    return "CONST3"


def normalize_constants(e: Expr) -> Expr:
    """Replace integers outside [-2, 2] by CONST tokens by digit count, keeping the shape"""
    store = e.store
    memo: Dict[int, Expr] = {}

    def walk(ident: int) -> Expr:
        cached = memo.get(ident)
        if cached is not None:
            return cached
        kind, payload, children = store.node(ident)
        if kind is Kind.INTEGER:
            token = constant_token(payload)
            result = store.integer(payload) if token is None else store.const(token)
        elif not children:
            result = Expr(store, ident)
        else:
            result = store.intern_raw(kind, payload, tuple(walk(c).id for c in children))
        memo[ident] = result
        return result

    return walk(e.id)


def normalized_key(e: Expr) -> str:
    return to_prefix(normalize_constants(e))


def dedup(items: Iterable, key: Optional[Callable] = None) -> List:
    """Keep the first item of every normalized form; items default to having `.integrand`"""
    key = key or (lambda item: normalized_key(item.integrand))
    seen = set()
    kept = []
    for item in items:
        k = key(item)
        if k in seen:
            continue
        seen.add(k)
        kept.append(item)
    return kept


# ---------------------------------------------------------------------------
# Labeling


def label_integrand(
    integrand: Expr,
    generator: Generator,
    record_id: str,
    budget: int = 10_000,
    verify_trials: int = 20,
    antiderivative: Optional[Expr] = None,
) -> Optional[IntegrandRecord]:
    outcomes = integrate_all(integrand, VAR, budget, verify_trials)
    return IntegrandRecord.from_outcomes(record_id, integrand, generator, outcomes, antiderivative)


def label_record(
    pair: GeneratedPair, record_id: str, budget: int = 10_000, verify_trials: int = 20
) -> Optional[IntegrandRecord]:
    """Run the whole portfolio on a pair; None (drop) when nothing succeeds"""
    return label_integrand(
        pair.integrand, pair.generator, record_id, budget, verify_trials, pair.antiderivative
    )


def read_suite(path: Path = SUITE_PATH) -> List[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.lstrip().startswith("#")]


def label_suite(
    config: RunConfig, store: Optional[ExprStore] = None, path: Path = SUITE_PATH
) -> List[IntegrandRecord]:
    """Label the held-out textbook integrands live"""
    store = store if store is not None else ExprStore()
    entries = read_suite(path)
    records = []
    for number, text in enumerate(entries):
        try:
            integrand = parse(text, store)
        except ParseError as exc:
            raise DataError(f"{path}: cannot parse {text!r}: {exc}") from exc
        record = label_integrand(
            integrand, Generator.SUITE, f"SUITE-{number:03d}", config.step_budget, config.corpus.verify_trials
        )
        if record is None:
            logger.warning("No sub-algorithm integrates suite entry %s", text)
            continue
        records.append(record)
    logger.info("Labeled %d of %d suite integrands", len(records), len(entries))
    return records


# ---------------------------------------------------------------------------
# Corpus assembly


def task_seed(seed: int, generator: Generator, index: int) -> int:
    sequence = np.random.SeedSequence(seed, spawn_key=(GENERATOR_CODES[generator], index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class GenerationTask:
    generator: Generator
    index: int
    seed: int

    @property
    def record_id(self) -> str:
        return f"{self.generator.value}-{self.index:06d}"


@dataclass
class TaskResult:
    task: GenerationTask
    status: str
    op_counts: Dict[str, int] = field(default_factory=dict)
    resamples: int = 0
    key: Optional[str] = None
    record: Optional[CorpusRecord] = None
    pair: Optional[Tuple[str, str]] = None


@dataclass
class _WorkerState:
    config: RunConfig
    corpus_hash: str
    pool: Pool


_WORKER_STATE: Optional[_WorkerState] = None


def _init_worker(config: RunConfig, pool: Pool) -> None:
    global _WORKER_STATE
    _WORKER_STATE = _WorkerState(config, config.corpus_hash(), list(pool))


def run_task(task: GenerationTask) -> TaskResult:
    """Generate and label one pair; runs in a worker process"""
    state = _WORKER_STATE
    ctx = GenerationContext.create(state.config, task.seed)
    try:
        if task.generator is Generator.FWD:
            pair = gen_fwd(ctx)
        elif task.generator is Generator.BWD:
            pair = gen_bwd(ctx)
        elif task.generator is Generator.IBP:
            pair = gen_ibp(ctx)
        else:
            pair = gen_sub(ctx, state.pool)
    except GenerationError as exc:
        logger.warning("%s: %s", task.record_id, exc)
        pair = None
    except RecursionError:
        logger.warning("%s: expression too deep, skipped", task.record_id)
        pair = None
    op_counts = dict(ctx.sampler.op_counts)
    if pair is None:
        return TaskResult(task, "skipped", op_counts, ctx.resamples)
    record = label_record(pair, task.record_id, state.config.step_budget, state.config.corpus.verify_trials)
    if record is None:
        return TaskResult(task, "dropped", op_counts, ctx.resamples)
    return TaskResult(
        task,
        "accepted",
        op_counts,
        ctx.resamples,
        key=normalized_key(pair.integrand),
        record=record_to_schema(record, state.corpus_hash),
        pair=(to_prefix(pair.integrand), to_prefix(pair.antiderivative)),
    )


@contextmanager
def _task_runner(workers: int, config: RunConfig, pool: Pool) -> Iterator[Callable]:
    """Yield a map over tasks that returns results in task order"""
    if workers <= 1:
        _init_worker(config, pool)
        yield lambda tasks: map(run_task, tasks)
        return
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(config, pool)) as executor:
        yield lambda tasks: executor.map(run_task, tasks, chunksize=max(1, len(tasks) // (workers * 4)))


@dataclass
class CorpusBuild:
    train: List[CorpusRecord]
    test: List[CorpusRecord]
    manifest: CorpusManifest


def _disagrees(row: CorpusRecord) -> bool:
    signatures = {(o.status == "Success", o.size if o.status == "Success" else None) for o in row.outcomes.values()}
    return len(signatures) > 1


def corpus_statistics(rows: Sequence[CorpusRecord]) -> dict:
    """Label histogram, multi-label rate, success rates and portfolio disagreement"""
    total = len(rows)
    labels = [a.label for a in ALGORITHMS]
    label_histogram = {name: sum(r.labels[j] for r in rows) for j, name in enumerate(labels)}
    optimal_counts = Counter(str(sum(r.labels)) for r in rows)
    success = {name: sum(r.outcomes[name].status == "Success" for r in rows) for name in labels}

    def rate(count: int) -> float:
        return round(count / total, 6) if total else 0.0

    return {
        "label_histogram": label_histogram,
        "optimal_count_histogram": {str(k): optimal_counts.get(str(k), 0) for k in range(1, len(labels) + 1)},
        "success_rate": {name: rate(n) for name, n in success.items()},
        "multi_label_rate": rate(sum(1 for r in rows if sum(r.labels) > 1)),
        "disagreement_rate": rate(sum(1 for r in rows if _disagrees(r))),
    }


def _split(seed: int, generator: Generator, count: int, test_count: int) -> Tuple[List[int], List[int]]:
    sequence = np.random.SeedSequence(seed, spawn_key=(SPLIT_STREAM, GENERATOR_CODES[generator]))
    order = np.random.default_rng(sequence).permutation(count)
    return sorted(int(i) for i in order[test_count:]), sorted(int(i) for i in order[:test_count])


def build_corpus(config: RunConfig, workers: Optional[int] = None) -> CorpusBuild:
    """Generate, label, dedup and split the corpus.

    Args:
        config: run configuration; seed, quotas and sampler settings come from here.
        workers: process count, defaults to the configured one. It changes speed only;
            the records and the manifest depend on the config alone.

    Returns:
        Train and test records plus the manifest with per-generator statistics.

    Raises:
        DataError: a generator missed its quota within max_task_factor times the
            quota, or the labels barely vary across a corpus large enough to tell.
    """
    workers = workers or config.resolved_workers()
    corpus = config.corpus
    quota = corpus.train_per_generator + corpus.test_per_generator
    seen = set()
    accepted: Dict[Generator, List[TaskResult]] = {}
    stats: Dict[str, GeneratorStats] = {}
    operator_histogram: Counter = Counter()

    # SUB draws from FWD/BWD output, so it runs last
    order = sorted(corpus.generators, key=lambda g: g is Generator.SUB)
    for generator in order:
        pool: List[Tuple[str, str]] = []
        if generator is Generator.SUB:
            for source in (Generator.FWD, Generator.BWD):
                pool.extend(result.pair for result in accepted.get(source, []))
        gen_stats = GeneratorStats()
        kept: List[TaskResult] = []
        max_tasks = quota * corpus.max_task_factor
        index = 0
        with _task_runner(workers, config, pool) as run:
            while len(kept) < quota:
                if index >= max_tasks:
                    raise DataError(
                        f"{generator.value}: only {len(kept)} of {quota} records after {max_tasks} tasks"
                    )
                stop = min(index + corpus.task_batch, max_tasks)
                tasks = [GenerationTask(generator, i, task_seed(config.seed, generator, i)) for i in range(index, stop)]
                index = stop
                for result in run(tasks):
                    if len(kept) >= quota:
                        break
                    # results arrive in task order whatever the worker count
                    gen_stats.tasks += 1
                    operator_histogram.update(result.op_counts)
                    gen_stats.resamples += result.resamples
                    if result.status == "skipped":
                        gen_stats.skipped += 1
                    elif result.status == "dropped":
                        gen_stats.dropped += 1
                    elif result.key in seen:
                        gen_stats.collisions += 1
                    else:
                        seen.add(result.key)
                        gen_stats.accepted += 1
                        kept.append(result)
        logger.info(
            "%s: %d records from %d tasks (%d skipped, %d dropped, %d collisions, %d resamples)",
            generator.value, gen_stats.accepted, gen_stats.tasks,
            gen_stats.skipped, gen_stats.dropped, gen_stats.collisions, gen_stats.resamples,
        )
        accepted[generator] = kept
        stats[generator.value] = gen_stats

    # per-generator split, test indices drawn from the run seed
    train: List[CorpusRecord] = []
    test: List[CorpusRecord] = []
    for generator in corpus.generators:
        kept = accepted[generator]
        train_idx, test_idx = _split(config.seed, generator, len(kept), corpus.test_per_generator)
        train.extend(kept[i].record for i in train_idx)
        test.extend(kept[i].record for i in test_idx)

    statistics = corpus_statistics(train + test)
    total = len(train) + len(test)
    if statistics["disagreement_rate"] < corpus.min_disagreement:
        message = (
            f"portfolio disagreement {statistics['disagreement_rate']:.3f} is below "
            f"{corpus.min_disagreement:.3f}; the labels are nearly constant"
        )
        if total >= MIN_RECORDS_FOR_DISAGREEMENT:
            raise DataError(message)
        logger.warning(message)

    manifest = CorpusManifest(
        seed=config.seed,
        corpus_hash=config.corpus_hash(),
        config_hash=config.config_hash(),
        config=config.echo(),
        generators=[g.value for g in corpus.generators],
        train_per_generator=corpus.train_per_generator,
        test_per_generator=corpus.test_per_generator,
        train_count=len(train),
        test_count=len(test),
        generator_stats=stats,
        dedup_collisions=sum(s.collisions for s in stats.values()),
        drop_count=sum(s.dropped for s in stats.values()),
        operator_histogram=dict(sorted(operator_histogram.items())),
        **statistics,
    )
    return CorpusBuild(train, test, manifest)
