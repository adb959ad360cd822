import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from intsel.artifacts import dumps, record_from_schema
from intsel.calculus import verify_pair
from intsel.config import OPERATORS, CorpusConfig, ModelConfig, RunConfig, SamplerParams
from intsel.datagen import (
    GENERATOR_CODES,
    MAX_BWD_ATTEMPTS,
    GenerationContext,
    RandomExprSampler,
    build_corpus,
    bwd_pair,
    constant_token,
    dedup,
    fwd_pair,
    gen_bwd,
    gen_fwd,
    gen_ibp,
    gen_sub,
    ibp_pair,
    label_integrand,
    label_suite,
    normalize_constants,
    normalized_key,
    read_suite,
    sub_pair,
    task_seed,
)
from intsel.exceptions import DataError, GenerationError
from intsel.expr import ExprStore, Kind, dag_size, from_prefix, iter_ids, parse, to_prefix
from intsel.models import ALGORITHMS, Generator
from intsel.selection import select_with_fallback

SLOW = os.environ.get("INTSEL_SLOW_TESTS") == "1"


def tiny_config(**corpus) -> RunConfig:
    settings = dict(
        train_per_generator=3,
        test_per_generator=2,
        generators=[Generator.FWD, Generator.BWD],
        verify_trials=10,
        max_task_factor=40,
        task_batch=8,
        min_disagreement=0.0,
    )
    settings.update(corpus)
    return RunConfig(
        seed=11,
        step_budget=5000,
        corpus=CorpusConfig(**settings),
        sampler=SamplerParams(max_ops=3),
        model=ModelConfig(epochs=1),
    )


class TestNormalization(unittest.TestCase):
    def test_constant_rule_table(self):
        fixture = {-2: None, 2: None, 5: "CONST", -7: "CONST", 42: "CONST2", 123: "CONST3"}
        for value, token in fixture.items():
            self.assertEqual(constant_token(value), token, value)
        self.assertIsNone(constant_token(0))
        self.assertEqual(constant_token(-1000), "CONST3")

    def test_normalize_keeps_small_integers(self):
        store = ExprStore()
        self.assertEqual(to_prefix(normalize_constants(parse("x + 123", store))), "Add 2 CONST3 x")
        self.assertEqual(to_prefix(normalize_constants(parse("2*x", store))), "Mul 2 2 x")
        self.assertEqual(to_prefix(normalize_constants(parse("x^(-2)", store))), "Pow x -2")

    def test_normalize_is_idempotent_on_random_expressions(self):
        store = ExprStore()
        sampler = RandomExprSampler(SamplerParams(max_ops=6, int_low=-50, int_high=500), np.random.default_rng(3), store)
        for _ in range(300):
            e = sampler.sample()
            once = normalize_constants(e)
            self.assertEqual(normalize_constants(once), once)

    def test_dedup_keeps_first_of_each_normalized_form(self):
        store = ExprStore()
        items = [parse(t, store) for t in ("5*x", "7*x", "x + 42", "x", "x + 13", "2*x")]
        kept = dedup(items, key=normalized_key)
        self.assertEqual([to_prefix(e) for e in kept], ["Mul 2 5 x", "Add 2 42 x", "x", "Mul 2 2 x"])
        self.assertEqual(dedup(kept, key=normalized_key), kept)


class TestSampler(unittest.TestCase):
    def test_same_seed_same_expressions(self):
        params = SamplerParams(max_ops=5)
        first = RandomExprSampler(params, np.random.default_rng(5))
        second = RandomExprSampler(params, np.random.default_rng(5))
        for _ in range(50):
            self.assertEqual(to_prefix(first.sample()), to_prefix(second.sample()))
        self.assertEqual(first.op_counts, second.op_counts)

    def test_operator_count_is_bounded(self):
        sampler = RandomExprSampler(SamplerParams(max_ops=4), np.random.default_rng(9))
        for _ in range(100):
            before = sum(sampler.op_counts.values())
            sampler.sample()
            self.assertTrue(1 <= sum(sampler.op_counts.values()) - before <= 4)

    def test_only_enabled_operators_are_drawn(self):
        params = SamplerParams(max_ops=5, operator_weights={"add": 1.0, "sin": 1.0})
        sampler = RandomExprSampler(params, np.random.default_rng(2))
        for _ in range(100):
            sampler.sample()
        self.assertEqual(set(sampler.op_counts), {"add", "sin"})

    def test_max_ops_must_be_positive(self):
        with self.assertRaises(ValueError):
            RandomExprSampler(SamplerParams(), np.random.default_rng(0)).sample(0)

    def test_no_power_of_zero_is_emitted(self):
        # integers are only +-1, so zeros come from cancellation such as 1 + -1 or x - x
        params = SamplerParams(max_ops=8, int_low=-1, int_high=1, leaf_weights={"x": 1.0, "int": 3.0})
        store = ExprStore()
        sampler = RandomExprSampler(params, np.random.default_rng(4), store)
        zero = store.integer(0).id
        for _ in range(2000):
            e = sampler.sample()
            for ident in iter_ids(e):
                kind, _, children = store.node(ident)
                if kind is Kind.POW:
                    self.assertNotEqual(children[0], zero, to_prefix(e))

    def assert_operator_shares(self, samples, operators):
        params = SamplerParams(max_ops=15)
        sampler = RandomExprSampler(params, np.random.default_rng(17))
        for _ in range(samples):
            sampler.sample()
        drawn = sum(sampler.op_counts.values())
        total_weight = sum(params.operator_weights.values())
        for op in operators:
            expected = params.operator_weights[op] / total_weight
            observed = sampler.op_counts[op] / drawn
            self.assertLess(abs(observed - expected), 0.2 * expected, op)

    def test_operator_histogram_follows_weights(self):
        heavy = [op for op, w in SamplerParams().operator_weights.items() if w >= 1.0]
        self.assert_operator_shares(2000, heavy)

    @unittest.skipUnless(SLOW, "set INTSEL_SLOW_TESTS=1")
    def test_operator_histogram_follows_weights_for_every_operator(self):
        weighted = [op for op in OPERATORS if SamplerParams().operator_weights.get(op, 0.0) > 0]
        self.assertEqual(len(weighted), 14)
        self.assert_operator_shares(10_000, weighted)


class ScriptedSampler:
    """Hands out fixed expressions in order"""

    def __init__(self, expressions):
        self.expressions = list(expressions)

    def sample(self, max_ops=None):
        return self.expressions.pop(0)


class TestGenerators(unittest.TestCase):
    def setUp(self):
        self.ctx = GenerationContext.create(RunConfig(), seed=1)

    def p(self, text):
        return parse(text, self.ctx.store)

    def test_forward_pair(self):
        pair = fwd_pair(self.ctx, self.p("cos(x)"))
        self.assertEqual(pair.generator, Generator.FWD)
        self.assertEqual(pair.antiderivative, self.p("sin(x)"))

    def test_forward_pair_rejects_constants(self):
        self.assertIsNone(fwd_pair(self.ctx, self.p("3")))
        self.assertIsNone(fwd_pair(self.ctx, self.p("exp(x^2)")))

    def test_backward_pair(self):
        pair = bwd_pair(self.ctx, self.p("x^2*sin(x)"))
        self.assertEqual(pair.integrand, self.p("2*x*sin(x) + x^2*cos(x)"))
        self.assertIsNone(bwd_pair(self.ctx, self.p("7")))

    def test_parts_pair(self):
        pair = ibp_pair(self.ctx, self.p("x"), self.p("exp(x)"))
        self.assertEqual(pair.integrand, self.p("x*exp(x)"))
        self.assertTrue(verify_pair(pair.integrand, pair.antiderivative))

    def test_substitution_pair(self):
        pair = sub_pair(self.ctx, self.p("cos(x)"), self.p("sin(x)"), self.p("x^2"))
        self.assertEqual(pair.integrand, self.p("2*x*cos(x^2)"))
        self.assertEqual(pair.antiderivative, self.p("sin(x^2)"))

    def test_node_cap(self):
        ctx = GenerationContext.create(RunConfig(corpus=CorpusConfig(node_cap=3)), seed=1)
        self.assertIsNone(bwd_pair(ctx, parse("x^2*sin(x)", ctx.store)))

    def test_sampled_generators_emit_verified_pairs(self):
        config = RunConfig(sampler=SamplerParams(max_ops=3), corpus=CorpusConfig(verify_trials=10))
        pool = [("Cos x", "Sin x"), ("Mul 2 2 x", "Pow x 2")]
        produced = 0
        for seed in range(20):
            for generate in (gen_fwd, gen_bwd, gen_ibp, lambda c: gen_sub(c, pool)):
                ctx = GenerationContext.create(config, seed)
                pair = generate(ctx)
                if pair is None:
                    continue
                produced += 1
                self.assertTrue(verify_pair(pair.integrand, pair.antiderivative, trials=10))
                self.assertLessEqual(dag_size(pair.integrand), config.corpus.node_cap)
        self.assertGreater(produced, 20)

    def test_backward_generator_resamples_instead_of_skipping(self):
        self.ctx.sampler = ScriptedSampler([self.p("3"), self.p("7"), self.p("sin(x)")])
        pair = gen_bwd(self.ctx)
        self.assertEqual(pair.antiderivative, self.p("sin(x)"))
        self.assertEqual(pair.integrand, self.p("cos(x)"))
        self.assertEqual(self.ctx.resamples, 2)

    def test_backward_generator_gives_up_after_the_attempt_cap(self):
        self.ctx.sampler = ScriptedSampler([self.p("5")] * MAX_BWD_ATTEMPTS)
        with self.assertRaises(GenerationError):
            gen_bwd(self.ctx)
        self.assertEqual(self.ctx.resamples, MAX_BWD_ATTEMPTS)

    def test_substitution_needs_a_pool(self):
        with self.assertRaises(DataError):
            gen_sub(self.ctx, [])

    def test_task_seeds_are_independent_streams(self):
        seeds = {task_seed(0, g, i) for g in GENERATOR_CODES for i in range(50)}
        self.assertEqual(len(seeds), 200)
        self.assertEqual(task_seed(3, Generator.FWD, 7), task_seed(3, Generator.FWD, 7))


class TestSuite(unittest.TestCase):
    def test_bundled_suite_parses(self):
        entries = read_suite()
        self.assertGreaterEqual(len(entries), 20)
        store = ExprStore()
        for text in entries:
            parse(text, store)

    def test_label_suite(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "suite.txt"
            path.write_text("# comment\ncos(x)\n\nx*exp(x)\nexp(x^2)\n", encoding="utf-8")
            records = label_suite(RunConfig(), path=path)
        self.assertEqual([r.id for r in records], ["SUITE-000", "SUITE-001"])
        self.assertTrue(all(r.generator is Generator.SUITE for r in records))

    def test_unparseable_suite_entry(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "suite.txt"
            path.write_text("cos(x\n", encoding="utf-8")
            with self.assertRaises(DataError):
                label_suite(RunConfig(), path=path)


class TestBuildCorpus(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = tiny_config()
        cls.build = build_corpus(cls.config, workers=1)

    def test_quotas(self):
        self.assertEqual(len(self.build.train), 6)
        self.assertEqual(len(self.build.test), 4)
        for generator in ("FWD", "BWD"):
            self.assertEqual(sum(r.generator == generator for r in self.build.test), 2)

    def test_records_are_unique_after_normalization(self):
        rows = self.build.train + self.build.test
        store = ExprStore()
        keys = [normalized_key(from_prefix(r.integrand_prefix, store)) for r in rows]
        self.assertEqual(len(set(keys)), len(keys))
        self.assertEqual(len({r.id for r in rows}), len(rows))

    def test_every_record_has_an_optimal_label(self):
        for row in self.build.train + self.build.test:
            self.assertGreaterEqual(sum(row.labels), 1)
            self.assertEqual(row.corpus_hash, self.config.corpus_hash())

    def test_fallback_always_finds_a_success(self):
        store = ExprStore()
        for row in self.build.train + self.build.test:
            record = record_from_schema(row, store)
            self.assertTrue(record.labels_consistent())
            result = select_with_fallback([0.2] * 5, record)
            self.assertIsNotNone(result.chosen)
            self.assertTrue(result.outcome.succeeded)

    def test_successful_outcomes_are_sound(self):
        store = ExprStore()
        checked = 0
        for row in self.build.train + self.build.test:
            record = record_from_schema(row, store)
            for alg in ALGORITHMS:
                outcome = record.outcomes[alg]
                if outcome.succeeded:
                    checked += 1
                    self.assertTrue(verify_pair(record.integrand, outcome.output, trials=10), row.id)
        self.assertGreaterEqual(checked, len(self.build.train) + len(self.build.test))

    def test_backward_tasks_do_not_skip(self):
        stats = self.build.manifest.generator_stats["BWD"]
        self.assertEqual(stats.skipped, 0)
        self.assertGreaterEqual(stats.resamples, 0)
        self.assertEqual(self.build.manifest.generator_stats["FWD"].resamples, 0)

    def test_manifest(self):
        manifest = self.build.manifest
        self.assertEqual(manifest.train_count, 6)
        self.assertEqual(manifest.test_count, 4)
        self.assertEqual(manifest.corpus_hash, self.config.corpus_hash())
        self.assertEqual(sum(manifest.label_histogram.values()), sum(sum(r.labels) for r in self.build.train + self.build.test))

    def test_same_seed_same_bytes(self):
        again = build_corpus(self.config, workers=1)
        self.assertEqual([dumps(r) for r in again.train], [dumps(r) for r in self.build.train])
        self.assertEqual([dumps(r) for r in again.test], [dumps(r) for r in self.build.test])

    def test_unreachable_quota(self):
        config = tiny_config(train_per_generator=50, generators=[Generator.FWD], max_task_factor=1, task_batch=8)
        config = config.model_copy(update={"sampler": SamplerParams(max_ops=1, operator_weights={"exp": 1.0}, pow_exponents=[2])})
        with self.assertRaises(DataError):
            build_corpus(config, workers=1)

    @unittest.skipUnless(SLOW, "set INTSEL_SLOW_TESTS=1")
    def test_worker_count_does_not_change_output(self):
        config = tiny_config(generators=[Generator.FWD, Generator.BWD, Generator.IBP, Generator.SUB])
        serial = build_corpus(config, workers=1)
        parallel = build_corpus(config, workers=3)
        self.assertEqual([dumps(r) for r in serial.train], [dumps(r) for r in parallel.train])
        self.assertEqual([dumps(r) for r in serial.test], [dumps(r) for r in parallel.test])
        self.assertEqual(dumps(serial.manifest), dumps(parallel.manifest))


@unittest.skipUnless(SLOW, "set INTSEL_SLOW_TESTS=1")
class TestGeneratorSoundness(unittest.TestCase):
    def test_thousand_pairs_per_generator_verify(self):
        config = RunConfig()
        pool = []
        for generator, generate in ((Generator.FWD, gen_fwd), (Generator.BWD, gen_bwd), (Generator.IBP, gen_ibp)):
            emitted = 0
            index = 0
            while emitted < 1000:
                ctx = GenerationContext.create(config, task_seed(0, generator, index))
                index += 1
                pair = generate(ctx)
                if pair is None:
                    continue
                emitted += 1
                self.assertTrue(verify_pair(pair.integrand, pair.antiderivative, trials=20))
                if generator is not Generator.IBP and len(pool) < 500:
                    pool.append((to_prefix(pair.integrand), to_prefix(pair.antiderivative)))
        emitted = 0
        index = 0
        while emitted < 1000:
            ctx = GenerationContext.create(config, task_seed(0, Generator.SUB, index))
            index += 1
            pair = gen_sub(ctx, pool)
            if pair is None:
                continue
            emitted += 1
            self.assertTrue(verify_pair(pair.integrand, pair.antiderivative, trials=20))

    def test_every_success_on_random_integrands_verifies(self):
        store = ExprStore()
        sampler = RandomExprSampler(SamplerParams(max_ops=3), np.random.default_rng(23), store)
        labeled = 0
        while labeled < 10_000:
            integrand = sampler.sample()
            if integrand.is_integer(0):
                continue
            record = label_integrand(integrand, Generator.FWD, f"R{labeled}", budget=2000)
            labeled += 1
            if record is None:
                continue
            # rebuild from prefix in a fresh store so the check does not share nodes
            fresh = ExprStore()
            for alg in ALGORITHMS:
                outcome = record.outcomes[alg]
                if outcome.succeeded:
                    self.assertTrue(
                        verify_pair(from_prefix(to_prefix(integrand), fresh), from_prefix(to_prefix(outcome.output), fresh)),
                        f"{alg.label} on {to_prefix(integrand)}",
                    )


if __name__ == "__main__":
    unittest.main()
