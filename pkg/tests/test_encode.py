import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from intsel.config import SamplerParams
from intsel.datagen import RandomExprSampler, normalize_constants
from intsel.encode import (
    PAD,
    RESERVED_OFFSET,
    UNK,
    TokenSequence,
    Vocabulary,
    build_vocabulary,
    decode_sequence,
    encode_sequence,
    encode_tree,
    token_arity,
)
from intsel.exceptions import DataError, ParseError
from intsel.expr import ExprStore, parse, tree_size

SLOW = os.environ.get("INTSEL_SLOW_TESTS") == "1"


class TestVocabulary(unittest.TestCase):
    def setUp(self):
        self.store = ExprStore()
        self.exprs = [normalize_constants(parse(t, self.store)) for t in ("x + 2", "sin(x)*x", "x^(-2) + 37*x")]
        self.vocab = build_vocabulary(self.exprs)

    def test_tokens_are_sorted_after_reserved_ids(self):
        self.assertEqual(list(self.vocab.tokens), sorted(self.vocab.tokens))
        self.assertEqual(self.vocab.id_of(self.vocab.tokens[0]), RESERVED_OFFSET)
        self.assertEqual(len(self.vocab), len(self.vocab.tokens) + RESERVED_OFFSET)
        for token in ("ADD2", "MUL2", "POW", "SIN", "CONST2", "x", "2", "-2"):
            self.assertIn(token, self.vocab)

    def test_unknown_tokens_map_to_unk(self):
        self.assertEqual(self.vocab.id_of("ARCTAN"), UNK)
        seq = encode_sequence(parse("arctan(x)", self.store), self.vocab)
        self.assertEqual(self.vocab.count_unknown(seq.ids), 1)

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "vocab.txt"
            self.vocab.save(path)
            loaded = Vocabulary.load(path)
        self.assertEqual(loaded, self.vocab)
        self.assertEqual(loaded.hash(), self.vocab.hash())

    def test_missing_file(self):
        with self.assertRaises(DataError):
            Vocabulary.load(Path("/nonexistent/vocab.txt"))

    def test_invalid_token_lists(self):
        with self.assertRaises(DataError):
            Vocabulary(["x", "x"])
        with self.assertRaises(DataError):
            Vocabulary(["<pad>", "x"])

    def test_reserved_ids(self):
        self.assertEqual(self.vocab.token_of(PAD), "<pad>")
        self.assertEqual(self.vocab.token_of(UNK), "<unk>")
        with self.assertRaises(DataError):
            self.vocab.token_of(len(self.vocab))


class TestSequenceEncoding(unittest.TestCase):
    def test_prefix_tokens_carry_arity(self):
        store = ExprStore()
        e = parse("x + 2", store)
        vocab = build_vocabulary([e])
        seq = encode_sequence(e, vocab)
        self.assertEqual([vocab.token_of(i) for i in seq.ids], ["ADD2", "2", "x"])

    def test_decode_restores_the_exact_shape(self):
        store = ExprStore()
        exprs = [normalize_constants(parse(t, store)) for t in ("x*exp(x) - 5*exp(x)", "1/(x^2 + 1)", "sin(x)^2 + x")]
        vocab = build_vocabulary(exprs)
        for e in exprs:
            self.assertEqual(decode_sequence(encode_sequence(e, vocab), vocab, store), e)

    def assert_sampled_round_trip(self, count):
        store = ExprStore()
        sampler = RandomExprSampler(SamplerParams(max_ops=12), np.random.default_rng(43), store)
        exprs = [sampler.sample() for _ in range(count)]
        exprs += [normalize_constants(e) for e in exprs[: count // 2]]
        vocab = build_vocabulary(exprs)
        for e in exprs:
            seq = encode_sequence(e, vocab)
            self.assertEqual(len(seq), tree_size(e))
            self.assertEqual(decode_sequence(seq, vocab, store), e)

    def test_sampled_expressions_decode_to_themselves(self):
        self.assert_sampled_round_trip(500)

    @unittest.skipUnless(SLOW, "set INTSEL_SLOW_TESTS=1")
    def test_sampled_expressions_decode_to_themselves_at_scale(self):
        self.assert_sampled_round_trip(10_000)

    def test_decode_rejects_padding_and_truncation(self):
        store = ExprStore()
        e = parse("x + 2", store)
        vocab = build_vocabulary([e])
        with self.assertRaises(ParseError):
            decode_sequence(TokenSequence((PAD,)), vocab, store)
        with self.assertRaises(ParseError):
            decode_sequence(TokenSequence(encode_sequence(e, vocab).ids[:-1]), vocab, store)

    def test_token_arity(self):
        self.assertEqual(token_arity("ADD3"), 3)
        self.assertEqual(token_arity("MUL2"), 2)
        self.assertEqual(token_arity("POW"), 2)
        self.assertEqual(token_arity("SIN"), 1)
        self.assertEqual(token_arity("CONST"), 0)
        self.assertEqual(token_arity("x"), 0)


class TestTreeEncoding(unittest.TestCase):
    def test_shared_nodes_are_unfolded(self):
        store = ExprStore()
        e = parse("x*sin(x)", store)
        vocab = build_vocabulary([e])
        tree = encode_tree(e, vocab)
        self.assertEqual(tree.node_count(), tree_size(e))
        self.assertEqual([vocab.token_of(i) for i in tree.token_ids], ["MUL2", "x", "SIN", "x"])

    def test_preorder_matches_the_sequence(self):
        store = ExprStore()
        e = normalize_constants(parse("exp(3*x)*(x^2 + 1) + ln(x)", store))
        vocab = build_vocabulary([e])
        self.assertEqual(encode_tree(e, vocab).preorder(), encode_sequence(e, vocab).ids)

    def test_heights(self):
        store = ExprStore()
        e = parse("x*sin(x)", store)
        tree = encode_tree(e, build_vocabulary([e]))
        self.assertEqual(tree.heights(), (2, 0, 1, 0))
        self.assertEqual(tree.children[0], (1, 2))

    def test_single_token(self):
        store = ExprStore()
        e = parse("x", store)
        tree = encode_tree(e, build_vocabulary([e]))
        self.assertEqual(tree.node_count(), 1)
        self.assertEqual(tree.heights(), (0,))


if __name__ == "__main__":
    unittest.main()
