import inspect
import unittest

from intsel.datagen import build_corpus
from intsel.nn import train_classifier
from intsel.pipeline import load_report
from intsel.portfolio import integrate_with
from intsel.selection import compare, evaluate

DOCUMENTED = (evaluate, compare, integrate_with, train_classifier, build_corpus, load_report)


class TestPublicDocstrings(unittest.TestCase):
    def test_every_parameter_is_described(self):
        for fn in DOCUMENTED:
            with self.subTest(function=fn.__name__):
                doc = inspect.getdoc(fn)
                self.assertIsNotNone(doc)
                self.assertIn("Args:", doc)
                self.assertIn("Returns:", doc)
                args = doc.split("Args:", 1)[1].split("Returns:", 1)[0]
                for name in inspect.signature(fn).parameters:
                    self.assertIn(f"{name}:", args)


if __name__ == "__main__":
    unittest.main()
