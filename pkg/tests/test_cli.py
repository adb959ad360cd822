import shutil
import tempfile
import unittest
from pathlib import Path

from typer.testing import CliRunner

from intsel.artifacts import read_jsonl
from intsel.cli import app
from intsel.schemas import ReportRecord

runner = CliRunner()

TINY_CONFIG = """\
seed: 11
step_budget: 5000
corpus:
  train_per_generator: 3
  test_per_generator: 2
  generators: [FWD, BWD]
  verify_trials: 10
  max_task_factor: 40
  task_batch: 8
  min_disagreement: 0.0
sampler:
  max_ops: 3
model:
  embedding_dim: 4
  hidden1: 4
  hidden2: 3
  dense: 3
  dropout: 0.0
  batch_size: 4
  epochs: 2
"""


def invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


class TestPipelineCommands(unittest.TestCase):
    """generate -> train -> eval -> report on a tiny corpus"""

    @classmethod
    def setUpClass(cls):
        cls.tmp = Path(tempfile.mkdtemp())
        cls.config = cls.tmp / "tiny.yaml"
        cls.config.write_text(TINY_CONFIG, encoding="utf-8")
        cls.out = cls.tmp / "run"
        common = ("--config", cls.config, "--out", cls.out, "--workers", 1)
        cls.generated = invoke("generate", *common)
        cls.trained = invoke("train", "lstm", *common)
        cls.evaluated = invoke("eval", "lstm", *common)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def common(self, out=None):
        return ("--config", self.config, "--out", out or self.out, "--workers", 1)

    def test_generate_writes_the_corpus(self):
        self.assertEqual(self.generated.exit_code, 0, self.generated.output)
        for name in ("train.jsonl", "test.jsonl", "vocab.txt", "manifest.json"):
            self.assertTrue((self.out / name).is_file(), name)
        self.assertIn("vocabulary", self.generated.output)

    def test_train_writes_checkpoint_and_loss_curve(self):
        self.assertEqual(self.trained.exit_code, 0, self.trained.output)
        self.assertTrue((self.out / "lstm.ckpt.json").is_file())
        lines = (self.out / "loss_lstm.tsv").read_text(encoding="utf-8").splitlines()
        self.assertTrue(lines[0].startswith("# config_hash="), lines[0])
        self.assertIn(" corpus_hash=", lines[0])
        self.assertEqual(lines[1], "classifier\tepoch\tmean_loss")
        self.assertEqual(len(lines), 2 + 2 * 5)

    def test_eval_reports_every_strategy(self):
        self.assertEqual(self.evaluated.exit_code, 0, self.evaluated.output)
        records = read_jsonl(self.out / "report.jsonl", ReportRecord)
        self.assertEqual([r.strategy for r in records], ["oracle", "lstm", "baseline"])
        oracle = records[0]
        self.assertEqual(oracle.total, 4)
        self.assertEqual(oracle.exact_optimal, oracle.total)
        self.assertTrue((self.out / "bars.tsv").is_file())

    def test_report_renders_existing_results(self):
        result = invoke("report", "--bars", "--config", self.config, "--out", self.out)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("oracle", result.output)
        lines = (self.out / "bars.tsv").read_text(encoding="utf-8").splitlines()
        self.assertTrue(lines[0].startswith("# config_hash="), lines[0])

    def test_report_refuses_a_different_configuration(self):
        other = self.tmp / "other.yaml"
        other.write_text(TINY_CONFIG.replace("seed: 11", "seed: 12"), encoding="utf-8")
        result = invoke("report", "--config", other, "--out", self.out)
        self.assertEqual(result.exit_code, 3, result.output)

    def test_report_refuses_stale_bars(self):
        copy = self.tmp / "stale"
        shutil.copytree(self.out, copy)
        bars = copy / "bars.tsv"
        lines = bars.read_text(encoding="utf-8").splitlines()
        lines[0] = "# config_hash=0 corpus_hash=0"
        bars.write_text("\n".join(lines) + "\n", encoding="utf-8")
        result = invoke("report", "--config", self.config, "--out", copy)
        self.assertEqual(result.exit_code, 3, result.output)
        result = invoke("report", "--bars", "--config", self.config, "--out", copy)
        self.assertEqual(result.exit_code, 0, result.output)

    def test_existing_outputs_are_not_overwritten(self):
        result = invoke("generate", *self.common())
        self.assertEqual(result.exit_code, 2)

    def test_pipeline_is_reproducible(self):
        other = self.tmp / "again"
        for command in (("generate",), ("train", "lstm"), ("eval", "lstm")):
            result = invoke(*command, *self.common(other))
            self.assertEqual(result.exit_code, 0, result.output)
        names = ("train.jsonl", "test.jsonl", "vocab.txt", "manifest.json", "lstm.ckpt.json", "loss_lstm.tsv", "report.jsonl")
        for name in names:
            self.assertEqual((other / name).read_bytes(), (self.out / name).read_bytes(), name)


class TestCommandErrors(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_invalid_config(self):
        config = self.root / "bad.yaml"
        config.write_text("seed: -1\n", encoding="utf-8")
        result = invoke("generate", "--config", config, "--out", self.root / "out")
        self.assertEqual(result.exit_code, 2)

    def test_missing_config_file(self):
        result = invoke("generate", "--config", self.root / "missing.yaml", "--out", self.root / "out")
        self.assertEqual(result.exit_code, 2)

    def test_train_without_a_corpus(self):
        config = self.root / "tiny.yaml"
        config.write_text(TINY_CONFIG, encoding="utf-8")
        result = invoke("train", "treelstm", "--config", config, "--out", self.root / "empty", "--workers", 1)
        self.assertEqual(result.exit_code, 3)

    def test_unknown_model_kind(self):
        result = invoke("train", "transformer")
        self.assertNotEqual(result.exit_code, 0)


if __name__ == "__main__":
    unittest.main()
