import os
import tempfile
import unittest
from pathlib import Path

from fastapi.testclient import TestClient

from intsel.config import ModelConfig
from intsel.encode import build_vocabulary
from intsel.expr import ExprStore, parse
from intsel.main import app
from intsel.models import SubAlgorithm
from intsel.nn import BinaryRelevanceModel, ModelKind, save_checkpoint
from intsel.settings import get_settings

BASE_URL = "/api/v1"


class TestApiRequests(unittest.TestCase):
    """
    Request tests for the integration service.
    The app runs in-process through TestClient; checkpoints come from a temp directory.
    """

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.artifacts = Path(self.tmp.name)
        self._saved_env = os.environ.get("INTSEL_ARTIFACTS_DIR")
        os.environ["INTSEL_ARTIFACTS_DIR"] = str(self.artifacts)
        get_settings.cache_clear()
        self.client = TestClient(app)

    def tearDown(self):
        if self._saved_env is None:
            os.environ.pop("INTSEL_ARTIFACTS_DIR", None)
        else:
            os.environ["INTSEL_ARTIFACTS_DIR"] = self._saved_env
        get_settings.cache_clear()
        self.tmp.cleanup()

    def save_tiny_model(self, kind: ModelKind) -> None:
        store = ExprStore()
        vocab = build_vocabulary(parse(t, store) for t in ("cos(x)", "x*exp(x)", "1/(x^2 + 1)"))
        config = ModelConfig(embedding_dim=3, hidden1=3, hidden2=2, dense=2, dropout=0.0)
        model = BinaryRelevanceModel.create(kind, vocab, config, seed=0)
        save_checkpoint(model, self.artifacts / f"{kind.value}.ckpt.json", {}, "corpus", "model")

    def test_health_endpoint(self):
        """Test health endpoint returns healthy status"""
        response = self.client.get("/health")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["status"], "healthy")

    def test_list_algorithms(self):
        """Test the label set comes back in label order"""
        response = self.client.get(f"{BASE_URL}/algorithms")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["algorithms"], list(SubAlgorithm.labels()))

    def test_integrate(self):
        """Test running one sub-algorithm"""
        response = self.client.post(f"{BASE_URL}/integrate", json={"integrand": "cos(x)", "algorithm": "RuleTable"})
        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertEqual(data["status"], "Success")
        self.assertEqual(data["output"], "sin(x)")
        self.assertEqual(data["output_prefix"], "Sin x")
        self.assertEqual(data["size"], 2)

    def test_integrate_failure_and_budget(self):
        """Test failed and budget-limited runs are reported, not raised"""
        response = self.client.post(f"{BASE_URL}/integrate", json={"integrand": "sin(x)", "algorithm": "Hermite"})
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["status"], "Failure")
        self.assertIsNone(response.json()["output"])

        response = self.client.post(
            f"{BASE_URL}/integrate", json={"integrand": "x*exp(x)", "algorithm": "Parts", "budget": 1}
        )
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["status"], "BudgetExceeded")

    def test_integrate_bad_input(self):
        """Test malformed integrands give 400 and malformed requests give 422"""
        response = self.client.post(f"{BASE_URL}/integrate", json={"integrand": "cos(x", "algorithm": "RuleTable"})
        self.assertEqual(response.status_code, 400)
        self.assertIn("position", response.json().get("detail", ""))

        response = self.client.post(f"{BASE_URL}/integrate", json={"integrand": "foo(x)", "algorithm": "RuleTable"})
        self.assertEqual(response.status_code, 400)

        response = self.client.post(f"{BASE_URL}/integrate", json={"integrand": "x", "algorithm": "Risch"})
        self.assertEqual(response.status_code, 422)

        response = self.client.post(
            f"{BASE_URL}/integrate", json={"integrand": "x", "algorithm": "Parts", "budget": 0}
        )
        self.assertEqual(response.status_code, 422)

    def test_label(self):
        """Test labeling marks the sub-algorithms with the smallest output"""
        response = self.client.post(f"{BASE_URL}/label", json={"integrand": "x*exp(x)"})
        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertEqual(data["labels"], [0, 0, 1, 0, 0])
        self.assertFalse(data["dropped"])
        self.assertEqual([o["algorithm"] for o in data["outcomes"]], list(SubAlgorithm.labels()))
        parts = data["outcomes"][2]
        self.assertEqual(parts["size"], data["optimal_size"])

    def test_label_without_any_success(self):
        """Test an integrand nothing can integrate is reported as dropped"""
        response = self.client.post(f"{BASE_URL}/label", json={"integrand": "exp(x^2)"})
        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertTrue(data["dropped"])
        self.assertEqual(data["labels"], [0, 0, 0, 0, 0])
        self.assertIsNone(data["optimal_size"])

    def test_select_without_checkpoint(self):
        """Test selection needs a trained model"""
        response = self.client.post(f"{BASE_URL}/select", json={"integrand": "cos(x)", "model": "treelstm"})
        self.assertEqual(response.status_code, 404)

    def test_select(self):
        """Test model-guided selection falls back until a sub-algorithm succeeds"""
        self.save_tiny_model(ModelKind.LSTM)
        response = self.client.post(f"{BASE_URL}/select", json={"integrand": "cos(x)", "model": "lstm"})
        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertEqual(sorted(data["probabilities"]), sorted(SubAlgorithm.labels()))
        self.assertTrue(all(0.0 < p < 1.0 for p in data["probabilities"].values()))
        self.assertIsNotNone(data["chosen"])
        self.assertEqual(data["attempts"][-1], data["chosen"])
        self.assertEqual(data["outcome"]["status"], "Success")

    def test_select_with_corrupt_checkpoint(self):
        """Test an unreadable checkpoint is a server error, not a bad request"""
        (self.artifacts / "treelstm.ckpt.json").write_text("{}", encoding="utf-8")
        response = self.client.post(f"{BASE_URL}/select", json={"integrand": "cos(x)"})
        self.assertEqual(response.status_code, 500)
        self.assertIn("treelstm", response.json()["detail"])

    def test_select_with_mismatched_checkpoint(self):
        """Test a checkpoint holding the other model kind is a server error"""
        self.save_tiny_model(ModelKind.LSTM)
        (self.artifacts / "lstm.ckpt.json").rename(self.artifacts / "treelstm.ckpt.json")
        response = self.client.post(f"{BASE_URL}/select", json={"integrand": "cos(x)", "model": "treelstm"})
        self.assertEqual(response.status_code, 500)


if __name__ == "__main__":
    unittest.main()
