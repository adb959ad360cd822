import concurrent.futures
import unittest

from fastapi.testclient import TestClient

from intsel.main import app

BASE_URL = "/api/v1"

INTEGRANDS = ["cos(x)", "x*exp(x)", "2*x*cos(x^2)", "1/(x^2 + 1)", "x^3 + 2*x", "1/(x + 1)^2", "exp(x^2)", "sin(x)"]


class TestApiConcurrentRequests(unittest.TestCase):
    """
    Concurrent requests must give the same answers as serial ones.
    Every request works on its own expression store.
    """

    @classmethod
    def setUpClass(cls):
        cls.client = TestClient(app)
        cls.serial = {text: cls.client.post(f"{BASE_URL}/label", json={"integrand": text}).json() for text in INTEGRANDS}

    def test_concurrent_labeling(self):
        """Test labeling many integrands concurrently"""
        jobs = INTEGRANDS * 3

        def label(text):
            response = self.client.post(f"{BASE_URL}/label", json={"integrand": text})
            return text, response.status_code, response.json()

        with concurrent.futures.ThreadPoolExecutor(max_workers=8) as executor:
            results = list(executor.map(label, jobs))

        for text, status, data in results:
            self.assertEqual(status, 200, text)
            self.assertEqual(data, self.serial[text], text)

    def test_concurrent_integration(self):
        """Test running the same sub-algorithm concurrently"""
        num_requests = 20

        def integrate(_):
            response = self.client.post(f"{BASE_URL}/integrate", json={"integrand": "x*exp(x)", "algorithm": "Parts"})
            return response.status_code, response.json().get("output")

        with concurrent.futures.ThreadPoolExecutor(max_workers=10) as executor:
            results = list(executor.map(integrate, range(num_requests)))

        self.assertTrue(all(status == 200 for status, _ in results))
        self.assertEqual(len({output for _, output in results}), 1, "outputs differ between concurrent requests")

    def test_concurrent_health_checks(self):
        """Test health endpoint under concurrent load"""
        with concurrent.futures.ThreadPoolExecutor(max_workers=10) as executor:
            results = list(executor.map(lambda _: self.client.get("/health").status_code, range(30)))
        self.assertEqual(results.count(200), 30)


if __name__ == "__main__":
    unittest.main()
