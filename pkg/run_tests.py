import argparse
import os
import sys
import unittest

UNIT_PATTERNS = [
    "test_expr.py",
    "test_calculus.py",
    "test_datagen.py",
    "test_encode.py",
    "test_nn.py",
    "test_selection.py",
    "test_docstrings.py",
]
CLI_PATTERNS = ["test_cli.py", "test_requirements.py"]
API_PATTERNS = ["test_api_requests.py", "test_concurrent_requests.py"]


def run_tests(test_type="unit", slow=False, verbose=False):
    """Run the selected test groups and return a process exit code"""
    if slow:
        # Enables the generator soundness and worker-invariance checks
        os.environ["INTSEL_SLOW_TESTS"] = "1"

    patterns = []
    if test_type in ["unit", "all"]:
        patterns.extend(UNIT_PATTERNS)
    if test_type in ["cli", "all"]:
        patterns.extend(CLI_PATTERNS)
    if test_type in ["api", "all"]:
        patterns.extend(API_PATTERNS)

    test_loader = unittest.TestLoader()
    test_suite = unittest.TestSuite()
    for pattern in patterns:
        test_suite.addTest(test_loader.discover("tests", pattern=pattern))

    test_runner = unittest.TextTestRunner(verbosity=2 if verbose else 1)
    result = test_runner.run(test_suite)

    if result.wasSuccessful():
        print("\nAll tests passed!")
        return 0
    print(f"\nTests failed: {len(result.failures)} failures, {len(result.errors)} errors")
    return 1


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the intsel test suites")
    parser.add_argument("--test-type", choices=["unit", "cli", "api", "all"], default="unit",
                        help="Group of tests to run (unit, cli, api, or all)")
    parser.add_argument("--slow", action="store_true", help="Include the slow generator checks")
    parser.add_argument("--verbose", "-v", action="store_true", help="Print one line per test")

    args = parser.parse_args()
    sys.exit(run_tests(args.test_type, args.slow, args.verbose))
