import ast
import sys
import unittest
from importlib import metadata
from pathlib import Path

from packaging.requirements import Requirement
from packaging.utils import canonicalize_name

ROOT = Path(__file__).resolve().parent.parent
# needed at run time without a direct import: TestClient transport, test runner
INDIRECT = {"httpx", "pytest"}


def read_pins():
    pins = {}
    for line in (ROOT / "requirements.txt").read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            name, _, version = line.partition("==")
            pins[canonicalize_name(name)] = version
    return pins


def imported_modules():
    names = set()
    sources = list((ROOT / "intsel").glob("*.py")) + list((ROOT / "tests").glob("*.py")) + [ROOT / "run_tests.py"]
    for path in sources:
        tree = ast.parse(path.read_text(encoding="utf-8"))
        for node in ast.walk(tree):
            if isinstance(node, ast.Import):
                names.update(alias.name.split(".")[0] for alias in node.names)
            elif isinstance(node, ast.ImportFrom) and node.level == 0 and node.module:
                names.add(node.module.split(".")[0])
    return {n for n in names if n not in sys.stdlib_module_names and n not in ("intsel", "tests")}


def runtime_requirements(dist):
    """Distributions `dist` needs outside of optional extras; platform markers count as needed"""
    out = set()
    for line in metadata.requires(dist) or ():
        req = Requirement(line)
        if req.marker is not None and "extra" in str(req.marker):
            continue
        out.add(canonicalize_name(req.name))
    return out


class TestRequirements(unittest.TestCase):
    def setUp(self):
        self.pins = read_pins()
        owners = metadata.packages_distributions()
        self.direct = set(INDIRECT)
        for module in imported_modules():
            self.assertIn(module, owners, f"{module} is imported but not installed")
            pinned = {canonicalize_name(d) for d in owners[module]} & set(self.pins)
            self.assertTrue(pinned, f"{module} comes from no pinned distribution")
            self.direct.update(pinned)

    def test_every_pin_is_imported_or_pulled_in(self):
        needed = set()
        frontier = list(self.direct)
        while frontier:
            name = frontier.pop()
            if name in needed:
                continue
            needed.add(name)
            frontier.extend(runtime_requirements(name) & set(self.pins))
        self.assertEqual(set(self.pins) - needed, set())


if __name__ == "__main__":
    unittest.main()
