import numpy as np
import pytest

from adrtour.orbital import Body
from adrtour.pipeline import bundled_targets_path, ingest_targets
from adrtour.tour import TourProblem


@pytest.fixture(scope="session")
def bodies():
    return ingest_targets(bundled_targets_path())


def random_problem(N, D, horizon_days, seed):
    """Chaser at 7000 km plus N targets scattered in radius and phase."""
    rng = np.random.default_rng(seed)
    targets = [Body(k, float(rng.uniform(6900, 7400)), float(rng.uniform(0, 2 * np.pi)))
               for k in range(1, N + 1)]
    return TourProblem([Body(0, 7000.0, 0.0)] + targets, horizon_days * 86400.0, D)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Record a one-line acceptance verdict and fail the test if it did not pass."""
    def record(label, passed, detail):
        line = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE_KEY].append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
