import numpy as np
import pytest

from cofind.core import Bag, Episode


def random_episode(rng, sizes, dim=3, labeled=True, negative=4, target=0):
    """Episode with Gaussian features; every positive bag holds one ``target`` item."""
    bags = []
    for n in sizes:
        labels = rng.integers(1, 4, size=n) if labeled else None
        if labeled:
            labels[rng.integers(n)] = target
        bags.append(Bag(rng.standard_normal((n, dim)), labels))
    neg = None
    if negative:
        neg = Bag(rng.standard_normal((negative, dim)),
                  rng.integers(1, 4, size=negative) if labeled else None)
    return Episode(tuple(bags), neg, target_class=target if labeled else None)


def central_differences(fun, x, h=1e-5):
    """Gradient of scalar ``fun`` at ``x`` by central differences."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return grad


def relative_error(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
