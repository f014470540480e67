import numpy as np
import pytest

from riskmon.filtration import TreeMeasure, build_tree
from riskmon.generators import binomial_tree_spec


@pytest.fixture
def binomial():
    """One-period tree root -> (u, d) with R = (0.5, 0.5)."""
    return build_tree(binomial_tree_spec(1, 0.5))


@pytest.fixture
def two_period():
    return build_tree(binomial_tree_spec(2, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def measure(tree, **transitions):
    return TreeMeasure.from_transitions(tree, transitions, fill_reference=True)


_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        print(line)
        lines.append(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
