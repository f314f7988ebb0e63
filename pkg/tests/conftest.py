import numpy as np
import pytest

from sse_rec import KnowledgeGraph


@pytest.fixture
def star4():
    # node 0 linked to 1 only; 1-2 linked; 3 isolated
    return KnowledgeGraph.from_edges(4, [(0, 1), (1, 2)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
