import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from regather._alloc import tune_malloc  # noqa: E402
from regather.graph import make_graph, make_labels  # noqa: E402

tune_malloc()

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(number, passed: bool | None, detail: str):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


@pytest.fixture
def bibliographic():
    """Tiny author/paper/venue/term graph.

    a0 writes p0, p1; a1 writes p1; a2 writes p2. p1 cites p0, p2 cites p1.
    v0 publishes p0, p1; v1 publishes p2. p0 and p2 have term t0.
    """
    names = ["author", "paper", "venue", "term"]
    vtype = np.array([0, 0, 0, 1, 1, 1, 2, 2, 3])
    A, P, V, T = [0, 1, 2], [3, 4, 5], [6, 7], [8]
    edges = [
        np.array([[P[1], P[0]], [P[2], P[1]]]),
        np.array([[A[0], P[0]], [A[0], P[1]], [A[1], P[1]], [A[2], P[2]]]),
        np.array([[V[0], P[0]], [V[0], P[1]], [V[1], P[2]]]),
        np.array([[P[0], T[0]], [P[2], T[0]]]),
    ]
    schema = [(1, 1), (0, 1), (2, 1), (1, 3)]
    return make_graph(vtype, names, ["cites", "writes", "publishes", "has_term"], schema, edges)


@pytest.fixture
def bibliographic_labels(bibliographic):
    return make_labels(bibliographic, {0: 0, 1: 0, 2: 1}, target_type=0)
