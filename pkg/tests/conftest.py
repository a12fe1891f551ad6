import numpy as np
import pytest

from robrecourse.actions import FeasibilitySpec, UncertaintySpec
from robrecourse.model import LinearClassifier
from robrecourse.recourse import robust_linear_recourse
from robrecourse.scm import LINEAR, Mechanism, Scm


def random_linear_scm(rng, n, edge_prob=0.5):
    """Random DAG over ``n`` nodes in index order with U(-1, 1) edge weights."""
    parents, mechs = [], []
    for i in range(n):
        ps = [j for j in range(i) if rng.random() < edge_prob]
        parents.append(ps)
        mechs.append(Mechanism(LINEAR, tuple(rng.uniform(-1, 1, len(ps))), float(rng.normal(0, 0.1))))
    return Scm(parents, mechs)


def random_linear_instances(seed, count, epsilons=(0.0, 0.01, 0.1, 0.5), cost_range=(0.3, 3.0)):
    """Random (classifier, scm, x, feasibility, eps, closed-form action) tuples.

    Instances whose closed-form cost falls outside ``cost_range`` are
    redrawn so that relative comparisons are well conditioned.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(2, 6))
        scm = random_linear_scm(rng, n)
        clf = LinearClassifier(rng.normal(size=n), 0.0, 0.5)
        act = rng.random(n) < 0.7
        if not act.any():
            continue
        feas = FeasibilitySpec.from_mask(act)
        x = rng.normal(size=n)
        eps = float(rng.choice(epsilons))
        a = robust_linear_recourse(clf, scm, x, feas, UncertaintySpec(eps))
        if not a or not cost_range[0] < a.cost < cost_range[1]:
            continue
        out.append((clf, scm, x, feas, eps, a))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance reporting: one line per criterion in the terminal summary

ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion(request):
    """Record ``(number, title, passed, detail)`` and fail the test when not passed."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
