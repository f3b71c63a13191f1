import sys
from pathlib import Path

import hypothesis
import hypothesis.strategies as st
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evosr import expressions as ex

hypothesis.settings.register_profile("default", max_examples=200, deadline=None)
hypothesis.settings.load_profile("default")

# Lines recorded by the acceptance tests; printed in the terminal summary so
# they are visible even when pytest captures per-test stdout.
_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Recorder for one pass/fail line per acceptance criterion."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        word = "PASS" if ok else "FAIL"
        _ACCEPTANCE_LINES[criterion] = f"criterion {criterion:2d} {word}  {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[n])


@st.composite
def expression_trees(draw, max_depth=4):
    """Strategy producing valid Expression values (small trees)."""

    def grow(depth):
        if depth >= max_depth or draw(st.booleans()):
            return [ex.VAR_X]
        op = draw(st.sampled_from(ex.OPERATORS))
        if ex.ARITY[op] == 1:
            return [op] + grow(depth + 1)
        if op == ex.POW:
            exponent = draw(st.sampled_from(ex.CONSTANTS + (ex.VAR_X,)))
            return [op] + grow(depth + 1) + [exponent]
        return [op] + grow(depth + 1) + grow(depth + 1)

    prims = grow(0)
    hypothesis.assume(len(prims) <= ex.MAX_PRIMITIVES)
    return ex.parse_preorder(prims)
