"""Acceptance criteria, one test each, at the tolerances stated in the criteria.

Scale follows ``GOSSIPSIM_ACCEPTANCE`` (``full`` for the complete corpus and
seed counts). Every criterion prints a PASS/FAIL line as it finishes and the
lines are repeated in the terminal summary.
"""

import pytest

from gossipsim.acceptance import CRITERIA, Scale, run_criterion

RESULTS = {}


@pytest.fixture(scope="module")
def scale():
    return Scale.from_env()


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, scale):
    res = run_criterion(number, scale)
    RESULTS[number] = res
    print("\n" + res.line())
    assert res.passed, res.line()
