"""The twelve acceptance criteria at their stated tolerances.

Finite-N runs are shared through the cache in ``sbmlab.validation``; the
outlier-count check (12) runs last and pools the runs of 1, 3 and 4.
"""

from __future__ import annotations

import pytest

from sbmlab.validation import CRITERIA


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_acceptance_criterion(number: int, capsys) -> None:
    result = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + result.line)
    assert result.passed, result.line
