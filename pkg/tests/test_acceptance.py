"""Acceptance gate: the ten primary criteria at their stated tolerances.

Each criterion is implemented in :mod:`resnet_landscape.checks` (shared with
``resnet-landscape check``).  Every test prints one PASS/FAIL line; the
lines are repeated in the terminal summary.
"""

import pytest

from resnet_landscape.checks import CHECKS, run_check

ACCEPTANCE_LINES = []


@pytest.mark.slow
@pytest.mark.parametrize("number", [c[0] for c in CHECKS], ids=[f"criterion_{c[0]:02d}" for c in CHECKS])
def test_criterion(number):
    res = run_check(number)
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, line
