"""Every acceptance criterion at full size; one PASS/FAIL line per criterion."""
import pytest

from carmadelay.acceptance import CHECKS, run_check

ACCEPTANCE_LINES = []


@pytest.mark.parametrize("check", CHECKS, ids=[f"{i + 1:02d}_{fn.__name__[6:]}" for i, fn in enumerate(CHECKS)])
def test_criterion(check):
    res = run_check(check, fast=False)
    ACCEPTANCE_LINES.append(res.line())
    print(res.line())
    assert res.passed, res.detail
