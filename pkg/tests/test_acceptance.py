"""End-to-end acceptance criteria, one test each, at their stated tolerances."""

from __future__ import annotations

import json

import pytest

from conftest import ACCEPTANCE_LINES
from geomeasure.acceptance import format_result, run_criterion

SLOW = {2, 5, 8}


def _params():
    for k in range(1, 10):
        marks = [pytest.mark.slow] if k in SLOW else []
        yield pytest.param(k, marks=marks, id=f"criterion_{k}")


@pytest.mark.parametrize("number", list(_params()))
def test_criterion(number):
    r = run_criterion(number)
    line = format_result(r)
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert r.passed, json.dumps(r.details, default=str, indent=1)[:4000]
