"""Acceptance criteria 1-8, one test each, sharing one suite so later criteria reuse the runs.

Each test prints a single ``[PASS]``/``[FAIL]`` line.  Run directly with
``python tests/test_acceptance.py`` for the lines alone.
"""

import sys

import pytest

from rescurrents.acceptance import Suite


@pytest.fixture(scope="module")
def suite():
    return Suite()


def _check(suite, number, capsys=None):
    res = getattr(suite, f"criterion_{number}")()
    if capsys is not None:
        with capsys.disabled():
            print("\n" + res.line(), flush=True)
    assert res.passed, res.line()


@pytest.mark.parametrize("number", range(1, 9))
def test_criterion(suite, number, capsys):
    _check(suite, number, capsys)


if __name__ == "__main__":
    results = Suite().run(echo=lambda s: print(s, flush=True))
    sys.exit(0 if all(r.passed for r in results) else 1)
