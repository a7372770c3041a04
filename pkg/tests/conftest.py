"""Every elliptic solve made anywhere in the suite must have a nonincreasing energy trace."""

import numpy as np
import pytest

from porowave import elliptic

SOLVES = {"count": 0, "bad": []}
_solve = elliptic.solve


def _checked_solve(problem, u0=None):
    sol = _solve(problem, u0)
    SOLVES["count"] += 1
    if np.any(np.diff(sol.energy_trace) > 0):
        SOLVES["bad"].append(sol.energy_trace)
    return sol


@pytest.fixture(autouse=True)
def energy_monotone(monkeypatch):
    monkeypatch.setattr(elliptic, "solve", _checked_solve)
    before = len(SOLVES["bad"])
    yield
    assert len(SOLVES["bad"]) == before, "Newton energy trace increased"
