"""Shared fixtures: one desk-scale model solved once per session."""

import numpy as np
import pytest

from bandlayer.model import ModelParams
from bandlayer.band_zero import (find_band_zero, greens_particular,
                                 solve_homogeneous)

DESK_GAMMA = 2e-4


@pytest.fixture(scope="session")
def desk_model():
    # daily units: 2% vol, 10-day signal decay, unit risk penalty
    return ModelParams(sigma=0.02, omega=0.1, lam=1.0, rho=1e-3)


@pytest.fixture(scope="session")
def desk_pair(desk_model):
    return solve_homogeneous(desk_model)


@pytest.fixture(scope="session")
def desk_comp(desk_model, desk_pair):
    return greens_particular(desk_model, desk_pair)


@pytest.fixture(scope="session")
def desk_band(desk_model, desk_comp):
    return find_band_zero(desk_model, DESK_GAMMA, comp=desk_comp)


_ACCEPTANCE_RESULTS = {}


def record_acceptance(num, label, passed, detail=""):
    _ACCEPTANCE_RESULTS[num] = (label, bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    tw = terminalreporter
    tw.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE_RESULTS):
        label, passed, detail = _ACCEPTANCE_RESULTS[num]
        verdict = "PASS" if passed else "FAIL"
        line = f"ACCEPTANCE CRITERION {num} [{label}]: {verdict}"
        if detail:
            line += f"  ({detail})"
        tw.write_line(line)
