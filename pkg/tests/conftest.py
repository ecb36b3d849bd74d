"""Shared fixtures.

The toy problem is small enough to check by hand: seven units, one
covariate, and nuisance models with closed-form single-component outcome
mixtures, so every estimator value asserted against it was derived outside
the library with 50-digit arithmetic.
"""
import numpy as np
import pytest

from ectsens.data import Dataset
from ectsens.nuisance import (LogisticModel, MixtureOutcomeModel,
                              NuisanceConfig, NuisanceSet)

# trial arm: two completers, two intercurrent; controls: two completers, one
# intercurrent. All hand-model probabilities stay inside the (0.01, 0.99)
# clip bounds, so clipping never distorts the hand computation.
TOY_X = np.array([[0.0], [0.0], [1.0], [1.0], [0.0], [1.0], [0.5]])
TOY_S = np.array([1, 1, 1, 1, 0, 0, 0], dtype=np.int8)
TOY_R = np.array([1, 0, 1, 0, 1, 0, 1], dtype=np.int8)
TOY_Y = np.array([1.2, np.nan, 2.4, np.nan, 0.6, np.nan, -0.3])


def make_toy_dataset() -> Dataset:
    return Dataset(TOY_X.copy(), TOY_S.copy(), TOY_R.copy(), TOY_Y.copy())


def make_toy_nuisances() -> NuisanceSet:
    """Closed-form nuisances on the raw covariate.

    selection lp = -0.5 + x, trial-arm completion lp = 0.4 + 0.3 x,
    control completion lp = -0.2 + 0.6 x, outcome means 1 + x (trial)
    and 0.25 + 0.5 x (control), unit sigmas.
    """
    one = np.array([1.0])
    return NuisanceSet(
        selection=LogisticModel(coef=np.array([-0.5, 1.0])),
        completion_sat=LogisticModel(coef=np.array([0.4, 0.3])),
        completion_ec=LogisticModel(coef=np.array([-0.2, 0.6])),
        outcome_sat=MixtureOutcomeModel(weights=one.copy(),
                                        betas=np.array([[1.0, 1.0]]),
                                        sigmas=one.copy()),
        outcome_ec=MixtureOutcomeModel(weights=one.copy(),
                                       betas=np.array([[0.25, 0.5]]),
                                       sigmas=one.copy()),
        p_sat=4.0 / 7.0,
        config=NuisanceConfig(k_grid=(1,)),
        binary_mask=np.array([False]),
    )


@pytest.fixture
def toy_dataset() -> Dataset:
    return make_toy_dataset()


@pytest.fixture
def toy_nuisances() -> NuisanceSet:
    return make_toy_nuisances()


# ---------------------------------------------------------------------------
# acceptance reporting: test_acceptance.py records one line per criterion and
# the lines are echoed in the terminal summary regardless of capture mode.


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_report(request):
    lines = request.config._acceptance_lines

    def record(line: str) -> None:
        lines.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)
