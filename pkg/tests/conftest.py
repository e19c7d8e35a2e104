from pathlib import Path

import numpy as np
import pytest

from thermoshare import energy as energy_mod
from thermoshare.mechanism import OutcomeKind, ValuationTable

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def table():
    return ValuationTable.default()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def make_costs(cooler=0.05, stay=0.0, warmer=-0.03, t0=24):
    """Hand-set incremental costs around an interior temperature."""
    return energy_mod.costs_from_deltas(
        t0,
        {OutcomeKind.COOLER: cooler, OutcomeKind.STAY: stay, OutcomeKind.WARMER: warmer},
    )


def random_prior_matrix(n, rng, concentration=1.5):
    return rng.dirichlet(np.ones(9) * concentration, size=n)


@pytest.fixture
def costs():
    return make_costs()
