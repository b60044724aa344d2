import warnings

import numpy as np
import pytest

from spin1qrs import presets
from spin1qrs.circuit import build_chain
from spin1qrs.qrs import dressed_site


@pytest.fixture(scope="session")
def ref_species():
    return presets.species()


@pytest.fixture(scope="session")
def ref_sites(ref_species):
    A, B = ref_species
    P = presets.PQ_QUOTED
    return dressed_site(A, 4, P, 0.0), dressed_site(B, 4, P, 0.0)


@pytest.fixture(scope="session")
def ref_chain2(ref_species):
    return build_chain(ref_species, 2, presets.PQ_QUOTED, presets.PQ_QUOTED, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture(autouse=True)
def _quiet_linearization():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="flux excursion")
        yield
