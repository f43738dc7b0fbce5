import numpy as np
import pytest

from otalign import normalize_rows


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def unit_batch(rng):
    def make(B, d):
        return normalize_rows(rng.normal(size=(B, d)))

    return make
