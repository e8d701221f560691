import numpy as np
import pytest

import entityrl.tensor as T


@pytest.fixture
def f64():
    """Run a test in 64-bit mode (tight numeric tolerances)."""
    with T.default_dtype(np.float64):
        yield
