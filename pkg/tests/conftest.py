from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from tgmetric.fields import Chart
from tgmetric.scenario import bundled, load_scenario

DATA = Path(__file__).parent / "data"
CORPUS = ("s1_flat", "s2_twisted", "s3_heisenberg", "s4_negative", "s5_rotation", "s6_noninvolutive")
DIRAC_CORPUS = CORPUS[:5]
TRANSVERSE = ("s1_flat", "s2_twisted", "s3_heisenberg", "s5_rotation")


@lru_cache(maxsize=None)
def scenario(name):
    if (DATA / f"{name}.scn").exists():
        return load_scenario(DATA / f"{name}.scn")
    return bundled(name)


@pytest.fixture
def chart3():
    return Chart(("x", "y", "z"), ((-1, 1), (-1, 1), (-1, 1)))


@pytest.fixture
def pts3(chart3):
    return chart3.sample(100, seed=3)


def assert_close(a, b, tol, rel=False):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    err = np.abs(a - b)
    if rel:
        err = err / np.maximum(np.abs(b), 1e-300)
    assert np.all(err <= tol), f"max error {np.max(err):.3g} > {tol}"
