from __future__ import annotations

import pytest

from ssflab.experiments import standard_background, standard_perturbation


@pytest.fixture(scope="session")
def standard():
    """(spec, W, h, V) of the standard experiment: gap bump of height 0.2 in gap 1."""
    spec, W, h = standard_background()
    return spec, W, h, standard_perturbation(spec)


@pytest.fixture(scope="session")
def small():
    """Five-barrier version for quick checks."""
    spec, W, h = standard_background(5)
    return spec, W, h, standard_perturbation(spec)
