"""Shared helpers: random box factories and small chain constructions."""

import math

import numpy as np
import pytest

from boxcast.boxes import BoxParams


def random_box(rng, max_extent=1.0, center_range=1.0, min_dim=0.05):
    """A random well-conditioned oriented box."""
    dims = tuple(rng.uniform(min_dim, max_extent, 3))
    center = tuple(rng.uniform(-center_range, center_range, 3))
    rot = (
        rng.uniform(-math.pi, math.pi),
        rng.uniform(-math.pi / 2, math.pi / 2),
        rng.uniform(-math.pi, math.pi),
    )
    return BoxParams(dims, center, rot)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
