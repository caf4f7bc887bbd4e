from __future__ import annotations

import random

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


class GridRng:
    """Deterministic stand-in for ``random.Random`` that replays fixed draws."""

    def __init__(self, values):
        self.values = list(values)
        self.k = 0

    def random(self) -> float:
        v = self.values[self.k % len(self.values)]
        self.k += 1
        return v


@pytest.fixture
def rng():
    return random.Random(1234)
