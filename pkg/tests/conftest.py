import math

import pytest
from hypothesis import settings

from fibertwist.model import Grid

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

C_HALF = 0.5
Z_HALF_PI = math.pi / 2

EX1 = "3*z^2*cos(10*z)*log(z+1)"
EX2 = "z*sin(100*z)*log(z+1)"
EX3 = "9*z^2*cos(100*z)*log(z+1)"
EX4 = "z*sin(100*z)*exp({a}*z)"

# oracle battery for the solver cross-checks
BATTERY = (EX1, "z^2*exp(-z)", "sin(z)^2*cos(3*z)")


def make_grid(N, c=C_HALF, Z=Z_HALF_PI):
    return Grid.create(c, Z, N)


@pytest.fixture
def grid32():
    return make_grid(32)
