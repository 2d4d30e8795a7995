import math

import numpy as np
import pytest

from rotext.geometry import RBoxCenter


def random_box(rng, center=(0.0, 100.0), size=(2.0, 60.0)):
    return RBoxCenter(
        rng.uniform(*center),
        rng.uniform(*center),
        rng.uniform(*size),
        rng.uniform(*size),
        rng.uniform(-math.pi, math.pi),
    )


def random_pair(rng):
    a = random_box(rng)
    # bias toward overlap so the IoU range is well covered
    b = RBoxCenter(
        a.cx + rng.normal(0, 12),
        a.cy + rng.normal(0, 12),
        rng.uniform(2.0, 60.0),
        rng.uniform(2.0, 60.0),
        rng.uniform(-math.pi, math.pi),
    )
    return a, b


def interior_point(rng, box, margin=0.999):
    u = rng.uniform(-0.5, 0.5) * box.w * margin
    v = rng.uniform(-0.5, 0.5) * box.h * margin
    c, s = math.cos(box.theta), math.sin(box.theta)
    return box.cx + c * u - s * v, box.cy + s * u + c * v


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
