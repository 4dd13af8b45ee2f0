import math

import numpy as np
import pytest

from deskecho.episodes import make_scene_pool
from deskecho.perception import CategoryClassifier
from deskecho.soundbank import SoundBank
from deskecho.world import MaterialProperties, Scene, WallSegment

MAT = MaterialProperties((0.1, 0.1, 0.1, 0.1), (0.2, 0.2, 0.2, 0.2))
HARD = MaterialProperties((0.02, 0.02, 0.02, 0.02), (0.0, 0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def bank():
    return SoundBank.build(0)


@pytest.fixture(scope="session")
def classifier(bank):
    return CategoryClassifier().fit(bank)


@pytest.fixture(scope="session")
def scene_pool():
    return make_scene_pool(4, seed=11)


@pytest.fixture()
def free_field_scene():
    return Scene("free", (0.0, 0.0, 10.0, 10.0), 0.25, {"m": MAT})


@pytest.fixture()
def box_room():
    corners = [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)]
    walls = tuple(WallSegment(corners[k], corners[(k + 1) % 4], "hard")
                  for k in range(4))
    return Scene("box", (0.0, 0.0, 4.0, 3.0), 0.25,
                 {"hard": HARD, "m": MAT}, walls=walls)


def cardinal(k: int) -> float:
    return k * math.pi / 2.0
