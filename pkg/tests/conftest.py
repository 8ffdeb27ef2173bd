import json
import os

import numpy as np
import pytest

from needleplan import load_scenario

FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "fixtures")


def fixture_path(name: str) -> str:
    return os.path.abspath(os.path.join(FIXTURES, name))


def empty_scenario_doc() -> dict:
    # bounded workspace with no obstacles; target straight ahead of the
    # reversed insertion tangent
    return {
        "start_pose": {"position": [0.0, 0.0, 0.12], "orientation": [1.0, 0.0, 0.0, 0.0]},
        "target": {"center": [0.0, 0.0, 0.0], "radius": 0.01},
        "bounds": {"min": [-0.08, -0.08, -0.02], "max": [0.08, 0.08, 0.16]},
        "kappa_max": 20.0,
    }


@pytest.fixture
def empty_scenario():
    return load_scenario(json.dumps(empty_scenario_doc()))


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
