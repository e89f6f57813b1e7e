import numpy as np
import pytest

from app.core.probdist import JointDist
from app.core.simplexopt import OptimizerSettings

# Binary source with a zero cell: P(0,0)=0.75, P(0,1)=0.1, P(1,0)=0, P(1,1)=0.15
FIG1 = [[0.75, 0.1], [0.0, 0.15]]
FIG1_H_U = 0.4227091
FIG1_H_U_GIVEN_V = 0.1682529
FIG1_I = 0.2544562


@pytest.fixture
def fig1_source():
    return JointDist(np.array(FIG1))


@pytest.fixture
def full_support_source():
    return JointDist(np.array([[0.4, 0.1], [0.15, 0.35]]))


@pytest.fixture
def fast_settings():
    """Coarser optimizer settings that keep the suite at desk speed."""
    return OptimizerSettings(coarse_resolution=16, starts=8, rounds=3, shrink=4,
                             nested_starts=2, nested_max_coarse_points=600)


@pytest.fixture
def fine_settings():
    """Default resolution with more inner starts, for the slow formula identities."""
    return OptimizerSettings.from_config().model_copy(update={"nested_starts": 8, "nested_max_coarse_points": 4000})
