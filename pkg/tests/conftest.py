import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def walk20():
    """20 s walking clip scaled to the default stature, in meters."""
    from wbanadapt.kinematics import DEFAULT_STATURE_M, scale_to_height
    from wbanadapt.testing import walking_clip

    return scale_to_height(walking_clip(duration=20.0), DEFAULT_STATURE_M)


@pytest.fixture(scope="session")
def stand20():
    from wbanadapt.kinematics import DEFAULT_STATURE_M, scale_to_height
    from wbanadapt.testing import standing_clip

    return scale_to_height(standing_clip(duration=20.0), DEFAULT_STATURE_M)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
