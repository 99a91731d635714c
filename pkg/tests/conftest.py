import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rymflow.mesh import build_sphere_mesh, build_torus_mesh

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def torus16():
    return build_torus_mesh(16)


@pytest.fixture(scope="session")
def torus32():
    return build_torus_mesh(32)


@pytest.fixture(scope="session")
def torus64():
    return build_torus_mesh(64)


@pytest.fixture(scope="session")
def sphere3():
    return build_sphere_mesh(3)


@pytest.fixture(scope="session")
def sphere4():
    return build_sphere_mesh(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
